#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "stackbundle/dstack.hpp"
#include "stackbundle/errors.hpp"

namespace stackbundle {

/// Read-only view of the broadcast environment handed to kernel invocations.
class KernelCtx {
public:
    explicit KernelCtx(const std::map<std::string, Record>* broadcasts)
        : broadcasts_(broadcasts) {}

    const Record& broadcast(const std::string& name) const {
        auto it = broadcasts_->find(name);
        if (it == broadcasts_->end())
            throw RegistryError("broadcast not found: " + name);
        return it->second;
    }
    bool has_broadcast(const std::string& name) const {
        return broadcasts_->count(name) != 0;
    }

private:
    const std::map<std::string, Record>* broadcasts_;
};

using MapFn = std::function<Record(const KernelCtx&, const Record&)>;
// Combine must be associative and commutative; an empty Record is the identity.
using CombineFn = std::function<Record(const Record&, const Record&)>;

/// Named, pre-registered pure kernels shared by driver and worker binaries.
/// The registry hash is checked at worker registration.
class KernelRegistry {
public:
    static KernelRegistry& instance();

    void register_map(const std::string& id, MapFn fn);
    void register_combine(const std::string& id, CombineFn fn);

    const MapFn& map_kernel(const std::string& id) const;
    const CombineFn& combine_kernel(const std::string& id) const;
    bool has_map(const std::string& id) const { return maps_.count(id) != 0; }

    std::uint64_t hash() const;

    void count_invocation() const { invocations_.fetch_add(1, std::memory_order_relaxed); }
    std::uint64_t invocations() const { return invocations_.load(std::memory_order_relaxed); }
    void reset_invocations() const { invocations_.store(0, std::memory_order_relaxed); }

private:
    std::map<std::string, MapFn> maps_;
    std::map<std::string, CombineFn> combines_;
    mutable std::atomic<std::uint64_t> invocations_{0};
};

/// Registers the kernels every stackbundle binary ships (identity, add,
/// solver kernels). Idempotent.
void register_builtin_kernels();

} // namespace stackbundle
