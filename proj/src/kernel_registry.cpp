#include "stackbundle/kernels.hpp"

namespace stackbundle {

namespace detail {
void register_deconv_kernels();
void register_scdl_kernels();
} // namespace detail

void register_builtin_kernels() {
    static const bool once = [] {
        auto& reg = KernelRegistry::instance();
        reg.register_map("identity", [](const KernelCtx&, const Record& r) { return r; });
        reg.register_combine("add", [](const Record& a, const Record& b) {
            if (a.empty()) return b;
            if (b.empty()) return a;
            if (a.size() != b.size()) throw ShapeError("add: record arity mismatch");
            Record out = a;
            for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i];
            return out;
        });
        detail::register_deconv_kernels();
        detail::register_scdl_kernels();
        return true;
    }();
    (void)once;
}

KernelRegistry& KernelRegistry::instance() {
    static KernelRegistry reg;
    return reg;
}

void KernelRegistry::register_map(const std::string& id, MapFn fn) {
    maps_[id] = std::move(fn);
}

void KernelRegistry::register_combine(const std::string& id, CombineFn fn) {
    combines_[id] = std::move(fn);
}

const MapFn& KernelRegistry::map_kernel(const std::string& id) const {
    auto it = maps_.find(id);
    if (it == maps_.end()) throw RegistryError("unknown map kernel: " + id);
    return it->second;
}

const CombineFn& KernelRegistry::combine_kernel(const std::string& id) const {
    auto it = combines_.find(id);
    if (it == combines_.end()) throw RegistryError("unknown combine kernel: " + id);
    return it->second;
}

std::uint64_t KernelRegistry::hash() const {
    // FNV-1a over registry version and sorted kernel ids
    std::uint64_t h = 1469598103934665603ull;
    auto mix = [&h](const std::string& s) {
        for (unsigned char c : s) {
            h ^= c;
            h *= 1099511628211ull;
        }
        h ^= 0xff;
        h *= 1099511628211ull;
    };
    mix("stackbundle-kernels-v1");
    for (const auto& [id, fn] : maps_) mix("map:" + id);
    for (const auto& [id, fn] : combines_) mix("combine:" + id);
    return h;
}

} // namespace stackbundle
