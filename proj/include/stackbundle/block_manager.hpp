#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <set>
#include <string>
#include <vector>

#include "stackbundle/dstack.hpp"

namespace stackbundle {

enum class PersistenceMode { MemoryOnly, MemoryAndDisk };

struct BlockKey {
    std::uint64_t dataset = 0;
    std::uint32_t partition = 0;
    auto operator<=>(const BlockKey&) const = default;
};

using BlockPtr = std::shared_ptr<const std::vector<Record>>;

struct BlockManagerStats {
    std::uint64_t mem_bytes_used = 0;
    std::uint64_t disk_bytes_used = 0;
    std::uint64_t evictions = 0;
    std::uint64_t spills = 0;
    std::uint64_t recomputes = 0;
};

/// Per-worker cache of materialized blocks with logical byte accounting.
/// LRU eviction among unpinned blocks; ties broken by lowest key. Under
/// MemoryOnly an evicted payload is discarded (a later get recomputes via
/// lineage); under MemoryAndDisk it is spilled to spill_dir and read back.
class BlockManager {
public:
    BlockManager(PersistenceMode mode, std::uint64_t memory_cap_bytes, std::string spill_dir);

    /// nullptr on miss (caller recomputes and calls put).
    BlockPtr get(const BlockKey& key);
    void put(const BlockKey& key, BlockPtr block);

    /// True if this key was materialized before (used to count recomputes).
    bool seen(const BlockKey& key) const;
    void count_recompute();

    void drop(const BlockKey& key);  // test hook: forced eviction

    /// Lifecycle cleanup: forget blocks (and spill files) of datasets not in
    /// `keep`. Not counted as evictions — these blocks can never be needed
    /// again by construction.
    void retain_datasets(const std::set<std::uint64_t>& keep);
    BlockManagerStats stats() const;

private:
    struct Entry {
        BlockPtr payload;       // null when spilled or discarded
        std::uint64_t bytes = 0;
        std::uint64_t stamp = 0;
        bool on_disk = false;
    };

    void evict_until_fits_locked(std::uint64_t incoming);
    void evict_one_locked();
    std::string spill_path(const BlockKey& key) const;

    PersistenceMode mode_;
    std::uint64_t cap_;
    std::string spill_dir_;
    mutable std::mutex mu_;
    std::map<BlockKey, Entry> entries_;
    std::set<BlockKey> seen_;
    std::uint64_t clock_ = 0;
    std::uint64_t mem_used_ = 0;
    BlockManagerStats stats_;
};

} // namespace stackbundle
