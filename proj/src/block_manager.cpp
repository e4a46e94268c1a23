#include "stackbundle/block_manager.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "stackbundle/errors.hpp"

namespace stackbundle {

namespace {

std::uint64_t block_bytes(const std::vector<Record>& records) {
    std::uint64_t n = 0;
    for (const Record& r : records) n += record_payload_bytes(r);
    return n;
}

} // namespace

BlockManager::BlockManager(PersistenceMode mode, std::uint64_t memory_cap_bytes,
                           std::string spill_dir)
    : mode_(mode), cap_(memory_cap_bytes), spill_dir_(std::move(spill_dir)) {
    if (mode_ == PersistenceMode::MemoryAndDisk) {
        if (spill_dir_.empty()) throw ConfigError("block manager: spill_dir required");
        std::filesystem::create_directories(spill_dir_);
    }
}

std::string BlockManager::spill_path(const BlockKey& key) const {
    std::ostringstream ss;
    ss << spill_dir_ << "/" << key.dataset << "_" << key.partition << ".blk";
    return ss.str();
}

BlockPtr BlockManager::get(const BlockKey& key) {
    std::lock_guard lock(mu_);
    auto it = entries_.find(key);
    if (it == entries_.end()) return nullptr;
    Entry& e = it->second;
    if (e.payload) {
        e.stamp = ++clock_;
        return e.payload;
    }
    if (e.on_disk) {
        std::ifstream f(spill_path(key), std::ios::binary);
        if (!f) throw StorageError("block manager: spill file missing: " + spill_path(key));
        std::ostringstream buf;
        buf << f.rdbuf();
        const std::string s = buf.str();
        auto records = block_from_bytes(reinterpret_cast<const std::uint8_t*>(s.data()), s.size());
        auto blk = std::make_shared<std::vector<Record>>(std::move(records));
        evict_until_fits_locked(e.bytes);
        e.payload = blk;
        e.stamp = ++clock_;
        mem_used_ += e.bytes;
        stats_.mem_bytes_used = mem_used_;
        return blk;
    }
    // discarded under MemoryOnly
    entries_.erase(it);
    return nullptr;
}

void BlockManager::put(const BlockKey& key, BlockPtr block) {
    std::lock_guard lock(mu_);
    const std::uint64_t bytes = block_bytes(*block);
    auto it = entries_.find(key);
    if (it != entries_.end() && it->second.payload) return;  // already cached
    if (bytes <= cap_) {
        evict_until_fits_locked(bytes);
        Entry e;
        e.payload = std::move(block);
        e.bytes = bytes;
        e.stamp = ++clock_;
        e.on_disk = (it != entries_.end() && it->second.on_disk);
        entries_[key] = std::move(e);
        mem_used_ += bytes;
    } else if (mode_ == PersistenceMode::MemoryAndDisk) {
        // larger than the whole cap: spill straight to disk
        auto bytes_out = block_to_bytes(*block);
        std::ofstream f(spill_path(key), std::ios::binary);
        if (!f) throw StorageError("block manager: cannot write spill file");
        f.write(reinterpret_cast<const char*>(bytes_out.data()),
                static_cast<std::streamsize>(bytes_out.size()));
        Entry e;
        e.bytes = bytes;
        e.on_disk = true;
        stats_.spills += 1;
        stats_.disk_bytes_used += bytes;
        entries_[key] = std::move(e);
    }
    seen_.insert(key);
    stats_.mem_bytes_used = mem_used_;
}

void BlockManager::evict_until_fits_locked(std::uint64_t incoming) {
    while (mem_used_ + incoming > cap_) {
        evict_one_locked();
    }
}

void BlockManager::evict_one_locked() {
    const Entry* best = nullptr;
    const BlockKey* best_key = nullptr;
    for (const auto& [key, e] : entries_) {
        if (!e.payload) continue;
        if (!best || e.stamp < best->stamp ||
            (e.stamp == best->stamp && key < *best_key)) {
            best = &e;
            best_key = &key;
        }
    }
    if (!best) throw StorageError("block manager: memory cap too small for working set");
    Entry& e = entries_[*best_key];
    if (mode_ == PersistenceMode::MemoryAndDisk && !e.on_disk) {
        auto bytes_out = block_to_bytes(*e.payload);
        std::ofstream f(spill_path(*best_key), std::ios::binary);
        if (!f) throw StorageError("block manager: cannot write spill file");
        f.write(reinterpret_cast<const char*>(bytes_out.data()),
                static_cast<std::streamsize>(bytes_out.size()));
        e.on_disk = true;
        stats_.spills += 1;
        stats_.disk_bytes_used += e.bytes;
    }
    mem_used_ -= e.bytes;
    e.payload = nullptr;
    stats_.evictions += 1;
    stats_.mem_bytes_used = mem_used_;
    if (mode_ == PersistenceMode::MemoryOnly) entries_.erase(*best_key);
}

bool BlockManager::seen(const BlockKey& key) const {
    std::lock_guard lock(mu_);
    return seen_.count(key) != 0;
}

void BlockManager::count_recompute() {
    std::lock_guard lock(mu_);
    stats_.recomputes += 1;
}

void BlockManager::drop(const BlockKey& key) {
    std::lock_guard lock(mu_);
    auto it = entries_.find(key);
    if (it == entries_.end() || !it->second.payload) return;
    Entry& e = it->second;
    if (mode_ == PersistenceMode::MemoryAndDisk && !e.on_disk) {
        auto bytes_out = block_to_bytes(*e.payload);
        std::ofstream f(spill_path(key), std::ios::binary);
        f.write(reinterpret_cast<const char*>(bytes_out.data()),
                static_cast<std::streamsize>(bytes_out.size()));
        e.on_disk = true;
        stats_.spills += 1;
        stats_.disk_bytes_used += e.bytes;
    }
    mem_used_ -= e.bytes;
    e.payload = nullptr;
    stats_.evictions += 1;
    stats_.mem_bytes_used = mem_used_;
    if (mode_ == PersistenceMode::MemoryOnly) entries_.erase(it);
}

void BlockManager::retain_datasets(const std::set<std::uint64_t>& keep) {
    std::lock_guard lock(mu_);
    for (auto it = entries_.begin(); it != entries_.end();) {
        if (keep.count(it->first.dataset)) {
            ++it;
            continue;
        }
        Entry& e = it->second;
        if (e.payload) mem_used_ -= e.bytes;
        if (e.on_disk) {
            std::error_code ec;
            std::filesystem::remove(spill_path(it->first), ec);
            stats_.disk_bytes_used -= e.bytes;
        }
        it = entries_.erase(it);
    }
    for (auto it = seen_.begin(); it != seen_.end();)
        it = keep.count(it->dataset) ? std::next(it) : seen_.erase(it);
    stats_.mem_bytes_used = mem_used_;
}

BlockManagerStats BlockManager::stats() const {
    std::lock_guard lock(mu_);
    return stats_;
}

} // namespace stackbundle
