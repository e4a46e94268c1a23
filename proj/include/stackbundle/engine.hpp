#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "stackbundle/block_manager.hpp"
#include "stackbundle/kernels.hpp"
#include "stackbundle/tensor.hpp"

namespace stackbundle {

struct LineageNode {
    enum class Kind { Source, Map, Zip, Unbundle };
    Kind kind = Kind::Source;
    std::vector<std::uint64_t> parents;
    std::string kernel;      // Map only
    std::uint32_t slot = 0;  // Unbundle only
};

struct DatasetInfo {
    std::uint64_t id = 0;
    std::size_t num_partitions = 0;
    std::vector<std::size_t> partition_counts;  // records per partition
    LineageNode node;
};

struct DatasetHandle {
    std::uint64_t id = 0;
    std::size_t num_partitions = 0;
};

struct WorkerStats {
    int worker_id = -1;
    BlockManagerStats blocks;
};

struct StageRequest {
    enum class Kind { Collect, Reduce };
    Kind kind = Kind::Collect;
    std::uint64_t dataset = 0;
    std::size_t num_partitions = 0;
    std::string reduce_map;
    std::string reduce_combine;
    // lineage closure of `dataset`, topologically complete
    std::vector<DatasetInfo> lineage;
    std::uint64_t broadcast_epoch = 0;
};

struct StageResult {
    // Collect: blocks[p] = records of partition p. Reduce: reduced[p].
    std::vector<std::vector<Record>> blocks;
    std::vector<Record> reduced;
};

/// Driver-side services an executor needs: pinned source blocks and the
/// broadcast environment.
class DriverServices {
public:
    virtual ~DriverServices() = default;
    virtual BlockPtr source_block(const BlockKey& key) const = 0;
    virtual const std::map<std::string, Record>& broadcast_env() const = 0;
    virtual std::uint64_t broadcast_epoch() const = 0;
};

class Executor {
public:
    virtual ~Executor() = default;
    virtual void attach(DriverServices* driver) = 0;
    virtual StageResult run_stage(const StageRequest& req) = 0;
    virtual std::vector<WorkerStats> worker_stats() = 0;
};

struct EngineConfig {
    PersistenceMode persistence = PersistenceMode::MemoryOnly;
    std::uint64_t memory_cap_bytes = UINT64_MAX;
    std::string spill_dir = "/tmp/stackbundle-spill";
    bool truncate_lineage = true;  // re-root after checkpoint()
};

/// The driver: dataset table, lineage, pinned sources, actions. Single
/// logical scheduler thread; actions are blocking calls.
class Engine final : public DriverServices {
public:
    Engine(EngineConfig config, std::unique_ptr<Executor> executor);

    /// Split the leading axis of `stack` into N contiguous partitions; the
    /// first (R mod N) partitions hold one extra record.
    DatasetHandle parallelize(const Tensor& stack, std::size_t partitions);
    DatasetHandle parallelize_records(std::vector<Record> records, std::size_t partitions);

    DatasetHandle zip_bundle(const std::vector<DatasetHandle>& handles);
    DatasetHandle map(const DatasetHandle& d, const std::string& kernel_id);
    DatasetHandle unbundle(const DatasetHandle& d, std::uint32_t slot);

    std::vector<Record> collect(const DatasetHandle& d);
    Record reduce(const DatasetHandle& d, const std::string& map_kernel_id,
                  const std::string& combine_kernel_id);

    void broadcast(const std::string& name, Record value);

    /// Materialize d and re-root it as a new pinned source (lineage
    /// truncation). With truncate_lineage=false returns d unchanged.
    DatasetHandle checkpoint(const DatasetHandle& d);

    /// Unpin a source dataset's driver-held blocks. Callers promise the
    /// dataset is never referenced again (solver loops release the previous
    /// iteration's checkpoint). No-op for non-source datasets.
    void release(const DatasetHandle& d);

    const DatasetInfo& info(std::uint64_t id) const;
    std::vector<WorkerStats> worker_stats() { return executor_->worker_stats(); }

    // DriverServices
    BlockPtr source_block(const BlockKey& key) const override;
    const std::map<std::string, Record>& broadcast_env() const override { return broadcasts_; }
    std::uint64_t broadcast_epoch() const override { return broadcast_epoch_; }

private:
    DatasetHandle add_source(std::vector<std::vector<Record>> blocks);
    std::vector<DatasetInfo> lineage_closure(std::uint64_t id) const;
    StageRequest make_request(const DatasetHandle& d, StageRequest::Kind kind) const;

    EngineConfig config_;
    std::unique_ptr<Executor> executor_;
    std::map<std::uint64_t, DatasetInfo> datasets_;
    std::map<BlockKey, BlockPtr> pinned_;
    std::map<std::string, Record> broadcasts_;
    std::uint64_t broadcast_epoch_ = 0;
    std::uint64_t next_id_ = 1;
};

/// Shared worker-side materialization: recursive lineage walk over a
/// per-worker block manager. Used by the local executor and cluster workers.
class WorkerRuntime {
public:
    using SourceFetch = std::function<BlockPtr(const BlockKey&)>;

    WorkerRuntime(PersistenceMode mode, std::uint64_t cap, std::string spill_dir,
                  SourceFetch fetch_source);

    void learn_lineage(const std::vector<DatasetInfo>& nodes);
    void set_broadcasts(std::map<std::string, Record> env);
    const std::map<std::string, Record>& broadcasts() const { return broadcasts_; }

    BlockPtr materialize(const BlockKey& key);
    Record reduce_partition(const BlockKey& key, const std::string& map_kernel,
                            const std::string& combine_kernel);

    BlockManager& blocks() { return blocks_; }

private:
    BlockPtr compute(const BlockKey& key);

    BlockManager blocks_;
    SourceFetch fetch_source_;
    std::map<std::uint64_t, DatasetInfo> lineage_;
    std::map<std::string, Record> broadcasts_;
};

/// Deterministic partition sizing: first (R mod N) partitions take
/// ceil(R/N), the rest floor(R/N).
std::vector<std::size_t> partition_sizes(std::size_t records, std::size_t partitions);

/// Proportional-to-cores contiguous task assignment; ties to lowest worker.
std::vector<int> assign_partitions(std::size_t partitions, const std::vector<int>& cores);

} // namespace stackbundle
