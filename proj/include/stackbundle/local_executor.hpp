#pragma once

#include <memory>
#include <vector>

#include "stackbundle/engine.hpp"

namespace stackbundle {

struct LocalExecutorConfig {
    int workers = 1;
    int cores_per_worker = 1;
    PersistenceMode persistence = PersistenceMode::MemoryOnly;
    std::uint64_t memory_cap_bytes = UINT64_MAX;
    std::string spill_dir = "/tmp/stackbundle-spill";
};

/// In-process executor: M workers, each with its own block manager and up
/// to `cores_per_worker` concurrent tasks. Locality-first assignment:
/// a partition re-runs on the worker that computed it last.
class LocalExecutor final : public Executor {
public:
    explicit LocalExecutor(LocalExecutorConfig config);
    ~LocalExecutor() override;

    void attach(DriverServices* driver) override;
    StageResult run_stage(const StageRequest& req) override;
    std::vector<WorkerStats> worker_stats() override;

    /// Test hook: evict one block from every worker cache.
    void drop_block(const BlockKey& key);

private:
    LocalExecutorConfig config_;
    DriverServices* driver_ = nullptr;
    std::vector<std::unique_ptr<WorkerRuntime>> workers_;
    std::vector<int> locality_;  // partition -> last worker, grown on demand
    std::uint64_t pushed_epoch_ = 0;
};

} // namespace stackbundle
