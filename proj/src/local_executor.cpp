#include "stackbundle/local_executor.hpp"

#include <atomic>
#include <exception>
#include <mutex>
#include <thread>

namespace stackbundle {

LocalExecutor::LocalExecutor(LocalExecutorConfig config) : config_(std::move(config)) {
    if (config_.workers < 1) throw ConfigError("local executor: workers must be >= 1");
    if (config_.cores_per_worker < 1)
        throw ConfigError("local executor: cores_per_worker must be >= 1");
}

LocalExecutor::~LocalExecutor() = default;

void LocalExecutor::attach(DriverServices* driver) {
    driver_ = driver;
    for (int w = 0; w < config_.workers; ++w) {
        workers_.push_back(std::make_unique<WorkerRuntime>(
            config_.persistence, config_.memory_cap_bytes,
            config_.spill_dir + "/worker" + std::to_string(w),
            [this](const BlockKey& key) { return driver_->source_block(key); }));
    }
}

StageResult LocalExecutor::run_stage(const StageRequest& req) {
    // share lineage and the current broadcast environment with every worker
    for (auto& w : workers_) {
        w->learn_lineage(req.lineage);
        if (pushed_epoch_ != req.broadcast_epoch)
            w->set_broadcasts(driver_->broadcast_env());
    }
    pushed_epoch_ = req.broadcast_epoch;

    if (locality_.size() < req.num_partitions) locality_.resize(req.num_partitions, -1);
    std::vector<int> owner(req.num_partitions);
    {
        std::vector<int> cores(workers_.size(), config_.cores_per_worker);
        auto fallback = assign_partitions(req.num_partitions, cores);
        for (std::size_t p = 0; p < req.num_partitions; ++p)
            owner[p] = locality_[p] >= 0 ? locality_[p] : fallback[p];
    }

    StageResult result;
    if (req.kind == StageRequest::Kind::Collect)
        result.blocks.resize(req.num_partitions);
    else
        result.reduced.resize(req.num_partitions);

    std::exception_ptr failure;
    std::mutex failure_mu;

    std::vector<std::thread> threads;
    for (std::size_t w = 0; w < workers_.size(); ++w) {
        std::vector<std::uint32_t> parts;
        for (std::size_t p = 0; p < req.num_partitions; ++p)
            if (owner[p] == static_cast<int>(w)) parts.push_back(static_cast<std::uint32_t>(p));
        if (parts.empty()) continue;
        threads.emplace_back([this, &req, &result, &failure, &failure_mu, w,
                              parts = std::move(parts)] {
            WorkerRuntime& rt = *workers_[w];
            std::atomic<std::size_t> next{0};
            auto run_tasks = [&] {
                for (;;) {
                    const std::size_t i = next.fetch_add(1);
                    if (i >= parts.size()) return;
                    const BlockKey key{req.dataset, parts[i]};
                    try {
                        if (req.kind == StageRequest::Kind::Collect) {
                            BlockPtr blk = rt.materialize(key);
                            result.blocks[parts[i]] = *blk;
                        } else {
                            result.reduced[parts[i]] =
                                rt.reduce_partition(key, req.reduce_map, req.reduce_combine);
                        }
                    } catch (...) {
                        std::lock_guard lock(failure_mu);
                        if (!failure) failure = std::current_exception();
                        return;
                    }
                }
            };
            const int lanes = std::min<int>(config_.cores_per_worker,
                                            static_cast<int>(parts.size()));
            if (lanes <= 1) {
                run_tasks();
            } else {
                std::vector<std::thread> lanes_t;
                for (int l = 0; l < lanes; ++l) lanes_t.emplace_back(run_tasks);
                for (auto& t : lanes_t) t.join();
            }
        });
    }
    for (auto& t : threads) t.join();
    if (failure) std::rethrow_exception(failure);

    for (std::size_t p = 0; p < req.num_partitions; ++p) locality_[p] = owner[p];
    return result;
}

std::vector<WorkerStats> LocalExecutor::worker_stats() {
    std::vector<WorkerStats> out;
    for (std::size_t w = 0; w < workers_.size(); ++w)
        out.push_back(WorkerStats{static_cast<int>(w), workers_[w]->blocks().stats()});
    return out;
}

void LocalExecutor::drop_block(const BlockKey& key) {
    for (auto& w : workers_) w->blocks().drop(key);
}

} // namespace stackbundle
