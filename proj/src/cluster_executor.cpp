#include <algorithm>
#include <chrono>
#include <cstdlib>

#include "stackbundle/cluster_master.hpp"
#include "stackbundle/cluster_proto.hpp"
#include "stackbundle/frame.hpp"
#include "stackbundle/job.hpp"

namespace stackbundle {

using nlohmann::json;

ClusterExecutor::ClusterExecutor(ClusterMaster* master, PersistenceMode persistence,
                                 std::uint64_t memory_cap_bytes)
    : master_(master), persistence_(persistence), memory_cap_(memory_cap_bytes),
      job_id_(++master->job_counter_) {}

ClusterExecutor::~ClusterExecutor() { master_->driver_.store(nullptr); }

void ClusterExecutor::attach(DriverServices* driver) { master_->driver_.store(driver); }

StageResult ClusterExecutor::run_stage(const StageRequest& req) {
    // Snapshot the worker set, ordered by worker_id for determinism.
    std::vector<ClusterMaster::WorkerConn*> workers;
    {
        std::lock_guard lk(master_->mu_);
        for (auto& w : master_->workers_) workers.push_back(w.get());
    }
    std::sort(workers.begin(), workers.end(),
              [](auto* a, auto* b) { return a->worker_id < b->worker_id; });
    if (workers.empty()) throw JobError("cluster: no registered workers");

    // Locality-first assignment; unseen partitions fall back to the
    // proportional rule.
    if (locality_.size() < req.num_partitions) locality_.resize(req.num_partitions, -1);
    std::vector<int> cores;
    cores.reserve(workers.size());
    for (auto* w : workers) cores.push_back(w->cores);
    const std::vector<int> fallback = assign_partitions(req.num_partitions, cores);
    std::vector<std::vector<std::uint32_t>> tasks(workers.size());
    for (std::size_t p = 0; p < req.num_partitions; ++p) {
        int slot = locality_[p];
        if (slot < 0 || slot >= static_cast<int>(workers.size())) slot = fallback[p];
        locality_[p] = slot;
        tasks[slot].push_back(static_cast<std::uint32_t>(p));
    }

    const std::uint64_t stage_id = next_stage_++;
    DriverServices* drv = master_->driver_.load();
    if (!drv) throw StateError("cluster executor not attached");

    const char* force_retry = std::getenv("STACKBUNDLE_TEST_FORCE_RETRY");
    bool inject = force_retry && *force_retry == '1' && !retry_injected_;

    std::vector<std::size_t> expected(workers.size(), 0);
    for (std::size_t wi = 0; wi < workers.size(); ++wi) {
        if (tasks[wi].empty()) continue;
        auto* w = workers[wi];
        // Push the broadcast environment once per epoch, and job parameters
        // piggybacked on every task.
        if (w->pushed_epoch != req.broadcast_epoch) {
            auto [bj, bbin] = proto::env_to_payload(req.broadcast_epoch, drv->broadcast_env());
            master_->send_frame_locked(w, Opcode::Broadcast,
                                       pack_payload(bj.dump(), bbin));
            w->pushed_epoch = req.broadcast_epoch;
        }
        json tj = proto::stage_to_json(req, tasks[wi], stage_id);
        tj["job"] = {{"id", job_id_},
                     {"persistence", persistence_to_string(persistence_)},
                     {"memory_cap", memory_cap_}};
        const auto payload = pack_payload(tj.dump(), {});
        master_->send_frame_locked(w, Opcode::Task, payload);
        expected[wi] = 1;
        if (inject) {
            // Simulated at-most-once retry: the same task is delivered twice;
            // pure kernels over immutable blocks must yield identical bytes.
            master_->send_frame_locked(w, Opcode::Task, payload);
            expected[wi] = 2;
            inject = false;
            retry_injected_ = true;
        }
    }

    StageResult out;
    out.blocks.resize(req.num_partitions);
    out.reduced.resize(req.num_partitions);

    const auto deadline_slack = std::chrono::milliseconds(master_->cfg_.heartbeat_timeout_ms);
    for (std::size_t wi = 0; wi < workers.size(); ++wi) {
        if (expected[wi] == 0) continue;
        auto* w = workers[wi];
        std::vector<ClusterMaster::PendingResult> got;
        {
            std::unique_lock lk(w->mu);
            while (true) {
                for (auto it = w->results.begin(); it != w->results.end();) {
                    if (it->stage_id == stage_id) {
                        got.push_back(std::move(*it));
                        it = w->results.erase(it);
                    } else {
                        ++it;
                    }
                }
                if (got.size() >= expected[wi]) break;
                if (w->dead)
                    throw JobError("cluster: worker " + std::to_string(w->worker_id) +
                                   " lost: " + w->death_reason);
                if (w->cv.wait_for(lk, deadline_slack) == std::cv_status::timeout) {
                    const auto silent_ms =
                        std::chrono::duration_cast<std::chrono::milliseconds>(
                            std::chrono::steady_clock::now().time_since_epoch())
                            .count() -
                        w->last_seen_ms.load();
                    if (silent_ms > master_->cfg_.heartbeat_timeout_ms)
                        throw JobError("cluster: worker " + std::to_string(w->worker_id) +
                                       " heartbeat timeout");
                }
            }
        }
        if (got.size() > 1 &&
            (got[0].json != got[1].json || got[0].binary != got[1].binary))
            throw JobError("cluster: duplicate task produced diverging results");
        const auto& r = got.front();
        const json j = json::parse(r.json);
        if (!j.value("ok", false))
            throw JobError("cluster: task failed on worker " +
                           std::to_string(w->worker_id) + ": " +
                           j.value("error", "unknown"));
        w->stats.worker_id = w->worker_id;
        const json s = j.value("stats", json::object());
        w->stats.blocks.mem_bytes_used = s.value("mem", std::uint64_t{0});
        w->stats.blocks.disk_bytes_used = s.value("disk", std::uint64_t{0});
        w->stats.blocks.evictions = s.value("evictions", std::uint64_t{0});
        w->stats.blocks.spills = s.value("spills", std::uint64_t{0});
        w->stats.blocks.recomputes = s.value("recomputes", std::uint64_t{0});

        const auto parts = j.at("partitions").get<std::vector<std::uint32_t>>();
        const auto sizes = j.at("sizes").get<std::vector<std::size_t>>();
        if (parts.size() != sizes.size()) throw ProtocolError("cluster: bad result sizes");
        std::size_t off = 0;
        for (std::size_t i = 0; i < parts.size(); ++i) {
            auto records = block_from_bytes(r.binary.data() + off, sizes[i]);
            off += sizes[i];
            if (req.kind == StageRequest::Kind::Reduce) {
                if (records.size() != 1)
                    throw ProtocolError("cluster: reduce result must be one record");
                out.reduced[parts[i]] = std::move(records[0]);
            } else {
                out.blocks[parts[i]] = std::move(records);
            }
        }
    }
    return out;
}

std::vector<WorkerStats> ClusterExecutor::worker_stats() {
    std::vector<WorkerStats> out;
    std::lock_guard lk(master_->mu_);
    for (const auto& w : master_->workers_) out.push_back(w->stats);
    std::sort(out.begin(), out.end(),
              [](const WorkerStats& a, const WorkerStats& b) { return a.worker_id < b.worker_id; });
    return out;
}

} // namespace stackbundle
