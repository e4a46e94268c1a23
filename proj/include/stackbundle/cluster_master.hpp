#pragma once

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "stackbundle/engine.hpp"
#include "stackbundle/job.hpp"
#include "stackbundle/net.hpp"

namespace stackbundle {

struct MasterConfig {
    std::string bind_addr = "127.0.0.1";
    int port = 0;                     // 0 = ephemeral
    int expect_workers = 1;
    int heartbeat_timeout_ms = 6000;  // 3 missed 2 s heartbeats
};

class ClusterExecutor;

/// Driver-side cluster service: accepts worker registrations (refusing
/// kernel-registry mismatches), then runs submitted jobs over them. One job
/// at a time; workers are fixed for the master's lifetime.
class ClusterMaster {
public:
    explicit ClusterMaster(MasterConfig cfg);
    ~ClusterMaster();

    void start();             // begin listening/accepting
    int port() const;
    void wait_for_workers();  // blocks until expect_workers registered
    void serve();             // blocks until a driver requests shutdown
    void stop();

private:
    friend class ClusterExecutor;

    struct PendingResult {
        std::uint64_t stage_id = 0;
        std::string json;
        std::vector<std::uint8_t> binary;
    };

    struct WorkerConn {
        int worker_id = -1;
        int cores = 1;
        std::uint64_t memory_cap = 0;
        Socket sock;
        std::mutex send_mu;
        std::atomic<std::int64_t> last_seen_ms{0};
        std::uint64_t pushed_epoch = 0;
        std::uint64_t pushed_job = 0;
        WorkerStats stats;
        std::thread reader;
        std::mutex mu;
        std::condition_variable cv;
        std::vector<PendingResult> results;
        bool dead = false;
        std::string death_reason;
    };

    void accept_loop();
    void reader_loop(WorkerConn* w);
    void handle_driver(Socket sock);
    void send_frame_locked(WorkerConn* w, Opcode op, const std::vector<std::uint8_t>& payload);

    MasterConfig cfg_;
    std::unique_ptr<Listener> listener_;
    std::thread acceptor_;
    std::vector<std::thread> driver_threads_;
    std::vector<std::unique_ptr<WorkerConn>> workers_;  // sorted by worker_id on use
    mutable std::mutex mu_;
    std::condition_variable workers_cv_;
    std::atomic<bool> stopping_{false};
    std::mutex job_mu_;                 // one job at a time
    std::atomic<std::uint64_t> job_counter_{0};
    std::atomic<DriverServices*> driver_{nullptr};
    std::mutex serve_mu_;
    std::condition_variable serve_cv_;
};

/// Executor running stages over a master's registered workers.
class ClusterExecutor final : public Executor {
public:
    ClusterExecutor(ClusterMaster* master, PersistenceMode persistence,
                    std::uint64_t memory_cap_bytes);
    ~ClusterExecutor() override;

    void attach(DriverServices* driver) override;
    StageResult run_stage(const StageRequest& req) override;
    std::vector<WorkerStats> worker_stats() override;

private:
    ClusterMaster* master_;
    PersistenceMode persistence_;
    std::uint64_t memory_cap_;
    std::uint64_t job_id_;
    std::uint64_t next_stage_ = 1;
    std::vector<int> locality_;
    bool retry_injected_ = false;
};

/// Driver client: submit a run to a master (blocking; returns the manifest
/// JSON text) or ask it to shut down.
std::string submit_job(const std::string& master_addr, const RunConfig& cfg);
void request_shutdown(const std::string& master_addr);

} // namespace stackbundle
