#pragma once

#include <atomic>
#include <cstdint>
#include <string>

#include "stackbundle/block_manager.hpp"

namespace stackbundle {

struct WorkerProcessConfig {
    std::string master_addr;
    int worker_id = 0;
    int cores = 1;
    std::uint64_t memory_cap_bytes = 0;  // 0 = unlimited
    std::string spill_dir;               // empty = default/env
    int connect_retries = 5;
    int retry_delay_ms = 1000;
    int heartbeat_ms = 2000;
};

/// Worker role: registers with the master, then executes TASK frames until
/// SHUTDOWN. Throws ConfigError when the master is unreachable after the
/// retry budget, JobError on mid-run connection loss.
class ClusterWorker {
public:
    explicit ClusterWorker(WorkerProcessConfig cfg);
    void run();

private:
    WorkerProcessConfig cfg_;
};

} // namespace stackbundle
