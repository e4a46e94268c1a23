#include "stackbundle/cluster_worker.hpp"

#include <chrono>
#include <deque>
#include <memory>
#include <mutex>
#include <sstream>
#include <thread>

#include "stackbundle/cluster_proto.hpp"
#include "stackbundle/engine.hpp"
#include "stackbundle/frame.hpp"
#include "stackbundle/job.hpp"
#include "stackbundle/net.hpp"

namespace stackbundle {

using nlohmann::json;

ClusterWorker::ClusterWorker(WorkerProcessConfig cfg) : cfg_(std::move(cfg)) {
    register_builtin_kernels();
}

namespace {

struct Connection {
    Socket sock;
    std::mutex send_mu;

    void send(Opcode op, const std::vector<std::uint8_t>& payload) {
        std::lock_guard lk(send_mu);
        sock.send_frame(op, payload);
    }
};

} // namespace

void ClusterWorker::run() {
    const auto [host, port] = parse_addr(cfg_.master_addr);
    Connection conn;
    for (int attempt = 0;; ++attempt) {
        try {
            conn.sock = Socket::connect(host, port);
            break;
        } catch (const Error&) {
            if (attempt + 1 >= cfg_.connect_retries)
                throw ConfigError("worker: master unreachable after " +
                                  std::to_string(cfg_.connect_retries) + " attempts");
            std::this_thread::sleep_for(std::chrono::milliseconds(cfg_.retry_delay_ms));
        }
    }

    std::ostringstream hash_ss;
    hash_ss << std::hex << KernelRegistry::instance().hash();
    const json reg{{"role", "worker"},
                   {"worker_id", cfg_.worker_id},
                   {"cores", cfg_.cores},
                   {"memory_cap", cfg_.memory_cap_bytes},
                   {"registry_hash", hash_ss.str()}};
    conn.send(Opcode::Register, pack_payload(reg.dump(), {}));
    auto ack = conn.sock.recv_frame(10000);
    if (!ack) throw JobError("worker: master closed during registration");
    if (ack->opcode == Opcode::Error)
        throw JobError("worker: registration refused: " +
                       json::parse(unpack_payload(ack->payload).first)
                           .value("error", "unknown"));
    if (ack->opcode != Opcode::RegisterAck)
        throw ProtocolError("worker: unexpected registration reply");

    std::atomic<bool> stop{false};
    std::thread heartbeat([&] {
        while (!stop) {
            std::this_thread::sleep_for(std::chrono::milliseconds(cfg_.heartbeat_ms));
            if (stop) break;
            try {
                conn.send(Opcode::Heartbeat, {});
            } catch (const Error&) {
                break;
            }
        }
    });
    struct StopGuard {
        std::atomic<bool>& stop;
        std::thread& hb;
        Socket& sock;
        ~StopGuard() {
            stop = true;
            sock.shutdown_both();
            if (hb.joinable()) hb.join();
        }
    } guard{stop, heartbeat, conn.sock};

    // Source blocks come from the driver over this same connection. Frames
    // that are not the BLOCK_GET reply (e.g. a re-delivered task) are queued
    // for the main loop.
    std::deque<Frame> pending;
    auto fetch_source = [&conn, &pending](const BlockKey& key) -> BlockPtr {
        const json req{{"dataset", key.dataset}, {"partition", key.partition}};
        conn.send(Opcode::BlockGet, pack_payload(req.dump(), {}));
        std::optional<Frame> f;
        while (true) {
            f = conn.sock.recv_frame(30000);
            if (!f) throw JobError("worker: master closed while fetching block");
            if (f->opcode == Opcode::Task || f->opcode == Opcode::Broadcast) {
                pending.push_back(std::move(*f));
                continue;
            }
            break;
        }
        if (f->opcode == Opcode::Error)
            throw LineageError("worker: source block refused: " +
                               json::parse(unpack_payload(f->payload).first)
                                   .value("error", "unknown"));
        if (f->opcode != Opcode::BlockData)
            throw ProtocolError("worker: expected BLOCK_DATA");
        const auto [jtext, bin] = unpack_payload(f->payload);
        return std::make_shared<const std::vector<Record>>(
            block_from_bytes(bin.data(), bin.size()));
    };

    std::unique_ptr<WorkerRuntime> runtime;
    std::uint64_t current_job = 0;
    std::uint64_t env_epoch = 0;
    std::map<std::string, Record> env;
    const std::string spill_base =
        resolve_spill_dir(cfg_.spill_dir) + "/worker" + std::to_string(cfg_.worker_id);

    while (true) {
        std::optional<Frame> f;
        if (!pending.empty()) {
            f = std::move(pending.front());
            pending.pop_front();
        } else {
            f = conn.sock.recv_frame();
        }
        if (!f) throw JobError("worker: master connection lost");
        if (f->opcode == Opcode::Shutdown) return;
        if (f->opcode == Opcode::Heartbeat) continue;
        if (f->opcode == Opcode::Broadcast) {
            const auto [jtext, bin] = unpack_payload(f->payload);
            auto [epoch, e] = proto::env_from_payload(json::parse(jtext), bin);
            env_epoch = epoch;
            env = std::move(e);
            if (runtime) runtime->set_broadcasts(env);
            continue;
        }
        if (f->opcode != Opcode::Task) throw ProtocolError("worker: unexpected opcode");

        const auto [jtext, bin] = unpack_payload(f->payload);
        const json tj = json::parse(jtext);
        json reply;
        std::vector<std::uint8_t> binary;
        try {
            const json job = tj.at("job");
            const auto job_id = job.at("id").get<std::uint64_t>();
            if (!runtime || job_id != current_job) {
                std::uint64_t cap = job.at("memory_cap").get<std::uint64_t>();
                if (cfg_.memory_cap_bytes != 0)
                    cap = std::min(cap == 0 ? UINT64_MAX : cap, cfg_.memory_cap_bytes);
                runtime = std::make_unique<WorkerRuntime>(
                    persistence_from_string(job.at("persistence").get<std::string>()),
                    cap == 0 ? UINT64_MAX : cap,
                    spill_base + "/job" + std::to_string(job_id), fetch_source);
                runtime->set_broadcasts(env);
                current_job = job_id;
            }
            std::vector<std::uint32_t> parts;
            std::uint64_t stage_id = 0;
            const StageRequest req = proto::stage_from_json(tj, &parts, &stage_id);
            runtime->learn_lineage(req.lineage);
            if (req.broadcast_epoch != env_epoch && req.broadcast_epoch != 0)
                throw StateError("worker: missing broadcast epoch");

            std::vector<std::size_t> sizes;
            for (const std::uint32_t p : parts) {
                const BlockKey key{req.dataset, p};
                std::vector<std::uint8_t> bytes;
                if (req.kind == StageRequest::Kind::Reduce) {
                    const Record r =
                        runtime->reduce_partition(key, req.reduce_map, req.reduce_combine);
                    bytes = block_to_bytes({r});
                } else {
                    bytes = block_to_bytes(*runtime->materialize(key));
                }
                sizes.push_back(bytes.size());
                binary.insert(binary.end(), bytes.begin(), bytes.end());
            }
            const auto stats = runtime->blocks().stats();
            reply = {{"ok", true},
                     {"stage_id", stage_id},
                     {"worker_id", cfg_.worker_id},
                     {"partitions", parts},
                     {"sizes", sizes},
                     {"stats",
                      {{"mem", stats.mem_bytes_used},
                       {"disk", stats.disk_bytes_used},
                       {"evictions", stats.evictions},
                       {"spills", stats.spills},
                       {"recomputes", stats.recomputes}}}};
        } catch (const Error& e) {
            binary.clear();
            reply = {{"ok", false},
                     {"stage_id", tj.value("stage_id", std::uint64_t{0})},
                     {"worker_id", cfg_.worker_id},
                     {"error", e.what()}};
        }
        conn.send(Opcode::TaskResult, pack_payload(reply.dump(), binary));
    }
}

} // namespace stackbundle
