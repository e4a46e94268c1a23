#include "stackbundle/cluster_master.hpp"

#include <chrono>
#include <sstream>

#include "stackbundle/cluster_proto.hpp"
#include "stackbundle/frame.hpp"

namespace stackbundle {

using nlohmann::json;

namespace {

std::int64_t now_ms() {
    return std::chrono::duration_cast<std::chrono::milliseconds>(
               std::chrono::steady_clock::now().time_since_epoch())
        .count();
}

} // namespace

ClusterMaster::ClusterMaster(MasterConfig cfg) : cfg_(std::move(cfg)) {
    register_builtin_kernels();
}

ClusterMaster::~ClusterMaster() { stop(); }

void ClusterMaster::start() {
    listener_ = std::make_unique<Listener>(cfg_.bind_addr, cfg_.port);
    acceptor_ = std::thread([this] { accept_loop(); });
}

int ClusterMaster::port() const {
    if (!listener_) throw StateError("master not started");
    return listener_->port();
}

void ClusterMaster::wait_for_workers() {
    std::unique_lock lk(mu_);
    workers_cv_.wait(lk, [this] {
        return stopping_ || workers_.size() >= static_cast<std::size_t>(cfg_.expect_workers);
    });
}

void ClusterMaster::serve() {
    std::unique_lock lk(serve_mu_);
    serve_cv_.wait(lk, [this] { return stopping_.load(); });
}

void ClusterMaster::stop() {
    if (stopping_.exchange(true)) return;
    {
        std::lock_guard lk(mu_);
        for (auto& w : workers_) {
            try {
                send_frame_locked(w.get(), Opcode::Shutdown, {});
            } catch (const Error&) {
            }
            w->sock.shutdown_both();  // wakes the reader; reader owns the close
        }
        if (listener_) listener_->close();  // unblocks accept with an error
    }
    workers_cv_.notify_all();
    serve_cv_.notify_all();
    if (acceptor_.joinable()) acceptor_.join();
    std::vector<std::thread> drivers;
    {
        std::lock_guard lk(mu_);
        drivers.swap(driver_threads_);
    }
    for (auto& w : workers_)
        if (w->reader.joinable()) w->reader.join();
    for (auto& t : drivers)
        if (t.joinable()) t.join();
}

void ClusterMaster::send_frame_locked(WorkerConn* w, Opcode op,
                                      const std::vector<std::uint8_t>& payload) {
    std::lock_guard lk(w->send_mu);
    w->sock.send_frame(op, payload);
}

void ClusterMaster::accept_loop() {
    while (!stopping_) {
        Socket sock;
        try {
            sock = listener_->accept();
        } catch (const Error&) {
            break;  // listener closed during stop()
        }
        std::optional<Frame> reg;
        try {
            reg = sock.recv_frame(cfg_.heartbeat_timeout_ms);
        } catch (const Error&) {
            continue;
        }
        if (!reg || reg->opcode != Opcode::Register) continue;
        json j;
        try {
            j = json::parse(unpack_payload(reg->payload).first);
        } catch (const std::exception&) {
            continue;
        }
        const std::string role = j.value("role", "worker");
        if (role == "driver") {
            try {
                sock.send_frame(Opcode::RegisterAck, pack_payload("{}", {}));
            } catch (const Error&) {
                continue;
            }
            std::lock_guard lk(mu_);
            driver_threads_.emplace_back(
                [this, s = std::move(sock)]() mutable { handle_driver(std::move(s)); });
            continue;
        }

        const int wid = j.value("worker_id", -1);
        std::ostringstream hash_ss;
        hash_ss << std::hex << KernelRegistry::instance().hash();
        const std::string my_hash = hash_ss.str();
        std::string refuse;
        if (j.value("registry_hash", "") != my_hash)
            refuse = "kernel registry hash mismatch";
        {
            std::lock_guard lk(mu_);
            for (const auto& w : workers_)
                if (w->worker_id == wid) refuse = "duplicate worker_id";
        }
        if (!refuse.empty()) {
            try {
                sock.send_frame(Opcode::Error,
                                pack_payload(json{{"error", refuse}}.dump(), {}));
            } catch (const Error&) {
            }
            continue;
        }

        auto w = std::make_unique<WorkerConn>();
        w->worker_id = wid;
        w->cores = j.value("cores", 1);
        w->memory_cap = j.value("memory_cap", std::uint64_t{0});
        w->sock = std::move(sock);
        w->last_seen_ms = now_ms();
        w->stats.worker_id = wid;
        try {
            w->sock.send_frame(Opcode::RegisterAck, pack_payload("{}", {}));
        } catch (const Error&) {
            continue;
        }
        WorkerConn* wp = w.get();
        {
            std::lock_guard lk(mu_);
            workers_.push_back(std::move(w));
        }
        wp->reader = std::thread([this, wp] { reader_loop(wp); });
        workers_cv_.notify_all();
    }
}

void ClusterMaster::reader_loop(WorkerConn* w) {
    try {
        while (!stopping_) {
            auto f = w->sock.recv_frame();
            if (!f) break;
            w->last_seen_ms = now_ms();
            switch (f->opcode) {
                case Opcode::Heartbeat:
                    break;
                case Opcode::BlockGet: {
                    const auto [jtext, bin] = unpack_payload(f->payload);
                    const json j = json::parse(jtext);
                    const BlockKey key{j.at("dataset").get<std::uint64_t>(),
                                       j.at("partition").get<std::uint32_t>()};
                    DriverServices* drv = driver_.load();
                    BlockPtr block = drv ? drv->source_block(key) : nullptr;
                    if (!block) {
                        send_frame_locked(
                            w, Opcode::Error,
                            pack_payload(json{{"error", "unknown source block"}}.dump(), {}));
                        break;
                    }
                    send_frame_locked(w, Opcode::BlockData,
                                      pack_payload(jtext, block_to_bytes(*block)));
                    break;
                }
                case Opcode::TaskResult: {
                    auto [jtext, bin] = unpack_payload(f->payload);
                    const json j = json::parse(jtext);
                    PendingResult r;
                    r.stage_id = j.at("stage_id").get<std::uint64_t>();
                    r.json = jtext;
                    r.binary = std::move(bin);
                    {
                        std::lock_guard lk(w->mu);
                        w->results.push_back(std::move(r));
                    }
                    w->cv.notify_all();
                    break;
                }
                default:
                    throw ProtocolError("master: unexpected opcode from worker");
            }
        }
    } catch (const Error& e) {
        std::lock_guard lk(w->mu);
        w->death_reason = e.what();
    }
    {
        std::lock_guard lk(w->mu);
        w->dead = true;
    }
    w->cv.notify_all();
}

void ClusterMaster::handle_driver(Socket sock) {
    try {
        while (!stopping_) {
            auto f = sock.recv_frame();
            if (!f) return;
            if (f->opcode == Opcode::Shutdown) {
                std::thread([this] { stop(); }).detach();
                return;
            }
            if (f->opcode == Opcode::Heartbeat) continue;
            if (f->opcode != Opcode::Task) throw ProtocolError("master: expected job TASK");

            json reply;
            try {
                std::lock_guard job_lk(job_mu_);
                const RunConfig cfg =
                    RunConfig::from_json_text(unpack_payload(f->payload).first);
                int total_cores = 0;
                {
                    std::lock_guard lk(mu_);
                    for (const auto& w : workers_) total_cores += w->cores;
                }
                const std::uint64_t cap =
                    cfg.memory_cap_bytes == 0 ? UINT64_MAX : cfg.memory_cap_bytes;
                EngineConfig engc;
                engc.persistence = cfg.persistence;
                engc.memory_cap_bytes = cap;
                Engine engine(engc, std::make_unique<ClusterExecutor>(this, cfg.persistence, cap));
                const RunOutcome out = run_job(cfg, engine, total_cores);
                reply["ok"] = true;
                reply["run_id"] = out.run_id;
                reply["manifest_path"] = out.manifest_path;
                reply["iterations"] = out.iterations;
                reply["converged"] = out.converged;
                reply["final_cost"] = out.final_cost;
            } catch (const ConfigError& e) {
                reply = {{"ok", false}, {"error", e.what()}, {"kind", "config"}};
            } catch (const NumericError& e) {
                reply = {{"ok", false}, {"error", e.what()}, {"kind", "numeric"}};
            } catch (const Error& e) {
                reply = {{"ok", false}, {"error", e.what()}, {"kind", "job"}};
            }
            sock.send_frame(Opcode::TaskResult, pack_payload(reply.dump(), {}));
        }
    } catch (const Error&) {
        // driver connection lost; nothing to clean up beyond the socket
    }
}

std::string submit_job(const std::string& master_addr, const RunConfig& cfg) {
    const auto [host, port] = parse_addr(master_addr);
    Socket sock = Socket::connect(host, port);
    sock.send_frame(Opcode::Register, pack_payload(json{{"role", "driver"}}.dump(), {}));
    auto ack = sock.recv_frame(10000);
    if (!ack || ack->opcode != Opcode::RegisterAck)
        throw JobError("driver registration refused by master");
    sock.send_frame(Opcode::Task, pack_payload(cfg.to_json_text(), {}));
    auto res = sock.recv_frame();
    if (!res || res->opcode != Opcode::TaskResult)
        throw JobError("master closed connection before job completion");
    const std::string reply = unpack_payload(res->payload).first;
    const json j = json::parse(reply);
    if (!j.value("ok", false)) {
        const std::string kind = j.value("kind", "job");
        const std::string msg = j.value("error", "unknown failure");
        if (kind == "config") throw ConfigError(msg);
        if (kind == "numeric") throw NumericError(msg);
        throw JobError(msg);
    }
    return reply;
}

void request_shutdown(const std::string& master_addr) {
    const auto [host, port] = parse_addr(master_addr);
    Socket sock = Socket::connect(host, port);
    sock.send_frame(Opcode::Register, pack_payload(json{{"role", "driver"}}.dump(), {}));
    auto ack = sock.recv_frame(10000);
    if (!ack || ack->opcode != Opcode::RegisterAck)
        throw JobError("driver registration refused by master");
    sock.send_frame(Opcode::Shutdown, {});
}

} // namespace stackbundle
