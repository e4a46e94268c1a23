#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <thread>

#include <json.hpp>

#include "stackbundle/cluster_master.hpp"
#include "stackbundle/cluster_worker.hpp"
#include "stackbundle/datagen.hpp"
#include "stackbundle/dstack.hpp"
#include "stackbundle/job.hpp"
#include "stackbundle/net.hpp"

using namespace stackbundle;
using nlohmann::json;

namespace {

std::string read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    REQUIRE(f.good());
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

std::filesystem::path fresh_dir(const char* tag) {
    auto p = std::filesystem::temp_directory_path() / ("sb_cluster_" + std::string(tag));
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

RunConfig make_deconv_config(const std::filesystem::path& dir) {
    GalaxyStackSpec spec;
    spec.n_images = 8;
    spec.stamp_size = 9;
    spec.psf_size = 5;
    spec.n_unique_psfs = 3;
    spec.noise_sigma = 0.02;
    spec.seed = 21;
    const GalaxyStack s = gen_galaxy_stack(spec);
    dstack_save((dir / "y.dstack").string(), s.observed);
    dstack_save((dir / "psf.dstack").string(), s.psf);
    dstack_save((dir / "sigma.dstack").string(), Tensor({s.sigma.size()}, s.sigma));

    RunConfig cfg;
    cfg.solver = Solver::DeconvSparse;
    cfg.y_path = (dir / "y.dstack").string();
    cfg.psf_path = (dir / "psf.dstack").string();
    cfg.sigma_path = (dir / "sigma.dstack").string();
    cfg.partitions = 4;
    cfg.scales = 2;
    cfg.max_iter = 3;
    cfg.eps = 0.0;
    return cfg;
}

} // namespace

TEST_CASE("parse_addr") {
    const auto [host, port] = parse_addr("127.0.0.1:7077");
    CHECK(host == "127.0.0.1");
    CHECK(port == 7077);
    CHECK_THROWS_AS(parse_addr("no-port"), ConfigError);
}

TEST_CASE("run config json round trip") {
    const auto dir = fresh_dir("cfg");
    RunConfig cfg = make_deconv_config(dir);
    cfg.workers = 3;
    cfg.persistence = PersistenceMode::MemoryAndDisk;
    const RunConfig back = RunConfig::from_json_text(cfg.to_json_text());
    CHECK(back.solver == cfg.solver);
    CHECK(back.y_path == cfg.y_path);
    CHECK(back.partitions == cfg.partitions);
    CHECK(back.workers == 3);
    CHECK(back.persistence == PersistenceMode::MemoryAndDisk);
    CHECK(back.max_iter == 3);
    CHECK(back.problem_hash() == cfg.problem_hash());

    CHECK_THROWS_AS(RunConfig::from_json_text("not json"), ConfigError);
    CHECK_THROWS_AS(RunConfig::from_json_text(
                        R"({"solver":"scdl","partitions":2,"partitions_factor":2})"),
                    ConfigError);
    CHECK(RunConfig::from_json_text(R"({"solver":"scdl","partitions_factor":2})")
              .resolve_partitions(4) == 8);
}

TEST_CASE("cluster job equals the local run and survives a duplicated task") {
    register_builtin_kernels();
    const auto dir = fresh_dir("job");

    MasterConfig mc;
    mc.port = 0;
    mc.expect_workers = 1;
    ClusterMaster master(mc);
    master.start();
    const std::string addr = "127.0.0.1:" + std::to_string(master.port());

    // a worker with a stale kernel registry is refused
    {
        auto [host, port] = parse_addr(addr);
        Socket bogus = Socket::connect(host, port);
        const json reg{{"role", "worker"},
                       {"worker_id", 99},
                       {"cores", 1},
                       {"memory_cap", 0},
                       {"registry_hash", "deadbeef"}};
        bogus.send_frame(Opcode::Register, pack_payload(reg.dump(), {}));
        const auto reply = bogus.recv_frame(5000);
        REQUIRE(reply.has_value());
        CHECK(reply->opcode == Opcode::Error);
    }

    WorkerProcessConfig wc;
    wc.master_addr = addr;
    wc.worker_id = 0;
    wc.spill_dir = (dir / "spill").string();
    std::thread worker_thread([wc] { ClusterWorker(wc).run(); });
    master.wait_for_workers();

    RunConfig cfg = make_deconv_config(dir);
    cfg.out_dir = (dir / "local").string();
    const RunOutcome local = run_job_local(cfg);
    CHECK(local.iterations == 3);

    cfg.out_dir = (dir / "cluster").string();
    const std::string manifest = submit_job(addr, cfg);
    CHECK(json::parse(manifest).value("iterations", 0) == 3);
    CHECK(read_file(cfg.out_dir + "/x_p.dstack") ==
          read_file((dir / "local" / "x_p.dstack").string()));

    // at-most-once: an injected duplicate task must not change the result
    setenv("STACKBUNDLE_TEST_FORCE_RETRY", "1", 1);
    cfg.out_dir = (dir / "retry").string();
    const std::string manifest2 = submit_job(addr, cfg);
    unsetenv("STACKBUNDLE_TEST_FORCE_RETRY");
    CHECK(json::parse(manifest2).value("iterations", 0) == 3);
    CHECK(read_file(cfg.out_dir + "/x_p.dstack") ==
          read_file((dir / "local" / "x_p.dstack").string()));

    master.stop();
    worker_thread.join();
    std::filesystem::remove_all(dir);
}

TEST_CASE("worker gives up after its connect retry budget") {
    WorkerProcessConfig wc;
    wc.master_addr = "127.0.0.1:1";  // nothing listens here
    wc.connect_retries = 2;
    wc.retry_delay_ms = 10;
    CHECK_THROWS_AS(ClusterWorker(wc).run(), ConfigError);
}
