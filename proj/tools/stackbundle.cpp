// stackbundle CLI: data generation, solver runs (local or cluster), the
// master/worker daemons, and run reports.
//
// Exit codes: 0 success, 2 config/usage error, 3 distributed-job failure,
// 4 numeric failure.

#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "stackbundle/cluster_master.hpp"
#include "stackbundle/cluster_worker.hpp"
#include "stackbundle/datagen.hpp"
#include "stackbundle/dstack.hpp"
#include "stackbundle/job.hpp"
#include "stackbundle/telemetry.hpp"

using namespace stackbundle;
using nlohmann::json;

namespace {

void write_sidecar(const std::string& path, const json& j) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot write " + path);
    f << j.dump(2) << '\n';
}

int cmd_gen_galaxy(const std::string& out_dir, std::size_t n, std::size_t size,
                   std::size_t psf_size, std::size_t unique_psfs, double sigma,
                   std::uint64_t seed) {
    GalaxyStackSpec spec;
    spec.n_images = n;
    spec.stamp_size = size;
    spec.psf_size = psf_size;
    spec.n_unique_psfs = unique_psfs;
    spec.noise_sigma = sigma;
    spec.seed = seed;
    const GalaxyStack stack = gen_galaxy_stack(spec);
    std::filesystem::create_directories(out_dir);
    dstack_save(out_dir + "/y.dstack", stack.observed);
    dstack_save(out_dir + "/x_true.dstack", stack.truth);
    dstack_save(out_dir + "/psf.dstack", stack.psf);
    dstack_save(out_dir + "/sigma.dstack", Tensor({stack.sigma.size()}, stack.sigma));
    write_sidecar(out_dir + "/gen.json",
                  {{"kind", "galaxy"},
                   {"n", n},
                   {"size", size},
                   {"psf_size", psf_size},
                   {"unique_psfs", unique_psfs},
                   {"sigma", sigma},
                   {"seed", seed}});
    std::cout << "wrote " << out_dir << "/{y,x_true,psf,sigma}.dstack\n";
    return 0;
}

int cmd_gen_patches(const std::string& out_dir, std::size_t p, std::size_t m,
                    std::size_t k, double blur, std::uint64_t seed) {
    PatchPairSpec spec;
    spec.p_side = p;
    spec.m_side = m;
    spec.patches = k;
    spec.blur_sigma = blur;
    spec.seed = seed;
    const PatchPairs pairs = gen_patch_pairs(spec);
    std::filesystem::create_directories(out_dir);
    dstack_save(out_dir + "/s_h.dstack", pairs.s_h);
    dstack_save(out_dir + "/s_l.dstack", pairs.s_l);
    write_sidecar(out_dir + "/gen.json",
                  {{"kind", "patches"},
                   {"p", p},
                   {"m", m},
                   {"k", k},
                   {"blur", blur},
                   {"seed", seed}});
    std::cout << "wrote " << out_dir << "/{s_h,s_l}.dstack\n";
    return 0;
}

int cmd_gen_coupled(const std::string& out_dir, std::size_t p_dim, std::size_t m_dim,
                    std::size_t atoms, std::size_t k, std::size_t sparsity,
                    std::uint64_t seed) {
    const PatchPairs pairs = gen_coupled_sparse(p_dim, m_dim, atoms, k, sparsity, seed);
    std::filesystem::create_directories(out_dir);
    dstack_save(out_dir + "/s_h.dstack", pairs.s_h);
    dstack_save(out_dir + "/s_l.dstack", pairs.s_l);
    write_sidecar(out_dir + "/gen.json",
                  {{"kind", "coupled"},
                   {"p_dim", p_dim},
                   {"m_dim", m_dim},
                   {"atoms", atoms},
                   {"k", k},
                   {"sparsity", sparsity},
                   {"seed", seed}});
    std::cout << "wrote " << out_dir << "/{s_h,s_l}.dstack\n";
    return 0;
}

int cmd_run(const std::string& config_path) {
    std::ifstream f(config_path);
    if (!f) throw ConfigError("cannot read config " + config_path);
    std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    const RunConfig cfg = RunConfig::from_json_text(text);
    if (!cfg.master_addr.empty()) {
        const std::string reply = submit_job(cfg.master_addr, cfg);
        const json j = json::parse(reply);
        std::cout << "run " << j.value("run_id", "") << ": iterations="
                  << j.value("iterations", 0) << " converged="
                  << (j.value("converged", false) ? "true" : "false")
                  << " final=" << j.value("final_cost", 0.0) << '\n';
        return 0;
    }
    const RunOutcome out = run_job_local(cfg);
    std::cout << "run " << out.run_id << ": iterations=" << out.iterations
              << " converged=" << (out.converged ? "true" : "false")
              << " final=" << out.final_cost << '\n';
    return 0;
}

int cmd_master(const std::string& bind_addr, int port, int expect, int timeout_ms) {
    MasterConfig cfg;
    cfg.bind_addr = bind_addr;
    cfg.port = port;
    cfg.expect_workers = expect;
    cfg.heartbeat_timeout_ms = timeout_ms;
    ClusterMaster master(cfg);
    master.start();
    std::cout << "master listening on " << bind_addr << ":" << master.port()
              << ", waiting for " << expect << " workers\n";
    master.wait_for_workers();
    std::cout << "workers registered; serving\n";
    master.serve();
    return 0;
}

int cmd_worker(const std::string& master_addr, int id, int cores,
               std::uint64_t memory_cap, const std::string& spill_dir) {
    WorkerProcessConfig cfg;
    cfg.master_addr = master_addr;
    cfg.worker_id = id;
    cfg.cores = cores;
    cfg.memory_cap_bytes = memory_cap;
    cfg.spill_dir = spill_dir;
    ClusterWorker worker(cfg);
    worker.run();
    return 0;
}

int cmd_report(const std::string& baseline_csv, const std::string& parallel_csv,
               const std::string& out_dir) {
    const SpeedupReport r = speedup_report(baseline_csv, parallel_csv);
    const json j{{"speedup", r.speedup},
                 {"baseline_total_ms", r.baseline_total_ms},
                 {"parallel_total_ms", r.parallel_total_ms},
                 {"baseline_median_ms", r.baseline_median_ms},
                 {"baseline_p25_ms", r.baseline_p25_ms},
                 {"baseline_p75_ms", r.baseline_p75_ms},
                 {"parallel_median_ms", r.parallel_median_ms},
                 {"parallel_p25_ms", r.parallel_p25_ms},
                 {"parallel_p75_ms", r.parallel_p75_ms}};
    std::cout << j.dump(2) << '\n';
    if (!out_dir.empty()) {
        std::filesystem::create_directories(out_dir);
        write_sidecar(out_dir + "/speedup.json", j);
        std::ofstream conv(out_dir + "/convergence.csv");
        if (!conv) throw IoError("cannot write convergence table");
        conv << "iter,cost\n";
        conv.precision(17);
        for (const auto& row : telemetry_load(parallel_csv))
            if (row.worker_id == -1 && row.cost)
                conv << row.iter << ',' << *row.cost << '\n';
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"stackbundle: bundled-dataset engine with deconvolution and "
                 "coupled dictionary learning solvers"};
    app.require_subcommand(1);

    // gen
    auto* gen = app.add_subcommand("gen", "generate synthetic datasets");
    gen->require_subcommand(1);

    std::string out_dir = ".";
    std::size_t n = 128, size = 41, psf_size = 13, unique_psfs = 600;
    double sigma = 0.01;
    std::uint64_t seed = 0;
    auto* galaxy = gen->add_subcommand("galaxy", "galaxy stamp stack with varying PSFs");
    galaxy->add_option("--n", n, "number of images");
    galaxy->add_option("--size", size, "stamp side (odd)");
    galaxy->add_option("--psf-size", psf_size, "PSF side (odd)");
    galaxy->add_option("--unique-psfs", unique_psfs, "distinct PSFs, reused cyclically");
    galaxy->add_option("--sigma", sigma, "noise standard deviation");
    galaxy->add_option("--seed", seed, "RNG seed");
    galaxy->add_option("--out", out_dir, "output directory");

    std::size_t p = 5, m = 3, k = 2000, sparsity = 5, p_dim = 25, m_dim = 9, atoms = 64;
    double blur = 1.0;
    auto* patches = gen->add_subcommand("patches", "coupled low/high-res patch pairs");
    patches->add_option("--p", p, "high-res patch side");
    patches->add_option("--m", m, "low-res patch side");
    patches->add_option("--k", k, "number of patches");
    patches->add_option("--blur", blur, "Gaussian blur sigma for the low-res path");
    patches->add_option("--seed", seed, "RNG seed");
    patches->add_option("--out", out_dir, "output directory");

    auto* coupled = gen->add_subcommand(
        "coupled", "synthetic sparse-code pairs with known ground truth");
    coupled->add_option("--p-dim", p_dim, "high-res dimension");
    coupled->add_option("--m-dim", m_dim, "low-res dimension");
    coupled->add_option("--atoms", atoms, "ground-truth dictionary atoms");
    coupled->add_option("--k", k, "number of samples");
    coupled->add_option("--sparsity", sparsity, "nonzeros per code column");
    coupled->add_option("--seed", seed, "RNG seed");
    coupled->add_option("--out", out_dir, "output directory");

    // run
    std::string config_path;
    auto* run = app.add_subcommand("run", "execute a solver run from a JSON config");
    run->add_option("--config", config_path, "run config JSON")->required();

    // master / worker
    std::string bind_addr = "127.0.0.1", master_addr, spill_dir;
    int port = 7077, expect = 1, timeout_ms = 6000, worker_id = 0, cores = 1;
    std::uint64_t memory_cap = 0;
    auto* master = app.add_subcommand("master", "run the cluster master");
    master->add_option("--bind", bind_addr, "bind address");
    master->add_option("--port", port, "port (0 = ephemeral)");
    master->add_option("--expect", expect, "workers to wait for");
    master->add_option("--heartbeat-timeout", timeout_ms, "worker timeout (ms)");

    auto* worker = app.add_subcommand("worker", "run a cluster worker");
    worker->add_option("--master-addr", master_addr, "master host:port")->required();
    worker->add_option("--id", worker_id, "worker id (unique per cluster)");
    worker->add_option("--cores", cores, "concurrent task slots");
    worker->add_option("--memory-cap", memory_cap, "block cache cap in bytes (0 = unlimited)");
    worker->add_option("--spill-dir", spill_dir, "spill directory override");

    // report
    std::string baseline_csv, parallel_csv, report_out;
    auto* report = app.add_subcommand("report", "speedup and convergence report");
    report->add_option("--baseline", baseline_csv, "baseline telemetry CSV")->required();
    report->add_option("--parallel", parallel_csv, "parallel telemetry CSV")->required();
    report->add_option("--out", report_out, "directory for speedup.json/convergence.csv");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        register_builtin_kernels();
        if (galaxy->parsed())
            return cmd_gen_galaxy(out_dir, n, size, psf_size, unique_psfs, sigma, seed);
        if (patches->parsed()) return cmd_gen_patches(out_dir, p, m, k, blur, seed);
        if (coupled->parsed())
            return cmd_gen_coupled(out_dir, p_dim, m_dim, atoms, k, sparsity, seed);
        if (run->parsed()) return cmd_run(config_path);
        if (master->parsed()) return cmd_master(bind_addr, port, expect, timeout_ms);
        if (worker->parsed())
            return cmd_worker(master_addr, worker_id, cores, memory_cap, spill_dir);
        if (report->parsed()) {
            try {
                return cmd_report(baseline_csv, parallel_csv, report_out);
            } catch (const JobError& e) {
                std::cerr << "error: " << e.what() << '\n';
                return 2;  // mismatched/missing runs are usage errors here
            }
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const IoError& e) {
        std::cerr << "io error: " << e.what() << '\n';
        return 2;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << '\n';
        return 4;
    } catch (const Error& e) {
        std::cerr << "job error: " << e.what() << '\n';
        return 3;
    }
    return 2;
}
