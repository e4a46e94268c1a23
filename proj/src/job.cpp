#include "stackbundle/job.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "stackbundle/deconv.hpp"
#include "stackbundle/dstack.hpp"
#include "stackbundle/local_executor.hpp"
#include "stackbundle/scdl.hpp"
#include "stackbundle/telemetry.hpp"

namespace stackbundle {

using nlohmann::json;

Solver solver_from_string(const std::string& s) {
    if (s == "deconv-sparse") return Solver::DeconvSparse;
    if (s == "deconv-lowrank") return Solver::DeconvLowRank;
    if (s == "scdl") return Solver::Scdl;
    throw ConfigError("unknown solver: " + s);
}

std::string solver_to_string(Solver s) {
    switch (s) {
        case Solver::DeconvSparse: return "deconv-sparse";
        case Solver::DeconvLowRank: return "deconv-lowrank";
        case Solver::Scdl: return "scdl";
    }
    throw ConfigError("bad solver enum");
}

PersistenceMode persistence_from_string(const std::string& s) {
    if (s == "memory_only") return PersistenceMode::MemoryOnly;
    if (s == "memory_and_disk") return PersistenceMode::MemoryAndDisk;
    throw ConfigError("unknown persistence mode: " + s);
}

std::string persistence_to_string(PersistenceMode m) {
    return m == PersistenceMode::MemoryOnly ? "memory_only" : "memory_and_disk";
}

std::string resolve_spill_dir(const std::string& configured) {
    if (!configured.empty()) return configured;
    if (const char* env = std::getenv("STACKBUNDLE_SPILL_DIR"); env && *env) return env;
    return "/tmp/stackbundle-spill";
}

RunConfig RunConfig::from_json_text(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: bad JSON: ") + e.what());
    }
    try {
        RunConfig c;
        c.solver = solver_from_string(j.at("solver").get<std::string>());
        const json inputs = j.value("inputs", json::object());
        c.y_path = inputs.value("y", "");
        c.psf_path = inputs.value("psf", "");
        c.sigma_path = inputs.value("sigma", "");
        c.s_h_path = inputs.value("s_h", "");
        c.s_l_path = inputs.value("s_l", "");
        if (j.contains("partitions")) c.partitions = j["partitions"].get<std::size_t>();
        if (j.contains("partitions_factor"))
            c.partitions_factor = j["partitions_factor"].get<std::size_t>();
        c.workers = j.value("workers", 1);
        c.cores_per_worker = j.value("cores_per_worker", 1);
        c.persistence = persistence_from_string(j.value("persistence", "memory_only"));
        c.memory_cap_bytes = j.value("memory_cap_bytes", std::uint64_t{0});
        c.max_iter = j.value("i_max", 0);
        c.eps = j.value("eps", 1e-4);
        if (j.contains("lambda")) c.lambda = j["lambda"].get<double>();
        c.scales = j.value("scales", std::size_t{3});
        c.reweight_rounds = j.value("reweight_rounds", 0);
        c.kappa = j.value("kappa", 3.0);
        c.atoms = j.value("atoms", std::size_t{64});
        c.c1 = j.value("c1", 1.0);
        c.c2 = j.value("c2", 1.0);
        c.c3 = j.value("c3", 1.0);
        c.lambda_h = j.value("lambda_h", 0.1);
        c.lambda_l = j.value("lambda_l", 0.1);
        c.delta = j.value("delta", 1e-6);
        c.seed = j.value("seed", std::uint64_t{0});
        c.out_dir = j.value("out_dir", ".");
        c.run_id = j.value("run_id", "");
        c.master_addr = j.value("master_addr", "");
        c.spill_dir = j.value("spill_dir", "");
        if (c.partitions && c.partitions_factor)
            throw ConfigError("config: set exactly one of partitions / partitions_factor");
        if (c.workers < 1 || c.cores_per_worker < 1)
            throw ConfigError("config: workers and cores_per_worker must be >= 1");
        return c;
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
}

std::string RunConfig::to_json_text() const {
    json j;
    j["solver"] = solver_to_string(solver);
    json inputs = json::object();
    if (!y_path.empty()) inputs["y"] = y_path;
    if (!psf_path.empty()) inputs["psf"] = psf_path;
    if (!sigma_path.empty()) inputs["sigma"] = sigma_path;
    if (!s_h_path.empty()) inputs["s_h"] = s_h_path;
    if (!s_l_path.empty()) inputs["s_l"] = s_l_path;
    j["inputs"] = inputs;
    if (partitions) j["partitions"] = *partitions;
    if (partitions_factor) j["partitions_factor"] = *partitions_factor;
    j["workers"] = workers;
    j["cores_per_worker"] = cores_per_worker;
    j["persistence"] = persistence_to_string(persistence);
    j["memory_cap_bytes"] = memory_cap_bytes;
    j["i_max"] = max_iter;
    j["eps"] = eps;
    if (lambda) j["lambda"] = *lambda;
    j["scales"] = scales;
    j["reweight_rounds"] = reweight_rounds;
    j["kappa"] = kappa;
    j["atoms"] = atoms;
    j["c1"] = c1;
    j["c2"] = c2;
    j["c3"] = c3;
    j["lambda_h"] = lambda_h;
    j["lambda_l"] = lambda_l;
    j["delta"] = delta;
    j["seed"] = seed;
    j["out_dir"] = out_dir;
    if (!run_id.empty()) j["run_id"] = run_id;
    if (!master_addr.empty()) j["master_addr"] = master_addr;
    if (!spill_dir.empty()) j["spill_dir"] = spill_dir;
    return j.dump(2);
}

std::size_t RunConfig::resolve_partitions(int total_cores) const {
    if (partitions) {
        if (*partitions == 0) throw ConfigError("config: partitions must be >= 1");
        return *partitions;
    }
    if (partitions_factor) {
        if (*partitions_factor == 0 || total_cores < 1)
            throw ConfigError("config: bad partitions_factor");
        return *partitions_factor * static_cast<std::size_t>(total_cores);
    }
    throw ConfigError("config: set exactly one of partitions / partitions_factor");
}

namespace {

void fnv_mix(std::uint64_t& h, const void* data, std::size_t len) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 1099511628211ull;
    }
}

void fnv_file(std::uint64_t& h, const std::string& path) {
    if (path.empty()) return;
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("config: cannot read input " + path);
    char buf[1 << 16];
    while (f.read(buf, sizeof(buf)) || f.gcount() > 0)
        fnv_mix(h, buf, static_cast<std::size_t>(f.gcount()));
}

} // namespace

std::string RunConfig::problem_hash() const {
    std::uint64_t h = 1469598103934665603ull;
    const std::string s = solver_to_string(solver);
    fnv_mix(h, s.data(), s.size());
    for (const auto* p : {&y_path, &psf_path, &sigma_path, &s_h_path, &s_l_path})
        fnv_file(h, *p);
    const double knobs[] = {eps,
                            lambda ? *lambda : -1.0,
                            static_cast<double>(scales),
                            static_cast<double>(reweight_rounds),
                            kappa,
                            static_cast<double>(atoms),
                            c1,
                            c2,
                            c3,
                            lambda_h,
                            lambda_l,
                            delta,
                            static_cast<double>(seed),
                            static_cast<double>(max_iter)};
    fnv_mix(h, knobs, sizeof(knobs));
    std::ostringstream ss;
    ss << std::hex << h;
    return ss.str();
}

namespace {

std::vector<double> load_sigma(const std::string& path) {
    if (path.empty()) return {};
    const Tensor t = dstack_load(path);
    return t.data();
}

} // namespace

RunOutcome run_job(const RunConfig& cfg, Engine& engine, int total_cores) {
    const std::size_t parts = cfg.resolve_partitions(total_cores);
    const std::string hash = cfg.problem_hash();
    const std::string run_id =
        cfg.run_id.empty() ? solver_to_string(cfg.solver) + "-" + hash : cfg.run_id;

    std::filesystem::create_directories(cfg.out_dir);
    const std::string csv_path = cfg.out_dir + "/telemetry.csv";
    TelemetryRun telemetry(run_id, csv_path);
    auto hook = [&](int iter, double wall_ms, double cost) {
        telemetry.record_iteration(iter, wall_ms, cost, engine.worker_stats());
    };

    RunOutcome out;
    out.run_id = run_id;
    out.telemetry_path = csv_path;

    json manifest;
    manifest["run_id"] = run_id;
    manifest["problem_hash"] = hash;
    manifest["solver"] = solver_to_string(cfg.solver);
    manifest["partitions"] = parts;
    manifest["workers"] = cfg.workers;
    manifest["persistence"] = persistence_to_string(cfg.persistence);
    manifest["config"] = json::parse(cfg.to_json_text());

    if (cfg.solver == Solver::Scdl) {
        if (cfg.s_h_path.empty() || cfg.s_l_path.empty())
            throw ConfigError("config: scdl needs s_h and s_l inputs");
        ScdlProblem pb;
        pb.s_h = dstack_load(cfg.s_h_path);
        pb.s_l = dstack_load(cfg.s_l_path);
        pb.atoms = cfg.atoms;
        pb.c1 = cfg.c1;
        pb.c2 = cfg.c2;
        pb.c3 = cfg.c3;
        pb.lambda_h = cfg.lambda_h;
        pb.lambda_l = cfg.lambda_l;
        pb.delta = cfg.delta;
        pb.max_iter = cfg.max_iter > 0 ? cfg.max_iter : 100;
        pb.seed = cfg.seed;
        pb.partitions = parts;

        const ScdlResult r = scdl_train(pb, engine, hook);
        dstack_save(cfg.out_dir + "/x_h.dstack", r.x_h);
        dstack_save(cfg.out_dir + "/x_l.dstack", r.x_l);
        {
            std::ofstream nf(cfg.out_dir + "/nrmse.csv");
            nf << "iter,nrmse_h,nrmse_l,consensus\n";
            nf.precision(17);
            for (std::size_t i = 0; i < r.nrmse_history.size(); ++i)
                nf << (i + 1) << ',' << r.nrmse_history[i].first << ','
                   << r.nrmse_history[i].second << ',' << r.consensus_history[i] << '\n';
        }
        out.iterations = r.iterations;
        out.converged = !r.nrmse_history.empty();
        out.final_cost = r.nrmse_history.empty() ? 0.0 : r.nrmse_history.back().first;
        manifest["final_nrmse_h"] = out.final_cost;
        manifest["final_nrmse_l"] =
            r.nrmse_history.empty() ? 0.0 : r.nrmse_history.back().second;
    } else {
        if (cfg.y_path.empty() || cfg.psf_path.empty())
            throw ConfigError("config: deconv needs y and psf inputs");
        DeconvProblem pb;
        pb.y = dstack_load(cfg.y_path);
        pb.psf = dstack_load(cfg.psf_path);
        pb.sigma = load_sigma(cfg.sigma_path);
        pb.prior = cfg.solver == Solver::DeconvSparse ? DeconvPrior::Sparse
                                                      : DeconvPrior::LowRank;
        pb.lambda = cfg.lambda;
        pb.scales = cfg.scales;
        pb.reweight_rounds = cfg.reweight_rounds;
        pb.kappa = cfg.kappa;
        pb.max_iter = cfg.max_iter > 0 ? cfg.max_iter : 300;
        pb.eps = cfg.eps;
        pb.partitions = parts;

        const DeconvResult r = deconv_solve(pb, engine, hook);
        dstack_save(cfg.out_dir + "/x_p.dstack", r.x);
        out.iterations = r.iterations;
        out.converged = r.converged;
        out.final_cost = r.cost_history.empty() ? 0.0 : r.cost_history.back();
        manifest["final_cost"] = out.final_cost;
    }

    telemetry.close();
    manifest["iterations"] = out.iterations;
    manifest["converged"] = out.converged;
    out.manifest_path = cfg.out_dir + "/manifest.json";
    std::ofstream mf(out.manifest_path);
    if (!mf) throw IoError("cannot write " + out.manifest_path);
    mf << manifest.dump(2) << '\n';
    return out;
}

RunOutcome run_job_local(const RunConfig& cfg) {
    LocalExecutorConfig ec;
    ec.workers = cfg.workers;
    ec.cores_per_worker = cfg.cores_per_worker;
    ec.persistence = cfg.persistence;
    ec.memory_cap_bytes = cfg.memory_cap_bytes == 0 ? UINT64_MAX : cfg.memory_cap_bytes;
    ec.spill_dir = resolve_spill_dir(cfg.spill_dir);

    EngineConfig engc;
    engc.persistence = cfg.persistence;
    engc.memory_cap_bytes = ec.memory_cap_bytes;
    engc.spill_dir = ec.spill_dir;

    Engine engine(engc, std::make_unique<LocalExecutor>(ec));
    return run_job(cfg, engine, cfg.workers * cfg.cores_per_worker);
}

} // namespace stackbundle
