#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>

#include "stackbundle/engine.hpp"

namespace stackbundle {

enum class Solver { DeconvSparse, DeconvLowRank, Scdl };

/// One solver run, fully described: reproducible from this + the input files.
struct RunConfig {
    Solver solver = Solver::DeconvSparse;

    // deconv inputs
    std::string y_path, psf_path, sigma_path;
    // scdl inputs
    std::string s_h_path, s_l_path;

    std::optional<std::size_t> partitions;
    std::optional<std::size_t> partitions_factor;  // N = factor * total cores
    int workers = 1;
    int cores_per_worker = 1;
    PersistenceMode persistence = PersistenceMode::MemoryOnly;
    std::uint64_t memory_cap_bytes = 0;  // 0 = unlimited
    int max_iter = 0;                    // 0 = solver default
    double eps = 1e-4;

    // deconv knobs
    std::optional<double> lambda;
    std::size_t scales = 3;
    int reweight_rounds = 0;
    double kappa = 3.0;

    // scdl knobs
    std::size_t atoms = 64;
    double c1 = 1.0, c2 = 1.0, c3 = 1.0;
    double lambda_h = 0.1, lambda_l = 0.1;
    double delta = 1e-6;

    std::uint64_t seed = 0;
    std::string out_dir = ".";
    std::string run_id;                  // empty = derived from hash
    std::string master_addr;             // empty = local executor
    std::string spill_dir;               // empty = default/env

    static RunConfig from_json_text(const std::string& text);
    std::string to_json_text() const;

    std::size_t resolve_partitions(int total_cores) const;
    /// Hash over solver, input bytes, and numeric knobs (not topology):
    /// identifies the mathematical problem for run comparison.
    std::string problem_hash() const;
};

Solver solver_from_string(const std::string& s);
std::string solver_to_string(Solver s);
PersistenceMode persistence_from_string(const std::string& s);
std::string persistence_to_string(PersistenceMode m);

/// Spill directory resolution: explicit config, else STACKBUNDLE_SPILL_DIR,
/// else the built-in default.
std::string resolve_spill_dir(const std::string& configured);

struct RunOutcome {
    std::string run_id;
    int iterations = 0;
    bool converged = false;
    double final_cost = 0.0;             // cost (deconv) or NRMSE_h (scdl)
    std::string manifest_path;
    std::string telemetry_path;
};

/// Executes the configured solver on the given engine, writing result
/// dstacks, telemetry CSV, and manifest.json under out_dir.
RunOutcome run_job(const RunConfig& cfg, Engine& engine, int total_cores);

/// Convenience: build a local-executor engine from cfg and run.
RunOutcome run_job_local(const RunConfig& cfg);

} // namespace stackbundle
