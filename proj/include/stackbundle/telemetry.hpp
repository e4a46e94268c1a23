#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "stackbundle/engine.hpp"

namespace stackbundle {

/// Per-iteration measurement rows, one CSV per run:
/// run_id,iter,worker_id,wall_ms,cost,mem_bytes_used,disk_bytes_used,evictions,spills,recomputes
/// Driver rows use worker_id = -1 and carry the cost/NRMSE value.
class TelemetryRun {
public:
    TelemetryRun(std::string run_id, std::string csv_path);
    ~TelemetryRun();

    void record_iteration(int iter, double wall_ms, double cost,
                          const std::vector<WorkerStats>& workers);
    void close();
    const std::string& csv_path() const { return csv_path_; }

private:
    std::string run_id_;
    std::string csv_path_;
    std::vector<std::string> rows_;
    bool open_ = true;
};

struct TelemetryRow {
    std::string run_id;
    int iter = 0;
    int worker_id = -1;
    double wall_ms = 0.0;
    std::optional<double> cost;
    std::uint64_t mem_bytes_used = 0;
    std::uint64_t disk_bytes_used = 0;
    std::uint64_t evictions = 0;
    std::uint64_t spills = 0;
    std::uint64_t recomputes = 0;
};

std::vector<TelemetryRow> telemetry_load(const std::string& csv_path);

/// Linear-interpolation percentile (p in [0,100]) over unsorted values.
double percentile(std::vector<double> values, double p);

struct SpeedupReport {
    double speedup = 0.0;           // baseline total wall / parallel total wall
    double baseline_total_ms = 0.0;
    double parallel_total_ms = 0.0;
    double baseline_median_ms = 0.0, baseline_p25_ms = 0.0, baseline_p75_ms = 0.0;
    double parallel_median_ms = 0.0, parallel_p25_ms = 0.0, parallel_p75_ms = 0.0;
};

/// Compares two completed runs. When both CSVs have a sibling manifest.json
/// with a problem_hash field the hashes must match.
SpeedupReport speedup_report(const std::string& baseline_csv, const std::string& parallel_csv);

} // namespace stackbundle
