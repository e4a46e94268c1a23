#include "stackbundle/telemetry.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace stackbundle {

namespace {

constexpr const char* kHeader =
    "run_id,iter,worker_id,wall_ms,cost,mem_bytes_used,disk_bytes_used,"
    "evictions,spills,recomputes";

std::string fmt_double(double v) {
    std::ostringstream ss;
    ss.precision(17);
    ss << v;
    return ss.str();
}

} // namespace

TelemetryRun::TelemetryRun(std::string run_id, std::string csv_path)
    : run_id_(std::move(run_id)), csv_path_(std::move(csv_path)) {}

TelemetryRun::~TelemetryRun() {
    if (open_) close();
}

void TelemetryRun::record_iteration(int iter, double wall_ms, double cost,
                                    const std::vector<WorkerStats>& workers) {
    if (!open_) throw StateError("telemetry: run already closed");
    for (const auto& w : workers) {
        std::ostringstream ss;
        ss << run_id_ << ',' << iter << ',' << w.worker_id << ',' << fmt_double(wall_ms)
           << ",," << w.blocks.mem_bytes_used << ',' << w.blocks.disk_bytes_used << ','
           << w.blocks.evictions << ',' << w.blocks.spills << ',' << w.blocks.recomputes;
        rows_.push_back(ss.str());
    }
    std::ostringstream ss;
    ss << run_id_ << ',' << iter << ",-1," << fmt_double(wall_ms) << ','
       << fmt_double(cost) << ",0,0,0,0,0";
    rows_.push_back(ss.str());
}

void TelemetryRun::close() {
    if (!open_) return;
    open_ = false;
    const auto dir = std::filesystem::path(csv_path_).parent_path();
    if (!dir.empty()) std::filesystem::create_directories(dir);
    std::ofstream f(csv_path_);
    if (!f) throw IoError("telemetry: cannot write " + csv_path_);
    f << kHeader << '\n';
    for (const auto& r : rows_) f << r << '\n';
}

std::vector<TelemetryRow> telemetry_load(const std::string& csv_path) {
    std::ifstream f(csv_path);
    if (!f) throw IoError("telemetry: cannot read " + csv_path);
    std::vector<TelemetryRow> out;
    std::string line;
    bool first = true;
    while (std::getline(f, line)) {
        if (first) {
            first = false;
            if (line != kHeader) throw IoError("telemetry: unexpected CSV header");
            continue;
        }
        if (line.empty()) continue;
        std::vector<std::string> cols;
        std::stringstream ss(line);
        std::string col;
        while (std::getline(ss, col, ',')) cols.push_back(col);
        while (cols.size() < 10) cols.push_back("");
        TelemetryRow r;
        r.run_id = cols[0];
        r.iter = std::stoi(cols[1]);
        r.worker_id = std::stoi(cols[2]);
        r.wall_ms = std::stod(cols[3]);
        if (!cols[4].empty()) r.cost = std::stod(cols[4]);
        r.mem_bytes_used = std::stoull(cols[5]);
        r.disk_bytes_used = std::stoull(cols[6]);
        r.evictions = std::stoull(cols[7]);
        r.spills = std::stoull(cols[8]);
        r.recomputes = std::stoull(cols[9]);
        out.push_back(std::move(r));
    }
    return out;
}

double percentile(std::vector<double> values, double p) {
    if (values.empty()) throw DomainError("percentile: empty sample");
    std::sort(values.begin(), values.end());
    const double rank = (p / 100.0) * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(rank));
    const auto hi = static_cast<std::size_t>(std::ceil(rank));
    const double frac = rank - static_cast<double>(lo);
    return values[lo] + (values[hi] - values[lo]) * frac;
}

namespace {

std::optional<std::string> manifest_problem_hash(const std::string& csv_path) {
    const auto manifest = std::filesystem::path(csv_path).parent_path() / "manifest.json";
    std::ifstream f(manifest);
    if (!f) return std::nullopt;
    nlohmann::json j;
    f >> j;
    if (!j.contains("problem_hash")) return std::nullopt;
    return j["problem_hash"].get<std::string>();
}

std::vector<double> driver_walls(const std::vector<TelemetryRow>& rows) {
    std::vector<double> out;
    for (const auto& r : rows)
        if (r.worker_id == -1) out.push_back(r.wall_ms);
    return out;
}

} // namespace

SpeedupReport speedup_report(const std::string& baseline_csv, const std::string& parallel_csv) {
    const auto hb = manifest_problem_hash(baseline_csv);
    const auto hp = manifest_problem_hash(parallel_csv);
    if (hb && hp && *hb != *hp)
        throw JobError("speedup_report: runs solve different problems");
    auto base = driver_walls(telemetry_load(baseline_csv));
    auto par = driver_walls(telemetry_load(parallel_csv));
    if (base.empty() || par.empty())
        throw JobError("speedup_report: run has no iterations");
    SpeedupReport r;
    for (double v : base) r.baseline_total_ms += v;
    for (double v : par) r.parallel_total_ms += v;
    r.speedup = r.baseline_total_ms / r.parallel_total_ms;
    r.baseline_median_ms = percentile(base, 50);
    r.baseline_p25_ms = percentile(base, 25);
    r.baseline_p75_ms = percentile(base, 75);
    r.parallel_median_ms = percentile(par, 50);
    r.parallel_p25_ms = percentile(par, 25);
    r.parallel_p75_ms = percentile(par, 75);
    return r;
}

} // namespace stackbundle
