#pragma once

// JSON (de)serialization shared by master and worker: lineage slices, stage
// descriptions, registration. Header-only on top of the vendored json lib.

#include <json.hpp>

#include "stackbundle/engine.hpp"

namespace stackbundle::proto {

inline nlohmann::json lineage_to_json(const std::vector<DatasetInfo>& nodes) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& d : nodes) {
        nlohmann::json j;
        j["id"] = d.id;
        j["parts"] = d.num_partitions;
        j["counts"] = d.partition_counts;
        j["kind"] = static_cast<int>(d.node.kind);
        j["parents"] = d.node.parents;
        j["kernel"] = d.node.kernel;
        j["slot"] = d.node.slot;
        arr.push_back(std::move(j));
    }
    return arr;
}

inline std::vector<DatasetInfo> lineage_from_json(const nlohmann::json& arr) {
    std::vector<DatasetInfo> out;
    for (const auto& j : arr) {
        DatasetInfo d;
        d.id = j.at("id").get<std::uint64_t>();
        d.num_partitions = j.at("parts").get<std::size_t>();
        d.partition_counts = j.at("counts").get<std::vector<std::size_t>>();
        d.node.kind = static_cast<LineageNode::Kind>(j.at("kind").get<int>());
        d.node.parents = j.at("parents").get<std::vector<std::uint64_t>>();
        d.node.kernel = j.at("kernel").get<std::string>();
        d.node.slot = j.at("slot").get<std::uint32_t>();
        out.push_back(std::move(d));
    }
    return out;
}

inline nlohmann::json stage_to_json(const StageRequest& req,
                                    const std::vector<std::uint32_t>& partitions,
                                    std::uint64_t stage_id) {
    nlohmann::json j;
    j["stage_id"] = stage_id;
    j["kind"] = req.kind == StageRequest::Kind::Reduce ? "reduce" : "collect";
    j["dataset"] = req.dataset;
    j["num_partitions"] = req.num_partitions;
    j["reduce_map"] = req.reduce_map;
    j["reduce_combine"] = req.reduce_combine;
    j["broadcast_epoch"] = req.broadcast_epoch;
    j["partitions"] = partitions;
    j["lineage"] = lineage_to_json(req.lineage);
    return j;
}

inline StageRequest stage_from_json(const nlohmann::json& j,
                                    std::vector<std::uint32_t>* partitions,
                                    std::uint64_t* stage_id) {
    StageRequest req;
    req.kind = j.at("kind").get<std::string>() == "reduce" ? StageRequest::Kind::Reduce
                                                           : StageRequest::Kind::Collect;
    req.dataset = j.at("dataset").get<std::uint64_t>();
    req.num_partitions = j.at("num_partitions").get<std::size_t>();
    req.reduce_map = j.at("reduce_map").get<std::string>();
    req.reduce_combine = j.at("reduce_combine").get<std::string>();
    req.broadcast_epoch = j.at("broadcast_epoch").get<std::uint64_t>();
    *partitions = j.at("partitions").get<std::vector<std::uint32_t>>();
    *stage_id = j.at("stage_id").get<std::uint64_t>();
    req.lineage = lineage_from_json(j.at("lineage"));
    return req;
}

inline std::pair<nlohmann::json, std::vector<std::uint8_t>> env_to_payload(
    std::uint64_t epoch, const std::map<std::string, Record>& env) {
    nlohmann::json j;
    j["epoch"] = epoch;
    nlohmann::json entries = nlohmann::json::array();
    std::vector<std::uint8_t> binary;
    for (const auto& [name, rec] : env) {
        entries.push_back({{"name", name}, {"arity", rec.size()}});
        for (const Tensor& t : rec) {
            const auto b = dstack_to_bytes(t);
            binary.insert(binary.end(), b.begin(), b.end());
        }
    }
    j["entries"] = std::move(entries);
    return {std::move(j), std::move(binary)};
}

inline std::pair<std::uint64_t, std::map<std::string, Record>> env_from_payload(
    const nlohmann::json& j, const std::vector<std::uint8_t>& binary) {
    std::map<std::string, Record> env;
    std::size_t off = 0;
    for (const auto& e : j.at("entries")) {
        Record rec;
        const auto arity = e.at("arity").get<std::size_t>();
        for (std::size_t i = 0; i < arity; ++i) {
            std::size_t used = 0;
            rec.push_back(dstack_from_bytes(binary.data() + off, binary.size() - off, &used));
            off += used;
        }
        env[e.at("name").get<std::string>()] = std::move(rec);
    }
    return {j.at("epoch").get<std::uint64_t>(), std::move(env)};
}

} // namespace stackbundle::proto
