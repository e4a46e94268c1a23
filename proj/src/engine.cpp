#include "stackbundle/engine.hpp"

#include <algorithm>
#include <set>
#include <sstream>

namespace stackbundle {

std::vector<std::size_t> partition_sizes(std::size_t records, std::size_t partitions) {
    if (partitions < 1) throw ConfigError("partition count must be >= 1");
    if (records < partitions)
        throw ConfigError("more partitions than records");
    const std::size_t base = records / partitions;
    const std::size_t extra = records % partitions;
    std::vector<std::size_t> sizes(partitions, base);
    for (std::size_t i = 0; i < extra; ++i) sizes[i] += 1;
    return sizes;
}

std::vector<int> assign_partitions(std::size_t partitions, const std::vector<int>& cores) {
    const std::size_t m = cores.size();
    if (m == 0) throw ConfigError("no workers");
    int total = 0;
    for (int c : cores) total += c;
    if (total <= 0) throw ConfigError("workers declare zero cores");
    // largest-remainder apportionment, ties to lowest worker_id
    std::vector<std::size_t> share(m, 0);
    std::vector<double> frac(m, 0.0);
    std::size_t assigned = 0;
    for (std::size_t w = 0; w < m; ++w) {
        const double exact = static_cast<double>(partitions) * cores[w] / total;
        share[w] = static_cast<std::size_t>(exact);
        frac[w] = exact - static_cast<double>(share[w]);
        assigned += share[w];
    }
    while (assigned < partitions) {
        std::size_t best = 0;
        for (std::size_t w = 1; w < m; ++w)
            if (frac[w] > frac[best]) best = w;
        share[best] += 1;
        frac[best] = -1.0;
        ++assigned;
    }
    std::vector<int> owner(partitions);
    std::size_t p = 0;
    for (std::size_t w = 0; w < m; ++w)
        for (std::size_t i = 0; i < share[w] && p < partitions; ++i)
            owner[p++] = static_cast<int>(w);
    return owner;
}

Engine::Engine(EngineConfig config, std::unique_ptr<Executor> executor)
    : config_(std::move(config)), executor_(std::move(executor)) {
    executor_->attach(this);
}

DatasetHandle Engine::add_source(std::vector<std::vector<Record>> blocks) {
    DatasetInfo info;
    info.id = next_id_++;
    info.num_partitions = blocks.size();
    info.node.kind = LineageNode::Kind::Source;
    for (std::size_t p = 0; p < blocks.size(); ++p) {
        info.partition_counts.push_back(blocks[p].size());
        pinned_[BlockKey{info.id, static_cast<std::uint32_t>(p)}] =
            std::make_shared<std::vector<Record>>(std::move(blocks[p]));
    }
    datasets_[info.id] = info;
    return {info.id, info.num_partitions};
}

DatasetHandle Engine::parallelize(const Tensor& stack, std::size_t partitions) {
    if (stack.ndim() < 2) throw ShapeError("parallelize: need a leading record axis");
    const std::size_t records = stack.dims()[0];
    auto sizes = partition_sizes(records, partitions);
    std::vector<std::vector<Record>> blocks(partitions);
    std::size_t r = 0;
    for (std::size_t p = 0; p < partitions; ++p) {
        blocks[p].reserve(sizes[p]);
        for (std::size_t i = 0; i < sizes[p]; ++i)
            blocks[p].push_back(Record{stack.slice(r++)});
    }
    return add_source(std::move(blocks));
}

DatasetHandle Engine::parallelize_records(std::vector<Record> records, std::size_t partitions) {
    auto sizes = partition_sizes(records.size(), partitions);
    std::vector<std::vector<Record>> blocks(partitions);
    std::size_t r = 0;
    for (std::size_t p = 0; p < partitions; ++p)
        for (std::size_t i = 0; i < sizes[p]; ++i)
            blocks[p].push_back(std::move(records[r++]));
    return add_source(std::move(blocks));
}

DatasetHandle Engine::zip_bundle(const std::vector<DatasetHandle>& handles) {
    if (handles.empty()) throw BundleError("zip_bundle: no datasets");
    if (handles.size() == 1) return handles[0];
    const DatasetInfo& first = info(handles[0].id);
    for (const auto& h : handles) {
        const DatasetInfo& di = info(h.id);
        if (di.num_partitions != first.num_partitions ||
            di.partition_counts != first.partition_counts) {
            std::ostringstream ss;
            ss << "zip_bundle: partitioning mismatch between datasets "
               << first.id << " and " << di.id;
            throw BundleError(ss.str());
        }
    }
    DatasetInfo di;
    di.id = next_id_++;
    di.num_partitions = first.num_partitions;
    di.partition_counts = first.partition_counts;
    di.node.kind = LineageNode::Kind::Zip;
    for (const auto& h : handles) di.node.parents.push_back(h.id);
    datasets_[di.id] = di;
    return {di.id, di.num_partitions};
}

DatasetHandle Engine::map(const DatasetHandle& d, const std::string& kernel_id) {
    if (!KernelRegistry::instance().has_map(kernel_id))
        throw RegistryError("map: unknown kernel " + kernel_id);
    const DatasetInfo& parent = info(d.id);
    DatasetInfo di;
    di.id = next_id_++;
    di.num_partitions = parent.num_partitions;
    di.partition_counts = parent.partition_counts;
    di.node.kind = LineageNode::Kind::Map;
    di.node.parents = {d.id};
    di.node.kernel = kernel_id;
    datasets_[di.id] = di;
    return {di.id, di.num_partitions};
}

DatasetHandle Engine::unbundle(const DatasetHandle& d, std::uint32_t slot) {
    const DatasetInfo& parent = info(d.id);
    DatasetInfo di;
    di.id = next_id_++;
    di.num_partitions = parent.num_partitions;
    di.partition_counts = parent.partition_counts;
    di.node.kind = LineageNode::Kind::Unbundle;
    di.node.parents = {d.id};
    di.node.slot = slot;
    datasets_[di.id] = di;
    return {di.id, di.num_partitions};
}

const DatasetInfo& Engine::info(std::uint64_t id) const {
    auto it = datasets_.find(id);
    if (it == datasets_.end()) throw LineageError("unknown dataset id");
    return it->second;
}

std::vector<DatasetInfo> Engine::lineage_closure(std::uint64_t id) const {
    std::vector<DatasetInfo> out;
    std::vector<std::uint64_t> stack{id};
    std::set<std::uint64_t> visited;
    while (!stack.empty()) {
        const std::uint64_t cur = stack.back();
        stack.pop_back();
        if (!visited.insert(cur).second) continue;
        const DatasetInfo& di = info(cur);
        out.push_back(di);
        for (auto p : di.node.parents) stack.push_back(p);
    }
    return out;
}

StageRequest Engine::make_request(const DatasetHandle& d, StageRequest::Kind kind) const {
    StageRequest req;
    req.kind = kind;
    req.dataset = d.id;
    req.num_partitions = d.num_partitions;
    req.lineage = lineage_closure(d.id);
    req.broadcast_epoch = broadcast_epoch_;
    return req;
}

std::vector<Record> Engine::collect(const DatasetHandle& d) {
    StageResult res = executor_->run_stage(make_request(d, StageRequest::Kind::Collect));
    std::vector<Record> out;
    for (auto& block : res.blocks)
        for (auto& r : block) out.push_back(std::move(r));
    return out;
}

Record Engine::reduce(const DatasetHandle& d, const std::string& map_kernel_id,
                      const std::string& combine_kernel_id) {
    auto& reg = KernelRegistry::instance();
    const CombineFn& combine = reg.combine_kernel(combine_kernel_id);
    StageRequest req = make_request(d, StageRequest::Kind::Reduce);
    req.reduce_map = map_kernel_id;
    req.reduce_combine = combine_kernel_id;
    StageResult res = executor_->run_stage(req);
    // fixed left fold in partition order
    Record acc;
    for (auto& part : res.reduced) acc = combine(acc, part);
    return acc;
}

void Engine::broadcast(const std::string& name, Record value) {
    broadcasts_[name] = std::move(value);
    ++broadcast_epoch_;
}

DatasetHandle Engine::checkpoint(const DatasetHandle& d) {
    if (!config_.truncate_lineage) return d;
    StageResult res = executor_->run_stage(make_request(d, StageRequest::Kind::Collect));
    return add_source(std::move(res.blocks));
}

void Engine::release(const DatasetHandle& d) {
    auto it = datasets_.find(d.id);
    if (it == datasets_.end()) return;
    for (std::size_t p = 0; p < it->second.num_partitions; ++p)
        pinned_.erase(BlockKey{d.id, static_cast<std::uint32_t>(p)});
}

BlockPtr Engine::source_block(const BlockKey& key) const {
    auto it = pinned_.find(key);
    if (it == pinned_.end()) throw LineageError("missing pinned source block");
    return it->second;
}

WorkerRuntime::WorkerRuntime(PersistenceMode mode, std::uint64_t cap, std::string spill_dir,
                             SourceFetch fetch_source)
    : blocks_(mode, cap, std::move(spill_dir)), fetch_source_(std::move(fetch_source)) {}

void WorkerRuntime::learn_lineage(const std::vector<DatasetInfo>& nodes) {
    // Each stage carries its full lineage closure; anything outside it can
    // never be referenced again, so the cache forgets it.
    lineage_.clear();
    std::set<std::uint64_t> keep;
    for (const auto& di : nodes) {
        lineage_[di.id] = di;
        keep.insert(di.id);
    }
    blocks_.retain_datasets(keep);
}

void WorkerRuntime::set_broadcasts(std::map<std::string, Record> env) {
    broadcasts_ = std::move(env);
}

BlockPtr WorkerRuntime::materialize(const BlockKey& key) {
    if (auto blk = blocks_.get(key)) return blk;
    const bool recompute = blocks_.seen(key);
    BlockPtr blk = compute(key);
    if (recompute) blocks_.count_recompute();
    blocks_.put(key, blk);
    return blk;
}

BlockPtr WorkerRuntime::compute(const BlockKey& key) {
    auto it = lineage_.find(key.dataset);
    if (it == lineage_.end()) throw LineageError("worker: unknown dataset in lineage");
    const DatasetInfo& di = it->second;
    switch (di.node.kind) {
        case LineageNode::Kind::Source: {
            BlockPtr blk = fetch_source_(key);
            if (!blk) throw LineageError("worker: source block unavailable");
            return blk;
        }
        case LineageNode::Kind::Map: {
            BlockPtr parent = materialize({di.node.parents[0], key.partition});
            const MapFn& fn = KernelRegistry::instance().map_kernel(di.node.kernel);
            KernelCtx ctx(&broadcasts_);
            auto out = std::make_shared<std::vector<Record>>();
            out->reserve(parent->size());
            for (const Record& r : *parent) {
                KernelRegistry::instance().count_invocation();
                out->push_back(fn(ctx, r));
            }
            return out;
        }
        case LineageNode::Kind::Zip: {
            std::vector<BlockPtr> parents;
            for (auto pid : di.node.parents)
                parents.push_back(materialize({pid, key.partition}));
            auto out = std::make_shared<std::vector<Record>>();
            const std::size_t count = parents[0]->size();
            for (const auto& p : parents)
                if (p->size() != count)
                    throw BundleError("zip: record count mismatch at partition");
            out->reserve(count);
            for (std::size_t i = 0; i < count; ++i) {
                Record tup;
                for (const auto& p : parents)
                    for (const Tensor& t : (*p)[i]) tup.push_back(t);
                out->push_back(std::move(tup));
            }
            return out;
        }
        case LineageNode::Kind::Unbundle: {
            BlockPtr parent = materialize({di.node.parents[0], key.partition});
            auto out = std::make_shared<std::vector<Record>>();
            out->reserve(parent->size());
            for (const Record& r : *parent) {
                if (di.node.slot >= r.size())
                    throw BundleError("unbundle: slot out of range");
                out->push_back(Record{r[di.node.slot]});
            }
            return out;
        }
    }
    throw LineageError("worker: corrupt lineage node");
}

Record WorkerRuntime::reduce_partition(const BlockKey& key, const std::string& map_kernel,
                                       const std::string& combine_kernel) {
    auto& reg = KernelRegistry::instance();
    const MapFn& map_fn = reg.map_kernel(map_kernel);
    const CombineFn& combine = reg.combine_kernel(combine_kernel);
    BlockPtr blk = materialize(key);
    KernelCtx ctx(&broadcasts_);
    Record acc;
    for (const Record& r : *blk) {
        reg.count_invocation();
        acc = combine(acc, map_fn(ctx, r));
    }
    return acc;
}

} // namespace stackbundle
