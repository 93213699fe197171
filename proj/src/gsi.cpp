#include "rap/gsi.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "rap/errors.hpp"

namespace rap {

namespace {

constexpr double kImportanceFloor = 1e-9;

std::uint64_t block_param_bytes(const ModelSpec& spec, const BlockId& id) {
    return (id.kind == BlockKind::MHA ? spec.mha_params : spec.ffn_params) *
           spec.bytes_per_element;
}

}  // namespace

void ImportanceTable::validate() const {
    if (blocks == 0 || i_ppl.empty()) throw ConfigError("importance table is empty");
    for (std::size_t b = 0; b < i_ppl.size(); ++b) {
        if (i_ppl[b].size() != blocks) {
            throw ConfigError("importance bucket " + std::to_string(b) +
                              " covers wrong block count");
        }
        double sum = 0.0;
        for (double v : i_ppl[b]) {
            if (!(v >= 0.0)) throw ConfigError("importance values must be >= 0");
            sum += v;
        }
        if (std::abs(sum - 1.0) > 1e-9) {
            throw ConfigError("importance bucket " + std::to_string(b) +
                              " does not sum to 1 (got " + std::to_string(sum) + ")");
        }
    }
}

void ImportanceTable::save(const std::string& path) const {
    validate();
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write importance cache: " + path);
    out.precision(17);
    out << "surrogate_checksum " << std::hex << surrogate_checksum << std::dec << "\n";
    out << "blocks " << blocks << "\n";
    out << "bucket_count " << bucket_count() << "\n";
    for (std::size_t b = 0; b < bucket_count(); ++b) {
        for (std::uint32_t i = 0; i < blocks; ++i) {
            out << "ippl " << i << " " << b << " " << i_ppl[b][i] << "\n";
        }
    }
}

ImportanceTable ImportanceTable::load(const std::string& path,
                                      std::uint64_t expected_checksum) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open importance cache: " + path);
    ImportanceTable t;
    std::size_t buckets = 0;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ls(line);
        std::string key;
        ls >> key;
        if (key == "surrogate_checksum") {
            ls >> std::hex >> t.surrogate_checksum >> std::dec;
        } else if (key == "blocks") {
            ls >> t.blocks;
        } else if (key == "bucket_count") {
            ls >> buckets;
            t.i_ppl.assign(buckets, std::vector<double>(t.blocks, 0.0));
        } else if (key == "ippl") {
            std::uint32_t i;
            std::size_t b;
            double v;
            ls >> i >> b >> v;
            if (b >= buckets || i >= t.blocks) {
                throw ConfigError(path + ":" + std::to_string(lineno) +
                                  ": importance row out of range");
            }
            t.i_ppl[b][i] = v;
        } else {
            throw ConfigError(path + ":" + std::to_string(lineno) + ": unknown key '" + key +
                              "'");
        }
        if (ls.fail()) {
            throw ConfigError(path + ":" + std::to_string(lineno) + ": malformed line");
        }
    }
    if (t.surrogate_checksum != expected_checksum) {
        throw ConfigError("stale importance cache " + path +
                          ": surrogate checksum mismatch; rerun gsi-build");
    }
    t.validate();
    return t;
}

GsiTrace gsi_run(const PerplexityOracle& oracle, const ModelSpec& spec, const GsiConfig& cfg) {
    if (cfg.target_prune_ratio < 0.0 || cfg.target_prune_ratio > 1.0) {
        throw ContractError("target_prune_ratio must be in [0,1]");
    }
    if (oracle.block_count() != spec.block_count()) {
        throw DimensionError("oracle block count does not match spec");
    }
    std::uint64_t prunable_bytes =
        static_cast<std::uint64_t>(spec.n_layers) * (spec.mha_params + spec.ffn_params) *
        spec.bytes_per_element;
    if (cfg.target_prune_ratio > 0.0 && prunable_bytes == 0) {
        throw ConfigError("degenerate config: no prunable parameter bytes");
    }

    RetentionMask mask(spec.block_count());
    GsiTrace trace;
    trace.start_ppl = oracle.evaluate(mask, cfg.seq_len);

    std::uint64_t pruned_bytes = 0;
    auto pruned_fraction = [&] {
        return static_cast<double>(pruned_bytes) / static_cast<double>(prunable_bytes);
    };
    while (cfg.target_prune_ratio > 0.0 && pruned_fraction() < cfg.target_prune_ratio) {
        double best_ppl = std::numeric_limits<double>::infinity();
        int best = -1;
        for (std::uint32_t i = 0; i < mask.size(); ++i) {
            if (!mask.retained(i)) continue;
            RetentionMask candidate = mask;
            candidate.set(i, false);
            double ppl = oracle.evaluate(candidate, cfg.seq_len);
            if (ppl < best_ppl) {  // strict: ties keep the lowest canonical index
                best_ppl = ppl;
                best = static_cast<int>(i);
            }
        }
        if (best < 0) break;  // nothing left to remove
        BlockId id = BlockId::from_index(static_cast<std::uint32_t>(best));
        mask.prune(id);
        pruned_bytes += block_param_bytes(spec, id);
        trace.removed.push_back(id);
        trace.ppl_after.push_back(best_ppl);
    }
    return trace;
}

std::vector<BlockId> one_shot_rank(const PerplexityOracle& oracle, const ModelSpec& spec,
                                   std::uint64_t seq_len) {
    if (oracle.block_count() != spec.block_count()) {
        throw DimensionError("oracle block count does not match spec");
    }
    RetentionMask full(spec.block_count());
    std::vector<std::pair<double, std::uint32_t>> scored;
    scored.reserve(spec.block_count());
    for (std::uint32_t i = 0; i < spec.block_count(); ++i) {
        RetentionMask candidate = full;
        candidate.set(i, false);
        scored.emplace_back(oracle.evaluate(candidate, seq_len), i);
    }
    std::stable_sort(scored.begin(), scored.end(),
                     [](const auto& a, const auto& b) { return a.first < b.first; });
    std::vector<BlockId> order;
    order.reserve(scored.size());
    for (const auto& [ppl, idx] : scored) order.push_back(BlockId::from_index(idx));
    return order;
}

std::vector<double> importance_from_trace(const GsiTrace& trace, const ModelSpec& spec) {
    if (trace.removed.size() != spec.block_count()) {
        throw ContractError("importance requires a full trace covering all " +
                            std::to_string(spec.block_count()) + " blocks, got " +
                            std::to_string(trace.removed.size()));
    }
    std::vector<double> ippl(spec.block_count(), 0.0);
    double prev_log = std::log(trace.start_ppl);
    double sum = 0.0;
    for (std::size_t t = 0; t < trace.removed.size(); ++t) {
        double cur_log = std::log(trace.ppl_after[t]);
        double delta = std::max(cur_log - prev_log, kImportanceFloor);
        ippl[trace.removed[t].index()] = delta;
        sum += delta;
        prev_log = cur_log;
    }
    for (double& v : ippl) v /= sum;
    return ippl;
}

ImportanceTable build_importance(const SurrogateModel& surrogate, const ModelSpec& spec) {
    ImportanceTable table;
    table.blocks = spec.block_count();
    table.surrogate_checksum = surrogate.checksum();
    table.i_ppl.resize(surrogate.bucket_count());
    for (std::size_t b = 0; b < surrogate.bucket_count(); ++b) {
        GsiConfig cfg;
        cfg.target_prune_ratio = 1.0;
        cfg.seq_len = surrogate.representative_seq_len(b);
        GsiTrace trace = gsi_run(surrogate, spec, cfg);
        table.i_ppl[b] = importance_from_trace(trace, spec);
    }
    table.validate();
    return table;
}

std::uint64_t memory_importance(const ModelSpec& spec, const Request& req,
                                const BlockId& block) {
    std::uint64_t params =
        (block.kind == BlockKind::MHA ? spec.mha_params : spec.ffn_params) *
        spec.bytes_per_element;
    if (block.kind == BlockKind::FFN) return params;
    std::uint64_t kv = 2ull * spec.n_heads * spec.d_head * spec.bytes_per_element *
                       req.batch_size * req.seq_len;
    return params + kv;
}

}  // namespace rap
