#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rap/memory_model.hpp"
#include "rap/surrogate.hpp"

namespace rap {

struct GsiConfig {
    // Target fraction of prunable parameter bytes to remove, in [0,1].
    double target_prune_ratio = 0.0;
    // Selects the oracle's sequence-length bucket.
    std::uint64_t seq_len = 1;
};

// Removal order and per-step perplexities from one greedy run.
struct GsiTrace {
    double start_ppl = 0.0;
    std::vector<BlockId> removed;
    std::vector<double> ppl_after;  // parallel to removed
};

// Per-block perplexity importance per bucket; rows sum to 1 within a bucket.
struct ImportanceTable {
    std::uint32_t blocks = 0;
    std::vector<std::vector<double>> i_ppl;  // [bucket][block]
    std::uint64_t surrogate_checksum = 0;

    std::size_t bucket_count() const { return i_ppl.size(); }
    void validate() const;

    void save(const std::string& path) const;
    static ImportanceTable load(const std::string& path, std::uint64_t expected_checksum);
};

// Greedy sequential importance: at each step, remove the block whose exclusion
// yields the smallest perplexity; stop once the pruned-parameter fraction
// reaches the target. Ties break toward the lowest canonical block index.
GsiTrace gsi_run(const PerplexityOracle& oracle, const ModelSpec& spec, const GsiConfig& cfg);

// Blocks ordered by single-removal perplexity ascending, each scored against
// the otherwise-intact model. The one-shot baseline GSI improves on.
std::vector<BlockId> one_shot_rank(const PerplexityOracle& oracle, const ModelSpec& spec,
                                   std::uint64_t seq_len);

// Sequential delta-log-ppl per block from a full trace (all prunable blocks
// removed), floored at 1e-9 and normalized to sum 1.
std::vector<double> importance_from_trace(const GsiTrace& trace, const ModelSpec& spec);

// Convenience: run GSI to exhaustion once per bucket and assemble the table.
ImportanceTable build_importance(const SurrogateModel& surrogate, const ModelSpec& spec);

// Estimated memory footprint of one block for a request: parameter bytes plus,
// for MHA blocks, the per-layer KV-cache share.
std::uint64_t memory_importance(const ModelSpec& spec, const Request& req, const BlockId& block);

}  // namespace rap
