#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rap/memory_model.hpp"

namespace rap {

// Deterministic stand-in for corpus perplexity evaluation.
class PerplexityOracle {
public:
    virtual ~PerplexityOracle() = default;
    virtual double evaluate(const RetentionMask& mask, std::uint64_t seq_len) const = 0;
    virtual double log_ppl(const RetentionMask& mask, std::uint64_t seq_len) const = 0;
    virtual std::uint32_t block_count() const = 0;
};

// Log-additive block costs plus sparse pairwise interaction terms, bucketed
// by sequence length. The pair terms are what makes one-shot and sequential
// importance rankings diverge.
class SurrogateModel final : public PerplexityOracle {
public:
    struct PairCost {
        std::uint32_t a = 0;  // canonical block index, a < b
        std::uint32_t b = 0;
        std::vector<double> cost;  // per bucket
    };

    std::uint32_t blocks = 0;
    double base_log_ppl = 0.0;
    std::vector<std::uint64_t> bucket_thresholds;  // ascending; buckets = thresholds+1
    std::vector<std::vector<double>> unary;        // [block][bucket], >= 0
    std::vector<PairCost> pairs;

    std::size_t bucket_count() const { return bucket_thresholds.size() + 1; }
    // seq_len <= thresholds[k] selects bucket k; above all thresholds, the last.
    std::size_t bucket_of(std::uint64_t seq_len) const;
    // A seq_len inside the bucket; evaluate() is constant within a bucket.
    std::uint64_t representative_seq_len(std::size_t bucket) const;

    double log_ppl(const RetentionMask& mask, std::uint64_t seq_len) const override;
    double evaluate(const RetentionMask& mask, std::uint64_t seq_len) const override;
    std::uint32_t block_count() const override { return blocks; }

    void validate() const;
    // Stable content hash; importance caches record it to reject stale tables.
    std::uint64_t checksum() const;

    static SurrogateModel load(const std::string& path);
    void save(const std::string& path, const std::string& header_comment = "") const;
};

struct SurrogateGenParams {
    double base_log_ppl = 2.302585092994046;  // ln(10)
    double mha_base_cost = 0.04;
    double ffn_base_cost = 0.03;
    double edge_boost = 2.0;          // extra cost weight at the first/last layers
    double mha_bucket_growth = 0.5;   // MHA cost multiplier growth per bucket
    double cost_jitter = 0.5;         // relative lognormal spread of unary costs
    double pair_fraction = 0.3;       // fraction of adjacent-layer pairs coupled
    double pair_cost_scale = 1.0;     // pair cost relative to mean unary cost
    std::vector<std::uint64_t> bucket_thresholds = {512, 2048};

    void validate() const;
};

// Deterministic per seed. Early/late layers cost more; MHA costs grow with the
// sequence-length bucket relative to FFN costs; a fraction of adjacent-layer
// pairs gets a positive interaction term.
SurrogateModel gen_surrogate(const ModelSpec& spec, std::uint64_t seed,
                             const SurrogateGenParams& params);

}  // namespace rap
