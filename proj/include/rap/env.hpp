#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "rap/gsi.hpp"
#include "rap/memory_model.hpp"

namespace rap {

struct SystemState {
    std::uint64_t mem_budget = 0;     // Sys_mb
    std::uint64_t mem_footprint = 0;  // Sys_me, peak memory of the current mask
};

// (norm batch, norm seq, retained FFN importance, retained MHA importance,
//  norm budget, norm footprint)
using StateVector = std::array<double, 6>;

struct RewardParams {
    double alpha = 1.0;
    double beta = 0.03;
    double infeasible_penalty = -1.0;
    // Literal reading of the printed reward, (alpha-beta) * retained count,
    // kept behind this switch for comparison with the normalized-share form.
    bool literal_form = false;

    void validate() const;
};

struct StateNorms {
    double max_batch = 32.0;
    double max_seq = 8192.0;
};

struct StepOutcome {
    StateVector next_state{};
    double reward = 0.0;
    bool done = false;
    bool feasible = false;
};

// Retained-importance-share minus retained-memory-share reward for a mask.
double reward_value(const RetentionMask& mask, const ImportanceTable& tables,
                    std::size_t bucket, const ModelSpec& spec, const Request& req,
                    const RewardParams& params);

// One episode = one request under one budget; each step prunes one block;
// the episode ends as soon as peak memory fits the budget (or blocks run out).
class PruningEnv {
public:
    PruningEnv(const ModelSpec& spec, const SurrogateModel& surrogate,
               const ImportanceTable& tables, RewardParams reward, StateNorms norms);

    StateVector reset(const Request& req, double budget_fraction);

    std::vector<BlockId> legal_actions() const;
    StepOutcome step(const BlockId& action);

    StateVector encode_state() const;
    double reward_value(const RetentionMask& mask) const;

    const RetentionMask& mask() const { return mask_; }
    const Request& request() const { return req_; }
    SystemState system() const { return sys_; }
    std::size_t bucket() const { return bucket_; }
    bool done() const { return done_; }
    bool feasible() const { return feasible_; }
    // Budget below even the fully pruned footprint; flagged at reset.
    bool reset_infeasible() const { return reset_infeasible_; }
    std::uint64_t full_peak_bytes() const { return full_peak_; }

private:
    const ModelSpec& spec_;
    const SurrogateModel& surrogate_;
    const ImportanceTable& tables_;
    RewardParams reward_;
    StateNorms norms_;

    Request req_{};
    RetentionMask mask_;
    SystemState sys_{};
    std::size_t bucket_ = 0;
    std::uint64_t full_peak_ = 0;
    std::uint64_t total_me_ = 0;  // memory importance summed over all blocks
    bool done_ = true;
    bool feasible_ = false;
    bool reset_infeasible_ = false;
};

}  // namespace rap
