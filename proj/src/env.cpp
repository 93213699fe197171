#include "rap/env.hpp"

#include <cmath>

#include "rap/errors.hpp"

namespace rap {

namespace {

std::uint64_t total_memory_importance(const ModelSpec& spec, const Request& req) {
    std::uint64_t total = 0;
    for (std::uint32_t i = 0; i < spec.block_count(); ++i) {
        total += memory_importance(spec, req, BlockId::from_index(i));
    }
    return total;
}

double retained_ippl_sum(const RetentionMask& mask, const ImportanceTable& tables,
                         std::size_t bucket) {
    const auto& row = tables.i_ppl.at(bucket);
    double sum = 0.0;
    for (std::uint32_t i = 0; i < mask.size(); ++i) {
        if (mask.retained(i)) sum += row[i];
    }
    return sum;
}

}  // namespace

void RewardParams::validate() const {
    if (alpha < 0.0 || beta < 0.0) throw ConfigError("alpha and beta must be >= 0");
    if (alpha == 0.0 && beta == 0.0) throw ConfigError("alpha and beta cannot both be zero");
    if (infeasible_penalty > 0.0) throw ConfigError("infeasible_penalty must be <= 0");
}

double reward_value(const RetentionMask& mask, const ImportanceTable& tables,
                    std::size_t bucket, const ModelSpec& spec, const Request& req,
                    const RewardParams& params) {
    if (mask.size() != tables.blocks) {
        throw DimensionError("mask does not match importance table block count");
    }
    if (params.literal_form) {
        return (params.alpha - params.beta) * static_cast<double>(mask.retained_count());
    }
    double ppl_share = retained_ippl_sum(mask, tables, bucket);
    std::uint64_t total_me = total_memory_importance(spec, req);
    std::uint64_t retained_me = 0;
    for (std::uint32_t i = 0; i < mask.size(); ++i) {
        if (mask.retained(i)) retained_me += memory_importance(spec, req, BlockId::from_index(i));
    }
    double me_share = total_me ? static_cast<double>(retained_me) / static_cast<double>(total_me)
                               : 0.0;
    return params.alpha * ppl_share - params.beta * me_share;
}

PruningEnv::PruningEnv(const ModelSpec& spec, const SurrogateModel& surrogate,
                       const ImportanceTable& tables, RewardParams reward, StateNorms norms)
    : spec_(spec), surrogate_(surrogate), tables_(tables), reward_(reward), norms_(norms) {
    reward_.validate();
    if (tables_.blocks != spec_.block_count()) {
        throw DimensionError("importance table does not match spec block count");
    }
}

StateVector PruningEnv::reset(const Request& req, double budget_fraction) {
    req.validate();
    if (!(budget_fraction > 0.0 && budget_fraction <= 1.0)) {
        throw ContractError("budget_fraction must be in (0, 1]");
    }
    req_ = req;
    mask_ = RetentionMask(spec_.block_count());
    bucket_ = surrogate_.bucket_of(req.seq_len);
    full_peak_ = peak_memory(spec_, mask_, req_);
    total_me_ = total_memory_importance(spec_, req_);
    sys_.mem_budget =
        static_cast<std::uint64_t>(budget_fraction * static_cast<double>(full_peak_));
    sys_.mem_footprint = full_peak_;

    RetentionMask empty(spec_.block_count(), false);
    reset_infeasible_ = peak_memory(spec_, empty, req_) > sys_.mem_budget;
    feasible_ = sys_.mem_footprint <= sys_.mem_budget;
    done_ = feasible_;  // fraction 1.0 terminates at step 0 with zero removals
    return encode_state();
}

std::vector<BlockId> PruningEnv::legal_actions() const {
    if (done_) return {};
    return mask_.retained_blocks();
}

StepOutcome PruningEnv::step(const BlockId& action) {
    if (done_) throw ContractError("step() on a finished episode");
    if (action.index() >= mask_.size() || !mask_.retained(action)) {
        throw ContractError("illegal action: block " + to_string(action) +
                            " is not retained");
    }
    double before = reward_value(mask_);
    mask_.prune(action);
    sys_.mem_footprint = peak_memory(spec_, mask_, req_);
    double reward = reward_value(mask_) - before;

    feasible_ = sys_.mem_footprint <= sys_.mem_budget;
    bool exhausted = mask_.retained_count() == 0;
    done_ = feasible_ || exhausted;
    if (exhausted && !feasible_) reward += reward_.infeasible_penalty;

    StepOutcome out;
    out.next_state = encode_state();
    out.reward = reward;
    out.done = done_;
    out.feasible = feasible_;
    return out;
}

double PruningEnv::reward_value(const RetentionMask& mask) const {
    if (reward_.literal_form) {
        return (reward_.alpha - reward_.beta) * static_cast<double>(mask.retained_count());
    }
    double ppl_share = retained_ippl_sum(mask, tables_, bucket_);
    std::uint64_t retained_me = 0;
    for (std::uint32_t i = 0; i < mask.size(); ++i) {
        if (mask.retained(i)) {
            retained_me += memory_importance(spec_, req_, BlockId::from_index(i));
        }
    }
    double me_share =
        total_me_ ? static_cast<double>(retained_me) / static_cast<double>(total_me_) : 0.0;
    return reward_.alpha * ppl_share - reward_.beta * me_share;
}

StateVector PruningEnv::encode_state() const {
    const auto& row = tables_.i_ppl.at(bucket_);
    double ffn_imp = 0.0, mha_imp = 0.0;
    for (std::uint32_t i = 0; i < mask_.size(); ++i) {
        if (!mask_.retained(i)) continue;
        if (BlockId::from_index(i).kind == BlockKind::FFN) ffn_imp += row[i];
        else mha_imp += row[i];
    }
    double peak = static_cast<double>(full_peak_);
    return StateVector{
        static_cast<double>(req_.batch_size) / norms_.max_batch,
        static_cast<double>(req_.seq_len) / norms_.max_seq,
        ffn_imp,
        mha_imp,
        peak > 0 ? static_cast<double>(sys_.mem_budget) / peak : 0.0,
        peak > 0 ? static_cast<double>(sys_.mem_footprint) / peak : 0.0,
    };
}

}  // namespace rap
