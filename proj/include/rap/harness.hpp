#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "rap/dqn.hpp"
#include "rap/env.hpp"
#include "rap/gsi.hpp"
#include "rap/memory_model.hpp"
#include "rap/surrogate.hpp"
#include "rap/workload.hpp"

namespace rap {

enum class PolicyKind { Rap, OneShot, RandomDrop, GsiStatic };

const char* to_string(PolicyKind kind);
PolicyKind policy_kind_from_string(const std::string& s);

// Everything an evaluation needs: model + oracle + importance plus the static
// removal orders the non-learned policies follow.
struct HarnessContext {
    const ModelSpec& spec;
    const SurrogateModel& surrogate;
    const ImportanceTable& tables;
    RewardParams reward;
    StateNorms norms;
    std::vector<std::vector<BlockId>> gsi_order;       // per bucket, removal order
    std::vector<std::vector<BlockId>> one_shot_order;  // per bucket

    static HarnessContext build(const ModelSpec& spec, const SurrogateModel& surrogate,
                                const ImportanceTable& tables, RewardParams reward,
                                StateNorms norms);
};

struct RolloutLog {
    std::uint64_t t = 0;
    std::uint64_t batch_size = 0;
    std::uint64_t seq_len = 0;
    double budget_fraction = 0.0;
    bool feasible = false;
    int steps = 0;
    int pruned_mha = 0;
    int pruned_ffn = 0;
    double final_log_ppl = 0.0;
    double retained_ippl = 0.0;
    double final_reward = 0.0;
    std::uint64_t final_peak_bytes = 0;
    std::uint64_t budget_bytes = 0;
    double decision_seconds = 0.0;
};

struct EvalReport {
    PolicyKind kind = PolicyKind::RandomDrop;
    std::vector<RolloutLog> rollouts;
    double mean_log_ppl = 0.0;
    double mean_retained_ippl = 0.0;
    double feasibility_rate = 0.0;
    double mean_pruned_mha = 0.0;
    double mean_pruned_ffn = 0.0;
    double mean_decision_seconds = 0.0;

    // Recompute the aggregates from the rollout rows; throws on mismatch.
    void check_self_consistency() const;
};

// Roll one policy over every trace record. theta is required for Rap.
EvalReport run_eval(PolicyKind kind, const std::vector<TraceRecord>& trace,
                    const HarnessContext& ctx, const QNetworkParams* theta,
                    std::uint64_t seed);

struct BootstrapCi {
    double mean = 0.0;
    double lo = 0.0;
    double hi = 0.0;
};

BootstrapCi bootstrap_mean_ci(const std::vector<double>& values, std::size_t resamples,
                              double confidence, std::mt19937_64& rng);

struct AblationRow {
    PolicyKind kind;
    BootstrapCi log_ppl;
};

struct AblationResult {
    std::vector<AblationRow> rows;  // ordered by mean log-ppl ascending
    // Paired bootstrap CI of mean(RandomDrop) - mean(Rap) over shared records.
    BootstrapCi rap_vs_random_gap;
};

AblationResult ablation_compare(const std::vector<TraceRecord>& trace,
                                const HarnessContext& ctx, const QNetworkParams& theta,
                                std::uint64_t seed, std::size_t resamples = 1000);

struct SweepRow {
    double alpha = 0.0;
    double beta = 0.0;
    double mean_reward = 0.0;
    double mean_retained_memory_fraction = 0.0;
};

// GsiStatic with a reward-greedy extension: prune in GSI order until feasible,
// then keep pruning while the (alpha, beta) reward delta stays positive.
std::vector<SweepRow> sweep_alpha_beta(const std::vector<double>& alphas,
                                       const std::vector<double>& betas,
                                       const std::vector<TraceRecord>& trace,
                                       const HarnessContext& ctx);

// RlEnv adapter: cycles trace records, one episode per record.
class PruningRlEnv final : public RlEnv {
public:
    PruningRlEnv(const HarnessContext& ctx, std::vector<TraceRecord> trace);

    int state_dim() const override { return 6; }
    int action_count() const override { return action_count_; }
    std::vector<double> reset() override;
    std::vector<std::uint8_t> legal_mask() const override;
    bool done() const override { return env_.done(); }
    Step step(int action) override;

    PruningEnv& env() { return env_; }

private:
    PruningEnv env_;
    std::vector<TraceRecord> trace_;
    int action_count_ = 0;
    std::size_t next_ = 0;
};

struct SeedCurve {
    std::uint64_t seed = 0;
    std::vector<EpisodeStat> curve;
};

struct RobustnessResult {
    std::vector<SeedCurve> curves;
    // max_s |trailing_mean_s - cross_mean| / |cross_mean|
    double band_statistic = 0.0;
    std::vector<double> trailing_means;
};

RobustnessResult seed_robustness(const std::vector<std::uint64_t>& seeds,
                                 const std::vector<TraceRecord>& trace,
                                 const HarnessContext& ctx, DqnConfig cfg,
                                 std::size_t trailing_window = 100);

struct OverheadReport {
    double decision_seconds = 0.0;
    int steps = 0;
    int pruned_mha = 0;
    int pruned_ffn = 0;
    std::size_t policy_param_count = 0;
    bool feasible = false;
};

OverheadReport overhead_report(const HarnessContext& ctx, const QNetworkParams& theta,
                               const TraceRecord& record);

void write_eval_csv(std::ostream& out, const EvalReport& report);
void write_ablation_csv(std::ostream& out, const AblationResult& result);
void write_sweep_csv(std::ostream& out, const std::vector<SweepRow>& rows);
void write_robustness_csv(std::ostream& out, const RobustnessResult& result);

}  // namespace rap
