#include "rap/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <ostream>

#include "rap/errors.hpp"

namespace rap {

namespace {

// Next block of a static order that is still retained.
std::optional<BlockId> next_in_order(const std::vector<BlockId>& order,
                                     const RetentionMask& mask) {
    for (const BlockId& id : order) {
        if (mask.retained(id)) return id;
    }
    return std::nullopt;
}

std::vector<std::uint8_t> legal_bits(const PruningEnv& env) {
    std::vector<std::uint8_t> bits(env.mask().size(), 0);
    if (!env.done()) {
        for (std::uint32_t i = 0; i < env.mask().size(); ++i) {
            bits[i] = env.mask().retained(i) ? 1 : 0;
        }
    }
    return bits;
}

BlockId pick_action(PolicyKind kind, const PruningEnv& env, const HarnessContext& ctx,
                    const QNetworkParams* theta, std::mt19937_64& rng) {
    switch (kind) {
        case PolicyKind::Rap: {
            auto bits = legal_bits(env);
            StateVector s = env.encode_state();
            std::vector<double> q = forward(*theta, std::span<const double>(s.data(), s.size()));
            return BlockId::from_index(
                static_cast<std::uint32_t>(masked_argmax(q, bits)));
        }
        case PolicyKind::OneShot: {
            auto id = next_in_order(ctx.one_shot_order.at(env.bucket()), env.mask());
            if (!id) throw ContractError("one-shot order exhausted with episode still open");
            return *id;
        }
        case PolicyKind::GsiStatic: {
            auto id = next_in_order(ctx.gsi_order.at(env.bucket()), env.mask());
            if (!id) throw ContractError("GSI order exhausted with episode still open");
            return *id;
        }
        case PolicyKind::RandomDrop: {
            auto legal = env.legal_actions();
            std::uniform_int_distribution<std::size_t> pick(0, legal.size() - 1);
            return legal[pick(rng)];
        }
    }
    throw ContractError("unknown policy kind");
}

double mean_of(const std::vector<double>& v) {
    if (v.empty()) return 0.0;
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

}  // namespace

const char* to_string(PolicyKind kind) {
    switch (kind) {
        case PolicyKind::Rap: return "rap";
        case PolicyKind::OneShot: return "oneshot";
        case PolicyKind::RandomDrop: return "random";
        case PolicyKind::GsiStatic: return "gsi";
    }
    return "?";
}

PolicyKind policy_kind_from_string(const std::string& s) {
    if (s == "rap") return PolicyKind::Rap;
    if (s == "oneshot") return PolicyKind::OneShot;
    if (s == "random") return PolicyKind::RandomDrop;
    if (s == "gsi") return PolicyKind::GsiStatic;
    throw ConfigError("unknown policy '" + s + "' (rap|oneshot|random|gsi)");
}

HarnessContext HarnessContext::build(const ModelSpec& spec, const SurrogateModel& surrogate,
                                     const ImportanceTable& tables, RewardParams reward,
                                     StateNorms norms) {
    HarnessContext ctx{spec, surrogate, tables, reward, norms, {}, {}};
    for (std::size_t b = 0; b < surrogate.bucket_count(); ++b) {
        std::uint64_t seq = surrogate.representative_seq_len(b);
        GsiConfig cfg{1.0, seq};
        ctx.gsi_order.push_back(gsi_run(surrogate, spec, cfg).removed);
        ctx.one_shot_order.push_back(one_shot_rank(surrogate, spec, seq));
    }
    return ctx;
}

void EvalReport::check_self_consistency() const {
    auto close = [](double a, double b) { return std::abs(a - b) <= 1e-9; };
    std::vector<double> ppl, ippl, lat;
    double feas = 0.0, mha = 0.0, ffn = 0.0;
    for (const auto& r : rollouts) {
        ppl.push_back(r.final_log_ppl);
        ippl.push_back(r.retained_ippl);
        lat.push_back(r.decision_seconds);
        feas += r.feasible ? 1.0 : 0.0;
        mha += r.pruned_mha;
        ffn += r.pruned_ffn;
    }
    double n = rollouts.empty() ? 1.0 : static_cast<double>(rollouts.size());
    if (!close(mean_log_ppl, mean_of(ppl)) || !close(mean_retained_ippl, mean_of(ippl)) ||
        !close(feasibility_rate, feas / n) || !close(mean_pruned_mha, mha / n) ||
        !close(mean_pruned_ffn, ffn / n) || !close(mean_decision_seconds, mean_of(lat))) {
        throw ContractError("eval report aggregates do not match rollout logs");
    }
}

EvalReport run_eval(PolicyKind kind, const std::vector<TraceRecord>& trace,
                    const HarnessContext& ctx, const QNetworkParams* theta,
                    std::uint64_t seed) {
    if (kind == PolicyKind::Rap && theta == nullptr) {
        throw ConfigError("RAP evaluation needs a trained checkpoint; run the train step first");
    }
    std::mt19937_64 rng(seed);
    EvalReport report;
    report.kind = kind;
    report.rollouts.reserve(trace.size());

    PruningEnv env(ctx.spec, ctx.surrogate, ctx.tables, ctx.reward, ctx.norms);
    for (const TraceRecord& rec : trace) {
        auto start = std::chrono::steady_clock::now();
        env.reset(Request{rec.batch_size, rec.seq_len}, rec.budget_fraction);
        int steps = 0;
        while (!env.done()) {
            env.step(pick_action(kind, env, ctx, theta, rng));
            ++steps;
        }
        auto stop = std::chrono::steady_clock::now();

        RolloutLog log;
        log.t = rec.t;
        log.batch_size = rec.batch_size;
        log.seq_len = rec.seq_len;
        log.budget_fraction = rec.budget_fraction;
        log.feasible = env.feasible();
        log.steps = steps;
        log.pruned_mha = static_cast<int>(ctx.spec.n_layers -
                                          env.mask().retained_count(BlockKind::MHA));
        log.pruned_ffn = static_cast<int>(ctx.spec.n_layers -
                                          env.mask().retained_count(BlockKind::FFN));
        log.final_log_ppl = ctx.surrogate.log_ppl(env.mask(), rec.seq_len);
        const auto& row = ctx.tables.i_ppl.at(env.bucket());
        double ippl = 0.0;
        for (std::uint32_t i = 0; i < env.mask().size(); ++i) {
            if (env.mask().retained(i)) ippl += row[i];
        }
        log.retained_ippl = ippl;
        log.final_reward = env.reward_value(env.mask());
        log.final_peak_bytes = env.system().mem_footprint;
        log.budget_bytes = env.system().mem_budget;
        log.decision_seconds = std::chrono::duration<double>(stop - start).count();

        // Budget-or-flagged contract: a rollout is either feasible (and then
        // actually under budget) or explicitly flagged infeasible.
        if (log.feasible && log.final_peak_bytes > log.budget_bytes) {
            throw ContractError("silent budget violation in rollout t=" +
                                std::to_string(rec.t));
        }
        report.rollouts.push_back(log);
    }

    std::vector<double> ppl, ippl, lat;
    double feas = 0.0, mha = 0.0, ffn = 0.0;
    for (const auto& r : report.rollouts) {
        ppl.push_back(r.final_log_ppl);
        ippl.push_back(r.retained_ippl);
        lat.push_back(r.decision_seconds);
        feas += r.feasible ? 1.0 : 0.0;
        mha += r.pruned_mha;
        ffn += r.pruned_ffn;
    }
    double n = report.rollouts.empty() ? 1.0 : static_cast<double>(report.rollouts.size());
    report.mean_log_ppl = mean_of(ppl);
    report.mean_retained_ippl = mean_of(ippl);
    report.feasibility_rate = feas / n;
    report.mean_pruned_mha = mha / n;
    report.mean_pruned_ffn = ffn / n;
    report.mean_decision_seconds = mean_of(lat);
    report.check_self_consistency();
    return report;
}

BootstrapCi bootstrap_mean_ci(const std::vector<double>& values, std::size_t resamples,
                              double confidence, std::mt19937_64& rng) {
    BootstrapCi ci;
    ci.mean = mean_of(values);
    if (values.empty() || resamples == 0) return ci;
    std::uniform_int_distribution<std::size_t> pick(0, values.size() - 1);
    std::vector<double> means(resamples);
    for (auto& m : means) {
        double sum = 0.0;
        for (std::size_t i = 0; i < values.size(); ++i) sum += values[pick(rng)];
        m = sum / static_cast<double>(values.size());
    }
    std::sort(means.begin(), means.end());
    double tail = (1.0 - confidence) / 2.0;
    auto idx = [&](double q) {
        return std::min(resamples - 1,
                        static_cast<std::size_t>(q * static_cast<double>(resamples)));
    };
    ci.lo = means[idx(tail)];
    ci.hi = means[idx(1.0 - tail)];
    return ci;
}

AblationResult ablation_compare(const std::vector<TraceRecord>& trace,
                                const HarnessContext& ctx, const QNetworkParams& theta,
                                std::uint64_t seed, std::size_t resamples) {
    AblationResult result;
    if (trace.empty()) return result;

    std::map<PolicyKind, std::vector<double>> ppl;
    std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ull);
    for (PolicyKind kind : {PolicyKind::Rap, PolicyKind::GsiStatic, PolicyKind::OneShot,
                            PolicyKind::RandomDrop}) {
        EvalReport rep = run_eval(kind, trace, ctx, &theta, seed);
        std::vector<double> v;
        v.reserve(rep.rollouts.size());
        for (const auto& r : rep.rollouts) v.push_back(r.final_log_ppl);
        result.rows.push_back(AblationRow{kind, bootstrap_mean_ci(v, resamples, 0.95, rng)});
        ppl[kind] = std::move(v);
    }
    std::sort(result.rows.begin(), result.rows.end(),
              [](const AblationRow& a, const AblationRow& b) {
                  return a.log_ppl.mean < b.log_ppl.mean;
              });

    // Paired bootstrap over shared trace records for the RAP/random gap.
    const auto& rap = ppl[PolicyKind::Rap];
    const auto& rnd = ppl[PolicyKind::RandomDrop];
    std::vector<double> diff(rap.size());
    for (std::size_t i = 0; i < rap.size(); ++i) diff[i] = rnd[i] - rap[i];
    result.rap_vs_random_gap = bootstrap_mean_ci(diff, resamples, 0.95, rng);
    return result;
}

std::vector<SweepRow> sweep_alpha_beta(const std::vector<double>& alphas,
                                       const std::vector<double>& betas,
                                       const std::vector<TraceRecord>& trace,
                                       const HarnessContext& ctx) {
    std::vector<SweepRow> rows;
    for (double alpha : alphas) {
        for (double beta : betas) {
            RewardParams params = ctx.reward;
            params.alpha = alpha;
            params.beta = beta;
            PruningEnv env(ctx.spec, ctx.surrogate, ctx.tables, params, ctx.norms);
            std::vector<double> rewards, mem_fracs;
            for (const TraceRecord& rec : trace) {
                env.reset(Request{rec.batch_size, rec.seq_len}, rec.budget_fraction);
                const auto& order = ctx.gsi_order.at(env.bucket());
                // Mandatory pruning to feasibility.
                while (!env.done()) {
                    auto id = next_in_order(order, env.mask());
                    if (!id) break;
                    env.step(*id);
                }
                // Optional reward-greedy pruning along the same order.
                RetentionMask mask = env.mask();
                double current = env.reward_value(mask);
                if (env.feasible()) {
                    for (const BlockId& id : order) {
                        if (!mask.retained(id)) continue;
                        RetentionMask candidate = mask;
                        candidate.prune(id);
                        double value = env.reward_value(candidate);
                        if (value > current) {
                            mask = candidate;
                            current = value;
                        } else {
                            break;  // greedy order: stop at the first losing block
                        }
                    }
                }
                rewards.push_back(current);
                std::uint64_t retained_me = 0, total_me = 0;
                for (std::uint32_t i = 0; i < mask.size(); ++i) {
                    std::uint64_t me = memory_importance(
                        ctx.spec, Request{rec.batch_size, rec.seq_len},
                        BlockId::from_index(i));
                    total_me += me;
                    if (mask.retained(i)) retained_me += me;
                }
                mem_fracs.push_back(total_me ? static_cast<double>(retained_me) /
                                                   static_cast<double>(total_me)
                                             : 0.0);
            }
            rows.push_back(SweepRow{alpha, beta, mean_of(rewards), mean_of(mem_fracs)});
        }
    }
    return rows;
}

PruningRlEnv::PruningRlEnv(const HarnessContext& ctx, std::vector<TraceRecord> trace)
    : env_(ctx.spec, ctx.surrogate, ctx.tables, ctx.reward, ctx.norms),
      trace_(std::move(trace)),
      action_count_(static_cast<int>(ctx.spec.block_count())) {
    if (trace_.empty()) throw ConfigError("RL env needs a non-empty trace");
}

std::vector<double> PruningRlEnv::reset() {
    const TraceRecord& rec = trace_[next_];
    next_ = (next_ + 1) % trace_.size();
    StateVector s = env_.reset(Request{rec.batch_size, rec.seq_len}, rec.budget_fraction);
    return std::vector<double>(s.begin(), s.end());
}

std::vector<std::uint8_t> PruningRlEnv::legal_mask() const { return legal_bits(env_); }

RlEnv::Step PruningRlEnv::step(int action) {
    StepOutcome out = env_.step(BlockId::from_index(static_cast<std::uint32_t>(action)));
    Step s;
    s.state.assign(out.next_state.begin(), out.next_state.end());
    s.reward = out.reward;
    s.done = out.done;
    return s;
}

RobustnessResult seed_robustness(const std::vector<std::uint64_t>& seeds,
                                 const std::vector<TraceRecord>& trace,
                                 const HarnessContext& ctx, DqnConfig cfg,
                                 std::size_t trailing_window) {
    RobustnessResult result;
    for (std::uint64_t seed : seeds) {
        cfg.seed = seed;
        PruningRlEnv env(ctx, trace);
        TrainResult tr = train(env, cfg);
        result.curves.push_back(SeedCurve{seed, std::move(tr.curve)});
    }
    for (const auto& sc : result.curves) {
        std::size_t n = sc.curve.size();
        std::size_t w = std::min(trailing_window, n);
        double sum = 0.0;
        for (std::size_t i = n - w; i < n; ++i) sum += sc.curve[i].ret;
        result.trailing_means.push_back(w ? sum / static_cast<double>(w) : 0.0);
    }
    double cross = mean_of(result.trailing_means);
    double band = 0.0;
    for (double m : result.trailing_means) {
        if (cross != 0.0) band = std::max(band, std::abs(m - cross) / std::abs(cross));
    }
    result.band_statistic = band;
    return result;
}

OverheadReport overhead_report(const HarnessContext& ctx, const QNetworkParams& theta,
                               const TraceRecord& record) {
    PruningEnv env(ctx.spec, ctx.surrogate, ctx.tables, ctx.reward, ctx.norms);
    std::mt19937_64 rng(0);
    auto start = std::chrono::steady_clock::now();
    env.reset(Request{record.batch_size, record.seq_len}, record.budget_fraction);
    int steps = 0;
    while (!env.done()) {
        env.step(pick_action(PolicyKind::Rap, env, ctx, &theta, rng));
        ++steps;
    }
    auto stop = std::chrono::steady_clock::now();

    OverheadReport rep;
    rep.decision_seconds = std::chrono::duration<double>(stop - start).count();
    rep.steps = steps;
    rep.pruned_mha =
        static_cast<int>(ctx.spec.n_layers - env.mask().retained_count(BlockKind::MHA));
    rep.pruned_ffn =
        static_cast<int>(ctx.spec.n_layers - env.mask().retained_count(BlockKind::FFN));
    rep.policy_param_count = theta.param_count();
    rep.feasible = env.feasible();
    return rep;
}

void write_eval_csv(std::ostream& out, const EvalReport& report) {
    out << "t,batch,seq_len,budget_frac,feasible,steps,pruned_mha,pruned_ffn,"
           "final_log_ppl,retained_ippl,final_reward,final_peak_bytes,budget_bytes,"
           "decision_seconds\n";
    out.precision(17);
    for (const auto& r : report.rollouts) {
        out << r.t << "," << r.batch_size << "," << r.seq_len << "," << r.budget_fraction
            << "," << (r.feasible ? 1 : 0) << "," << r.steps << "," << r.pruned_mha << ","
            << r.pruned_ffn << "," << r.final_log_ppl << "," << r.retained_ippl << ","
            << r.final_reward << "," << r.final_peak_bytes << "," << r.budget_bytes << ","
            << r.decision_seconds << "\n";
    }
}

void write_ablation_csv(std::ostream& out, const AblationResult& result) {
    out << "policy,mean_log_ppl,ci95_lo,ci95_hi\n";
    out.precision(17);
    for (const auto& row : result.rows) {
        out << to_string(row.kind) << "," << row.log_ppl.mean << "," << row.log_ppl.lo << ","
            << row.log_ppl.hi << "\n";
    }
    out << "# rap_vs_random_gap," << result.rap_vs_random_gap.mean << ","
        << result.rap_vs_random_gap.lo << "," << result.rap_vs_random_gap.hi << "\n";
}

void write_sweep_csv(std::ostream& out, const std::vector<SweepRow>& rows) {
    out << "alpha,beta,mean_reward,retained_memory_fraction\n";
    out.precision(17);
    for (const auto& r : rows) {
        out << r.alpha << "," << r.beta << "," << r.mean_reward << ","
            << r.mean_retained_memory_fraction << "\n";
    }
}

void write_robustness_csv(std::ostream& out, const RobustnessResult& result) {
    out << "seed,episode,return,epsilon,steps\n";
    out.precision(17);
    for (const auto& sc : result.curves) {
        for (const auto& e : sc.curve) {
            out << sc.seed << "," << e.episode << "," << e.ret << "," << e.epsilon << ","
                << e.steps << "\n";
        }
    }
    out << "# band_statistic," << result.band_statistic << "\n";
}

}  // namespace rap
