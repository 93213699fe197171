// Runtime-adaptive pruning toolkit: importance caches, policy training, and
// workload-driven evaluation, all emitting CSV.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>

#include <CLI11.hpp>

#include "rap/dqn.hpp"
#include "rap/env.hpp"
#include "rap/errors.hpp"
#include "rap/gsi.hpp"
#include "rap/harness.hpp"
#include "rap/memory_model.hpp"
#include "rap/surrogate.hpp"
#include "rap/workload.hpp"

namespace {

namespace fs = std::filesystem;

rap::ModelSpec load_spec(const std::string& name_or_path) {
    if (name_or_path == "llama2-7b-like") return rap::ModelSpec::llama2_7b_like();
    if (name_or_path == "toy-4x2") return rap::ModelSpec::toy_4x2();
    return rap::ModelSpec::load(name_or_path);
}

struct CommonArgs {
    std::string spec = "llama2-7b-like";
    std::string surrogate_path;
    std::string cache_path;
    std::string trace_path;
    std::string checkpoint_path;
    std::string out_dir = ".";
    std::uint64_t seed = 0;
    double alpha = 1.0;
    double beta = 0.03;
    double infeasible_penalty = -1.0;
    double max_batch = 32.0;
    double max_seq = 8192.0;
};

struct LoadedContext {
    rap::ModelSpec spec;
    rap::SurrogateModel surrogate;
    rap::ImportanceTable tables;
    std::unique_ptr<rap::HarnessContext> ctx;
};

LoadedContext load_context(const CommonArgs& args) {
    LoadedContext lc;
    lc.spec = load_spec(args.spec);
    if (args.surrogate_path.empty()) {
        throw rap::ConfigError("--surrogate is required (generate one with surrogate-gen)");
    }
    lc.surrogate = rap::SurrogateModel::load(args.surrogate_path);
    if (args.cache_path.empty() || !fs::exists(args.cache_path)) {
        throw rap::ConfigError(
            "importance cache not found; build it first: rap gsi-build --spec " + args.spec +
            " --surrogate " + args.surrogate_path + " --out <cache>");
    }
    lc.tables = rap::ImportanceTable::load(args.cache_path, lc.surrogate.checksum());
    rap::RewardParams reward;
    reward.alpha = args.alpha;
    reward.beta = args.beta;
    reward.infeasible_penalty = args.infeasible_penalty;
    rap::StateNorms norms{args.max_batch, args.max_seq};
    lc.ctx = std::make_unique<rap::HarnessContext>(
        rap::HarnessContext::build(lc.spec, lc.surrogate, lc.tables, reward, norms));
    return lc;
}

rap::QNetworkParams load_policy(const CommonArgs& args) {
    if (args.checkpoint_path.empty() || !fs::exists(args.checkpoint_path)) {
        throw rap::ConfigError(
            "policy checkpoint not found; train it first: rap train ... --out-dir <dir>");
    }
    return rap::load_checkpoint(args.checkpoint_path).params;
}

std::ofstream open_out(const std::string& out_dir, const std::string& name) {
    fs::create_directories(out_dir);
    fs::path p = fs::path(out_dir) / name;
    std::ofstream out(p);
    if (!out) throw rap::ConfigError("cannot write " + p.string());
    std::cerr << "writing " << p.string() << "\n";
    return out;
}

std::vector<double> parse_grid(const std::string& csv) {
    std::vector<double> out;
    std::stringstream ss(csv);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(std::stod(item));
    if (out.empty()) throw rap::ConfigError("empty grid list");
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"runtime-adaptive pruning toolkit"};
    app.require_subcommand(1);

    CommonArgs args;
    rap::TraceGenConfig trace_cfg;
    rap::SurrogateGenParams sur_params;
    rap::DqnConfig dqn_cfg;
    dqn_cfg.episodes = 3000;
    dqn_cfg.max_steps = 128;
    dqn_cfg.gamma = 1.0;

    auto add_common = [&](CLI::App* cmd, bool needs_cache) {
        cmd->add_option("--spec", args.spec, "model spec name or file");
        cmd->add_option("--surrogate", args.surrogate_path, "surrogate config file");
        if (needs_cache) cmd->add_option("--cache", args.cache_path, "importance cache file");
        cmd->add_option("--seed", args.seed, "rng seed");
        cmd->add_option("--out-dir", args.out_dir, "output directory");
        cmd->add_option("--alpha", args.alpha, "reward alpha");
        cmd->add_option("--beta", args.beta, "reward beta");
        cmd->add_option("--max-batch", args.max_batch, "state normalization: max batch");
        cmd->add_option("--max-seq", args.max_seq, "state normalization: max seq len");
    };

    auto* trace_gen = app.add_subcommand("trace-gen", "generate a workload trace");
    trace_gen->add_option("--seed", trace_cfg.seed, "rng seed");
    trace_gen->add_option("--count", trace_cfg.count, "number of records");
    trace_gen->add_option("--budget-min", trace_cfg.budget_min, "budget walk lower bound");
    trace_gen->add_option("--budget-max", trace_cfg.budget_max, "budget walk upper bound");
    trace_gen->add_option("--max-batch", trace_cfg.max_batch, "max batch size");
    trace_gen->add_option("--max-seq", trace_cfg.max_seq, "max sequence length");
    std::string trace_out;
    trace_gen->add_option("--out", trace_out, "output file (default stdout)");

    auto* sur_gen = app.add_subcommand("surrogate-gen", "generate a synthetic surrogate");
    sur_gen->add_option("--spec", args.spec, "model spec name or file");
    sur_gen->add_option("--seed", args.seed, "rng seed");
    sur_gen->add_option("--pair-fraction", sur_params.pair_fraction,
                        "fraction of adjacent pairs coupled");
    std::string sur_out = "surrogate.cfg";
    sur_gen->add_option("--out", sur_out, "output file");

    auto* gsi_build = app.add_subcommand("gsi-build", "build the importance cache");
    gsi_build->add_option("--spec", args.spec, "model spec name or file");
    gsi_build->add_option("--surrogate", args.surrogate_path, "surrogate config file")
        ->required();
    std::string cache_out = "importance.cache";
    gsi_build->add_option("--out", cache_out, "cache output file");

    auto* train_cmd = app.add_subcommand("train", "train the pruning policy");
    add_common(train_cmd, true);
    train_cmd->add_option("--trace", args.trace_path, "workload trace file")->required();
    train_cmd->add_option("--episodes", dqn_cfg.episodes, "training episodes");
    train_cmd->add_option("--max-steps", dqn_cfg.max_steps, "max steps per episode");
    train_cmd->add_option("--gamma", dqn_cfg.gamma, "discount factor");
    train_cmd->add_option("--lr", dqn_cfg.learning_rate, "learning rate");
    train_cmd->add_option("--hidden", dqn_cfg.hidden, "hidden width");
    train_cmd->add_option("--minibatch", dqn_cfg.minibatch, "minibatch size");
    train_cmd->add_option("--target-refresh", dqn_cfg.target_refresh,
                          "updates between target refreshes");

    auto* eval_cmd = app.add_subcommand("eval", "evaluate a policy over a trace");
    add_common(eval_cmd, true);
    std::string policy = "rap";
    eval_cmd->add_option("--policy", policy, "rap|oneshot|random|gsi");
    eval_cmd->add_option("--trace", args.trace_path, "workload trace file")->required();
    eval_cmd->add_option("--checkpoint", args.checkpoint_path, "policy checkpoint");

    auto* ablate_cmd = app.add_subcommand("ablate", "compare all policies over a trace");
    add_common(ablate_cmd, true);
    ablate_cmd->add_option("--trace", args.trace_path, "workload trace file")->required();
    ablate_cmd->add_option("--checkpoint", args.checkpoint_path, "policy checkpoint");

    auto* sweep_cmd = app.add_subcommand("sweep", "alpha/beta sweep with the static policy");
    add_common(sweep_cmd, true);
    sweep_cmd->add_option("--trace", args.trace_path, "workload trace file")->required();
    std::string alphas = "0.2,0.4,0.6,0.8,1.0";
    std::string betas = "0.1,0.2,0.3,0.4,0.5";
    sweep_cmd->add_option("--alphas", alphas, "comma-separated alpha grid");
    sweep_cmd->add_option("--betas", betas, "comma-separated beta grid");

    auto* robust_cmd = app.add_subcommand("robustness", "multi-seed training curves");
    add_common(robust_cmd, true);
    robust_cmd->add_option("--trace", args.trace_path, "workload trace file")->required();
    std::string seeds = "1,2,3";
    robust_cmd->add_option("--seeds", seeds, "comma-separated seeds");
    robust_cmd->add_option("--episodes", dqn_cfg.episodes, "training episodes per seed");
    robust_cmd->add_option("--max-steps", dqn_cfg.max_steps, "max steps per episode");

    auto* overhead_cmd = app.add_subcommand("overhead", "time one full pruning decision");
    add_common(overhead_cmd, true);
    overhead_cmd->add_option("--checkpoint", args.checkpoint_path, "policy checkpoint");
    std::uint64_t oh_batch = 8, oh_seq = 2048;
    double oh_budget = 0.8;
    overhead_cmd->add_option("--batch", oh_batch, "request batch size");
    overhead_cmd->add_option("--seq-len", oh_seq, "request sequence length");
    overhead_cmd->add_option("--budget-frac", oh_budget, "memory budget fraction");

    CLI11_PARSE(app, argc, argv);

    try {
        if (trace_gen->parsed()) {
            auto records = rap::generate_trace(trace_cfg);
            if (trace_out.empty()) {
                rap::save_trace(std::cout, records);
            } else {
                rap::save_trace(trace_out, records);
            }
        } else if (sur_gen->parsed()) {
            rap::ModelSpec spec = load_spec(args.spec);
            rap::SurrogateModel m = rap::gen_surrogate(spec, args.seed, sur_params);
            m.save(sur_out,
                   "synthetic surrogate costs for " + spec.name + ", seed " +
                       std::to_string(args.seed) + "; not measured on any real model");
            std::cerr << "wrote " << sur_out << " (checksum " << std::hex << m.checksum()
                      << std::dec << ")\n";
        } else if (gsi_build->parsed()) {
            rap::ModelSpec spec = load_spec(args.spec);
            rap::SurrogateModel m = rap::SurrogateModel::load(args.surrogate_path);
            rap::ImportanceTable table = rap::build_importance(m, spec);
            table.save(cache_out);
            std::cerr << "wrote " << cache_out << " (" << table.bucket_count()
                      << " buckets x " << table.blocks << " blocks)\n";
        } else if (train_cmd->parsed()) {
            LoadedContext lc = load_context(args);
            auto trace = rap::load_trace(args.trace_path);
            dqn_cfg.seed = args.seed;
            rap::PruningRlEnv env(*lc.ctx, trace);
            rap::TrainResult result = rap::train(env, dqn_cfg);
            fs::create_directories(args.out_dir);
            std::string ckpt = (fs::path(args.out_dir) / "policy.ckpt").string();
            result.theta.save(ckpt, dqn_cfg.seed, dqn_cfg.hash());
            rap::save_reward_curve(
                (fs::path(args.out_dir) / "reward_curve.csv").string(), result.curve);
            std::cerr << "wrote " << ckpt << " (" << result.theta.param_count()
                      << " parameters)\n";
        } else if (eval_cmd->parsed()) {
            LoadedContext lc = load_context(args);
            auto trace = rap::load_trace(args.trace_path);
            rap::PolicyKind kind = rap::policy_kind_from_string(policy);
            rap::QNetworkParams theta;
            const rap::QNetworkParams* theta_ptr = nullptr;
            if (kind == rap::PolicyKind::Rap) {
                theta = load_policy(args);
                theta_ptr = &theta;
            }
            rap::EvalReport report =
                rap::run_eval(kind, trace, *lc.ctx, theta_ptr, args.seed);
            auto out = open_out(args.out_dir, std::string("eval_") + policy + ".csv");
            rap::write_eval_csv(out, report);
            std::cerr << "policy=" << policy << " mean_log_ppl=" << report.mean_log_ppl
                      << " feasibility=" << report.feasibility_rate << "\n";
        } else if (ablate_cmd->parsed()) {
            LoadedContext lc = load_context(args);
            auto trace = rap::load_trace(args.trace_path);
            rap::QNetworkParams theta = load_policy(args);
            rap::AblationResult result =
                rap::ablation_compare(trace, *lc.ctx, theta, args.seed);
            auto out = open_out(args.out_dir, "ablation.csv");
            rap::write_ablation_csv(out, result);
        } else if (sweep_cmd->parsed()) {
            LoadedContext lc = load_context(args);
            auto trace = rap::load_trace(args.trace_path);
            auto rows =
                rap::sweep_alpha_beta(parse_grid(alphas), parse_grid(betas), trace, *lc.ctx);
            auto out = open_out(args.out_dir, "sweep.csv");
            rap::write_sweep_csv(out, rows);
        } else if (robust_cmd->parsed()) {
            LoadedContext lc = load_context(args);
            auto trace = rap::load_trace(args.trace_path);
            std::vector<std::uint64_t> seed_list;
            for (double s : parse_grid(seeds)) {
                seed_list.push_back(static_cast<std::uint64_t>(s));
            }
            rap::RobustnessResult result =
                rap::seed_robustness(seed_list, trace, *lc.ctx, dqn_cfg);
            auto out = open_out(args.out_dir, "robustness.csv");
            rap::write_robustness_csv(out, result);
            std::cerr << "band_statistic=" << result.band_statistic << "\n";
        } else if (overhead_cmd->parsed()) {
            LoadedContext lc = load_context(args);
            rap::QNetworkParams theta = load_policy(args);
            rap::TraceRecord rec{0, oh_batch, oh_seq, oh_budget};
            rap::OverheadReport rep = rap::overhead_report(*lc.ctx, theta, rec);
            std::cout << "decision_seconds," << rep.decision_seconds << "\n"
                      << "steps," << rep.steps << "\n"
                      << "pruned_mha," << rep.pruned_mha << "\n"
                      << "pruned_ffn," << rep.pruned_ffn << "\n"
                      << "policy_param_count," << rep.policy_param_count << "\n"
                      << "feasible," << (rep.feasible ? 1 : 0) << "\n";
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
