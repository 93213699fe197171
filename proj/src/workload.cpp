#include "rap/workload.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include <json.hpp>

#include "rap/errors.hpp"

namespace rap {

void TraceGenConfig::validate() const {
    if (count == 0) throw ConfigError("trace count must be >= 1");
    if (min_seq < 1 || max_seq < min_seq) throw ConfigError("bad seq_len range");
    if (max_batch < 1) throw ConfigError("max_batch must be >= 1");
    if (!(batch_geo_p > 0.0 && batch_geo_p < 1.0)) {
        throw ConfigError("batch_geo_p must be in (0,1)");
    }
    if (!(budget_min > 0.0 && budget_min <= budget_max && budget_max <= 1.0)) {
        throw ConfigError("budget walk bounds must satisfy 0 < min <= max <= 1");
    }
    if (budget_step <= 0.0) throw ConfigError("budget_step must be > 0");
    double w_lo = long_weight_base - long_weight_amplitude;
    double w_hi = long_weight_base + long_weight_amplitude;
    if (w_lo < -1e-12 || w_hi > 1.0 + 1e-12) {
        throw ConfigError("long-mode weight leaves [0,1] under phase modulation");
    }
    if (records_per_day == 0 || phases_per_day == 0) {
        throw ConfigError("records_per_day and phases_per_day must be >= 1");
    }
}

std::vector<TraceRecord> generate_trace(const TraceGenConfig& cfg) {
    cfg.validate();
    std::mt19937_64 rng(cfg.seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::lognormal_distribution<double> short_len(cfg.short_log_mean, cfg.short_log_sigma);
    std::lognormal_distribution<double> long_len(cfg.long_log_mean, cfg.long_log_sigma);
    std::geometric_distribution<std::uint64_t> batch(cfg.batch_geo_p);

    const double two_pi = 2.0 * 3.14159265358979323846;
    double budget = 0.5 * (cfg.budget_min + cfg.budget_max);
    std::vector<TraceRecord> out;
    out.reserve(cfg.count);
    for (std::size_t t = 0; t < cfg.count; ++t) {
        // Phase of day drives the long-form share (bursty long-input periods).
        std::size_t phase = (t * cfg.phases_per_day / cfg.records_per_day) % cfg.phases_per_day;
        double long_w = cfg.long_weight_base +
                        cfg.long_weight_amplitude *
                            std::sin(two_pi * static_cast<double>(phase) /
                                     static_cast<double>(cfg.phases_per_day));
        long_w = std::clamp(long_w, 0.0, 1.0);
        double len = unit(rng) < long_w ? long_len(rng) : short_len(rng);
        std::uint64_t seq = std::clamp(static_cast<std::uint64_t>(std::llround(len)),
                                       cfg.min_seq, cfg.max_seq);
        std::uint64_t bs = std::min<std::uint64_t>(batch(rng) + 1, cfg.max_batch);

        // Random walk nudged toward the diurnal target, step-bounded then clamped.
        double day_pos = static_cast<double>(t % cfg.records_per_day) /
                         static_cast<double>(cfg.records_per_day);
        double target = 0.5 * (cfg.budget_min + cfg.budget_max) +
                        cfg.diurnal_amplitude * (cfg.budget_max - cfg.budget_min) * 0.5 *
                            std::sin(two_pi * day_pos);
        double delta = (unit(rng) * 2.0 - 1.0) * cfg.budget_step + 0.25 * (target - budget);
        delta = std::clamp(delta, -cfg.budget_step, cfg.budget_step);
        budget = std::clamp(budget + delta, cfg.budget_min, cfg.budget_max);

        out.push_back(TraceRecord{t, bs, seq, budget});
    }
    return out;
}

void save_trace(std::ostream& out, const std::vector<TraceRecord>& records) {
    for (const auto& r : records) {
        nlohmann::json j{{"t", r.t},
                         {"batch", r.batch_size},
                         {"seq_len", r.seq_len},
                         {"budget_frac", r.budget_fraction}};
        out << j.dump() << "\n";
    }
}

void save_trace(const std::string& path, const std::vector<TraceRecord>& records) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write trace file: " + path);
    save_trace(out, records);
}

std::vector<TraceRecord> load_trace(std::istream& in) {
    std::vector<TraceRecord> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
            TraceRecord r;
            r.t = j.at("t").get<std::uint64_t>();
            r.batch_size = j.at("batch").get<std::uint64_t>();
            r.seq_len = j.at("seq_len").get<std::uint64_t>();
            r.budget_fraction = j.at("budget_frac").get<double>();
            if (r.batch_size < 1 || r.seq_len < 1) {
                throw ConfigError("batch and seq_len must be >= 1");
            }
            if (!(r.budget_fraction > 0.0 && r.budget_fraction <= 1.0)) {
                throw ConfigError("budget_frac must be in (0,1]");
            }
            out.push_back(r);
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError("trace line " + std::to_string(lineno) + ": " + e.what());
        } catch (const ConfigError& e) {
            throw ConfigError("trace line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

std::vector<TraceRecord> load_trace(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open trace file: " + path);
    return load_trace(in);
}

}  // namespace rap
