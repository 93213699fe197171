#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace rap {

struct TraceRecord {
    std::uint64_t t = 0;
    std::uint64_t batch_size = 1;
    std::uint64_t seq_len = 1;
    double budget_fraction = 1.0;
};

struct TraceGenConfig {
    std::uint64_t seed = 0;
    std::size_t count = 1000;

    // Bimodal prompt lengths: short conversational turns vs long-form inputs.
    double short_log_mean = 5.545;  // ~exp(5.545) = 256 tokens
    double short_log_sigma = 0.6;
    double long_log_mean = 8.0;     // ~3000 tokens
    double long_log_sigma = 0.35;
    double long_weight_base = 0.35;
    double long_weight_amplitude = 0.25;  // phase modulation of the long share
    std::uint64_t min_seq = 16;
    std::uint64_t max_seq = 8192;

    // Geometric batch sizes clipped to {1..max_batch}.
    double batch_geo_p = 0.25;
    std::uint64_t max_batch = 32;

    // Bounded random walk with diurnal modulation for available memory.
    double budget_min = 0.5;
    double budget_max = 1.0;
    double budget_step = 0.03;       // max |delta| per record
    double diurnal_amplitude = 0.15; // pull of the day cycle on the walk target
    std::size_t records_per_day = 96;
    std::size_t phases_per_day = 4;

    void validate() const;
};

// Deterministic per seed; marginal seq_len distribution bimodal, budget path
// continuous with |delta| <= budget_step.
std::vector<TraceRecord> generate_trace(const TraceGenConfig& cfg);

// One JSON object per line: {"t":..,"batch":..,"seq_len":..,"budget_frac":..}
void save_trace(std::ostream& out, const std::vector<TraceRecord>& records);
void save_trace(const std::string& path, const std::vector<TraceRecord>& records);
std::vector<TraceRecord> load_trace(std::istream& in);
std::vector<TraceRecord> load_trace(const std::string& path);

}  // namespace rap
