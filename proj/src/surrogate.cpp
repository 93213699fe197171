#include "rap/surrogate.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>

#include "rap/errors.hpp"

namespace rap {

namespace {

// FNV-1a over a canonical byte stream; stable across runs and platforms with
// the same endianness.
struct Fnv1a {
    std::uint64_t h = 14695981039346656037ull;
    void feed(const void* data, std::size_t n) {
        const auto* p = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < n; ++i) {
            h ^= p[i];
            h *= 1099511628211ull;
        }
    }
    void feed_u64(std::uint64_t v) { feed(&v, sizeof(v)); }
    void feed_f64(double v) {
        std::uint64_t bits;
        std::memcpy(&bits, &v, sizeof(bits));
        feed_u64(bits);
    }
};

}  // namespace

std::size_t SurrogateModel::bucket_of(std::uint64_t seq_len) const {
    for (std::size_t k = 0; k < bucket_thresholds.size(); ++k) {
        if (seq_len <= bucket_thresholds[k]) return k;
    }
    return bucket_thresholds.size();
}

std::uint64_t SurrogateModel::representative_seq_len(std::size_t bucket) const {
    if (bucket >= bucket_count()) throw ContractError("bucket index out of range");
    if (bucket_thresholds.empty()) return 1;
    if (bucket < bucket_thresholds.size()) return bucket_thresholds[bucket];
    return bucket_thresholds.back() + 1;
}

double SurrogateModel::log_ppl(const RetentionMask& mask, std::uint64_t seq_len) const {
    if (mask.size() != blocks) {
        throw DimensionError("mask has " + std::to_string(mask.size()) +
                             " blocks, surrogate expects " + std::to_string(blocks));
    }
    if (seq_len < 1) throw ContractError("seq_len must be >= 1");
    std::size_t b = bucket_of(seq_len);
    double lp = base_log_ppl;
    for (std::uint32_t i = 0; i < blocks; ++i) {
        if (!mask.retained(i)) lp += unary[i][b];
    }
    for (const auto& p : pairs) {
        if (!mask.retained(p.a) && !mask.retained(p.b)) lp += p.cost[b];
    }
    return lp;
}

double SurrogateModel::evaluate(const RetentionMask& mask, std::uint64_t seq_len) const {
    return std::exp(log_ppl(mask, seq_len));
}

void SurrogateModel::validate() const {
    if (blocks == 0) throw ConfigError("surrogate must cover at least one block");
    if (!std::is_sorted(bucket_thresholds.begin(), bucket_thresholds.end()) ||
        std::adjacent_find(bucket_thresholds.begin(), bucket_thresholds.end()) !=
            bucket_thresholds.end()) {
        throw ConfigError("bucket thresholds must be strictly ascending");
    }
    if (unary.size() != blocks) {
        throw ConfigError("unary cost table covers " + std::to_string(unary.size()) +
                          " blocks, expected " + std::to_string(blocks));
    }
    for (std::uint32_t i = 0; i < blocks; ++i) {
        if (unary[i].size() != bucket_count()) {
            throw ConfigError("block " + to_string(BlockId::from_index(i)) +
                              " has wrong bucket count in unary table");
        }
        for (double c : unary[i]) {
            if (!(c >= 0.0)) {
                throw ConfigError("negative unary cost for block " +
                                  to_string(BlockId::from_index(i)));
            }
        }
    }
    std::vector<std::pair<std::uint32_t, std::uint32_t>> seen;
    for (const auto& p : pairs) {
        if (p.a >= p.b) throw ConfigError("pair must be stored with a < b canonical order");
        if (p.b >= blocks) {
            throw ConfigError("pair references unknown block index " + std::to_string(p.b));
        }
        if (p.cost.size() != bucket_count()) throw ConfigError("pair has wrong bucket count");
        seen.emplace_back(p.a, p.b);
    }
    std::sort(seen.begin(), seen.end());
    if (std::adjacent_find(seen.begin(), seen.end()) != seen.end()) {
        throw ConfigError("duplicate pair in surrogate config");
    }
}

std::uint64_t SurrogateModel::checksum() const {
    Fnv1a h;
    h.feed_u64(blocks);
    h.feed_f64(base_log_ppl);
    h.feed_u64(bucket_thresholds.size());
    for (auto t : bucket_thresholds) h.feed_u64(t);
    for (const auto& row : unary) {
        for (double c : row) h.feed_f64(c);
    }
    h.feed_u64(pairs.size());
    for (const auto& p : pairs) {
        h.feed_u64(p.a);
        h.feed_u64(p.b);
        for (double c : p.cost) h.feed_f64(c);
    }
    return h.h;
}

SurrogateModel SurrogateModel::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open surrogate file: " + path);
    SurrogateModel m;
    std::string line;
    std::size_t lineno = 0;
    std::size_t nb = 0;
    auto parse_block = [&](std::istream& ls) {
        std::uint32_t layer;
        std::string kind;
        if (!(ls >> layer >> kind)) throw ConfigError(path + ": truncated block reference");
        return BlockId{layer, block_kind_from_string(kind)};
    };
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ls(line);
        std::string key;
        ls >> key;
        try {
            if (key == "blocks") {
                ls >> m.blocks;
                nb = m.bucket_thresholds.size() + 1;
                m.unary.assign(m.blocks, std::vector<double>(nb, 0.0));
            } else if (key == "base_log_ppl") {
                ls >> m.base_log_ppl;
            } else if (key == "buckets") {
                std::uint64_t t;
                m.bucket_thresholds.clear();
                while (ls >> t) m.bucket_thresholds.push_back(t);
                ls.clear();
                nb = m.bucket_thresholds.size() + 1;
                if (m.blocks) m.unary.assign(m.blocks, std::vector<double>(nb, 0.0));
            } else if (key == "unary") {
                BlockId id = parse_block(ls);
                std::size_t bucket;
                double cost;
                ls >> bucket >> cost;
                if (id.index() >= m.blocks) {
                    throw ConfigError("unary row references unknown block " + to_string(id));
                }
                if (bucket >= nb) throw ConfigError("unary row references unknown bucket");
                m.unary.at(id.index()).at(bucket) = cost;
            } else if (key == "pair") {
                BlockId a = parse_block(ls);
                BlockId b = parse_block(ls);
                std::size_t bucket;
                double cost;
                ls >> bucket >> cost;
                std::uint32_t ia = a.index(), ib = b.index();
                if (ia > ib) std::swap(ia, ib);
                if (ib >= m.blocks) throw ConfigError("pair row references unknown block");
                if (bucket >= nb) throw ConfigError("pair row references unknown bucket");
                auto it = std::find_if(m.pairs.begin(), m.pairs.end(), [&](const PairCost& p) {
                    return p.a == ia && p.b == ib;
                });
                if (it == m.pairs.end()) {
                    m.pairs.push_back(PairCost{ia, ib, std::vector<double>(nb, 0.0)});
                    it = std::prev(m.pairs.end());
                }
                it->cost.at(bucket) = cost;
            } else {
                throw ConfigError("unknown key '" + key + "'");
            }
            if (ls.fail()) throw ConfigError("malformed line");
        } catch (const ConfigError& e) {
            throw ConfigError(path + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    m.validate();
    return m;
}

void SurrogateModel::save(const std::string& path, const std::string& header_comment) const {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write surrogate file: " + path);
    if (!header_comment.empty()) out << "# " << header_comment << "\n";
    out.precision(17);
    out << "blocks " << blocks << "\n";
    out << "base_log_ppl " << base_log_ppl << "\n";
    out << "buckets";
    for (auto t : bucket_thresholds) out << " " << t;
    out << "\n";
    for (std::uint32_t i = 0; i < blocks; ++i) {
        BlockId id = BlockId::from_index(i);
        for (std::size_t b = 0; b < bucket_count(); ++b) {
            out << "unary " << id.layer << " " << to_string(id.kind) << " " << b << " "
                << unary[i][b] << "\n";
        }
    }
    for (const auto& p : pairs) {
        BlockId a = BlockId::from_index(p.a);
        BlockId b = BlockId::from_index(p.b);
        for (std::size_t k = 0; k < bucket_count(); ++k) {
            out << "pair " << a.layer << " " << to_string(a.kind) << " " << b.layer << " "
                << to_string(b.kind) << " " << k << " " << p.cost[k] << "\n";
        }
    }
}

void SurrogateGenParams::validate() const {
    if (mha_base_cost < 0 || ffn_base_cost < 0) throw ConfigError("base costs must be >= 0");
    if (pair_fraction < 0 || pair_fraction > 1) throw ConfigError("pair_fraction in [0,1]");
    if (cost_jitter < 0) throw ConfigError("cost_jitter must be >= 0");
    if (pair_cost_scale < 0) throw ConfigError("pair_cost_scale must be >= 0");
    if (mha_bucket_growth < 0) throw ConfigError("mha_bucket_growth must be >= 0");
}

SurrogateModel gen_surrogate(const ModelSpec& spec, std::uint64_t seed,
                             const SurrogateGenParams& params) {
    spec.validate();
    params.validate();
    std::mt19937_64 rng(seed);
    std::lognormal_distribution<double> jitter(0.0, params.cost_jitter);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    SurrogateModel m;
    m.blocks = spec.block_count();
    m.base_log_ppl = params.base_log_ppl;
    m.bucket_thresholds = params.bucket_thresholds;
    std::size_t nb = m.bucket_count();
    m.unary.assign(m.blocks, std::vector<double>(nb, 0.0));

    double mean_cost = 0.0;
    for (std::uint32_t i = 0; i < m.blocks; ++i) {
        BlockId id = BlockId::from_index(i);
        // U-shaped layer profile: first and last layers carry more cost.
        double pos = spec.n_layers > 1
                         ? 2.0 * static_cast<double>(id.layer) / (spec.n_layers - 1) - 1.0
                         : 0.0;
        double shape = 1.0 + params.edge_boost * pos * pos;
        double base =
            (id.kind == BlockKind::MHA ? params.mha_base_cost : params.ffn_base_cost);
        double draw = base * shape * jitter(rng);
        for (std::size_t b = 0; b < nb; ++b) {
            double bucket_factor = id.kind == BlockKind::MHA
                                       ? 1.0 + params.mha_bucket_growth * static_cast<double>(b)
                                       : 1.0;
            m.unary[i][b] = draw * bucket_factor;
            mean_cost += m.unary[i][b];
        }
    }
    mean_cost /= static_cast<double>(m.blocks) * static_cast<double>(nb);

    // Couple a fraction of adjacent-layer (MHA, MHA) and (FFN, FFN) pairs.
    for (std::uint32_t l = 0; l + 1 < spec.n_layers; ++l) {
        for (BlockKind kind : {BlockKind::MHA, BlockKind::FFN}) {
            if (unit(rng) >= params.pair_fraction) continue;
            std::uint32_t ia = BlockId{l, kind}.index();
            std::uint32_t ib = BlockId{l + 1, kind}.index();
            SurrogateModel::PairCost pc{ia, ib, std::vector<double>(nb, 0.0)};
            double d = mean_cost * params.pair_cost_scale * jitter(rng);
            for (std::size_t b = 0; b < nb; ++b) pc.cost[b] = d;
            m.pairs.push_back(std::move(pc));
        }
    }
    m.validate();
    return m;
}

}  // namespace rap
