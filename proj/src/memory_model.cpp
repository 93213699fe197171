#include "rap/memory_model.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "rap/errors.hpp"

namespace rap {

namespace {

std::uint64_t checked_mul(std::uint64_t a, std::uint64_t b, const char* what) {
    std::uint64_t out = 0;
    if (__builtin_mul_overflow(a, b, &out)) {
        throw OverflowError(std::string("64-bit overflow while computing ") + what);
    }
    return out;
}

std::uint64_t checked_add(std::uint64_t a, std::uint64_t b, const char* what) {
    std::uint64_t out = 0;
    if (__builtin_add_overflow(a, b, &out)) {
        throw OverflowError(std::string("64-bit overflow while computing ") + what);
    }
    return out;
}

void require_same_size(const ModelSpec& spec, const RetentionMask& mask) {
    if (mask.size() != spec.block_count()) {
        std::ostringstream os;
        os << "mask has " << mask.size() << " blocks, spec '" << spec.name << "' expects "
           << spec.block_count();
        throw DimensionError(os.str());
    }
}

}  // namespace

const char* to_string(BlockKind kind) {
    return kind == BlockKind::MHA ? "mha" : "ffn";
}

BlockKind block_kind_from_string(const std::string& s) {
    if (s == "mha" || s == "MHA") return BlockKind::MHA;
    if (s == "ffn" || s == "FFN") return BlockKind::FFN;
    throw ConfigError("unknown block kind '" + s + "' (expected mha or ffn)");
}

std::string to_string(const BlockId& id) {
    return std::string(to_string(id.kind)) + "@" + std::to_string(id.layer);
}

std::uint64_t ModelSpec::total_params() const {
    std::uint64_t per_layer = checked_add(mha_params, ffn_params, "per-layer params");
    return checked_add(other_params, checked_mul(n_layers, per_layer, "layer params"),
                       "total params");
}

void ModelSpec::validate() const {
    if (n_layers < 1) throw ConfigError("n_layers must be >= 1");
    if (n_heads < 1) throw ConfigError("n_heads must be >= 1");
    if (d_head < 1) throw ConfigError("d_head must be >= 1");
    if (bytes_per_element != 1 && bytes_per_element != 2 && bytes_per_element != 4 &&
        bytes_per_element != 8) {
        throw ConfigError("bytes_per_element must be one of {1,2,4,8}, got " +
                          std::to_string(bytes_per_element));
    }
}

ModelSpec ModelSpec::llama2_7b_like() {
    ModelSpec s;
    s.name = "llama2-7b-like";
    s.n_layers = 32;
    s.n_heads = 32;
    s.d_head = 128;
    s.bytes_per_element = 2;
    // 4 * d^2 attention projections and ~3 * d * 11008 FFN weights at d = 4096;
    // other_params covers embeddings/head so totals land at ~6.7B.
    s.mha_params = 67108864;     // 4 * 4096^2
    s.ffn_params = 135266304;    // 3 * 4096 * 11008
    s.other_params = 262410240;  // 2 * 32000 * 4096 + norms
    return s;
}

ModelSpec ModelSpec::toy_4x2() {
    ModelSpec s;
    s.name = "toy-4x2";
    s.n_layers = 4;
    s.n_heads = 2;
    s.d_head = 8;
    s.bytes_per_element = 2;
    s.mha_params = 100;
    s.ffn_params = 200;
    s.other_params = 50;
    return s;
}

ModelSpec ModelSpec::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open model spec file: " + path);
    ModelSpec s;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ls(line);
        std::string key;
        ls >> key;
        bool ok = true;
        if (key == "name") ls >> s.name;
        else if (key == "n_layers") ls >> s.n_layers;
        else if (key == "n_heads") ls >> s.n_heads;
        else if (key == "d_head") ls >> s.d_head;
        else if (key == "bytes_per_element") ls >> s.bytes_per_element;
        else if (key == "mha_params") ls >> s.mha_params;
        else if (key == "ffn_params") ls >> s.ffn_params;
        else if (key == "other_params") ls >> s.other_params;
        else if (key == "overhead_bytes") ls >> s.overhead_bytes;
        else ok = false;
        if (!ok || ls.fail()) {
            throw ConfigError(path + ":" + std::to_string(lineno) +
                              ": bad model spec line: " + line);
        }
    }
    s.validate();
    return s;
}

void ModelSpec::save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write model spec file: " + path);
    out << "name " << name << "\n"
        << "n_layers " << n_layers << "\n"
        << "n_heads " << n_heads << "\n"
        << "d_head " << d_head << "\n"
        << "bytes_per_element " << bytes_per_element << "\n"
        << "mha_params " << mha_params << "\n"
        << "ffn_params " << ffn_params << "\n"
        << "other_params " << other_params << "\n"
        << "overhead_bytes " << overhead_bytes << "\n";
}

std::uint32_t RetentionMask::retained_count() const {
    std::uint32_t n = 0;
    for (auto b : bits_) n += b;
    return n;
}

std::uint32_t RetentionMask::retained_count(BlockKind kind) const {
    std::uint32_t n = 0;
    for (std::uint32_t i = 0; i < size(); ++i) {
        if (bits_[i] && BlockId::from_index(i).kind == kind) ++n;
    }
    return n;
}

std::vector<BlockId> RetentionMask::retained_blocks() const {
    std::vector<BlockId> out;
    out.reserve(size());
    for (std::uint32_t i = 0; i < size(); ++i) {
        if (bits_[i]) out.push_back(BlockId::from_index(i));
    }
    return out;
}

void Request::validate() const {
    if (batch_size < 1) throw ContractError("batch_size must be >= 1");
    if (seq_len < 1) throw ContractError("seq_len must be >= 1");
}

std::uint64_t kv_bytes_per_token(const ModelSpec& spec, const RetentionMask& mask) {
    require_same_size(spec, mask);
    std::uint64_t retained_mha = mask.retained_count(BlockKind::MHA);
    std::uint64_t per_layer = checked_mul(
        2, checked_mul(checked_mul(spec.n_heads, spec.d_head, "kv head bytes"),
                       spec.bytes_per_element, "kv layer bytes"),
        "kv kv-pair bytes");
    return checked_mul(retained_mha, per_layer, "kv bytes per token");
}

std::uint64_t kv_bytes_total(const ModelSpec& spec, const RetentionMask& mask,
                             const Request& req) {
    req.validate();
    std::uint64_t per_token = kv_bytes_per_token(spec, mask);
    return checked_mul(per_token, checked_mul(req.batch_size, req.seq_len, "token count"),
                       "total kv bytes");
}

std::uint64_t param_bytes(const ModelSpec& spec, const RetentionMask& mask) {
    require_same_size(spec, mask);
    std::uint64_t params = spec.other_params;
    for (std::uint32_t i = 0; i < mask.size(); ++i) {
        if (!mask.retained(i)) continue;
        BlockId id = BlockId::from_index(i);
        params = checked_add(
            params, id.kind == BlockKind::MHA ? spec.mha_params : spec.ffn_params,
            "retained params");
    }
    return checked_mul(params, spec.bytes_per_element, "parameter bytes");
}

std::uint64_t peak_memory(const ModelSpec& spec, const RetentionMask& mask,
                          const Request& req) {
    std::uint64_t total = checked_add(param_bytes(spec, mask), kv_bytes_total(spec, mask, req),
                                      "peak memory");
    return checked_add(total, spec.overhead_bytes, "peak memory with overhead");
}

std::string format_bytes(std::uint64_t bytes) {
    char buf[96];
    double gib = static_cast<double>(bytes) / (1024.0 * 1024.0 * 1024.0);
    double gb = static_cast<double>(bytes) / 1e9;
    std::snprintf(buf, sizeof(buf), "%.3f GiB (%.3f GB)", gib, gb);
    return std::string(buf);
}

}  // namespace rap
