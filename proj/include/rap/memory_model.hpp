#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace rap {

enum class BlockKind : std::uint8_t { MHA = 0, FFN = 1 };

const char* to_string(BlockKind kind);
BlockKind block_kind_from_string(const std::string& s);

// One prunable sublayer. Canonical linear index: 2*layer + (kind == FFN).
struct BlockId {
    std::uint32_t layer = 0;
    BlockKind kind = BlockKind::MHA;

    std::uint32_t index() const { return 2 * layer + (kind == BlockKind::FFN ? 1u : 0u); }
    static BlockId from_index(std::uint32_t idx) {
        return BlockId{idx / 2, (idx % 2 == 0) ? BlockKind::MHA : BlockKind::FFN};
    }
    friend bool operator==(const BlockId& a, const BlockId& b) {
        return a.layer == b.layer && a.kind == b.kind;
    }
    // Canonical order: layer ascending, MHA before FFN.
    friend bool operator<(const BlockId& a, const BlockId& b) { return a.index() < b.index(); }
};

std::string to_string(const BlockId& id);

// Architecture constants driving all memory math.
struct ModelSpec {
    std::string name;
    std::uint32_t n_layers = 0;
    std::uint32_t n_heads = 0;
    std::uint32_t d_head = 0;
    std::uint32_t bytes_per_element = 2;  // p_a
    std::uint64_t mha_params = 0;         // per MHA block
    std::uint64_t ffn_params = 0;         // per FFN block
    std::uint64_t other_params = 0;       // embeddings etc., never prunable
    std::uint64_t overhead_bytes = 0;     // constant calibration term, default 0

    std::uint32_t block_count() const { return 2 * n_layers; }
    std::uint64_t total_params() const;

    void validate() const;

    static ModelSpec llama2_7b_like();
    static ModelSpec toy_4x2();
    static ModelSpec load(const std::string& path);
    void save(const std::string& path) const;
};

// Retain/prune bit per block, canonical order (layer asc, MHA before FFN).
class RetentionMask {
public:
    RetentionMask() = default;
    explicit RetentionMask(std::uint32_t block_count, bool retained = true)
        : bits_(block_count, retained ? 1 : 0) {}

    std::uint32_t size() const { return static_cast<std::uint32_t>(bits_.size()); }
    bool retained(std::uint32_t idx) const { return bits_.at(idx) != 0; }
    bool retained(const BlockId& id) const { return retained(id.index()); }
    void set(std::uint32_t idx, bool retained) { bits_.at(idx) = retained ? 1 : 0; }
    void prune(const BlockId& id) { set(id.index(), false); }

    std::uint32_t retained_count() const;
    std::uint32_t retained_count(BlockKind kind) const;
    std::vector<BlockId> retained_blocks() const;

    friend bool operator==(const RetentionMask& a, const RetentionMask& b) {
        return a.bits_ == b.bits_;
    }

private:
    std::vector<std::uint8_t> bits_;
};

struct Request {
    std::uint64_t batch_size = 1;  // R_bs
    std::uint64_t seq_len = 1;     // R_sql

    void validate() const;
};

// Per-token KV-cache bytes: 2 * (#retained MHA blocks) * n_heads * d_head * p_a.
std::uint64_t kv_bytes_per_token(const ModelSpec& spec, const RetentionMask& mask);

// kv_bytes_per_token * batch_size * seq_len, overflow-checked.
std::uint64_t kv_bytes_total(const ModelSpec& spec, const RetentionMask& mask,
                             const Request& req);

// (other_params + retained block params) * p_a.
std::uint64_t param_bytes(const ModelSpec& spec, const RetentionMask& mask);

// param_bytes + kv_bytes_total + overhead_bytes; the budget-feasibility quantity.
std::uint64_t peak_memory(const ModelSpec& spec, const RetentionMask& mask,
                          const Request& req);

// "12.50 GiB (13.42 GB)" style, for reports.
std::string format_bytes(std::uint64_t bytes);

}  // namespace rap
