#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <random>

#include "rap/errors.hpp"
#include "rap/gsi.hpp"
#include "rap/surrogate.hpp"

using namespace rap;

namespace {

// Two layers -> four blocks, purely hand-filled costs.
SurrogateModel tiny_model() {
    SurrogateModel m;
    m.blocks = 4;
    m.base_log_ppl = std::log(10.0);
    m.bucket_thresholds = {};  // single bucket
    m.unary = {{0.2}, {0.3}, {0.4}, {0.5}};
    m.validate();
    return m;
}

}  // namespace

TEST_CASE("full mask evaluates to the dense perplexity exactly") {
    SurrogateModel m = tiny_model();
    RetentionMask full(4);
    CHECK(m.evaluate(full, 100) == doctest::Approx(10.0).epsilon(1e-12));
}

TEST_CASE("unary and pair terms compose in log space") {
    SurrogateModel m = tiny_model();
    RetentionMask one(4);
    one.set(0, false);
    CHECK(m.evaluate(one, 100) == doctest::Approx(10.0 * std::exp(0.2)).epsilon(1e-12));

    m.pairs.push_back({0, 1, {0.5}});
    m.validate();
    RetentionMask two(4);
    two.set(0, false);
    two.set(1, false);
    double with_pair = m.evaluate(two, 100);
    CHECK(with_pair == doctest::Approx(10.0 * std::exp(1.0)).epsilon(1e-12));
    // Strictly super-additive versus the unary-only decomposition.
    CHECK(with_pair > 10.0 * std::exp(0.5));
}

TEST_CASE("bucket selection is piecewise constant in seq_len") {
    SurrogateModel m = tiny_model();
    m.bucket_thresholds = {512, 2048};
    m.unary = {{0.1, 0.2, 0.3}, {0.1, 0.2, 0.3}, {0.1, 0.2, 0.3}, {0.1, 0.2, 0.3}};
    m.validate();
    RetentionMask one(4);
    one.set(2, false);
    CHECK(m.evaluate(one, 1) == m.evaluate(one, 512));
    CHECK(m.evaluate(one, 513) == m.evaluate(one, 2048));
    CHECK(m.evaluate(one, 2049) == m.evaluate(one, 100000));
    CHECK(m.evaluate(one, 512) < m.evaluate(one, 513));
    CHECK(m.bucket_of(512) == 0);
    CHECK(m.bucket_of(513) == 1);
    CHECK(m.bucket_of(4096) == 2);
}

TEST_CASE("monotonicity: pruning a superset never lowers perplexity") {
    ModelSpec spec = ModelSpec::toy_4x2();
    SurrogateModel m = gen_surrogate(spec, 7, SurrogateGenParams{});
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 100; ++trial) {
        RetentionMask mask(m.blocks);
        for (std::uint32_t i = 0; i < m.blocks; ++i) {
            if (rng() % 2 == 0) mask.set(i, false);
        }
        RetentionMask sub = mask;
        sub.set(static_cast<std::uint32_t>(rng() % m.blocks), false);
        CHECK(m.evaluate(sub, 128) >= m.evaluate(mask, 128));
    }
}

TEST_CASE("validation rejects bad configs with the offending block named") {
    SurrogateModel m = tiny_model();
    m.unary[2][0] = -0.1;
    CHECK_THROWS_WITH_AS(m.validate(), doctest::Contains("mha@1"), ConfigError);

    SurrogateModel dup = tiny_model();
    dup.pairs.push_back({0, 1, {0.1}});
    dup.pairs.push_back({0, 1, {0.2}});
    CHECK_THROWS_AS(dup.validate(), ConfigError);

    SurrogateModel swapped = tiny_model();
    swapped.pairs.push_back({2, 1, {0.1}});
    CHECK_THROWS_AS(swapped.validate(), ConfigError);
}

TEST_CASE("file round trip preserves evaluation and checksum") {
    ModelSpec spec = ModelSpec::toy_4x2();
    SurrogateGenParams params;
    params.pair_fraction = 0.8;
    SurrogateModel m = gen_surrogate(spec, 3, params);
    std::string path = "test_surrogate_roundtrip.tmp";
    m.save(path, "test fixture");
    SurrogateModel loaded = SurrogateModel::load(path);
    CHECK(loaded.checksum() == m.checksum());
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 20; ++trial) {
        RetentionMask mask(m.blocks);
        for (std::uint32_t i = 0; i < m.blocks; ++i) {
            if (rng() % 2 == 0) mask.set(i, false);
        }
        std::uint64_t seq = 1 + rng() % 4096;
        CHECK(loaded.evaluate(mask, seq) == doctest::Approx(m.evaluate(mask, seq)));
    }
    std::remove(path.c_str());
}

TEST_CASE("generator is deterministic per seed and distinct across seeds") {
    ModelSpec spec = ModelSpec::llama2_7b_like();
    SurrogateGenParams params;
    SurrogateModel a = gen_surrogate(spec, 1, params);
    SurrogateModel b = gen_surrogate(spec, 1, params);
    SurrogateModel c = gen_surrogate(spec, 2, params);
    CHECK(a.checksum() == b.checksum());
    CHECK(a.checksum() != c.checksum());
    CHECK(a.blocks == 64);
    CHECK(a.bucket_count() == 3);
}

TEST_CASE("pair_fraction zero yields a purely additive model") {
    ModelSpec spec = ModelSpec::toy_4x2();
    SurrogateGenParams params;
    params.pair_fraction = 0.0;
    SurrogateModel m = gen_surrogate(spec, 9, params);
    CHECK(m.pairs.empty());
    // Additive models have no sequential effect: one-shot equals GSI.
    auto one_shot = one_shot_rank(m, spec, 128);
    auto trace = gsi_run(m, spec, GsiConfig{1.0, 128});
    REQUIRE(trace.removed.size() == one_shot.size());
    for (std::size_t i = 0; i < one_shot.size(); ++i) {
        CHECK(trace.removed[i] == one_shot[i]);
    }
}

TEST_CASE("generated MHA costs grow with the sequence-length bucket") {
    ModelSpec spec = ModelSpec::llama2_7b_like();
    SurrogateModel m = gen_surrogate(spec, 4, SurrogateGenParams{});
    for (std::uint32_t l = 0; l < spec.n_layers; ++l) {
        std::uint32_t mha = BlockId{l, BlockKind::MHA}.index();
        std::uint32_t ffn = BlockId{l, BlockKind::FFN}.index();
        CHECK(m.unary[mha][2] > m.unary[mha][0]);
        CHECK(m.unary[ffn][2] == doctest::Approx(m.unary[ffn][0]));
    }
}
