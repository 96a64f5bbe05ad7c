#include <doctest.h>

#include <cmath>
#include <fstream>

#include "facts2story/neural.hpp"
#include "testutil.hpp"

using namespace f2s;
using namespace f2s::neural;

namespace {

EncoderConfig tiny_config(int vocab = 7, int d_model = 4, int heads = 2, int layers = 1,
                          int d_ff = 8, int max_len = 16) {
    EncoderConfig cfg;
    cfg.vocab_size = vocab;
    cfg.d_model = d_model;
    cfg.n_heads = heads;
    cfg.n_layers = layers;
    cfg.d_ff = d_ff;
    cfg.max_len = max_len;
    return cfg;
}

std::vector<std::uint8_t> full_mask(std::size_t len) {
    return std::vector<std::uint8_t>(len * len, 1);
}

Tensor run_encoder(const ParamStore& params, const EncoderConfig& cfg,
                   const std::vector<int>& tokens, const std::vector<int>& positions,
                   const std::vector<int>& facts, const std::vector<std::uint8_t>& mask) {
    Tape tape;
    auto pv = make_param_vars(tape, params);
    const Var h = encoder_forward(tape, pv, cfg, tokens, positions, facts, mask);
    return tape.value(h);
}

}  // namespace

TEST_CASE("rng is deterministic and round-trips its state") {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) CHECK(a.uniform() == b.uniform());
    const std::string saved = a.state();
    const double expected = a.normal();
    Rng c(0);
    c.set_state(saved);
    CHECK(c.normal() == expected);
}

TEST_CASE("encoder with zero block weights reduces to layer-norm of the embeddings") {
    EncoderConfig cfg = tiny_config();
    Rng rng(1);
    ParamStore params = init_encoder_params(cfg, rng);
    for (auto& [name, tensor] : params) {
        if (name.find("attn.w") != std::string::npos || name.find("ffn.w") != std::string::npos)
            for (double& x : tensor.data) x = 0.0;
    }
    const std::vector<int> tokens = {1, 2, 3};
    const std::vector<int> positions = {0, 1, 2};
    const std::vector<int> facts = {0, 0, 5};
    const Tensor hidden = run_encoder(params, cfg, tokens, positions, facts, full_mask(3));

    for (std::size_t i = 0; i < 3; ++i) {
        std::vector<double> emb(static_cast<std::size_t>(cfg.d_model));
        double mean = 0.0;
        for (std::size_t c = 0; c < emb.size(); ++c) {
            emb[c] = params.at("tok_emb").at(static_cast<std::size_t>(tokens[i]), c) +
                     params.at("pos_emb").at(static_cast<std::size_t>(positions[i]), c) +
                     params.at("fact_emb").at(static_cast<std::size_t>(facts[i]), c);
            mean += emb[c];
        }
        mean /= static_cast<double>(emb.size());
        double var = 0.0;
        for (double e : emb) var += (e - mean) * (e - mean);
        var /= static_cast<double>(emb.size());
        for (std::size_t c = 0; c < emb.size(); ++c) {
            const double want = (emb[c] - mean) / std::sqrt(var + 1e-5);
            CHECK(hidden.at(i, c) == doctest::Approx(want).epsilon(1e-9));
        }
    }
}

TEST_CASE("masked softmax of uniform logits weighs visible keys 1/n") {
    Tape tape;
    Tensor scores(2, 4, 0.7);
    const Var s = tape.leaf(scores);
    std::vector<std::uint8_t> mask = {1, 1, 1, 1, 1, 1, 0, 0};
    const Var sm = tape.masked_softmax(s, mask);
    for (std::size_t c = 0; c < 4; ++c) CHECK(tape.value(sm).at(0, c) == doctest::Approx(0.25));
    CHECK(tape.value(sm).at(1, 0) == doctest::Approx(0.5));
    CHECK(tape.value(sm).at(1, 2) == 0.0);
}

TEST_CASE("fully masked rows output zeros") {
    Tape tape;
    const Var s = tape.leaf(Tensor(1, 3, 2.0));
    const Var sm = tape.masked_softmax(s, {0, 0, 0});
    for (std::size_t c = 0; c < 3; ++c) CHECK(tape.value(sm).at(0, c) == 0.0);
}

TEST_CASE("masked softmax rows sum to 1 over the visible keys") {
    Rng rng(64);
    Tape tape;
    Tensor scores(5, 6);
    for (double& x : scores.data) x = 2.0 * rng.normal();
    std::vector<std::uint8_t> mask(30);
    for (auto& m : mask) m = rng.uniform() < 0.6 ? 1 : 0;
    const Var sm = tape.masked_softmax(tape.leaf(scores), mask);
    for (std::size_t r = 0; r < 5; ++r) {
        double sum = 0.0;
        bool any = false;
        for (std::size_t c = 0; c < 6; ++c) {
            if (mask[r * 6 + c]) any = true;
            else CHECK(tape.value(sm).at(r, c) == 0.0);
            sum += tape.value(sm).at(r, c);
        }
        CHECK(sum == doctest::Approx(any ? 1.0 : 0.0).epsilon(1e-12));
    }
}

TEST_CASE("encoder forward is bit-deterministic") {
    EncoderConfig cfg = tiny_config();
    Rng rng(27);
    const ParamStore params = init_encoder_params(cfg, rng);
    const std::vector<int> tokens = {1, 5, 2};
    const std::vector<int> positions = {0, 1, 2};
    const std::vector<int> facts = {0, 1, 5};
    const Tensor a = run_encoder(params, cfg, tokens, positions, facts, full_mask(3));
    const Tensor b = run_encoder(params, cfg, tokens, positions, facts, full_mask(3));
    CHECK(a.data == b.data);
}

TEST_CASE("encoder matches the independent reference implementation") {
    for (const int heads : {1, 2}) {
        EncoderConfig cfg = tiny_config(9, 4, heads, 2, 6, 12);
        Rng rng(7 + heads);
        const ParamStore params = init_encoder_params(cfg, rng);
        const std::vector<int> tokens = {4, 7, 1, 3};
        const std::vector<int> positions = {1, 2, 3, 4};
        const std::vector<int> facts = {0, 0, 1, 5};
        std::vector<std::uint8_t> mask = full_mask(4);
        mask[3] = 0;  // row 0 cannot see key 3
        mask[7] = 0;

        const Tensor got = run_encoder(params, cfg, tokens, positions, facts, mask);
        const auto want = testutil::reference_encoder(params, cfg, tokens, positions, facts, mask);
        for (std::size_t i = 0; i < 4; ++i)
            for (std::size_t c = 0; c < 4; ++c)
                CHECK(got.at(i, c) == doctest::Approx(want[i][c]).epsilon(1e-10));
    }
}

TEST_CASE("single-head d_model=2 forward matches a hand-computed trace") {
    // Fixed-seed parameters, length-2 input; the reference is computed with
    // explicit loops that share no code with the tape.
    EncoderConfig cfg = tiny_config(5, 2, 1, 1, 4, 8);
    Rng rng(123);
    const ParamStore params = init_encoder_params(cfg, rng);
    const std::vector<int> tokens = {2, 4};
    const std::vector<int> positions = {0, 1};
    const std::vector<int> facts = {0, 1};
    const Tensor got = run_encoder(params, cfg, tokens, positions, facts, full_mask(2));
    const auto want = testutil::reference_encoder(params, cfg, tokens, positions, facts, full_mask(2));
    for (std::size_t i = 0; i < 2; ++i)
        for (std::size_t c = 0; c < 2; ++c)
            CHECK(got.at(i, c) == doctest::Approx(want[i][c]).epsilon(1e-12));
}

TEST_CASE("encoder rejects malformed inputs") {
    EncoderConfig cfg = tiny_config();
    Rng rng(3);
    const ParamStore params = init_encoder_params(cfg, rng);
    Tape tape;
    auto pv = make_param_vars(tape, params);
    const std::vector<int> long_tokens(cfg.max_len + 1, 1);
    std::vector<int> long_pos(long_tokens.size());
    CHECK_THROWS_AS(encoder_forward(tape, pv, cfg, long_tokens, long_pos,
                                    std::vector<int>(long_tokens.size(), 0),
                                    full_mask(long_tokens.size())),
                    DataError);
    CHECK_THROWS_AS(encoder_forward(tape, pv, cfg, {99}, {0}, {0}, full_mask(1)), DataError);
    CHECK_THROWS_AS(encoder_forward(tape, pv, cfg, {1}, {0}, {9}, full_mask(1)), DataError);
}

TEST_CASE("cross_entropy values and gradient") {
    SUBCASE("uniform logits cost ln(V)") {
        const auto ce = cross_entropy(std::vector<double>(10, 1.5), 3);
        CHECK(ce.loss == doctest::Approx(std::log(10.0)).epsilon(1e-12));
    }
    SUBCASE("strongly peaked logits cost almost nothing") {
        std::vector<double> logits(6, 0.0);
        logits[2] = 25.0;
        const auto ce = cross_entropy(logits, 2);
        CHECK(ce.loss < 1e-8);
    }
    SUBCASE("hand-evaluated log-sum-exp") {
        const auto ce = cross_entropy({1.0, 2.0, 3.0}, 2);
        const double want = std::log(1.0 + std::exp(-1.0) + std::exp(-2.0));
        CHECK(ce.loss == doctest::Approx(want).epsilon(1e-12));
    }
    SUBCASE("gradient is softmax minus one-hot") {
        const std::vector<double> logits = {0.2, -0.4, 1.1};
        const auto ce = cross_entropy(logits, 1);
        double z = 0.0;
        for (double l : logits) z += std::exp(l);
        for (std::size_t i = 0; i < 3; ++i) {
            const double want = std::exp(logits[i]) / z - (i == 1 ? 1.0 : 0.0);
            CHECK(ce.grad[i] == doctest::Approx(want).epsilon(1e-12));
        }
    }
    SUBCASE("target bounds") {
        CHECK_THROWS_AS(cross_entropy({1.0, 2.0}, 2), DataError);
        CHECK_THROWS_AS(cross_entropy({1.0, 2.0}, -1), DataError);
    }
}

TEST_CASE("adam_step") {
    AdamConfig cfg;
    cfg.lr = 1e-3;

    SUBCASE("zero gradient leaves parameters unchanged") {
        ParamStore params{{"w", Tensor(1, 3, 2.5)}};
        GradStore grads{{"w", Tensor(1, 3, 0.0)}};
        AdamState state;
        adam_step(state, params, grads, cfg);
        for (double x : params.at("w").data) CHECK(x == doctest::Approx(2.5));
    }
    SUBCASE("first step magnitude is lr / (1 + eps)") {
        ParamStore params{{"w", Tensor(1, 1, 0.0)}};
        GradStore grads{{"w", Tensor(1, 1, 1.0)}};
        AdamState state;
        adam_step(state, params, grads, cfg);
        CHECK(params.at("w").at(0, 0) == doctest::Approx(-cfg.lr / (1.0 + cfg.eps)).epsilon(1e-12));
    }
    SUBCASE("descends a 1-D quadratic") {
        ParamStore params{{"w", Tensor(1, 1, 1.0)}};
        AdamState state;
        double prev = 0.5;  // 0.5 * theta^2 at theta=1
        for (int i = 0; i < 2; ++i) {
            GradStore grads{{"w", Tensor(1, 1, params.at("w").at(0, 0))}};
            adam_step(state, params, grads, cfg);
            const double theta = params.at("w").at(0, 0);
            const double objective = 0.5 * theta * theta;
            CHECK(objective < prev);
            prev = objective;
        }
    }
}

TEST_CASE("finite_diff_check") {
    Rng rng(11);

    SUBCASE("linear loss is exact") {
        ParamStore params{{"w", Tensor(2, 3, 0.5)}};
        const std::vector<double> coeff = {1.0, -2.0, 3.0, 0.25, -0.75, 2.0};
        auto loss = [&coeff](const ParamStore& p) {
            double acc = 0.0;
            for (std::size_t i = 0; i < coeff.size(); ++i) acc += coeff[i] * p.at("w").data[i];
            return acc;
        };
        GradStore analytic{{"w", Tensor(2, 3)}};
        analytic.at("w").data = coeff;
        CHECK(finite_diff_check(loss, analytic, params, 1e-6, 12, rng) < 1e-9);
    }

    SUBCASE("a corrupted gradient is flagged with relative error near 1/3") {
        ParamStore params{{"w", Tensor(1, 1, 0.3)}};
        auto loss = [](const ParamStore& p) { return 2.0 * p.at("w").at(0, 0); };
        GradStore corrupted{{"w", Tensor(1, 1, 4.0)}};  // true gradient is 2
        const double err = finite_diff_check(loss, corrupted, params, 1e-6, 4, rng);
        CHECK(err == doctest::Approx(1.0 / 3.0).epsilon(1e-6));
    }
}

TEST_CASE("checkpoints round-trip and rewrite byte-identically") {
    const testutil::TempDir tmp("ckpt");
    EncoderConfig cfg = tiny_config();
    Rng rng(9);
    Checkpoint ckpt;
    ckpt.model = "planner";
    ckpt.config = cfg;
    ckpt.tensors = init_encoder_params(cfg, rng);
    ckpt.extra["adam.m.tok_emb"] = Tensor(2, 2, 0.125);
    ckpt.meta["epochs_done"] = "4";

    save_checkpoint(tmp.path("a.json"), ckpt);
    const Checkpoint loaded = load_checkpoint(tmp.path("a.json"));
    CHECK(loaded.model == "planner");
    CHECK(loaded.config.d_model == cfg.d_model);
    CHECK(loaded.meta.at("epochs_done") == "4");
    CHECK(loaded.tensors.at("tok_emb").data == ckpt.tensors.at("tok_emb").data);
    CHECK(loaded.extra.at("adam.m.tok_emb").data == ckpt.extra.at("adam.m.tok_emb").data);

    save_checkpoint(tmp.path("b.json"), loaded);
    std::ifstream a(tmp.path("a.json")), b(tmp.path("b.json"));
    const std::string sa((std::istreambuf_iterator<char>(a)), std::istreambuf_iterator<char>());
    const std::string sb((std::istreambuf_iterator<char>(b)), std::istreambuf_iterator<char>());
    CHECK(sa == sb);
}
