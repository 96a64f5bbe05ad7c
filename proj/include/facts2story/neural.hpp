#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "facts2story/types.hpp"

namespace f2s::neural {

// Dense row-major tensor of 64-bit reals. Everything in training runs on
// doubles so the finite-difference checks are meaningful.
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<double> data;

    Tensor() = default;
    Tensor(std::size_t rows, std::size_t cols, double fill = 0.0)
        : shape{rows, cols}, data(rows * cols, fill) {}

    static Tensor zeros_like(const Tensor& other) {
        Tensor t;
        t.shape = other.shape;
        t.data.assign(other.data.size(), 0.0);
        return t;
    }

    std::size_t rows() const { return shape.empty() ? 0 : shape[0]; }
    std::size_t cols() const { return shape.size() < 2 ? 1 : shape[1]; }
    std::size_t size() const { return data.size(); }
    double& at(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
    double at(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }
};

// Deterministic RNG. mt19937_64 output is pinned by the standard, and the
// derived draws below avoid implementation-defined library distributions.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t bits() { return gen_(); }

    double uniform() {  // [0, 1)
        return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
    }

    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u = 1.0 - uniform();
        double v = uniform();
        const double r = std::sqrt(-2.0 * std::log(u));
        const double a = 6.283185307179586476925286766559 * v;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    int uniform_int(int n) {  // [0, n)
        if (n <= 0) throw DataError("uniform_int requires n > 0");
        const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                    std::numeric_limits<std::uint64_t>::max() % static_cast<std::uint64_t>(n);
        std::uint64_t x = gen_();
        while (x >= limit) x = gen_();
        return static_cast<int>(x % static_cast<std::uint64_t>(n));
    }

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[uniform_int(static_cast<int>(i))]);
    }

    std::string state() const;
    void set_state(const std::string& s);

private:
    std::mt19937_64 gen_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

using ParamStore = std::map<std::string, Tensor>;
using GradStore = std::map<std::string, Tensor>;

struct EncoderConfig {
    int vocab_size = 0;
    int d_model = 32;
    int n_heads = 2;
    int n_layers = 1;
    int d_ff = 64;
    int max_len = 256;
    int n_fact_rows = 6;  // five facts plus a "none" row
    double dropout = 0.0;

    void validate() const;
};

// Opaque handle into a Tape.
struct Var {
    int id = -1;
};

// Reverse-mode tape. Build a graph with the op members, then call backward()
// on a scalar node; gradients of the leaves are read back with grad().
class Tape {
public:
    Var leaf(const Tensor& value);

    Var rows(Var table, const std::vector<int>& ids);
    Var add(Var a, Var b);
    Var add_rowvec(Var a, Var row);
    Var matmul(Var a, Var b);
    Var matmul_nt(Var a, Var b);  // a * b^T
    Var scale(Var a, double c);
    Var relu(Var a);
    Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5);
    // mask is len_q x len_k row-major with entries in {0,1}; rows with no
    // visible key are defined to output zeros.
    Var masked_softmax(Var scores, const std::vector<std::uint8_t>& mask);
    Var slice_cols(Var a, std::size_t c0, std::size_t c1);
    Var concat_cols(const std::vector<Var>& parts);
    Var pick_row(Var a, std::size_t r);
    Var cross_entropy(Var logits, int target);                      // logits [1, V] -> [1, 1]
    Var spacing_loss(Var pred, const std::vector<double>& labels);  // pred [n, 1] -> [1, 1]
    Var mean_scalars(const std::vector<Var>& scalars);

    const Tensor& value(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].value; }
    const Tensor& grad(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].grad; }

    void backward(Var scalar_root);

private:
    struct Node {
        Tensor value;
        Tensor grad;
        std::function<void()> back;  // may be empty for leaves
    };

    Var push(Tensor value, std::function<void()> back = {});
    Tensor& grad_mut(Var v) { return nodes_[static_cast<std::size_t>(v.id)].grad; }

    std::vector<Node> nodes_;
};

// Fresh parameters: N(0, 0.02) weights and embeddings, zero biases, unit norms.
ParamStore init_encoder_params(const EncoderConfig& cfg, Rng& rng);

std::map<std::string, Var> make_param_vars(Tape& tape, const ParamStore& params);

// Pre-layer-norm transformer encoder. Input embedding is the sum of token,
// position and fact embedding rows; returns the [len, d_model] hidden states.
Var encoder_forward(Tape& tape, const std::map<std::string, Var>& pv, const EncoderConfig& cfg,
                    const std::vector<int>& token_ids, const std::vector<int>& position_ids,
                    const std::vector<int>& fact_ids, const std::vector<std::uint8_t>& attention_mask);

// Standalone numerically stable cross-entropy with its gradient.
struct CrossEntropy {
    double loss = 0.0;
    std::vector<double> grad;  // softmax(logits) - one_hot(target)
};
CrossEntropy cross_entropy(const std::vector<double>& logits, int target);

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamState {
    std::map<std::string, Tensor> m;
    std::map<std::string, Tensor> v;
    long long t = 0;
};

void adam_step(AdamState& state, ParamStore& params, const GradStore& grads, const AdamConfig& cfg);

// Central-difference audit of an analytic gradient on n_samples random
// coordinates. Returns the maximum relative error
// |fd - an| / max(|fd| + |an|, 1e-6); the floor absorbs roundoff on
// near-zero gradients.
double finite_diff_check(const std::function<double(const ParamStore&)>& loss_fn,
                         const GradStore& analytic, const ParamStore& params, double epsilon,
                         int n_samples, Rng& rng);

// Versioned JSON checkpoint container. `extra` carries optimizer moments and
// resume snapshots; `meta` is free-form (epoch, losses, rng state).
struct Checkpoint {
    std::string model;  // "planner" or "cloze"
    EncoderConfig config;
    ParamStore tensors;
    std::map<std::string, Tensor> extra;
    std::map<std::string, std::string> meta;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace f2s::neural
