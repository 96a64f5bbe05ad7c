#include "facts2story/neural.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace f2s::neural {

namespace {

using json = nlohmann::json;

void check_finite(double x, const char* what) {
    if (!std::isfinite(x)) throw NumericError(std::string("non-finite value in ") + what);
}

}  // namespace

std::string Rng::state() const {
    std::ostringstream out;
    out << gen_ << " " << (has_spare_ ? 1 : 0) << " ";
    out.precision(17);
    out << spare_;
    return out.str();
}

void Rng::set_state(const std::string& s) {
    std::istringstream in(s);
    int spare_flag = 0;
    in >> gen_ >> spare_flag >> spare_;
    if (!in) throw DataError("invalid rng state string");
    has_spare_ = spare_flag != 0;
}

void EncoderConfig::validate() const {
    if (vocab_size <= 0 || d_model <= 0 || n_heads <= 0 || n_layers <= 0 || d_ff <= 0 ||
        max_len <= 0 || n_fact_rows <= 0)
        throw DataError("encoder config fields must be positive");
    if (d_model % n_heads != 0) throw DataError("d_model must be divisible by n_heads");
    if (dropout < 0.0 || dropout >= 1.0) throw DataError("dropout must be in [0, 1)");
}

Var Tape::push(Tensor value, std::function<void()> back) {
    Node node;
    node.grad = Tensor::zeros_like(value);
    node.value = std::move(value);
    node.back = std::move(back);
    nodes_.push_back(std::move(node));
    return Var{static_cast<int>(nodes_.size()) - 1};
}

Var Tape::leaf(const Tensor& value) { return push(value); }

Var Tape::rows(Var table, const std::vector<int>& ids) {
    const Tensor& src = value(table);
    const std::size_t d = src.cols();
    Tensor out(ids.size(), d);
    for (std::size_t i = 0; i < ids.size(); ++i) {
        const int id = ids[i];
        if (id < 0 || static_cast<std::size_t>(id) >= src.rows())
            throw DataError("row index out of range in embedding lookup");
        for (std::size_t c = 0; c < d; ++c) out.at(i, c) = src.at(static_cast<std::size_t>(id), c);
    }
    Var v = push(std::move(out));
    nodes_.back().back = [this, table, v, ids, d]() {
        Tensor& tg = grad_mut(table);
        const Tensor& g = grad(v);
        for (std::size_t i = 0; i < ids.size(); ++i)
            for (std::size_t c = 0; c < d; ++c)
                tg.at(static_cast<std::size_t>(ids[i]), c) += g.at(i, c);
    };
    return v;
}

Var Tape::add(Var a, Var b) {
    const Tensor& ta = value(a);
    const Tensor& tb = value(b);
    if (ta.shape != tb.shape) throw DataError("add: shape mismatch");
    Tensor out = ta;
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += tb.data[i];
    Var v = push(std::move(out));
    nodes_.back().back = [this, a, b, v]() {
        const Tensor& g = grad(v);
        Tensor& ga = grad_mut(a);
        Tensor& gb = grad_mut(b);
        for (std::size_t i = 0; i < g.size(); ++i) {
            ga.data[i] += g.data[i];
            gb.data[i] += g.data[i];
        }
    };
    return v;
}

Var Tape::add_rowvec(Var a, Var row) {
    const Tensor& ta = value(a);
    const Tensor& tr = value(row);
    if (tr.rows() != 1 || tr.cols() != ta.cols()) throw DataError("add_rowvec: shape mismatch");
    Tensor out = ta;
    for (std::size_t r = 0; r < out.rows(); ++r)
        for (std::size_t c = 0; c < out.cols(); ++c) out.at(r, c) += tr.at(0, c);
    Var v = push(std::move(out));
    nodes_.back().back = [this, a, row, v]() {
        const Tensor& g = grad(v);
        Tensor& ga = grad_mut(a);
        Tensor& gr = grad_mut(row);
        for (std::size_t r = 0; r < g.rows(); ++r)
            for (std::size_t c = 0; c < g.cols(); ++c) {
                ga.at(r, c) += g.at(r, c);
                gr.at(0, c) += g.at(r, c);
            }
    };
    return v;
}

Var Tape::matmul(Var a, Var b) {
    const Tensor& ta = value(a);
    const Tensor& tb = value(b);
    if (ta.cols() != tb.rows()) throw DataError("matmul: inner dimension mismatch");
    const std::size_t n = ta.rows(), k = ta.cols(), m = tb.cols();
    Tensor out(n, m);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < k; ++j) {
            const double x = ta.at(i, j);
            if (x == 0.0) continue;
            for (std::size_t c = 0; c < m; ++c) out.at(i, c) += x * tb.at(j, c);
        }
    Var v = push(std::move(out));
    nodes_.back().back = [this, a, b, v, n, k, m]() {
        const Tensor& g = grad(v);
        const Tensor& ta2 = value(a);
        const Tensor& tb2 = value(b);
        Tensor& ga = grad_mut(a);
        Tensor& gb = grad_mut(b);
        // dA = dC * B^T ; dB = A^T * dC
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t c = 0; c < m; ++c) {
                const double gv = g.at(i, c);
                if (gv == 0.0) continue;
                for (std::size_t j = 0; j < k; ++j) {
                    ga.at(i, j) += gv * tb2.at(j, c);
                    gb.at(j, c) += ta2.at(i, j) * gv;
                }
            }
    };
    return v;
}

Var Tape::matmul_nt(Var a, Var b) {
    const Tensor& ta = value(a);
    const Tensor& tb = value(b);
    if (ta.cols() != tb.cols()) throw DataError("matmul_nt: inner dimension mismatch");
    const std::size_t n = ta.rows(), k = ta.cols(), m = tb.rows();
    Tensor out(n, m);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t c = 0; c < m; ++c) {
            double acc = 0.0;
            for (std::size_t j = 0; j < k; ++j) acc += ta.at(i, j) * tb.at(c, j);
            out.at(i, c) = acc;
        }
    Var v = push(std::move(out));
    nodes_.back().back = [this, a, b, v, n, k, m]() {
        const Tensor& g = grad(v);
        const Tensor& ta2 = value(a);
        const Tensor& tb2 = value(b);
        Tensor& ga = grad_mut(a);
        Tensor& gb = grad_mut(b);
        // C = A B^T : dA = dC * B ; dB = dC^T * A
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t c = 0; c < m; ++c) {
                const double gv = g.at(i, c);
                if (gv == 0.0) continue;
                for (std::size_t j = 0; j < k; ++j) {
                    ga.at(i, j) += gv * tb2.at(c, j);
                    gb.at(c, j) += gv * ta2.at(i, j);
                }
            }
    };
    return v;
}

Var Tape::scale(Var a, double c) {
    Tensor out = value(a);
    for (double& x : out.data) x *= c;
    Var v = push(std::move(out));
    nodes_.back().back = [this, a, v, c]() {
        const Tensor& g = grad(v);
        Tensor& ga = grad_mut(a);
        for (std::size_t i = 0; i < g.size(); ++i) ga.data[i] += c * g.data[i];
    };
    return v;
}

Var Tape::relu(Var a) {
    Tensor out = value(a);
    for (double& x : out.data) x = x > 0.0 ? x : 0.0;
    Var v = push(std::move(out));
    nodes_.back().back = [this, a, v]() {
        const Tensor& g = grad(v);
        const Tensor& in = value(a);
        Tensor& ga = grad_mut(a);
        for (std::size_t i = 0; i < g.size(); ++i)
            if (in.data[i] > 0.0) ga.data[i] += g.data[i];
    };
    return v;
}

Var Tape::layer_norm(Var x, Var gamma, Var beta, double eps) {
    const Tensor& tx = value(x);
    const Tensor& tg = value(gamma);
    const Tensor& tb = value(beta);
    const std::size_t n = tx.rows(), d = tx.cols();
    if (tg.cols() != d || tb.cols() != d) throw DataError("layer_norm: parameter shape mismatch");

    Tensor out(n, d);
    Tensor xhat(n, d);
    std::vector<double> inv_sigma(n);
    for (std::size_t r = 0; r < n; ++r) {
        double mean = 0.0;
        for (std::size_t c = 0; c < d; ++c) mean += tx.at(r, c);
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t c = 0; c < d; ++c) {
            const double diff = tx.at(r, c) - mean;
            var += diff * diff;
        }
        var /= static_cast<double>(d);
        const double inv = 1.0 / std::sqrt(var + eps);
        inv_sigma[r] = inv;
        for (std::size_t c = 0; c < d; ++c) {
            xhat.at(r, c) = (tx.at(r, c) - mean) * inv;
            out.at(r, c) = tg.at(0, c) * xhat.at(r, c) + tb.at(0, c);
        }
    }
    Var v = push(std::move(out));
    nodes_.back().back = [this, x, gamma, beta, v, xhat = std::move(xhat),
                          inv_sigma = std::move(inv_sigma), n, d]() {
        const Tensor& g = grad(v);
        const Tensor& tg2 = value(gamma);
        Tensor& gx = grad_mut(x);
        Tensor& gg = grad_mut(gamma);
        Tensor& gb = grad_mut(beta);
        for (std::size_t r = 0; r < n; ++r) {
            double sum_gy = 0.0, sum_gy_xhat = 0.0;
            for (std::size_t c = 0; c < d; ++c) {
                const double gy = g.at(r, c) * tg2.at(0, c);
                sum_gy += gy;
                sum_gy_xhat += gy * xhat.at(r, c);
                gg.at(0, c) += g.at(r, c) * xhat.at(r, c);
                gb.at(0, c) += g.at(r, c);
            }
            const double inv_d = 1.0 / static_cast<double>(d);
            for (std::size_t c = 0; c < d; ++c) {
                const double gy = g.at(r, c) * tg2.at(0, c);
                gx.at(r, c) += inv_sigma[r] * (gy - inv_d * sum_gy - xhat.at(r, c) * inv_d * sum_gy_xhat);
            }
        }
    };
    return v;
}

Var Tape::masked_softmax(Var scores, const std::vector<std::uint8_t>& mask) {
    const Tensor& ts = value(scores);
    const std::size_t n = ts.rows(), m = ts.cols();
    if (mask.size() != n * m) throw DataError("masked_softmax: mask size mismatch");

    Tensor out(n, m);
    for (std::size_t r = 0; r < n; ++r) {
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < m; ++c)
            if (mask[r * m + c]) mx = std::max(mx, ts.at(r, c));
        if (mx == -std::numeric_limits<double>::infinity()) continue;  // fully masked row -> zeros
        double z = 0.0;
        for (std::size_t c = 0; c < m; ++c)
            if (mask[r * m + c]) z += std::exp(ts.at(r, c) - mx);
        for (std::size_t c = 0; c < m; ++c)
            if (mask[r * m + c]) out.at(r, c) = std::exp(ts.at(r, c) - mx) / z;
    }
    Var v = push(std::move(out));
    nodes_.back().back = [this, scores, v, mask, n, m]() {
        const Tensor& g = grad(v);
        const Tensor& y = value(v);
        Tensor& gs = grad_mut(scores);
        for (std::size_t r = 0; r < n; ++r) {
            double dot = 0.0;
            for (std::size_t c = 0; c < m; ++c)
                if (mask[r * m + c]) dot += g.at(r, c) * y.at(r, c);
            for (std::size_t c = 0; c < m; ++c)
                if (mask[r * m + c]) gs.at(r, c) += y.at(r, c) * (g.at(r, c) - dot);
        }
    };
    return v;
}

Var Tape::slice_cols(Var a, std::size_t c0, std::size_t c1) {
    const Tensor& ta = value(a);
    if (c0 >= c1 || c1 > ta.cols()) throw DataError("slice_cols: bad column range");
    Tensor out(ta.rows(), c1 - c0);
    for (std::size_t r = 0; r < ta.rows(); ++r)
        for (std::size_t c = c0; c < c1; ++c) out.at(r, c - c0) = ta.at(r, c);
    Var v = push(std::move(out));
    nodes_.back().back = [this, a, v, c0, c1]() {
        const Tensor& g = grad(v);
        Tensor& ga = grad_mut(a);
        for (std::size_t r = 0; r < g.rows(); ++r)
            for (std::size_t c = c0; c < c1; ++c) ga.at(r, c) += g.at(r, c - c0);
    };
    return v;
}

Var Tape::concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) throw DataError("concat_cols: no parts");
    const std::size_t n = value(parts[0]).rows();
    std::size_t total = 0;
    for (Var p : parts) {
        if (value(p).rows() != n) throw DataError("concat_cols: row mismatch");
        total += value(p).cols();
    }
    Tensor out(n, total);
    std::size_t off = 0;
    for (Var p : parts) {
        const Tensor& tp = value(p);
        for (std::size_t r = 0; r < n; ++r)
            for (std::size_t c = 0; c < tp.cols(); ++c) out.at(r, off + c) = tp.at(r, c);
        off += tp.cols();
    }
    Var v = push(std::move(out));
    nodes_.back().back = [this, parts, v, n]() {
        const Tensor& g = grad(v);
        std::size_t off2 = 0;
        for (Var p : parts) {
            Tensor& gp = grad_mut(p);
            for (std::size_t r = 0; r < n; ++r)
                for (std::size_t c = 0; c < gp.cols(); ++c) gp.at(r, c) += g.at(r, off2 + c);
            off2 += gp.cols();
        }
    };
    return v;
}

Var Tape::pick_row(Var a, std::size_t r) {
    const Tensor& ta = value(a);
    if (r >= ta.rows()) throw DataError("pick_row: row out of range");
    Tensor out(1, ta.cols());
    for (std::size_t c = 0; c < ta.cols(); ++c) out.at(0, c) = ta.at(r, c);
    Var v = push(std::move(out));
    nodes_.back().back = [this, a, v, r]() {
        const Tensor& g = grad(v);
        Tensor& ga = grad_mut(a);
        for (std::size_t c = 0; c < g.cols(); ++c) ga.at(r, c) += g.at(0, c);
    };
    return v;
}

Var Tape::cross_entropy(Var logits, int target) {
    const Tensor& tl = value(logits);
    if (tl.rows() != 1) throw DataError("cross_entropy: expected a single logits row");
    if (target < 0 || static_cast<std::size_t>(target) >= tl.cols())
        throw DataError("cross_entropy: target out of range");
    std::vector<double> row(tl.data);
    const CrossEntropy ce = f2s::neural::cross_entropy(row, target);
    Tensor out(1, 1);
    out.at(0, 0) = ce.loss;
    Var v = push(std::move(out));
    nodes_.back().back = [this, logits, v, grad_row = ce.grad]() {
        const double g = grad(v).at(0, 0);
        Tensor& gl = grad_mut(logits);
        for (std::size_t c = 0; c < grad_row.size(); ++c) gl.at(0, c) += g * grad_row[c];
    };
    return v;
}

Var Tape::spacing_loss(Var pred, const std::vector<double>& labels) {
    const Tensor& tp = value(pred);
    if (tp.cols() != 1 || tp.rows() != labels.size()) throw DataError("spacing_loss: shape mismatch");
    const std::size_t n = labels.size();
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double diff = labels[i] - tp.at(i, 0);
        total += diff * diff / std::log(labels[i] + std::exp(1.0));
    }
    Tensor out(1, 1);
    out.at(0, 0) = total / static_cast<double>(n);
    Var v = push(std::move(out));
    nodes_.back().back = [this, pred, v, labels, n]() {
        const double g = grad(v).at(0, 0);
        const Tensor& tp2 = value(pred);
        Tensor& gp = grad_mut(pred);
        for (std::size_t i = 0; i < n; ++i) {
            const double denom = std::log(labels[i] + std::exp(1.0));
            gp.at(i, 0) += g * (-2.0) * (labels[i] - tp2.at(i, 0)) / (denom * static_cast<double>(n));
        }
    };
    return v;
}

Var Tape::mean_scalars(const std::vector<Var>& scalars) {
    if (scalars.empty()) throw DataError("mean_scalars: no inputs");
    double total = 0.0;
    for (Var s : scalars) total += value(s).at(0, 0);
    Tensor out(1, 1);
    out.at(0, 0) = total / static_cast<double>(scalars.size());
    Var v = push(std::move(out));
    nodes_.back().back = [this, scalars, v]() {
        const double g = grad(v).at(0, 0) / static_cast<double>(scalars.size());
        for (Var s : scalars) grad_mut(s).at(0, 0) += g;
    };
    return v;
}

void Tape::backward(Var scalar_root) {
    Tensor& g = grad_mut(scalar_root);
    if (g.size() != 1) throw DataError("backward: root must be a scalar");
    g.data[0] = 1.0;
    for (std::size_t i = nodes_.size(); i-- > 0;)
        if (nodes_[i].back) nodes_[i].back();
}

ParamStore init_encoder_params(const EncoderConfig& cfg, Rng& rng) {
    cfg.validate();
    const double std_dev = 0.02;
    auto normal = [&](std::size_t r, std::size_t c) {
        Tensor t(r, c);
        for (double& x : t.data) x = std_dev * rng.normal();
        return t;
    };
    auto zeros = [](std::size_t r, std::size_t c) { return Tensor(r, c, 0.0); };
    auto ones = [](std::size_t r, std::size_t c) { return Tensor(r, c, 1.0); };

    const auto v = static_cast<std::size_t>(cfg.vocab_size);
    const auto d = static_cast<std::size_t>(cfg.d_model);
    const auto ff = static_cast<std::size_t>(cfg.d_ff);

    ParamStore p;
    p["tok_emb"] = normal(v, d);
    p["pos_emb"] = normal(static_cast<std::size_t>(cfg.max_len), d);
    p["fact_emb"] = normal(static_cast<std::size_t>(cfg.n_fact_rows), d);
    for (int l = 0; l < cfg.n_layers; ++l) {
        const std::string pre = "layer" + std::to_string(l) + ".";
        p[pre + "ln1.g"] = ones(1, d);
        p[pre + "ln1.b"] = zeros(1, d);
        p[pre + "attn.wq"] = normal(d, d);
        p[pre + "attn.wk"] = normal(d, d);
        p[pre + "attn.wv"] = normal(d, d);
        p[pre + "attn.wo"] = normal(d, d);
        p[pre + "attn.bq"] = zeros(1, d);
        p[pre + "attn.bk"] = zeros(1, d);
        p[pre + "attn.bv"] = zeros(1, d);
        p[pre + "attn.bo"] = zeros(1, d);
        p[pre + "ln2.g"] = ones(1, d);
        p[pre + "ln2.b"] = zeros(1, d);
        p[pre + "ffn.w1"] = normal(d, ff);
        p[pre + "ffn.b1"] = zeros(1, ff);
        p[pre + "ffn.w2"] = normal(ff, d);
        p[pre + "ffn.b2"] = zeros(1, d);
    }
    p["final_ln.g"] = ones(1, d);
    p["final_ln.b"] = zeros(1, d);
    return p;
}

std::map<std::string, Var> make_param_vars(Tape& tape, const ParamStore& params) {
    std::map<std::string, Var> vars;
    for (const auto& [name, tensor] : params) vars.emplace(name, tape.leaf(tensor));
    return vars;
}

Var encoder_forward(Tape& tape, const std::map<std::string, Var>& pv, const EncoderConfig& cfg,
                    const std::vector<int>& token_ids, const std::vector<int>& position_ids,
                    const std::vector<int>& fact_ids, const std::vector<std::uint8_t>& attention_mask) {
    const std::size_t len = token_ids.size();
    if (len == 0) throw DataError("encoder_forward: empty input");
    if (position_ids.size() != len || fact_ids.size() != len)
        throw DataError("encoder_forward: id list length mismatch");
    if (len > static_cast<std::size_t>(cfg.max_len)) throw DataError("input longer than max_len");
    for (int p : position_ids)
        if (p < 0 || p >= cfg.max_len) throw DataError("position id out of range");
    for (int tk : token_ids)
        if (tk < 0 || tk >= cfg.vocab_size) throw DataError("token id out of range");
    for (int fi : fact_ids)
        if (fi < 0 || fi >= cfg.n_fact_rows) throw DataError("fact id out of range");
    if (attention_mask.size() != len * len) throw DataError("attention mask must be len x len");

    auto param = [&](const std::string& name) {
        auto it = pv.find(name);
        if (it == pv.end()) throw DataError("missing parameter tensor: " + name);
        return it->second;
    };

    Var x = tape.add(tape.add(tape.rows(param("tok_emb"), token_ids),
                              tape.rows(param("pos_emb"), position_ids)),
                     tape.rows(param("fact_emb"), fact_ids));

    const std::size_t d_head = static_cast<std::size_t>(cfg.d_model / cfg.n_heads);
    const double att_scale = 1.0 / std::sqrt(static_cast<double>(d_head));

    for (int l = 0; l < cfg.n_layers; ++l) {
        const std::string pre = "layer" + std::to_string(l) + ".";

        Var h = tape.layer_norm(x, param(pre + "ln1.g"), param(pre + "ln1.b"));
        Var q = tape.add_rowvec(tape.matmul(h, param(pre + "attn.wq")), param(pre + "attn.bq"));
        Var k = tape.add_rowvec(tape.matmul(h, param(pre + "attn.wk")), param(pre + "attn.bk"));
        Var vv = tape.add_rowvec(tape.matmul(h, param(pre + "attn.wv")), param(pre + "attn.bv"));

        std::vector<Var> head_ctx;
        head_ctx.reserve(static_cast<std::size_t>(cfg.n_heads));
        for (int hd = 0; hd < cfg.n_heads; ++hd) {
            const std::size_t c0 = static_cast<std::size_t>(hd) * d_head;
            Var qh = tape.slice_cols(q, c0, c0 + d_head);
            Var kh = tape.slice_cols(k, c0, c0 + d_head);
            Var vh = tape.slice_cols(vv, c0, c0 + d_head);
            Var scores = tape.scale(tape.matmul_nt(qh, kh), att_scale);
            Var attn = tape.masked_softmax(scores, attention_mask);
            head_ctx.push_back(tape.matmul(attn, vh));
        }
        Var ctx = cfg.n_heads == 1 ? head_ctx[0] : tape.concat_cols(head_ctx);
        Var attn_out = tape.add_rowvec(tape.matmul(ctx, param(pre + "attn.wo")), param(pre + "attn.bo"));
        x = tape.add(x, attn_out);

        Var h2 = tape.layer_norm(x, param(pre + "ln2.g"), param(pre + "ln2.b"));
        Var ff = tape.add_rowvec(
            tape.matmul(tape.relu(tape.add_rowvec(tape.matmul(h2, param(pre + "ffn.w1")),
                                                  param(pre + "ffn.b1"))),
                        param(pre + "ffn.w2")),
            param(pre + "ffn.b2"));
        x = tape.add(x, ff);
    }
    return tape.layer_norm(x, param("final_ln.g"), param("final_ln.b"));
}

CrossEntropy cross_entropy(const std::vector<double>& logits, int target) {
    if (target < 0 || static_cast<std::size_t>(target) >= logits.size())
        throw DataError("cross_entropy: target out of range");
    double mx = -std::numeric_limits<double>::infinity();
    for (double l : logits) {
        check_finite(l, "cross_entropy logits");
        mx = std::max(mx, l);
    }
    double z = 0.0;
    for (double l : logits) z += std::exp(l - mx);
    const double lse = mx + std::log(z);

    CrossEntropy out;
    out.loss = lse - logits[static_cast<std::size_t>(target)];
    out.grad.resize(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i)
        out.grad[i] = std::exp(logits[i] - mx) / z - (static_cast<int>(i) == target ? 1.0 : 0.0);
    return out;
}

void adam_step(AdamState& state, ParamStore& params, const GradStore& grads, const AdamConfig& cfg) {
    state.t += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
    for (auto& [name, theta] : params) {
        auto git = grads.find(name);
        if (git == grads.end()) continue;
        const Tensor& g = git->second;
        if (g.shape != theta.shape) throw DataError("adam_step: gradient shape mismatch for " + name);
        Tensor& m = state.m.try_emplace(name, Tensor::zeros_like(theta)).first->second;
        Tensor& v = state.v.try_emplace(name, Tensor::zeros_like(theta)).first->second;
        for (std::size_t i = 0; i < theta.size(); ++i) {
            m.data[i] = cfg.beta1 * m.data[i] + (1.0 - cfg.beta1) * g.data[i];
            v.data[i] = cfg.beta2 * v.data[i] + (1.0 - cfg.beta2) * g.data[i] * g.data[i];
            const double mhat = m.data[i] / bc1;
            const double vhat = v.data[i] / bc2;
            theta.data[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
            check_finite(theta.data[i], "adam_step parameters");
        }
    }
}

double finite_diff_check(const std::function<double(const ParamStore&)>& loss_fn,
                         const GradStore& analytic, const ParamStore& params, double epsilon,
                         int n_samples, Rng& rng) {
    std::vector<std::pair<std::string, std::size_t>> coords;  // (name, flat index base)
    std::size_t total = 0;
    for (const auto& [name, tensor] : params) {
        coords.emplace_back(name, total);
        total += tensor.size();
    }
    if (total == 0) throw DataError("finite_diff_check: no parameters");

    double max_rel = 0.0;
    ParamStore work = params;
    for (int s = 0; s < n_samples; ++s) {
        const std::size_t flat = static_cast<std::size_t>(rng.uniform_int(static_cast<int>(total)));
        std::string name;
        std::size_t offset = 0;
        for (const auto& [nm, base] : coords) {
            if (flat >= base && flat < base + params.at(nm).size()) {
                name = nm;
                offset = flat - base;
                break;
            }
        }
        const double original = work.at(name).data[offset];
        work.at(name).data[offset] = original + epsilon;
        const double plus = loss_fn(work);
        work.at(name).data[offset] = original - epsilon;
        const double minus = loss_fn(work);
        work.at(name).data[offset] = original;

        const double fd = (plus - minus) / (2.0 * epsilon);
        const double an = analytic.count(name) ? analytic.at(name).data[offset] : 0.0;
        // the 1e-6 floor keeps double-precision roundoff on near-zero
        // gradients from masquerading as relative error
        const double denom = std::max(std::abs(fd) + std::abs(an), 1e-6);
        max_rel = std::max(max_rel, std::abs(fd - an) / denom);
    }
    return max_rel;
}

namespace {

json tensor_to_json(const Tensor& t) {
    json j;
    j["shape"] = t.shape;
    j["values"] = t.data;
    return j;
}

Tensor tensor_from_json(const json& j) {
    Tensor t;
    t.shape = j.at("shape").get<std::vector<std::size_t>>();
    t.data = j.at("values").get<std::vector<double>>();
    std::size_t expect = 1;
    for (std::size_t s : t.shape) expect *= s;
    if (expect != t.data.size()) throw DataError("checkpoint tensor shape/value mismatch");
    return t;
}

json config_to_json(const EncoderConfig& cfg) {
    return json{{"vocab_size", cfg.vocab_size}, {"d_model", cfg.d_model},
                {"n_heads", cfg.n_heads},       {"n_layers", cfg.n_layers},
                {"d_ff", cfg.d_ff},             {"max_len", cfg.max_len},
                {"n_fact_rows", cfg.n_fact_rows}, {"dropout", cfg.dropout}};
}

EncoderConfig config_from_json(const json& j) {
    EncoderConfig cfg;
    cfg.vocab_size = j.at("vocab_size").get<int>();
    cfg.d_model = j.at("d_model").get<int>();
    cfg.n_heads = j.at("n_heads").get<int>();
    cfg.n_layers = j.at("n_layers").get<int>();
    cfg.d_ff = j.at("d_ff").get<int>();
    cfg.max_len = j.at("max_len").get<int>();
    cfg.n_fact_rows = j.value("n_fact_rows", 6);
    cfg.dropout = j.value("dropout", 0.0);
    return cfg;
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    json j;
    j["version"] = 1;
    j["model"] = ckpt.model;
    j["config"] = config_to_json(ckpt.config);
    json tensors = json::object();
    for (const auto& [name, t] : ckpt.tensors) tensors[name] = tensor_to_json(t);
    j["tensors"] = tensors;
    json extra = json::object();
    for (const auto& [name, t] : ckpt.extra) extra[name] = tensor_to_json(t);
    j["extra"] = extra;
    j["meta"] = ckpt.meta;

    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write checkpoint: " + path);
    out << j.dump() << "\n";
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint: " + path);
    json j = json::parse(in, nullptr, false);
    if (j.is_discarded() || j.value("version", 0) != 1)
        throw DataError("unsupported checkpoint file: " + path);

    Checkpoint ckpt;
    ckpt.model = j.value("model", "");
    ckpt.config = config_from_json(j.at("config"));
    for (const auto& [name, tj] : j.at("tensors").items()) ckpt.tensors[name] = tensor_from_json(tj);
    if (j.contains("extra"))
        for (const auto& [name, tj] : j.at("extra").items()) ckpt.extra[name] = tensor_from_json(tj);
    if (j.contains("meta"))
        for (const auto& [name, mv] : j.at("meta").items()) ckpt.meta[name] = mv.get<std::string>();
    return ckpt;
}

}  // namespace f2s::neural
