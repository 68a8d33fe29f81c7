#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "pwlock/util.hpp"
#include "pwlock/vocab.hpp"

namespace pwlock {

template <typename T>
using MatT = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct ModelConfig {
    int vocab_size = vocab::kSize;
    int context_len = 32;
    int d_model = 256;
    int n_layers = 4;
    int n_heads = 4;
    int mlp_ratio = 4;

    void validate() const {
        if (d_model % n_heads != 0) throw std::invalid_argument("d_model % n_heads != 0");
        if (vocab_size < 1 || context_len < 1 || n_layers < 1 || mlp_ratio < 1) {
            throw std::invalid_argument("invalid model config");
        }
    }
    int head_dim() const { return d_model / n_heads; }
    int d_mlp() const { return d_model * mlp_ratio; }

    long long param_count() const {
        const long long d = d_model, v = vocab_size, c = context_len, m = d_mlp();
        long long per_layer = 4 * d * d + (d * m + m) + (m * d + d) + 4 * d;
        return v * d + c * d + n_layers * per_layer + 2 * d + d * v;
    }
};

inline constexpr double kLnEps = 1e-5;

template <typename T>
struct LayerParams {
    MatT<T> ln1_g, ln1_b;  // 1 x d
    MatT<T> wq, wk, wv, wo;
    MatT<T> ln2_g, ln2_b;
    MatT<T> w1, b1;  // d x m, 1 x m
    MatT<T> w2, b2;  // m x d, 1 x d
};

template <typename T>
struct Params {
    MatT<T> tok_embed;  // V x d
    MatT<T> pos_embed;  // ctx x d
    std::vector<LayerParams<T>> layers;
    MatT<T> lnf_g, lnf_b;
    MatT<T> unembed;  // d x V

    // Enumerates tensors in the fixed serialization order.
    template <typename Self, typename F>
    static void visit(Self& self, F&& f) {
        f("tok_embed", self.tok_embed);
        f("pos_embed", self.pos_embed);
        for (size_t l = 0; l < self.layers.size(); ++l) {
            auto& lp = self.layers[l];
            const std::string pre = "layer" + std::to_string(l) + ".";
            f(pre + "ln1.g", lp.ln1_g);
            f(pre + "ln1.b", lp.ln1_b);
            f(pre + "attn.wq", lp.wq);
            f(pre + "attn.wk", lp.wk);
            f(pre + "attn.wv", lp.wv);
            f(pre + "attn.wo", lp.wo);
            f(pre + "ln2.g", lp.ln2_g);
            f(pre + "ln2.b", lp.ln2_b);
            f(pre + "mlp.w1", lp.w1);
            f(pre + "mlp.b1", lp.b1);
            f(pre + "mlp.w2", lp.w2);
            f(pre + "mlp.b2", lp.b2);
        }
        f("lnf.g", self.lnf_g);
        f("lnf.b", self.lnf_b);
        f("unembed", self.unembed);
    }
    template <typename F>
    void for_each(F&& f) {
        visit(*this, f);
    }
    template <typename F>
    void for_each(F&& f) const {
        visit(*this, f);
    }
};

template <typename T>
Params<T> zeros_like(const ModelConfig& cfg) {
    Params<T> p;
    const int d = cfg.d_model, m = cfg.d_mlp();
    p.tok_embed = MatT<T>::Zero(cfg.vocab_size, d);
    p.pos_embed = MatT<T>::Zero(cfg.context_len, d);
    p.layers.resize(cfg.n_layers);
    for (auto& lp : p.layers) {
        lp.ln1_g = MatT<T>::Zero(1, d);
        lp.ln1_b = MatT<T>::Zero(1, d);
        lp.wq = MatT<T>::Zero(d, d);
        lp.wk = MatT<T>::Zero(d, d);
        lp.wv = MatT<T>::Zero(d, d);
        lp.wo = MatT<T>::Zero(d, d);
        lp.ln2_g = MatT<T>::Zero(1, d);
        lp.ln2_b = MatT<T>::Zero(1, d);
        lp.w1 = MatT<T>::Zero(d, m);
        lp.b1 = MatT<T>::Zero(1, m);
        lp.w2 = MatT<T>::Zero(m, d);
        lp.b2 = MatT<T>::Zero(1, d);
    }
    p.lnf_g = MatT<T>::Zero(1, d);
    p.lnf_b = MatT<T>::Zero(1, d);
    p.unembed = MatT<T>::Zero(d, cfg.vocab_size);
    return p;
}

// Desk-scale models need a larger-than-GPT-2 init: with 0.02 the attention
// logits start so flat that breaking the routing symmetry takes thousands of
// extra steps at these widths.
template <typename T>
Params<T> init_params(const ModelConfig& cfg, uint64_t seed, double init_std = 0.1) {
    cfg.validate();
    Params<T> p = zeros_like<T>(cfg);
    Rng rng(seed);
    const double resid_std = init_std / std::sqrt(2.0 * cfg.n_layers);
    auto fill = [&](MatT<T>& mat, double std_dev) {
        for (Eigen::Index i = 0; i < mat.rows(); ++i)
            for (Eigen::Index j = 0; j < mat.cols(); ++j)
                mat(i, j) = static_cast<T>(rng.normal() * std_dev);
    };
    p.for_each([&](const std::string& name, MatT<T>& mat) {
        if (name.ends_with(".g") || name.ends_with("ln1.g") || name.ends_with("ln2.g")) {
            mat.setOnes();
        } else if (name.ends_with(".b") || name.ends_with(".b1") || name.ends_with(".b2")) {
            mat.setZero();
        } else if (name.ends_with("attn.wo") || name.ends_with("mlp.w2")) {
            fill(mat, resid_std);
        } else {
            fill(mat, init_std);
        }
    });
    return p;
}

namespace detail {

template <typename T>
inline T gelu(T x) {
    return static_cast<T>(0.5) * x * (static_cast<T>(1) + std::erf(x * static_cast<T>(M_SQRT1_2)));
}

template <typename T>
inline T gelu_grad(T x) {
    const T cdf = static_cast<T>(0.5) *
                  (static_cast<T>(1) + std::erf(x * static_cast<T>(M_SQRT1_2)));
    const T pdf = std::exp(static_cast<T>(-0.5) * x * x) *
                  static_cast<T>(0.3989422804014327);  // 1/sqrt(2*pi)
    return cdf + x * pdf;
}

// Row-wise layer norm; returns normalized output, stores mean and rstd.
template <typename T>
void layer_norm(const MatT<T>& x, const MatT<T>& g, const MatT<T>& b, MatT<T>& out, MatT<T>& mean,
                MatT<T>& rstd) {
    const Eigen::Index n = x.rows(), d = x.cols();
    out.resize(n, d);
    mean.resize(n, 1);
    rstd.resize(n, 1);
    for (Eigen::Index i = 0; i < n; ++i) {
        const T mu = x.row(i).mean();
        const T var = (x.row(i).array() - mu).square().mean();
        const T r = static_cast<T>(1) / std::sqrt(var + static_cast<T>(kLnEps));
        mean(i, 0) = mu;
        rstd(i, 0) = r;
        out.row(i) = ((x.row(i).array() - mu) * r) * g.row(0).array() + b.row(0).array();
    }
}

template <typename T>
void layer_norm_backward(const MatT<T>& dy, const MatT<T>& x, const MatT<T>& mean,
                         const MatT<T>& rstd, const MatT<T>& g, MatT<T>& dx, MatT<T>& dg,
                         MatT<T>& db) {
    const Eigen::Index n = x.rows(), d = x.cols();
    dx.resize(n, d);
    for (Eigen::Index i = 0; i < n; ++i) {
        const T r = rstd(i, 0);
        Eigen::Array<T, 1, Eigen::Dynamic> xhat = (x.row(i).array() - mean(i, 0)) * r;
        Eigen::Array<T, 1, Eigen::Dynamic> dxhat = dy.row(i).array() * g.row(0).array();
        dg.row(0).array() += dy.row(i).array() * xhat;
        db.row(0).array() += dy.row(i).array();
        const T m1 = dxhat.mean();
        const T m2 = (dxhat * xhat).mean();
        dx.row(i) = (r * (dxhat - m1 - xhat * m2)).matrix();
    }
}

}  // namespace detail

// Per-layer forward cache needed by backward.
template <typename T>
struct LayerCache {
    MatT<T> x_in;                     // residual stream entering the layer
    MatT<T> ln1_out, ln1_mean, ln1_rstd;
    MatT<T> q, k, v;
    std::vector<MatT<T>> att;        // per-head softmax weights, T x T
    MatT<T> att_concat;              // heads concatenated, T x d
    MatT<T> x_mid;                   // after attention residual
    MatT<T> ln2_out, ln2_mean, ln2_rstd;
    MatT<T> mlp_pre, mlp_act;
};

template <typename T>
struct Activations {
    std::vector<int> tokens;
    MatT<T> x0;
    std::vector<LayerCache<T>> layers;
    MatT<T> x_final;
    MatT<T> lnf_out, lnf_mean, lnf_rstd;
};

// Full-sequence forward; logits are (seq_len x vocab). Position t attends
// only to positions <= t.
template <typename T>
MatT<T> forward(const ModelConfig& cfg, const Params<T>& p, const std::vector<int>& tokens,
                Activations<T>* cache = nullptr) {
    const int n = static_cast<int>(tokens.size());
    if (n == 0) throw std::invalid_argument("forward: empty sequence");
    if (n > cfg.context_len) throw std::invalid_argument("forward: sequence exceeds context_len");
    const int d = cfg.d_model, nh = cfg.n_heads, hd = cfg.head_dim();
    const T scale = static_cast<T>(1) / std::sqrt(static_cast<T>(hd));

    MatT<T> x(n, d);
    for (int t = 0; t < n; ++t) {
        const int tok = tokens[t];
        if (tok < 0 || tok >= cfg.vocab_size) throw std::invalid_argument("forward: bad token id");
        x.row(t) = p.tok_embed.row(tok) + p.pos_embed.row(t);
    }
    if (cache) {
        cache->tokens = tokens;
        cache->x0 = x;
        cache->layers.assign(cfg.n_layers, {});
    }

    MatT<T> a, mean, rstd;
    for (int l = 0; l < cfg.n_layers; ++l) {
        const auto& lp = p.layers[l];
        LayerCache<T>* lc = cache ? &cache->layers[l] : nullptr;
        if (lc) lc->x_in = x;

        detail::layer_norm(x, lp.ln1_g, lp.ln1_b, a, mean, rstd);
        MatT<T> q = a * lp.wq, k = a * lp.wk, v = a * lp.wv;
        if (lc) {
            lc->ln1_out = a;
            lc->ln1_mean = mean;
            lc->ln1_rstd = rstd;
            lc->q = q;
            lc->k = k;
            lc->v = v;
            lc->att.resize(nh);
        }
        MatT<T> att_concat(n, d);
        for (int h = 0; h < nh; ++h) {
            auto qh = q.middleCols(h * hd, hd);
            auto kh = k.middleCols(h * hd, hd);
            auto vh = v.middleCols(h * hd, hd);
            MatT<T> probs = MatT<T>::Zero(n, n);
            for (int i = 0; i < n; ++i) {
                Eigen::Array<T, 1, Eigen::Dynamic> s =
                    (qh.row(i) * kh.topRows(i + 1).transpose()).array() * scale;
                const T mx = s.maxCoeff();
                Eigen::Array<T, 1, Eigen::Dynamic> e = (s - mx).exp();
                probs.row(i).head(i + 1) = (e / e.sum()).matrix();
            }
            att_concat.middleCols(h * hd, hd) = probs * vh;
            if (lc) lc->att[h] = std::move(probs);
        }
        if (lc) lc->att_concat = att_concat;
        x += att_concat * lp.wo;
        if (lc) lc->x_mid = x;

        detail::layer_norm(x, lp.ln2_g, lp.ln2_b, a, mean, rstd);
        MatT<T> pre = (a * lp.w1).rowwise() + lp.b1.row(0);
        MatT<T> act = pre.unaryExpr([](T t) { return detail::gelu(t); });
        if (lc) {
            lc->ln2_out = a;
            lc->ln2_mean = mean;
            lc->ln2_rstd = rstd;
            lc->mlp_pre = pre;
            lc->mlp_act = act;
        }
        x += ((act * lp.w2).rowwise() + lp.b2.row(0)).eval();
    }

    detail::layer_norm(x, p.lnf_g, p.lnf_b, a, mean, rstd);
    if (cache) {
        cache->x_final = x;
        cache->lnf_out = a;
        cache->lnf_mean = mean;
        cache->lnf_rstd = rstd;
    }
    return a * p.unembed;
}

// Accumulates parameter gradients for one sequence into `grads`.
template <typename T>
void backward(const ModelConfig& cfg, const Params<T>& p, const Activations<T>& cache,
              const MatT<T>& dlogits, Params<T>& grads) {
    const int n = static_cast<int>(cache.tokens.size());
    const int d = cfg.d_model, nh = cfg.n_heads, hd = cfg.head_dim();
    const T scale = static_cast<T>(1) / std::sqrt(static_cast<T>(hd));

    grads.unembed.noalias() += cache.lnf_out.transpose() * dlogits;
    MatT<T> df = dlogits * p.unembed.transpose();
    MatT<T> dx;
    detail::layer_norm_backward(df, cache.x_final, cache.lnf_mean, cache.lnf_rstd, p.lnf_g, dx,
                                grads.lnf_g, grads.lnf_b);

    for (int l = cfg.n_layers - 1; l >= 0; --l) {
        const auto& lp = p.layers[l];
        auto& lg = grads.layers[l];
        const auto& lc = cache.layers[l];

        // MLP block: x_out = x_mid + gelu(LN2(x_mid) W1 + b1) W2 + b2
        MatT<T> dmlp_out = dx;  // residual passes dx through unchanged
        lg.w2.noalias() += lc.mlp_act.transpose() * dmlp_out;
        lg.b2.row(0) += dmlp_out.colwise().sum();
        MatT<T> dact = dmlp_out * lp.w2.transpose();
        MatT<T> dpre =
            dact.binaryExpr(lc.mlp_pre, [](T g, T x) { return g * detail::gelu_grad(x); });
        lg.w1.noalias() += lc.ln2_out.transpose() * dpre;
        lg.b1.row(0) += dpre.colwise().sum();
        MatT<T> dln2_out = dpre * lp.w1.transpose();
        MatT<T> dx_mid;
        detail::layer_norm_backward(dln2_out, lc.x_mid, lc.ln2_mean, lc.ln2_rstd, lp.ln2_g, dx_mid,
                                    lg.ln2_g, lg.ln2_b);
        dx += dx_mid;

        // Attention block: x_mid = x_in + concat_h(P_h V_h) Wo
        MatT<T> datt_out = dx;
        lg.wo.noalias() += lc.att_concat.transpose() * datt_out;
        MatT<T> dconcat = datt_out * lp.wo.transpose();
        MatT<T> dq = MatT<T>::Zero(n, d), dk = MatT<T>::Zero(n, d), dv = MatT<T>::Zero(n, d);
        for (int h = 0; h < nh; ++h) {
            const auto& probs = lc.att[h];
            auto qh = lc.q.middleCols(h * hd, hd);
            auto kh = lc.k.middleCols(h * hd, hd);
            auto vh = lc.v.middleCols(h * hd, hd);
            auto doh = dconcat.middleCols(h * hd, hd);
            MatT<T> dprobs = doh * vh.transpose();
            dv.middleCols(h * hd, hd).noalias() += probs.transpose() * doh;
            // softmax backward, rows independent; masked entries have P=0
            MatT<T> dscores(n, n);
            for (int i = 0; i < n; ++i) {
                auto prow = probs.row(i).array();
                auto drow = dprobs.row(i).array();
                const T dot = (prow * drow).sum();
                dscores.row(i) = (prow * (drow - dot)).matrix();
            }
            dq.middleCols(h * hd, hd).noalias() += dscores * kh * scale;
            dk.middleCols(h * hd, hd).noalias() += dscores.transpose() * qh * scale;
        }
        lg.wq.noalias() += lc.ln1_out.transpose() * dq;
        lg.wk.noalias() += lc.ln1_out.transpose() * dk;
        lg.wv.noalias() += lc.ln1_out.transpose() * dv;
        MatT<T> dln1_out = dq * lp.wq.transpose() + dk * lp.wk.transpose() + dv * lp.wv.transpose();
        MatT<T> dx_in;
        detail::layer_norm_backward(dln1_out, lc.x_in, lc.ln1_mean, lc.ln1_rstd, lp.ln1_g, dx_in,
                                    lg.ln1_g, lg.ln1_b);
        dx += dx_in;
    }

    for (int t = 0; t < n; ++t) {
        grads.tok_embed.row(cache.tokens[t]) += dx.row(t);
        grads.pos_embed.row(t) += dx.row(t);
    }
}

}  // namespace pwlock
