#pragma once

// Minimal autoregressive transformer with hand-written backward passes.
// Templated on the scalar type: production code instantiates float, the
// finite-difference tests instantiate double on a miniature configuration.
//
// Layout conventions: activations are (seq_len x d) with one row per token;
// a linear layer computes Y = X * W with W of shape (in x out). The
// embedding and head are (vocab x d); logits are X * head^T. Adapted
// projections carry an additive dense delta, W_eff = W + delta, that the
// low-rank factors materialize into.

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace trajta::model {

using TokenId = std::int32_t;

struct ModelConfig {
    int n_layers = 2;
    int d_model = 128;
    int n_heads = 4;
    int d_ff = 256;
    int max_seq = 512;
    std::int64_t vocab_size = 0;
    int adapter_rank = 8;
    float adapter_alpha = 16.0f;
    std::uint64_t seed = 1;

    // Optimizer defaults for fine-tuning (AdamW, constant schedule).
    float lr = 5e-4f;
    int batch_size = 4;
    int epochs = 3;
    float weight_decay = 0.0f;

    void validate() const {
        if (d_model % n_heads != 0)
            throw std::invalid_argument("ModelConfig: d_model must be divisible by n_heads");
        if (adapter_rank < 1) throw std::invalid_argument("ModelConfig: adapter_rank >= 1");
        if (vocab_size <= 0) throw std::invalid_argument("ModelConfig: vocab_size not set");
        if (max_seq < 2) throw std::invalid_argument("ModelConfig: max_seq >= 2");
    }
};

constexpr float kLayerNormEps = 1e-5f;

template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

template <typename Scalar>
struct LayerParams {
    Mat<Scalar> ln1_g, ln1_b;          // 1 x d
    Mat<Scalar> wq, wk, wv, wo;        // d x d
    Mat<Scalar> ln2_g, ln2_b;          // 1 x d
    Mat<Scalar> wup, wgate;            // d x d_ff
    Mat<Scalar> wdown;                 // d_ff x d
};

template <typename Scalar>
struct Params {
    Mat<Scalar> embedding;             // V x d
    std::vector<LayerParams<Scalar>> layers;
    Mat<Scalar> final_ln_g, final_ln_b;
    Mat<Scalar> head;                  // V x d

    template <typename F>
    void for_each_tensor(F&& f) {
        f("embedding", embedding);
        for (std::size_t i = 0; i < layers.size(); ++i) {
            const std::string p = "layers." + std::to_string(i) + ".";
            auto& l = layers[i];
            f(p + "ln1.g", l.ln1_g);
            f(p + "ln1.b", l.ln1_b);
            f(p + "attn.wq", l.wq);
            f(p + "attn.wk", l.wk);
            f(p + "attn.wv", l.wv);
            f(p + "attn.wo", l.wo);
            f(p + "ln2.g", l.ln2_g);
            f(p + "ln2.b", l.ln2_b);
            f(p + "ffn.wup", l.wup);
            f(p + "ffn.wgate", l.wgate);
            f(p + "ffn.wdown", l.wdown);
        }
        f("final_ln.g", final_ln_g);
        f("final_ln.b", final_ln_b);
        f("head", head);
    }
    template <typename F>
    void for_each_tensor(F&& f) const {
        const_cast<Params*>(this)->for_each_tensor(
            [&](const std::string& n, Mat<Scalar>& m) { f(n, const_cast<const Mat<Scalar>&>(m)); });
    }

    Mat<Scalar>& tensor(const std::string& name) {
        Mat<Scalar>* found = nullptr;
        for_each_tensor([&](const std::string& n, Mat<Scalar>& m) {
            if (n == name) found = &m;
        });
        if (!found) throw std::out_of_range("Params: unknown tensor " + name);
        return *found;
    }
    const Mat<Scalar>& tensor(const std::string& name) const {
        return const_cast<Params*>(this)->tensor(name);
    }

    static Params zeros(const ModelConfig& cfg) {
        Params p;
        p.embedding = Mat<Scalar>::Zero(cfg.vocab_size, cfg.d_model);
        p.layers.resize(static_cast<std::size_t>(cfg.n_layers));
        for (auto& l : p.layers) {
            l.ln1_g = Mat<Scalar>::Zero(1, cfg.d_model);
            l.ln1_b = Mat<Scalar>::Zero(1, cfg.d_model);
            l.wq = Mat<Scalar>::Zero(cfg.d_model, cfg.d_model);
            l.wk = Mat<Scalar>::Zero(cfg.d_model, cfg.d_model);
            l.wv = Mat<Scalar>::Zero(cfg.d_model, cfg.d_model);
            l.wo = Mat<Scalar>::Zero(cfg.d_model, cfg.d_model);
            l.ln2_g = Mat<Scalar>::Zero(1, cfg.d_model);
            l.ln2_b = Mat<Scalar>::Zero(1, cfg.d_model);
            l.wup = Mat<Scalar>::Zero(cfg.d_model, cfg.d_ff);
            l.wgate = Mat<Scalar>::Zero(cfg.d_model, cfg.d_ff);
            l.wdown = Mat<Scalar>::Zero(cfg.d_ff, cfg.d_model);
        }
        p.final_ln_g = Mat<Scalar>::Zero(1, cfg.d_model);
        p.final_ln_b = Mat<Scalar>::Zero(1, cfg.d_model);
        p.head = Mat<Scalar>::Zero(cfg.vocab_size, cfg.d_model);
        return p;
    }

    template <typename Other>
    Params<Other> cast() const {
        Params<Other> out;
        out.embedding = embedding.template cast<Other>();
        out.layers.resize(layers.size());
        for (std::size_t i = 0; i < layers.size(); ++i) {
            const auto& a = layers[i];
            auto& b = out.layers[i];
            b.ln1_g = a.ln1_g.template cast<Other>();
            b.ln1_b = a.ln1_b.template cast<Other>();
            b.wq = a.wq.template cast<Other>();
            b.wk = a.wk.template cast<Other>();
            b.wv = a.wv.template cast<Other>();
            b.wo = a.wo.template cast<Other>();
            b.ln2_g = a.ln2_g.template cast<Other>();
            b.ln2_b = a.ln2_b.template cast<Other>();
            b.wup = a.wup.template cast<Other>();
            b.wgate = a.wgate.template cast<Other>();
            b.wdown = a.wdown.template cast<Other>();
        }
        out.final_ln_g = final_ln_g.template cast<Other>();
        out.final_ln_b = final_ln_b.template cast<Other>();
        out.head = head.template cast<Other>();
        return out;
    }
};

// Names of the six adapted projections per layer, in a stable order.
std::vector<std::string> adapted_projection_names(int n_layers);

// Shape (in, out) of a projection given the config.
std::pair<Eigen::Index, Eigen::Index> projection_shape(const std::string& name,
                                                       const ModelConfig& cfg);

template <typename Scalar>
using DeltaMap = std::map<std::string, Mat<Scalar>>;

// Full parameter copy with dense deltas folded into the adapted projections.
template <typename Scalar>
Params<Scalar> effective_params(const Params<Scalar>& p, const DeltaMap<Scalar>* deltas) {
    Params<Scalar> out = p;
    if (deltas) {
        for (const auto& [name, d] : *deltas) {
            Mat<Scalar>& w = out.tensor(name);
            if (w.rows() != d.rows() || w.cols() != d.cols())
                throw std::invalid_argument("delta shape mismatch for " + name);
            w += d;
        }
    }
    return out;
}

// Fixed sinusoidal positional encoding rows [first, first+n).
template <typename Scalar>
Mat<Scalar> positional_encoding(int first, int n, int d) {
    Mat<Scalar> pe(n, d);
    for (int t = 0; t < n; ++t) {
        for (int i = 0; i < d; i += 2) {
            const double angle =
                (first + t) / std::pow(10000.0, static_cast<double>(i) / d);
            pe(t, i) = static_cast<Scalar>(std::sin(angle));
            if (i + 1 < d) pe(t, i + 1) = static_cast<Scalar>(std::cos(angle));
        }
    }
    return pe;
}

enum class BackwardMode { kNone, kLoss, kLogit };

// Runs the causal forward pass over `ids` and, depending on the mode,
// backpropagates either the mean next-token cross-entropy (kLoss) or a
// single logit z_token at the final position (kLogit). Gradients are
// accumulated into *grads scaled by grad_scale. Returns the loss or the
// logit value. `logits_out`, when given, receives the full (n x V) logits.
template <typename Scalar>
double run_network(const Params<Scalar>& eff, int n_heads, const std::vector<TokenId>& ids,
                   BackwardMode mode, TokenId logit_token, Params<Scalar>* grads,
                   Scalar grad_scale, Mat<Scalar>* logits_out);

template <typename Scalar>
double sequence_loss(const Params<Scalar>& eff, int n_heads, const std::vector<TokenId>& ids) {
    return run_network<Scalar>(eff, n_heads, ids, BackwardMode::kNone, 0, nullptr, Scalar(0),
                               nullptr);
}

template <typename Scalar>
Mat<Scalar> forward_logits(const Params<Scalar>& eff, int n_heads,
                           const std::vector<TokenId>& ids) {
    Mat<Scalar> logits;
    run_network<Scalar>(eff, n_heads, ids, BackwardMode::kNone, 0, nullptr, Scalar(0), &logits);
    return logits;
}

// Incremental decoding state: per-layer key/value rows appended step by step.
template <typename Scalar>
struct KvCache {
    struct LayerCache {
        Mat<Scalar> k, v;  // capacity x d, first `len` rows valid
    };
    std::vector<LayerCache> layers;
    int len = 0;

    static KvCache make(const ModelConfig& cfg) {
        KvCache c;
        c.layers.resize(static_cast<std::size_t>(cfg.n_layers));
        for (auto& l : c.layers) {
            l.k = Mat<Scalar>::Zero(cfg.max_seq, cfg.d_model);
            l.v = Mat<Scalar>::Zero(cfg.max_seq, cfg.d_model);
        }
        return c;
    }
};

// Feeds one token; returns the next-token logits row (1 x V).
template <typename Scalar>
Eigen::Matrix<Scalar, 1, Eigen::Dynamic> decode_step(const Params<Scalar>& eff,
                                                     const ModelConfig& cfg,
                                                     KvCache<Scalar>& cache, TokenId token);

}  // namespace trajta::model
