#include "trajta/transformer.hpp"

#include <cmath>

namespace trajta::model {

std::vector<std::string> adapted_projection_names(int n_layers) {
    std::vector<std::string> out;
    for (int i = 0; i < n_layers; ++i) {
        const std::string p = "layers." + std::to_string(i) + ".";
        out.push_back(p + "attn.wq");
        out.push_back(p + "attn.wk");
        out.push_back(p + "attn.wv");
        out.push_back(p + "ffn.wup");
        out.push_back(p + "ffn.wgate");
        out.push_back(p + "ffn.wdown");
    }
    return out;
}

std::pair<Eigen::Index, Eigen::Index> projection_shape(const std::string& name,
                                                       const ModelConfig& cfg) {
    if (name.find("attn.w") != std::string::npos) return {cfg.d_model, cfg.d_model};
    if (name.find("ffn.wup") != std::string::npos || name.find("ffn.wgate") != std::string::npos)
        return {cfg.d_model, cfg.d_ff};
    if (name.find("ffn.wdown") != std::string::npos) return {cfg.d_ff, cfg.d_model};
    throw std::out_of_range("projection_shape: unknown projection " + name);
}

namespace {

template <typename Scalar>
struct LnCache {
    Mat<Scalar> xhat;                                    // n x d
    Eigen::Matrix<Scalar, Eigen::Dynamic, 1> inv_sigma;  // n
};

template <typename Scalar>
Mat<Scalar> layer_norm_fwd(const Mat<Scalar>& x, const Mat<Scalar>& g, const Mat<Scalar>& b,
                           LnCache<Scalar>& cache) {
    const Eigen::Index n = x.rows(), d = x.cols();
    cache.xhat.resize(n, d);
    cache.inv_sigma.resize(n);
    Mat<Scalar> y(n, d);
    for (Eigen::Index r = 0; r < n; ++r) {
        const Scalar mu = x.row(r).mean();
        const Scalar var = (x.row(r).array() - mu).square().mean();
        const Scalar inv = Scalar(1) / std::sqrt(var + Scalar(kLayerNormEps));
        cache.inv_sigma(r) = inv;
        cache.xhat.row(r) = ((x.row(r).array() - mu) * inv).matrix();
        y.row(r) = cache.xhat.row(r).cwiseProduct(g.row(0)) + b.row(0);
    }
    return y;
}

template <typename Scalar>
Mat<Scalar> layer_norm_bwd(const Mat<Scalar>& dy, const Mat<Scalar>& g,
                           const LnCache<Scalar>& cache, Mat<Scalar>* dg, Mat<Scalar>* db) {
    const Eigen::Index n = dy.rows(), d = dy.cols();
    if (dg) {
        dg->row(0) += (dy.array() * cache.xhat.array()).colwise().sum().matrix();
        db->row(0) += dy.colwise().sum();
    }
    Mat<Scalar> dx(n, d);
    for (Eigen::Index r = 0; r < n; ++r) {
        const Eigen::Matrix<Scalar, 1, Eigen::Dynamic> dxhat =
            dy.row(r).cwiseProduct(g.row(0));
        const Scalar m1 = dxhat.mean();
        const Scalar m2 = dxhat.cwiseProduct(cache.xhat.row(r)).mean();
        dx.row(r) =
            ((dxhat.array() - m1 - cache.xhat.row(r).array() * m2) * cache.inv_sigma(r))
                .matrix();
    }
    return dx;
}

template <typename Scalar>
struct LayerActs {
    LnCache<Scalar> ln1;
    Mat<Scalar> a, q, k, v;
    std::vector<Mat<Scalar>> probs;  // per head, n x n with causal rows
    Mat<Scalar> o;
    LnCache<Scalar> ln2;
    Mat<Scalar> b_act, u, gate, silu_gate;
};

}  // namespace

template <typename Scalar>
double run_network(const Params<Scalar>& eff, int n_heads, const std::vector<TokenId>& ids,
                   BackwardMode mode, TokenId logit_token, Params<Scalar>* grads,
                   Scalar grad_scale, Mat<Scalar>* logits_out) {
    const Eigen::Index n = static_cast<Eigen::Index>(ids.size());
    if (n < 1) throw std::invalid_argument("run_network: empty sequence");
    if (mode == BackwardMode::kLoss && n < 2)
        throw std::invalid_argument("run_network: loss needs at least 2 tokens");
    const Eigen::Index d = eff.embedding.cols();
    const Eigen::Index vocab = eff.embedding.rows();
    if (n_heads < 1 || d % n_heads != 0)
        throw std::invalid_argument("run_network: bad head count");
    const Eigen::Index head_dim = d / n_heads;
    const Scalar inv_sqrt_hd = Scalar(1) / std::sqrt(static_cast<Scalar>(head_dim));
    const int n_layers = static_cast<int>(eff.layers.size());
    const bool backward = mode != BackwardMode::kNone && grads != nullptr;

    for (TokenId t : ids)
        if (t < 0 || t >= vocab) throw std::out_of_range("run_network: token id out of range");

    // ---- forward ----
    Mat<Scalar> h(n, d);
    const Mat<Scalar> pe =
        positional_encoding<Scalar>(0, static_cast<int>(n), static_cast<int>(d));
    for (Eigen::Index t = 0; t < n; ++t)
        h.row(t) = eff.embedding.row(ids[static_cast<std::size_t>(t)]) + pe.row(t);

    std::vector<LayerActs<Scalar>> acts(static_cast<std::size_t>(n_layers));
    for (int li = 0; li < n_layers; ++li) {
        const auto& L = eff.layers[static_cast<std::size_t>(li)];
        auto& A = acts[static_cast<std::size_t>(li)];

        A.a = layer_norm_fwd<Scalar>(h, L.ln1_g, L.ln1_b, A.ln1);
        A.q = A.a * L.wq;
        A.k = A.a * L.wk;
        A.v = A.a * L.wv;
        A.o.setZero(n, d);
        A.probs.assign(static_cast<std::size_t>(n_heads), Mat<Scalar>());
        for (int hd = 0; hd < n_heads; ++hd) {
            const auto qh = A.q.middleCols(hd * head_dim, head_dim);
            const auto kh = A.k.middleCols(hd * head_dim, head_dim);
            const auto vh = A.v.middleCols(hd * head_dim, head_dim);
            Mat<Scalar>& P = A.probs[static_cast<std::size_t>(hd)];
            P.setZero(n, n);
            const Mat<Scalar> scores = qh * kh.transpose() * inv_sqrt_hd;
            for (Eigen::Index t = 0; t < n; ++t) {
                const Eigen::Index m = t + 1;  // causal window
                Scalar mx = scores(t, 0);
                for (Eigen::Index j = 1; j < m; ++j) mx = std::max(mx, scores(t, j));
                Scalar denom = Scalar(0);
                for (Eigen::Index j = 0; j < m; ++j) {
                    const Scalar e = std::exp(scores(t, j) - mx);
                    P(t, j) = e;
                    denom += e;
                }
                P.row(t).head(m) /= denom;
            }
            A.o.middleCols(hd * head_dim, head_dim) = P * vh;
        }
        h += (A.o * L.wo).eval();

        A.b_act = layer_norm_fwd<Scalar>(h, L.ln2_g, L.ln2_b, A.ln2);
        A.u = A.b_act * L.wup;
        A.gate = A.b_act * L.wgate;
        A.silu_gate = (A.gate.array() / (Scalar(1) + (-A.gate.array()).exp())).matrix();
        h += (A.silu_gate.cwiseProduct(A.u) * L.wdown).eval();
    }

    LnCache<Scalar> lnf;
    const Mat<Scalar> hf = layer_norm_fwd<Scalar>(h, eff.final_ln_g, eff.final_ln_b, lnf);
    const Mat<Scalar> logits = hf * eff.head.transpose();  // n x V
    if (logits_out) *logits_out = logits;

    // ---- objective and logit seed ----
    double value = 0.0;
    Mat<Scalar> dlogits;
    if (mode == BackwardMode::kLogit) {
        if (logit_token < 0 || logit_token >= vocab)
            throw std::out_of_range("run_network: logit token out of range");
        value = static_cast<double>(logits(n - 1, logit_token));
        if (!backward) return value;
        dlogits.setZero(n, vocab);
        dlogits(n - 1, logit_token) = Scalar(1);
    } else {
        if (n >= 2) {
            const double inv_pos = 1.0 / static_cast<double>(n - 1);
            if (backward) dlogits.setZero(n, vocab);
            for (Eigen::Index t = 0; t + 1 < n; ++t) {
                const TokenId target = ids[static_cast<std::size_t>(t) + 1];
                const Scalar mx = logits.row(t).maxCoeff();
                double denom = 0.0;
                for (Eigen::Index j = 0; j < vocab; ++j)
                    denom += std::exp(static_cast<double>(logits(t, j) - mx));
                const double lse = static_cast<double>(mx) + std::log(denom);
                value += (lse - static_cast<double>(logits(t, target))) * inv_pos;
                if (backward) {
                    for (Eigen::Index j = 0; j < vocab; ++j)
                        dlogits(t, j) = static_cast<Scalar>(
                            std::exp(static_cast<double>(logits(t, j) - mx)) / denom * inv_pos);
                    dlogits(t, target) -= static_cast<Scalar>(inv_pos);
                }
            }
        }
        if (!backward) return value;
    }
    dlogits *= grad_scale;

    // ---- backward ----
    grads->head += dlogits.transpose() * hf;
    Mat<Scalar> dstream = dlogits * eff.head;
    dstream = layer_norm_bwd<Scalar>(dstream, eff.final_ln_g, lnf, &grads->final_ln_g,
                                     &grads->final_ln_b);

    for (int li = n_layers - 1; li >= 0; --li) {
        const auto& L = eff.layers[static_cast<std::size_t>(li)];
        auto& G = grads->layers[static_cast<std::size_t>(li)];
        auto& A = acts[static_cast<std::size_t>(li)];

        // FFN block: h_out = h_mid + (silu(gate) .* u) * wdown
        const Mat<Scalar> f = A.silu_gate.cwiseProduct(A.u);
        G.wdown += f.transpose() * dstream;
        const Mat<Scalar> df = dstream * L.wdown.transpose();
        const Mat<Scalar> du = df.cwiseProduct(A.silu_gate);
        const Mat<Scalar> sig =
            (Scalar(1) / (Scalar(1) + (-A.gate.array()).exp())).matrix();
        const Mat<Scalar> silu_prime =
            (sig.array() * (Scalar(1) + A.gate.array() * (Scalar(1) - sig.array()))).matrix();
        const Mat<Scalar> dgate = df.cwiseProduct(A.u).cwiseProduct(silu_prime);
        G.wup += A.b_act.transpose() * du;
        G.wgate += A.b_act.transpose() * dgate;
        const Mat<Scalar> db_act = du * L.wup.transpose() + dgate * L.wgate.transpose();
        dstream += layer_norm_bwd<Scalar>(db_act, L.ln2_g, A.ln2, &G.ln2_g, &G.ln2_b);

        // Attention block: h_mid = h_in + (concat_h P_h v_h) * wo
        G.wo += A.o.transpose() * dstream;
        const Mat<Scalar> dho = dstream * L.wo.transpose();
        Mat<Scalar> dq(n, d), dk(n, d), dv(n, d);
        for (int hd = 0; hd < n_heads; ++hd) {
            const Mat<Scalar>& P = A.probs[static_cast<std::size_t>(hd)];
            const auto do_h = dho.middleCols(hd * head_dim, head_dim);
            const auto vh = A.v.middleCols(hd * head_dim, head_dim);
            const Mat<Scalar> dP = do_h * vh.transpose();
            dv.middleCols(hd * head_dim, head_dim) = P.transpose() * do_h;
            Mat<Scalar> dS(n, n);
            for (Eigen::Index t = 0; t < n; ++t) {
                const Scalar dot = P.row(t).cwiseProduct(dP.row(t)).sum();
                dS.row(t) = (P.row(t).array() * (dP.row(t).array() - dot)).matrix();
            }
            dq.middleCols(hd * head_dim, head_dim) =
                dS * A.k.middleCols(hd * head_dim, head_dim) * inv_sqrt_hd;
            dk.middleCols(hd * head_dim, head_dim) =
                dS.transpose() * A.q.middleCols(hd * head_dim, head_dim) * inv_sqrt_hd;
        }
        G.wq += A.a.transpose() * dq;
        G.wk += A.a.transpose() * dk;
        G.wv += A.a.transpose() * dv;
        const Mat<Scalar> da =
            dq * L.wq.transpose() + dk * L.wk.transpose() + dv * L.wv.transpose();
        dstream += layer_norm_bwd<Scalar>(da, L.ln1_g, A.ln1, &G.ln1_g, &G.ln1_b);
    }

    for (Eigen::Index t = 0; t < n; ++t)
        grads->embedding.row(ids[static_cast<std::size_t>(t)]) += dstream.row(t);
    return value;
}

template <typename Scalar>
Eigen::Matrix<Scalar, 1, Eigen::Dynamic> decode_step(const Params<Scalar>& eff,
                                                     const ModelConfig& cfg,
                                                     KvCache<Scalar>& cache, TokenId token) {
    const Eigen::Index d = eff.embedding.cols();
    const int n_heads = cfg.n_heads;
    const Eigen::Index head_dim = d / n_heads;
    const Scalar inv_sqrt_hd = Scalar(1) / std::sqrt(static_cast<Scalar>(head_dim));
    if (cache.len >= cfg.max_seq)
        throw std::runtime_error("decode_step: cache full (max_seq reached)");
    if (token < 0 || token >= eff.embedding.rows())
        throw std::out_of_range("decode_step: token id out of range");

    using Row = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;
    auto ln_row = [&](const Row& x, const Mat<Scalar>& g, const Mat<Scalar>& b) -> Row {
        const Scalar mu = x.mean();
        const Scalar var = (x.array() - mu).square().mean();
        const Scalar inv = Scalar(1) / std::sqrt(var + Scalar(kLayerNormEps));
        return (((x.array() - mu) * inv).matrix().cwiseProduct(g.row(0)) + b.row(0)).eval();
    };

    const Mat<Scalar> pe = positional_encoding<Scalar>(cache.len, 1, static_cast<int>(d));
    Row h = eff.embedding.row(token) + pe.row(0);

    for (std::size_t li = 0; li < eff.layers.size(); ++li) {
        const auto& L = eff.layers[li];
        auto& C = cache.layers[li];
        const Row a = ln_row(h, L.ln1_g, L.ln1_b);
        const Row q = a * L.wq;
        C.k.row(cache.len) = a * L.wk;
        C.v.row(cache.len) = a * L.wv;
        const Eigen::Index m = cache.len + 1;
        Row o(d);
        for (int hd = 0; hd < n_heads; ++hd) {
            const auto qh = q.middleCols(hd * head_dim, head_dim);
            const auto kh = C.k.topRows(m).middleCols(hd * head_dim, head_dim);
            const auto vh = C.v.topRows(m).middleCols(hd * head_dim, head_dim);
            Eigen::Matrix<Scalar, Eigen::Dynamic, 1> scores = kh * qh.transpose();
            scores *= inv_sqrt_hd;
            const Scalar mx = scores.maxCoeff();
            Eigen::Matrix<Scalar, Eigen::Dynamic, 1> p = (scores.array() - mx).exp().matrix();
            p /= p.sum();
            o.middleCols(hd * head_dim, head_dim) = (p.transpose() * vh).eval();
        }
        h += o * L.wo;
        const Row b = ln_row(h, L.ln2_g, L.ln2_b);
        const Row u = b * L.wup;
        const Row g = b * L.wgate;
        const Row silu = (g.array() / (Scalar(1) + (-g.array()).exp())).matrix();
        h += silu.cwiseProduct(u) * L.wdown;
    }
    ++cache.len;
    const Row hf = ln_row(h, eff.final_ln_g, eff.final_ln_b);
    return (hf * eff.head.transpose()).eval();
}

template double run_network<float>(const Params<float>&, int, const std::vector<TokenId>&,
                                   BackwardMode, TokenId, Params<float>*, float, Mat<float>*);
template double run_network<double>(const Params<double>&, int, const std::vector<TokenId>&,
                                    BackwardMode, TokenId, Params<double>*, double,
                                    Mat<double>*);
template Eigen::Matrix<float, 1, Eigen::Dynamic> decode_step<float>(const Params<float>&,
                                                                    const ModelConfig&,
                                                                    KvCache<float>&, TokenId);
template Eigen::Matrix<double, 1, Eigen::Dynamic> decode_step<double>(const Params<double>&,
                                                                      const ModelConfig&,
                                                                      KvCache<double>&, TokenId);

}  // namespace trajta::model
