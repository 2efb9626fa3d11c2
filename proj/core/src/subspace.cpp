#include "trajta/subspace.hpp"

#include <cmath>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "trajta/common.hpp"

namespace trajta::subspace {

Registry Registry::build(const model::ModelConfig& cfg) {
    Registry r;
    auto push = [&](const std::string& name, Eigen::Index rows, Eigen::Index cols) {
        r.entries_.push_back({name, rows, cols, r.dim_});
        r.dim_ += static_cast<std::int64_t>(rows) * cols;
    };
    push("embedding", cfg.vocab_size, cfg.d_model);
    for (const auto& name : model::adapted_projection_names(cfg.n_layers)) {
        const auto [in, out] = model::projection_shape(name, cfg);
        push(name, in, out);
    }
    push("head", cfg.vocab_size, cfg.d_model);
    return r;
}

namespace {

void write_block(Eigen::VectorXd& out, const Registry::Entry& e, const Eigen::MatrixXf& m) {
    if (m.rows() != e.rows || m.cols() != e.cols)
        throw std::invalid_argument("registry flatten: shape mismatch for " + e.name);
    std::int64_t at = e.offset;
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) out[at++] = static_cast<double>(m(r, c));
}

}  // namespace

Eigen::VectorXd Registry::flatten_grads(const model::Params<float>& grads) const {
    Eigen::VectorXd out = Eigen::VectorXd::Zero(dim_);
    for (const auto& e : entries_) write_block(out, e, grads.tensor(e.name));
    return out;
}

Eigen::VectorXd Registry::flatten(const taskvec::TaskVector& v) const {
    Eigen::VectorXd out = Eigen::VectorXd::Zero(dim_);
    for (const auto& e : entries_) {
        if (e.name == "embedding") write_block(out, e, v.v_e);
        else if (e.name == "head") write_block(out, e, v.v_h);
        else write_block(out, e, v.v_l.at(e.name));
    }
    return out;
}

Eigen::VectorXd Registry::flatten_param_diff(const model::Checkpoint& a,
                                             const model::Checkpoint& b) const {
    Eigen::VectorXd out = Eigen::VectorXd::Zero(dim_);
    const model::Params<float> pa = a.effective();
    const model::Params<float> pb = b.effective();
    for (const auto& e : entries_) {
        const Eigen::MatrixXf diff = pa.tensor(e.name) - pb.tensor(e.name);
        write_block(out, e, diff);
    }
    return out;
}

SubspaceBasis build_subspace(const model::Checkpoint& base, const Registry& reg,
                             const std::vector<std::vector<model::TokenId>>& sequences,
                             const tokenizer::Vocab& vocab, int m_max, std::uint64_t seed) {
    if (m_max < 1) throw std::invalid_argument("build_subspace: m_max must be >= 1");
    if (sequences.empty()) throw std::invalid_argument("build_subspace: no sequences");

    // Candidate (sequence, position) pairs whose next token is a
    // trajectory-relevant token.
    struct Site {
        std::size_t seq;
        std::size_t pos;  // prefix = ids[0..pos), target = ids[pos]
    };
    std::vector<Site> sites;
    for (std::size_t s = 0; s < sequences.size(); ++s) {
        const auto& ids = sequences[s];
        for (std::size_t p = 1; p < ids.size(); ++p)
            if (vocab.in_vtraj(ids[p])) sites.push_back({s, p});
    }
    if (sites.empty())
        throw std::invalid_argument("build_subspace: no trajectory-token positions in sample");

    Rng rng(mix_seed(seed, "subspace"));
    SubspaceBasis basis;
    basis.anchor_hash = model::checkpoint_hash(base);
    basis.q.resize(reg.dim(), m_max);

    nlohmann::json manifest = nlohmann::json::array();
    int kept = 0;
    bool any_nonzero = false;
    for (int i = 0; i < m_max; ++i) {
        const Site site = sites[rng.uniform_int(sites.size())];
        const auto& ids = sequences[site.seq];
        const std::vector<model::TokenId> prefix(ids.begin(),
                                                 ids.begin() + static_cast<std::ptrdiff_t>(site.pos));
        const model::TokenId target = ids[site.pos];
        const model::Params<float> grads = model::logit_grads(base, prefix, target);
        Eigen::VectorXd v = reg.flatten_grads(grads);
        if (v.norm() > 0.0) any_nonzero = true;

        // Modified Gram-Schmidt with one re-orthogonalization pass.
        for (int pass = 0; pass < 2; ++pass)
            for (int cidx = 0; cidx < kept; ++cidx)
                v -= basis.q.col(cidx).dot(v) * basis.q.col(cidx);
        const double res = v.norm();
        nlohmann::json entry;
        entry["seq"] = site.seq;
        entry["pos"] = site.pos;
        entry["token"] = target;
        entry["kept"] = res >= 1e-8;
        manifest.push_back(entry);
        if (res < 1e-8) continue;
        basis.q.col(kept) = v / res;
        ++kept;
    }
    if (!any_nonzero)
        throw std::runtime_error("build_subspace: all sampled gradients are zero");
    if (kept == 0) throw std::runtime_error("build_subspace: no independent directions kept");
    basis.q.conservativeResize(Eigen::NoChange, kept);
    nlohmann::json mj;
    mj["samples"] = manifest;
    mj["m"] = kept;
    mj["seed"] = seed;
    basis.manifest_json = mj.dump();
    return basis;
}

Projection project(const Eigen::MatrixXd& q, const Eigen::VectorXd& v) {
    const double vn = v.norm();
    if (!(vn > 0.0)) throw std::invalid_argument("project: zero vector");
    Projection p;
    p.parallel = q * (q.transpose() * v);
    p.ratio = p.parallel.norm() / vn;
    return p;
}

DiffReport projected_tv_diff(const SubspaceBasis& basis, const Eigen::VectorXd& v_b,
                             const Eigen::VectorXd& v_i) {
    if (v_b.size() != v_i.size() || v_b.size() != basis.q.rows())
        throw std::invalid_argument("projected_tv_diff: registry mismatch");
    const Eigen::VectorXd diff = v_b - v_i;
    DiffReport rep;
    rep.diff_norm = diff.norm();
    rep.proj_diff_norm = (basis.q * (basis.q.transpose() * diff)).norm();
    rep.proj_b_norm = (basis.q * (basis.q.transpose() * v_b)).norm();
    rep.proj_i_norm = (basis.q * (basis.q.transpose() * v_i)).norm();
    return rep;
}

namespace {

taskvec::TaskVector scale_subspaces(const taskvec::TaskVector& v,
                                    const taskvec::MuCoefficients& mu) {
    taskvec::TaskVector out = v;
    out.v_e *= static_cast<float>(mu.e);
    out.v_h *= static_cast<float>(mu.h);
    for (auto& [name, m] : out.v_l) m *= static_cast<float>(mu.l);
    return out;
}

taskvec::TaskVector tv_sub(const taskvec::TaskVector& a, const taskvec::TaskVector& b) {
    return taskvec::add(a, taskvec::scale(b, -1.0));
}

}  // namespace

ComposedStabilityReport composed_stability(
    const SubspaceBasis& basis, const Registry& reg, const taskvec::TaskVector& comp_b,
    const taskvec::TaskVector& comp_i, const taskvec::TaskVector& tb_b,
    const taskvec::TaskVector& tb_i, const taskvec::TaskVector& sm_b,
    const taskvec::TaskVector& sm_i, const taskvec::TaskVector& sb_b,
    const taskvec::TaskVector& sb_i, const taskvec::MuCoefficients& mu) {
    // Both composed vectors must come from the same mu; recompose and check.
    const taskvec::TaskVector check_b = taskvec::compose_target(tb_b, sm_b, sb_b, mu);
    const taskvec::TaskVector check_i = taskvec::compose_target(tb_i, sm_i, sb_i, mu);
    const double scale_ref = std::max(1.0, std::max(taskvec::norm(comp_b), taskvec::norm(comp_i)));
    if (taskvec::norm(tv_sub(check_b, comp_b)) > 1e-5 * scale_ref ||
        taskvec::norm(tv_sub(check_i, comp_i)) > 1e-5 * scale_ref)
        throw std::invalid_argument(
            "composed_stability: composed vectors do not match constituents under mu "
            "(mu mismatch)");

    auto proj = [&](const Eigen::VectorXd& v) -> Eigen::VectorXd {
        return basis.q * (basis.q.transpose() * v);
    };
    const Eigen::VectorXd lhs = proj(reg.flatten(tv_sub(comp_b, comp_i)));
    const Eigen::VectorXd t_tb = proj(reg.flatten(tv_sub(tb_b, tb_i)));
    const Eigen::VectorXd t_sm =
        proj(reg.flatten(scale_subspaces(tv_sub(sm_b, sm_i), mu)));
    const Eigen::VectorXd t_sb =
        proj(reg.flatten(scale_subspaces(tv_sub(sb_b, sb_i), mu)));

    ComposedStabilityReport rep;
    rep.lhs_norm = lhs.norm();
    rep.tgt_bus_term = t_tb.norm();
    rep.src_mob_term = t_sm.norm();
    rep.src_bus_term = t_sb.norm();
    rep.triangle_holds =
        rep.lhs_norm <= rep.tgt_bus_term + rep.src_mob_term + rep.src_bus_term + 1e-9;
    rep.linearity_residual = (lhs - (t_tb + t_sm - t_sb)).norm();
    return rep;
}

Eigen::VectorXd first_order_vector(const model::Checkpoint& ckpt,
                                   const std::vector<std::vector<model::TokenId>>& dataset,
                                   double eta, const Registry& reg) {
    if (eta < 0.0) throw std::invalid_argument("first_order_vector: eta must be >= 0");
    if (eta == 0.0) return Eigen::VectorXd::Zero(reg.dim());
    const model::Params<float> grads = model::dataset_loss_grads(ckpt, dataset);
    return -eta * reg.flatten_grads(grads);
}

double mean_step_tv(const model::Checkpoint& a, const model::Checkpoint& b,
                    const std::vector<std::vector<model::TokenId>>& held_out,
                    const std::vector<model::TokenId>& vtraj) {
    if (held_out.empty()) throw std::invalid_argument("mean_step_tv: no held-out sequences");
    if (vtraj.empty()) throw std::invalid_argument("mean_step_tv: empty token set");
    double acc = 0.0;
    std::size_t steps = 0;
    for (const auto& ids : held_out) {
        if (ids.size() < 2) continue;
        const model::Mat<float> la = model::full_logits(a, ids);
        const model::Mat<float> lb = model::full_logits(b, ids);
        const Eigen::Index vocab = la.cols();
        for (Eigen::Index t = 0; t + 1 < la.rows(); ++t) {
            auto softmax_row = [&](const model::Mat<float>& l) {
                Eigen::VectorXd p(vocab);
                const double mx = static_cast<double>(l.row(t).maxCoeff());
                double denom = 0.0;
                for (Eigen::Index j = 0; j < vocab; ++j) {
                    p[j] = std::exp(static_cast<double>(l(t, j)) - mx);
                    denom += p[j];
                }
                p /= denom;
                return p;
            };
            const Eigen::VectorXd pa = softmax_row(la);
            const Eigen::VectorXd pb = softmax_row(lb);
            double tv = 0.0;
            for (const model::TokenId tok : vtraj) tv += std::abs(pa[tok] - pb[tok]);
            acc += 0.5 * tv;
            ++steps;
        }
    }
    if (steps == 0) throw std::invalid_argument("mean_step_tv: no prediction positions");
    return acc / static_cast<double>(steps);
}

}  // namespace trajta::subspace
