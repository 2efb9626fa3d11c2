#include <doctest.h>

#include <cmath>

#include "trajta/common.hpp"
#include "trajta/pipeline.hpp"
#include "trajta/subspace.hpp"

using namespace trajta;
using trajta::model::Checkpoint;
using trajta::model::ModelConfig;
using trajta::model::TokenId;
using trajta::tokenizer::Vocab;

namespace {

ModelConfig tiny_config(std::int64_t vocab_size, std::uint64_t seed) {
    ModelConfig cfg;
    cfg.n_layers = 1;
    cfg.d_model = 8;
    cfg.n_heads = 2;
    cfg.d_ff = 12;
    cfg.max_seq = 64;
    cfg.vocab_size = vocab_size;
    cfg.adapter_rank = 2;
    cfg.adapter_alpha = 4.0f;
    cfg.seed = seed;
    return cfg;
}

Checkpoint make_base(const Vocab& v, std::uint64_t seed) {
    Checkpoint ckpt;
    ckpt.cfg = tiny_config(v.size(), seed);
    ckpt.params = model::init_params(ckpt.cfg);
    ckpt.vocab_hash = v.hash_hex();
    ckpt.seed = seed;
    return ckpt;
}

std::vector<std::vector<TokenId>> sample_seqs(const Vocab& v, int n, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<std::vector<TokenId>> out;
    for (int i = 0; i < n; ++i) {
        std::vector<mobility::Record> recs;
        std::int32_t minute = 30;
        const std::size_t len = 3 + rng.uniform_int(4);
        for (std::size_t r = 0; r < len; ++r) {
            minute += static_cast<std::int32_t>(rng.uniform_int(25));
            recs.push_back({static_cast<std::int32_t>(
                                rng.uniform_int(static_cast<std::uint64_t>(v.n_locations()))),
                            std::min(minute, 1439)});
        }
        out.push_back(tokenizer::serialize(recs, v));
    }
    return out;
}

}  // namespace

TEST_CASE("subspace basis is orthonormal and deduplicates") {
    const Vocab v = Vocab::with_locations(5);
    const Checkpoint base = make_base(v, 21);
    const auto reg = subspace::Registry::build(base.cfg);
    const auto seqs = sample_seqs(v, 20, 3);

    const auto basis = subspace::build_subspace(base, reg, seqs, v, 24, 9);
    CHECK(basis.m() >= 1);
    CHECK(basis.m() <= 24);
    const Eigen::MatrixXd qtq = basis.q.transpose() * basis.q;
    const double err =
        (qtq - Eigen::MatrixXd::Identity(basis.m(), basis.m())).cwiseAbs().maxCoeff();
    CHECK(err < 1e-6);

    // a single duplicated sequence yields very few directions, and repeated
    // identical gradients collapse by rank
    const std::vector<std::vector<TokenId>> dup(8, seqs[0]);
    const auto small = subspace::build_subspace(base, reg, dup, v, 8, 9);
    CHECK(small.m() <= 8);
}

TEST_CASE("single gradient gives a one-column basis equal to its direction") {
    const Vocab v = Vocab::with_locations(5);
    const Checkpoint base = make_base(v, 23);
    const auto reg = subspace::Registry::build(base.cfg);
    const auto seqs = sample_seqs(v, 1, 5);

    // m_max = 1: one sample, basis is that gradient normalized
    const auto basis = subspace::build_subspace(base, reg, seqs, v, 1, 4);
    REQUIRE(basis.m() == 1);
    CHECK(std::abs(basis.q.col(0).norm() - 1.0) < 1e-12);
}

TEST_CASE("projection properties") {
    Rng rng(31);
    const int dim = 200, m = 20;
    // random orthonormal basis via Gram-Schmidt on Gaussian columns
    Eigen::MatrixXd q(dim, m);
    for (int c = 0; c < m; ++c) {
        Eigen::VectorXd v(dim);
        for (int i = 0; i < dim; ++i) v[i] = rng.normal();
        for (int k = 0; k < c; ++k) v -= q.col(k).dot(v) * q.col(k);
        q.col(c) = v / v.norm();
    }

    // basis column projects to itself
    const auto p0 = subspace::project(q, q.col(3));
    CHECK(p0.ratio == doctest::Approx(1.0).epsilon(1e-9));

    // orthogonal vector projects to zero
    Eigen::VectorXd w(dim);
    for (int i = 0; i < dim; ++i) w[i] = rng.normal();
    for (int k = 0; k < m; ++k) w -= q.col(k).dot(w) * q.col(k);
    const auto p1 = subspace::project(q, w);
    CHECK(p1.ratio == doctest::Approx(0.0).epsilon(1e-9));

    // idempotence and Pythagoras on random vectors
    for (int trial = 0; trial < 20; ++trial) {
        Eigen::VectorXd x(dim);
        for (int i = 0; i < dim; ++i) x[i] = rng.normal();
        const auto p = subspace::project(q, x);
        if (p.parallel.norm() > 1e-12) {
            const auto pp = subspace::project(q, p.parallel);
            CHECK(pp.ratio == doctest::Approx(1.0).epsilon(1e-9));
        }
        const double residual2 = (x - p.parallel).squaredNorm();
        CHECK(x.squaredNorm() ==
              doctest::Approx(p.parallel.squaredNorm() + residual2).epsilon(1e-6));
    }

    // chi-square concentration: E[ratio] ~ sqrt(m/dim) over 100 draws
    double mean = 0.0, mean2 = 0.0;
    const int draws = 100;
    for (int trial = 0; trial < draws; ++trial) {
        Eigen::VectorXd x(dim);
        for (int i = 0; i < dim; ++i) x[i] = rng.normal();
        const double r = subspace::project(q, x).ratio;
        mean += r;
        mean2 += r * r;
    }
    mean /= draws;
    mean2 /= draws;
    const double se = std::sqrt((mean2 - mean * mean) / draws);
    CHECK(std::abs(mean - std::sqrt(static_cast<double>(m) / dim)) < 3.0 * se + 1e-3);

    CHECK_THROWS(subspace::project(q, Eigen::VectorXd::Zero(dim)));
}

TEST_CASE("projected difference reports") {
    const Vocab v = Vocab::with_locations(5);
    const Checkpoint base = make_base(v, 25);
    const auto reg = subspace::Registry::build(base.cfg);
    const auto basis = subspace::build_subspace(base, reg, sample_seqs(v, 10, 3), v, 8, 2);

    Rng rng(55);
    Eigen::VectorXd vb(reg.dim()), vi(reg.dim());
    for (Eigen::Index i = 0; i < reg.dim(); ++i) {
        vb[i] = rng.normal();
        vi[i] = rng.normal();
    }
    const auto same = subspace::projected_tv_diff(basis, vb, vb);
    CHECK(same.proj_diff_norm == doctest::Approx(0.0));

    const auto zero = subspace::projected_tv_diff(basis, vb, Eigen::VectorXd::Zero(reg.dim()));
    CHECK(zero.proj_diff_norm == doctest::Approx(zero.proj_b_norm));

    CHECK_THROWS(subspace::projected_tv_diff(basis, vb, Eigen::VectorXd::Zero(3)));
}

TEST_CASE("first-order vector matches a single dense SGD step") {
    const Vocab v = Vocab::with_locations(5);
    const Checkpoint base = make_base(v, 29);
    const auto reg = subspace::Registry::build(base.cfg);
    const auto seqs = sample_seqs(v, 16, 13);

    CHECK(subspace::first_order_vector(base, seqs, 0.0, reg).norm() == 0.0);

    const Eigen::VectorXd v1 = subspace::first_order_vector(base, seqs, 0.01, reg);
    const Eigen::VectorXd v2 = subspace::first_order_vector(base, seqs, 0.02, reg);
    CHECK((v2 - 2.0 * v1).norm() < 1e-9 * v1.norm() + 1e-12);

    // one explicit dense SGD step over the registry groups
    const double eta = 0.01;
    const model::Params<float> grads = model::dataset_loss_grads(base, seqs);
    Checkpoint stepped = base;
    stepped.params.embedding -= static_cast<float>(eta) * grads.embedding;
    stepped.params.head -= static_cast<float>(eta) * grads.head;
    for (const auto& name : model::adapted_projection_names(base.cfg.n_layers))
        stepped.params.tensor(name) -= static_cast<float>(eta) * grads.tensor(name);

    const taskvec::TaskVector tv = taskvec::extract(stepped, base);
    const Eigen::VectorXd extracted = reg.flatten(tv);
    const double cos = v1.dot(extracted) / (v1.norm() * extracted.norm());
    CHECK(cos == doctest::Approx(1.0).epsilon(1e-3));
}

TEST_CASE("mean step TV distance") {
    const Vocab v = Vocab::with_locations(5);
    const Checkpoint a = make_base(v, 41);
    Checkpoint b = a;
    const auto held = sample_seqs(v, 6, 77);
    const auto vtraj = v.vtraj_ids();

    CHECK(subspace::mean_step_tv(a, b, held, vtraj) == doctest::Approx(0.0));

    b.params.head.row(static_cast<Eigen::Index>(v.loc(0))).array() += 0.5f;
    const double d = subspace::mean_step_tv(a, b, held, vtraj);
    CHECK(d > 0.0);
    CHECK(d <= 1.0);
}
