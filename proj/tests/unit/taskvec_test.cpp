#include <doctest.h>

#include <filesystem>

#include "trajta/common.hpp"
#include "trajta/taskvec.hpp"

using namespace trajta;
using namespace trajta::taskvec;
using trajta::model::Checkpoint;
using trajta::model::ModelConfig;
using trajta::model::TokenId;
using trajta::tokenizer::Vocab;

namespace {

ModelConfig tiny_config(std::int64_t vocab_size) {
    ModelConfig cfg;
    cfg.n_layers = 1;
    cfg.d_model = 8;
    cfg.n_heads = 2;
    cfg.d_ff = 12;
    cfg.max_seq = 64;
    cfg.vocab_size = vocab_size;
    cfg.adapter_rank = 2;
    cfg.adapter_alpha = 4.0f;
    cfg.seed = 5;
    return cfg;
}

Checkpoint make_base(std::uint64_t seed) {
    const Vocab v = Vocab::with_locations(4);
    ModelConfig cfg = tiny_config(v.size());
    cfg.seed = seed;
    Checkpoint ckpt;
    ckpt.cfg = cfg;
    ckpt.params = model::init_params(cfg);
    ckpt.vocab_hash = v.hash_hex();
    ckpt.seed = seed;
    return ckpt;
}

TaskVector random_vector(const Checkpoint& base, std::uint64_t seed) {
    Rng rng(seed);
    TaskVector v;
    v.v_e = base.params.embedding;
    v.v_h = base.params.head;
    auto fill = [&](Eigen::MatrixXf& m) {
        for (Eigen::Index r = 0; r < m.rows(); ++r)
            for (Eigen::Index c = 0; c < m.cols(); ++c)
                m(r, c) = static_cast<float>(rng.normal() * 0.1);
    };
    fill(v.v_e);
    fill(v.v_h);
    for (const auto& name : model::adapted_projection_names(base.cfg.n_layers)) {
        const auto [in, out] = model::projection_shape(name, base.cfg);
        Eigen::MatrixXf m(in, out);
        fill(m);
        v.v_l[name] = m;
    }
    v.provenance.base_hash = model::checkpoint_hash(base);
    return v;
}

}  // namespace

TEST_CASE("extract and apply round trip") {
    const Checkpoint base = make_base(10);
    const Vocab v = Vocab::with_locations(4);
    Rng rng(8);
    std::vector<std::vector<TokenId>> dataset;
    for (int i = 0; i < 12; ++i) {
        std::vector<mobility::Record> recs;
        for (int r = 0; r < 3; ++r)
            recs.push_back({static_cast<std::int32_t>(rng.uniform_int(4)),
                            static_cast<std::int32_t>(100 + 10 * r)});
        dataset.push_back(tokenizer::serialize(recs, v));
    }
    model::TrainOptions opt;
    opt.epochs = 2;
    opt.seed = 3;
    const Checkpoint tuned = model::finetune_task(base, dataset, opt);

    const TaskVector tv = extract(tuned, base);
    // theta0 + V reproduces theta* within 1e-6 per element
    const Checkpoint rebuilt = apply(base, tv);
    CHECK((rebuilt.params.embedding - tuned.params.embedding).cwiseAbs().maxCoeff() <= 1e-6f);
    CHECK((rebuilt.params.head - tuned.params.head).cwiseAbs().maxCoeff() <= 1e-6f);
    for (const auto& [name, d] : tuned.deltas)
        CHECK((rebuilt.deltas.at(name) - d).cwiseAbs().maxCoeff() <= 1e-6f);

    // theta* == theta0 gives the zero vector
    const TaskVector zero = extract(base, base);
    CHECK(norm(zero) == doctest::Approx(0.0));

    // additive inverse returns theta0 within 1e-6
    const Checkpoint back = apply(rebuilt, scale(tv, -1.0), {1, 1, 1});
    CHECK((back.params.embedding - base.params.embedding).cwiseAbs().maxCoeff() <= 1e-6f);
    for (const auto& [name, d] : back.deltas) CHECK(d.cwiseAbs().maxCoeff() <= 1e-6f);
}

TEST_CASE("extract rejects mismatched checkpoints") {
    const Checkpoint a = make_base(1);
    Checkpoint b = make_base(2);
    b.vocab_hash = "different";
    CHECK_THROWS(extract(a, b));
}

TEST_CASE("compose_target follows the linear rule") {
    const Checkpoint base = make_base(3);
    const TaskVector tb = random_vector(base, 100);
    const TaskVector sm = random_vector(base, 200);
    const TaskVector sb = random_vector(base, 300);

    // mu = 0 reproduces the target-bus vector exactly
    const TaskVector at0 = compose_target(tb, sm, sb, {0.0, 0.0, 0.0});
    CHECK((at0.v_e - tb.v_e).cwiseAbs().maxCoeff() == 0.0f);
    CHECK((at0.v_h - tb.v_h).cwiseAbs().maxCoeff() == 0.0f);
    for (const auto& [name, m] : at0.v_l)
        CHECK((m - tb.v_l.at(name)).cwiseAbs().maxCoeff() == 0.0f);

    // identical source vectors cancel for any mu
    const TaskVector cancel = compose_target(tb, sm, sm, {0.7, 0.3, 2.0});
    CHECK((cancel.v_e - tb.v_e).cwiseAbs().maxCoeff() == 0.0f);
    for (const auto& [name, m] : cancel.v_l)
        CHECK((m - tb.v_l.at(name)).cwiseAbs().maxCoeff() == 0.0f);

    // hand-computed scalar case on the first backbone entry
    const MuCoefficients mu{0.0, 1.0, 0.0};
    const TaskVector v = compose_target(tb, sm, sb, mu);
    const std::string n0 = v.v_l.begin()->first;
    CHECK(v.v_l.at(n0)(0, 0) ==
          doctest::Approx(tb.v_l.at(n0)(0, 0) + (sm.v_l.at(n0)(0, 0) - sb.v_l.at(n0)(0, 0))));
    CHECK(v.v_e(0, 0) == doctest::Approx(tb.v_e(0, 0)));

    // affine in each mu: second differences vanish
    auto mean_entry = [&](double mu_l) {
        const TaskVector w = compose_target(tb, sm, sb, {0.0, mu_l, 0.0});
        return static_cast<double>(w.v_l.at(n0)(1, 1));
    };
    const double f0 = mean_entry(0.0), f1 = mean_entry(0.5), f2 = mean_entry(1.0);
    CHECK(std::abs((f2 - f1) - (f1 - f0)) < 1e-6);

    // provenance mismatch is rejected
    TaskVector alien = random_vector(base, 400);
    alien.provenance.base_hash = "somewhere-else";
    CHECK_THROWS(compose_target(tb, sm, alien, {0.1, 0.1, 0.1}));
}

TEST_CASE("apply is linear and validates shapes") {
    const Checkpoint base = make_base(4);
    const TaskVector v = random_vector(base, 7);

    const Checkpoint zero = apply(base, TaskVector::zeros_like(v));
    CHECK((zero.params.embedding - base.params.embedding).cwiseAbs().maxCoeff() == 0.0f);

    const Checkpoint one = apply(base, v);
    const Checkpoint twice = apply(base, scale(v, 2.0));
    const Eigen::MatrixXf d1 = one.params.embedding - base.params.embedding;
    const Eigen::MatrixXf d2 = twice.params.embedding - base.params.embedding;
    CHECK((d2 - 2.0f * d1).cwiseAbs().maxCoeff() < 1e-6f);

    TaskVector bad = v;
    bad.v_e = Eigen::MatrixXf::Zero(1, 1);
    CHECK_THROWS(apply(base, bad));
}

TEST_CASE("ablate zeroes the masked subspaces") {
    const Checkpoint base = make_base(6);
    const TaskVector v = random_vector(base, 9);

    const TaskVector none = ablate(v, {false, false, false});
    CHECK(norm(none) == doctest::Approx(0.0));

    const TaskVector all = ablate(v, {true, true, true});
    CHECK(norm(add(all, scale(v, -1.0))) == doctest::Approx(0.0));

    const TaskVector l_only = ablate(v, {false, true, false});
    CHECK(l_only.v_e.cwiseAbs().maxCoeff() == 0.0f);
    CHECK(l_only.v_h.cwiseAbs().maxCoeff() == 0.0f);
    double l_norm = 0.0;
    for (const auto& [name, m] : l_only.v_l) l_norm += m.norm();
    CHECK(l_norm > 0.0);
}

TEST_CASE("vector space laws") {
    const Checkpoint base = make_base(8);
    const TaskVector a = random_vector(base, 1);
    const TaskVector b = random_vector(base, 2);
    const TaskVector c = random_vector(base, 3);

    // commutativity
    CHECK(norm(add(add(a, b), scale(add(b, a), -1.0))) == doctest::Approx(0.0));
    // associativity
    const TaskVector lhs = add(add(a, b), c);
    const TaskVector rhs = add(a, add(b, c));
    CHECK(norm(add(lhs, scale(rhs, -1.0))) < 1e-5);
    // scalar distributivity: 2(a+b) == 2a + 2b
    const TaskVector s1 = scale(add(a, b), 2.0);
    const TaskVector s2 = add(scale(a, 2.0), scale(b, 2.0));
    CHECK(norm(add(s1, scale(s2, -1.0))) < 1e-5);
}

TEST_CASE("task vector file round trip") {
    const Checkpoint base = make_base(12);
    TaskVector v = random_vector(base, 44);
    v.provenance.dataset_id = "src-mob";
    v.provenance.config_hash = model::config_hash(base.cfg);
    const std::string path =
        (std::filesystem::temp_directory_path() / "trajta_test_tv.bin").string();
    save_task_vector(path, v);
    const TaskVector back = load_task_vector(path);
    CHECK(back.provenance == v.provenance);
    CHECK(norm(add(back, scale(v, -1.0))) == doctest::Approx(0.0));
}
