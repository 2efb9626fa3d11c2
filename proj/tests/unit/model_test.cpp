#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "trajta/common.hpp"
#include "trajta/model.hpp"

using namespace trajta::model;
using trajta::mix_seed;
using trajta::Rng;
using trajta::tokenizer::Vocab;

namespace {

ModelConfig tiny_config(std::int64_t vocab_size) {
    ModelConfig cfg;
    cfg.n_layers = 1;
    cfg.d_model = 16;
    cfg.n_heads = 2;
    cfg.d_ff = 24;
    cfg.max_seq = 64;
    cfg.vocab_size = vocab_size;
    cfg.adapter_rank = 2;
    cfg.adapter_alpha = 4.0f;
    cfg.seed = 99;
    return cfg;
}

std::vector<TokenId> random_sequence(const Vocab& v, Rng& rng, std::size_t n_records) {
    std::vector<trajta::mobility::Record> recs;
    std::int32_t minute = 10;
    for (std::size_t i = 0; i < n_records; ++i) {
        minute += static_cast<std::int32_t>(rng.uniform_int(30));
        recs.push_back({static_cast<std::int32_t>(rng.uniform_int(
                            static_cast<std::uint64_t>(v.n_locations()))),
                        std::min(minute, 1439)});
    }
    return trajta::tokenizer::serialize(recs, v);
}

struct DoubleModel {
    ModelConfig cfg;
    Params<double> params;
    std::map<std::string, std::pair<Mat<double>, Mat<double>>> factors;  // a, b
    double scale;

    Params<double> effective() const {
        DeltaMap<double> deltas;
        for (const auto& [name, ab] : factors) deltas[name] = ab.first * ab.second * scale;
        return effective_params<double>(params, &deltas);
    }
    double loss(const std::vector<TokenId>& ids) const {
        return sequence_loss<double>(effective(), cfg.n_heads, ids);
    }
};

DoubleModel make_double_model(const Vocab& v) {
    const ModelConfig cfg = tiny_config(v.size());
    DoubleModel m;
    m.cfg = cfg;
    m.params = init_params(cfg).cast<double>();
    m.scale = cfg.adapter_alpha / cfg.adapter_rank;
    Rng rng(424242);
    for (const auto& name : adapted_projection_names(cfg.n_layers)) {
        const auto [in, out] = projection_shape(name, cfg);
        Mat<double> a(in, cfg.adapter_rank), b(cfg.adapter_rank, out);
        for (Eigen::Index r = 0; r < a.rows(); ++r)
            for (Eigen::Index c = 0; c < a.cols(); ++c) a(r, c) = rng.normal() * 0.05;
        for (Eigen::Index r = 0; r < b.rows(); ++r)
            for (Eigen::Index c = 0; c < b.cols(); ++c) b(r, c) = rng.normal() * 0.05;
        m.factors[name] = {a, b};
    }
    return m;
}

// Central finite difference through a mutable cell.
double central_diff(DoubleModel& m, double& cell, const std::vector<TokenId>& ids, double h) {
    const double orig = cell;
    cell = orig + h;
    const double up = m.loss(ids);
    cell = orig - h;
    const double down = m.loss(ids);
    cell = orig;
    return (up - down) / (2.0 * h);
}

void check_rel(double analytic, double numeric, double tol) {
    const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
    CHECK(std::abs(analytic - numeric) / denom < tol);
}

}  // namespace

TEST_CASE("analytic gradients match central finite differences") {
    const Vocab v = Vocab::with_locations(6);
    DoubleModel m = make_double_model(v);
    Rng rng(7);
    const auto ids = random_sequence(v, rng, 4);

    // Dense gradients at the effective parameters.
    Params<double> grads = Params<double>::zeros(m.cfg);
    const Params<double> eff = m.effective();
    run_network<double>(eff, m.cfg.n_heads, ids, BackwardMode::kLoss, 0, &grads, 1.0, nullptr);

    const double h = 1e-3;
    const double tol = 1e-4;

    // Every dense parameter group, sampled entries.
    Rng pick(99);
    m.params.for_each_tensor([&](const std::string& name, Mat<double>& w) {
        for (int s = 0; s < 6; ++s) {
            const Eigen::Index r = static_cast<Eigen::Index>(pick.uniform_int(w.rows()));
            const Eigen::Index c = static_cast<Eigen::Index>(pick.uniform_int(w.cols()));
            if (name == "embedding") {
                // only rows of tokens present in the sequence get gradient
                bool present = false;
                for (TokenId t : ids) present |= (t == static_cast<TokenId>(r));
                if (!present) continue;
            }
            const double num = central_diff(m, w(r, c), ids, h);
            check_rel(grads.tensor(name)(r, c), num, tol);
        }
    });

    // Adapter factors on all six projections via the chain rule.
    for (auto& [name, ab] : m.factors) {
        const Mat<double>& g = grads.tensor(name);
        const Mat<double> ga = m.scale * (g * ab.second.transpose());
        const Mat<double> gb = m.scale * (ab.first.transpose() * g);
        for (int s = 0; s < 4; ++s) {
            const Eigen::Index r = static_cast<Eigen::Index>(pick.uniform_int(ab.first.rows()));
            const Eigen::Index c = static_cast<Eigen::Index>(pick.uniform_int(ab.first.cols()));
            check_rel(ga(r, c), central_diff(m, ab.first(r, c), ids, h), tol);
        }
        for (int s = 0; s < 4; ++s) {
            const Eigen::Index r = static_cast<Eigen::Index>(pick.uniform_int(ab.second.rows()));
            const Eigen::Index c = static_cast<Eigen::Index>(pick.uniform_int(ab.second.cols()));
            check_rel(gb(r, c), central_diff(m, ab.second(r, c), ids, h), tol);
        }
    }
}

TEST_CASE("logit gradients match finite differences") {
    const Vocab v = Vocab::with_locations(6);
    DoubleModel m = make_double_model(v);
    Rng rng(13);
    const auto ids = random_sequence(v, rng, 3);
    const TokenId target = v.loc(2);

    Params<double> grads = Params<double>::zeros(m.cfg);
    run_network<double>(m.effective(), m.cfg.n_heads, ids, BackwardMode::kLogit, target, &grads,
                        1.0, nullptr);

    auto logit_of = [&]() {
        Mat<double> logits = forward_logits<double>(m.effective(), m.cfg.n_heads, ids);
        return logits(logits.rows() - 1, target);
    };
    Rng pick(5);
    auto& head = m.params.head;
    for (int s = 0; s < 5; ++s) {
        const Eigen::Index r = static_cast<Eigen::Index>(pick.uniform_int(head.rows()));
        const Eigen::Index c = static_cast<Eigen::Index>(pick.uniform_int(head.cols()));
        const double orig = head(r, c);
        const double h = 1e-3;
        head(r, c) = orig + h;
        const double up = logit_of();
        head(r, c) = orig - h;
        const double down = logit_of();
        head(r, c) = orig;
        check_rel(grads.head(r, c), (up - down) / (2 * h), 1e-4);
    }
}

TEST_CASE("softmax rows are normalized") {
    const Vocab v = Vocab::with_locations(6);
    const ModelConfig cfg = tiny_config(v.size());
    const Params<float> p = init_params(cfg);
    Rng rng(3);
    const auto ids = random_sequence(v, rng, 4);
    const Mat<float> logits = forward_logits<float>(p, cfg.n_heads, ids);
    for (Eigen::Index t = 0; t < logits.rows(); ++t) {
        double total = 0.0;
        const float mx = logits.row(t).maxCoeff();
        for (Eigen::Index j = 0; j < logits.cols(); ++j)
            total += std::exp(static_cast<double>(logits(t, j) - mx));
        double check = 0.0;
        for (Eigen::Index j = 0; j < logits.cols(); ++j)
            check += std::exp(static_cast<double>(logits(t, j) - mx)) / total;
        CHECK(std::abs(check - 1.0) < 1e-6);
    }
}

TEST_CASE("zero-delta adapters change no logits and doubling doubles the shift") {
    const Vocab v = Vocab::with_locations(6);
    const ModelConfig cfg = tiny_config(v.size());
    const Params<float> p = init_params(cfg);
    Rng rng(31);
    const auto ids = random_sequence(v, rng, 3);

    DeltaMap<float> zero;
    for (const auto& name : adapted_projection_names(cfg.n_layers)) {
        const auto [in, out] = projection_shape(name, cfg);
        zero[name] = Eigen::MatrixXf::Zero(in, out);
    }
    const Mat<float> base = forward_logits<float>(p, cfg.n_heads, ids);
    const Mat<float> with_zero =
        forward_logits<float>(effective_params<float>(p, &zero), cfg.n_heads, ids);
    CHECK((base - with_zero).cwiseAbs().maxCoeff() == 0.0f);

    // Linearity of the delta application at the projection pre-activation:
    // doubling a single delta doubles the change of that projection output.
    const std::string name = "layers.0.attn.wq";
    DeltaMap<float> d1, d2;
    Eigen::MatrixXf delta = Eigen::MatrixXf::Zero(cfg.d_model, cfg.d_model);
    delta(0, 0) = 0.05f;
    d1[name] = delta;
    d2[name] = 2.0f * delta;
    const Params<float> e1 = effective_params<float>(p, &d1);
    const Params<float> e2 = effective_params<float>(p, &d2);
    const Eigen::MatrixXf w0 = p.layers[0].wq;
    CHECK(((e1.layers[0].wq - w0) * 2.0f - (e2.layers[0].wq - w0)).norm() == 0.0f);
}

TEST_CASE("decode_step agrees with the full forward pass") {
    const Vocab v = Vocab::with_locations(6);
    const ModelConfig cfg = tiny_config(v.size());
    const Params<float> p = init_params(cfg);
    Rng rng(47);
    const auto ids = random_sequence(v, rng, 4);

    const Mat<float> full = forward_logits<float>(p, cfg.n_heads, ids);
    KvCache<float> cache = KvCache<float>::make(cfg);
    for (std::size_t t = 0; t < ids.size(); ++t) {
        const auto row = decode_step<float>(p, cfg, cache, ids[t]);
        const float err = (row - full.row(static_cast<Eigen::Index>(t))).cwiseAbs().maxCoeff();
        CHECK(err < 2e-4f);
    }
}

TEST_CASE("pretraining reduces loss and is bit-deterministic") {
    const Vocab base = Vocab::base();
    ModelConfig cfg = tiny_config(base.size());
    cfg.seed = 7;
    const auto corpus = make_pretrain_corpus(120, 5);
    TrainOptions opt;
    opt.lr = 1e-3f;
    opt.batch_size = 4;
    opt.epochs = 2;
    opt.seed = 7;

    Checkpoint init;
    init.cfg = cfg;
    init.params = init_params(cfg);
    init.vocab_hash = base.hash_hex();
    const double loss_before = dataset_loss(init, corpus);

    TrainStats stats;
    const Checkpoint trained = pretrain_base(cfg, corpus, base, opt, &stats);
    const double loss_after = dataset_loss(trained, corpus);
    CHECK(loss_after < loss_before);
    CHECK(stats.steps > 0);

    const Checkpoint again = pretrain_base(cfg, corpus, base, opt);
    CHECK(checkpoint_hash(trained) == checkpoint_hash(again));
}

TEST_CASE("instruct variant: zero steps is the identity, tuning moves parameters") {
    const Vocab base = Vocab::base();
    ModelConfig cfg = tiny_config(base.size());
    const auto corpus = make_pretrain_corpus(60, 5);
    TrainOptions opt;
    opt.epochs = 1;
    opt.seed = 3;
    const Checkpoint b = pretrain_base(cfg, corpus, base, opt);

    const auto aux = make_instruct_corpus(60, 11);
    const Checkpoint same = make_instruct_variant(b, aux, 0, 1e-4f, 1);
    CHECK(checkpoint_hash(same) == checkpoint_hash(b));

    TrainStats stats;
    const Checkpoint instr = make_instruct_variant(b, aux, 20, 3e-4f, 1, &stats);
    CHECK(stats.steps == 20);
    double delta_norm = 0.0;
    delta_norm += (instr.params.embedding - b.params.embedding).norm();
    delta_norm += (instr.params.head - b.params.head).norm();
    CHECK(delta_norm > 0.0);
    CHECK(dataset_loss(instr, aux) < dataset_loss(b, aux));
}

TEST_CASE("finetune freezes the backbone and trains embedding, head, adapters") {
    const Vocab base = Vocab::base();
    ModelConfig cfg = tiny_config(base.size());
    const auto corpus = make_pretrain_corpus(60, 5);
    TrainOptions opt;
    opt.epochs = 1;
    opt.seed = 3;
    const Checkpoint b = pretrain_base(cfg, corpus, base, opt);

    const Vocab ext = Vocab::with_locations(6);
    const Checkpoint theta0 = extend_vocab(b, ext);
    CHECK(theta0.cfg.vocab_size == ext.size());

    Rng rng(9);
    std::vector<std::vector<TokenId>> dataset;
    for (int i = 0; i < 40; ++i) dataset.push_back(random_sequence(ext, rng, 4));

    TrainOptions fopt;
    fopt.lr = 5e-3f;
    fopt.epochs = 2;
    fopt.seed = 21;
    TrainStats stats;
    const Checkpoint tuned = finetune_task(theta0, dataset, fopt, &stats);

    // loss decreases on the training set
    CHECK(dataset_loss(tuned, dataset) < dataset_loss(theta0, dataset));

    // frozen backbone tensors are bit-identical to initialization
    tuned.params.for_each_tensor([&](const std::string& name, const Eigen::MatrixXf& m) {
        if (name == "embedding" || name == "head") return;
        CHECK(m == theta0.params.tensor(name));
    });
    CHECK(tuned.params.embedding != theta0.params.embedding);
    CHECK(!tuned.adapters.empty());
    CHECK(!tuned.deltas.empty());

    // determinism
    const Checkpoint again = finetune_task(theta0, dataset, fopt);
    CHECK(checkpoint_hash(again) == checkpoint_hash(tuned));

    // lr = 0 leaves the checkpoint equal to initialization (zero deltas)
    TrainOptions zero = fopt;
    zero.lr = 0.0f;
    const Checkpoint still = finetune_task(theta0, dataset, zero);
    CHECK(still.params.embedding == theta0.params.embedding);
    for (const auto& [name, d] : still.deltas) CHECK(d.norm() == 0.0f);

    // over-long sequences are rejected
    std::vector<TokenId> too_long(static_cast<std::size_t>(cfg.max_seq) + 1, Vocab::kBos);
    CHECK_THROWS(finetune_task(theta0, {too_long}, fopt));
}

TEST_CASE("memorization and greedy decoding") {
    const Vocab ext = Vocab::with_locations(6);
    ModelConfig cfg = tiny_config(ext.size());
    cfg.seed = 15;
    const std::vector<trajta::mobility::Record> recs = {{1, 30}, {2, 45}, {3, 90}};
    const auto seq = trajta::tokenizer::serialize(recs, ext);
    const std::vector<std::vector<TokenId>> corpus(30, seq);

    TrainOptions opt;
    opt.lr = 3e-3f;
    opt.epochs = 30;
    opt.seed = 15;
    const Checkpoint memo = pretrain_base(cfg, corpus, ext, opt);
    CHECK(dataset_loss(memo, corpus) < 0.05);

    // temperature 0 reproduces the memorized sequence from its start
    std::vector<StartCondition> starts = {{30, 1}};
    SampleReport rep;
    const auto sampled = sample_trajectories(memo, ext, starts, 3, 0.0, 77, &rep, 1);
    CHECK(rep.requested == 3);
    REQUIRE(rep.parsed_ok == 3);
    for (const auto& t : sampled) {
        REQUIRE(t.records.size() == recs.size());
        for (std::size_t i = 0; i < recs.size(); ++i) {
            CHECK(t.records[i].cell == recs[i].cell);
            CHECK(t.records[i].minute == recs[i].minute);
        }
    }

    // same seed, same samples
    SampleReport rep2;
    const auto sampled2 = sample_trajectories(memo, ext, starts, 3, 0.8, 123, &rep2);
    const auto sampled3 = sample_trajectories(memo, ext, starts, 3, 0.8, 123);
    REQUIRE(sampled2.size() == sampled3.size());
    for (std::size_t i = 0; i < sampled2.size(); ++i)
        CHECK(sampled2[i].records == sampled3[i].records);
    CHECK(rep2.validity_rate >= 0.0);
    CHECK(rep2.validity_rate <= 1.0);
}

TEST_CASE("checkpoint save/load round trip") {
    const Vocab ext = Vocab::with_locations(6);
    ModelConfig cfg = tiny_config(Vocab::base().size());
    const auto corpus = make_pretrain_corpus(40, 2);
    TrainOptions opt;
    opt.epochs = 1;
    opt.seed = 2;
    Checkpoint b = pretrain_base(cfg, corpus, Vocab::base(), opt);
    // give it adapters via a small finetune
    const Checkpoint theta0 = extend_vocab(b, ext);
    Rng rng(1);
    std::vector<std::vector<TokenId>> dataset;
    for (int i = 0; i < 10; ++i) dataset.push_back(random_sequence(ext, rng, 3));
    TrainOptions fopt;
    fopt.epochs = 1;
    fopt.seed = 4;
    const Checkpoint tuned = finetune_task(theta0, dataset, fopt);

    const std::string path =
        (std::filesystem::temp_directory_path() / "trajta_test_ckpt.bin").string();
    save_checkpoint(path, tuned);
    const Checkpoint back = load_checkpoint(path);
    CHECK(checkpoint_hash(back) == checkpoint_hash(tuned));
    CHECK(back.vocab_hash == tuned.vocab_hash);
    CHECK(back.adapters.size() == tuned.adapters.size());
}
