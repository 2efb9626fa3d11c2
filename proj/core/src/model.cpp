#include "trajta/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <nlohmann/json.hpp>

#include "trajta/common.hpp"
#include "trajta/container.hpp"

namespace trajta::model {

std::string config_to_json(const ModelConfig& cfg) {
    nlohmann::json j;
    j["n_layers"] = cfg.n_layers;
    j["d_model"] = cfg.d_model;
    j["n_heads"] = cfg.n_heads;
    j["d_ff"] = cfg.d_ff;
    j["max_seq"] = cfg.max_seq;
    j["vocab_size"] = cfg.vocab_size;
    j["adapter_rank"] = cfg.adapter_rank;
    j["adapter_alpha"] = cfg.adapter_alpha;
    j["seed"] = cfg.seed;
    j["lr"] = cfg.lr;
    j["batch_size"] = cfg.batch_size;
    j["epochs"] = cfg.epochs;
    j["weight_decay"] = cfg.weight_decay;
    return j.dump();
}

ModelConfig config_from_json(const std::string& text) {
    const auto j = nlohmann::json::parse(text);
    ModelConfig cfg;
    cfg.n_layers = j.value("n_layers", cfg.n_layers);
    cfg.d_model = j.value("d_model", cfg.d_model);
    cfg.n_heads = j.value("n_heads", cfg.n_heads);
    cfg.d_ff = j.value("d_ff", cfg.d_ff);
    cfg.max_seq = j.value("max_seq", cfg.max_seq);
    cfg.vocab_size = j.value("vocab_size", cfg.vocab_size);
    cfg.adapter_rank = j.value("adapter_rank", cfg.adapter_rank);
    cfg.adapter_alpha = j.value("adapter_alpha", cfg.adapter_alpha);
    cfg.seed = j.value("seed", cfg.seed);
    cfg.lr = j.value("lr", cfg.lr);
    cfg.batch_size = j.value("batch_size", cfg.batch_size);
    cfg.epochs = j.value("epochs", cfg.epochs);
    cfg.weight_decay = j.value("weight_decay", cfg.weight_decay);
    return cfg;
}

std::string config_hash(const ModelConfig& cfg) { return content_hash_hex(config_to_json(cfg)); }

namespace {

void fill_normal(Eigen::MatrixXf& m, Rng& rng, float stddev) {
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c)
            m(r, c) = static_cast<float>(rng.normal() * stddev);
}

}  // namespace

Params<float> init_params(const ModelConfig& cfg) {
    cfg.validate();
    Params<float> p = Params<float>::zeros(cfg);
    Rng rng(mix_seed(cfg.seed, "init"));
    constexpr float kStd = 0.02f;
    p.for_each_tensor([&](const std::string& name, Eigen::MatrixXf& m) {
        if (name.find("ln") != std::string::npos) {
            // gamma at one, beta at zero
            if (name.ends_with(".g")) m.setOnes();
            else m.setZero();
        } else {
            fill_normal(m, rng, kStd);
        }
    });
    return p;
}

namespace {

void push_decimal(std::vector<TokenId>& seq, int value) {
    const std::string digits = std::to_string(value);
    for (char d : digits)
        seq.push_back(tokenizer::Vocab::kDigit0 + static_cast<TokenId>(d - '0'));
}

}  // namespace

std::vector<std::vector<TokenId>> make_pretrain_corpus(std::size_t n, std::uint64_t seed) {
    using V = tokenizer::Vocab;
    std::vector<std::vector<TokenId>> out;
    out.reserve(n);
    Rng rng(mix_seed(seed, "pretrain-corpus"));
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<TokenId> seq{V::kBos};
        if (rng.uniform() < 0.6) {
            // Counting runs: slowly increasing numbers in the '#'-separated
            // template style, so the base model learns decimal increments
            // and carries the way a text-pretrained model would.
            int value = static_cast<int>(rng.uniform_int(1381));
            const int blocks = 4 + static_cast<int>(rng.uniform_int(9));
            for (int b = 0; b < blocks && value <= 1439; ++b) {
                seq.push_back(V::kArrivalTimeIs);
                push_decimal(seq, value);
                seq.push_back(V::kHash);
                static const int deltas[] = {1, 2, 3, 4, 5, 6, 7, 8, 10, 15, 20, 30, 45, 60};
                value += deltas[rng.uniform_int(std::size(deltas))];
            }
        } else {
            const int blocks = 3 + static_cast<int>(rng.uniform_int(10));
            for (int b = 0; b < blocks; ++b) {
                seq.push_back(rng.uniform() < 0.5 ? V::kArrivalTimeIs : V::kLocationIs);
                const int digits = 1 + static_cast<int>(rng.uniform_int(4));
                for (int k = 0; k < digits; ++k)
                    seq.push_back(V::kDigit0 + static_cast<TokenId>(rng.uniform_int(10)));
                seq.push_back(rng.uniform() < 0.5 ? V::kComma : V::kHash);
            }
        }
        seq.push_back(V::kEos);
        out.push_back(std::move(seq));
    }
    return out;
}

std::vector<std::vector<TokenId>> make_instruct_corpus(std::size_t n, std::uint64_t seed) {
    using V = tokenizer::Vocab;
    std::vector<std::vector<TokenId>> out;
    out.reserve(n);
    Rng rng(mix_seed(seed, "instruct-corpus"));
    for (std::size_t i = 0; i < n; ++i) {
        const int len = 3 + static_cast<int>(rng.uniform_int(4));
        std::vector<int> digits(static_cast<std::size_t>(len));
        for (auto& d : digits) d = static_cast<int>(rng.uniform_int(10));
        std::vector<TokenId> seq{V::kBos};
        for (int d : digits) seq.push_back(V::kDigit0 + d);
        if (rng.uniform() < 0.5) {
            seq.push_back(V::kComma);  // copy task
            for (int d : digits) seq.push_back(V::kDigit0 + d);
        } else {
            seq.push_back(V::kHash);  // sort task
            std::sort(digits.begin(), digits.end());
            for (int d : digits) seq.push_back(V::kDigit0 + d);
        }
        seq.push_back(V::kEos);
        out.push_back(std::move(seq));
    }
    return out;
}

namespace {

// AdamW over a flat list of named matrices.
class AdamW {
public:
    void add(const std::string& name, Eigen::MatrixXf* w) {
        Slot s;
        s.name = name;
        s.w = w;
        s.m = Eigen::MatrixXf::Zero(w->rows(), w->cols());
        s.v = Eigen::MatrixXf::Zero(w->rows(), w->cols());
        slots_.push_back(std::move(s));
    }

    void step(const std::map<std::string, const Eigen::MatrixXf*>& grads, float lr,
              float weight_decay) {
        ++t_;
        const float bc1 = 1.0f - std::pow(kBeta1, static_cast<float>(t_));
        const float bc2 = 1.0f - std::pow(kBeta2, static_cast<float>(t_));
        for (auto& s : slots_) {
            const auto it = grads.find(s.name);
            if (it == grads.end()) throw std::logic_error("AdamW: missing grad for " + s.name);
            const Eigen::MatrixXf& g = *it->second;
            s.m = kBeta1 * s.m + (1.0f - kBeta1) * g;
            s.v = kBeta2 * s.v + (1.0f - kBeta2) * g.cwiseProduct(g);
            const Eigen::MatrixXf mhat = s.m / bc1;
            const Eigen::MatrixXf vhat = s.v / bc2;
            if (weight_decay > 0.0f) *s.w -= lr * weight_decay * (*s.w);
            *s.w -= lr * (mhat.array() / (vhat.array().sqrt() + kEps)).matrix();
        }
    }

private:
    static constexpr float kBeta1 = 0.9f;
    static constexpr float kBeta2 = 0.999f;
    static constexpr float kEps = 1e-8f;
    struct Slot {
        std::string name;
        Eigen::MatrixXf* w;
        Eigen::MatrixXf m, v;
    };
    std::vector<Slot> slots_;
    long t_ = 0;
};

void validate_dataset(const std::vector<std::vector<TokenId>>& seqs, const ModelConfig& cfg) {
    if (seqs.empty()) throw std::invalid_argument("training dataset is empty");
    for (const auto& s : seqs) {
        if (static_cast<int>(s.size()) > cfg.max_seq)
            throw std::invalid_argument("sequence of length " + std::to_string(s.size()) +
                                        " exceeds max_seq " + std::to_string(cfg.max_seq));
        if (s.size() < 2) throw std::invalid_argument("sequence shorter than 2 tokens");
    }
}

void materialize_deltas(const Checkpoint& ckpt, DeltaMap<float>& out) {
    const float s = ckpt.adapter_scale();
    for (const auto& [name, ab] : ckpt.adapters) out[name] = ab.a * ab.b * s;
}

// One fine-tuning phase shared by full-parameter and adapter training.
TrainStats run_training(Checkpoint& ckpt, const std::vector<std::vector<TokenId>>& seqs,
                        const TrainOptions& opt, bool full_params) {
    validate_dataset(seqs, ckpt.cfg);
    const ModelConfig& cfg = ckpt.cfg;
    TrainStats stats;

    AdamW optimizer;
    if (full_params) {
        ckpt.params.for_each_tensor(
            [&](const std::string& name, Eigen::MatrixXf& m) { optimizer.add(name, &m); });
    } else {
        optimizer.add("embedding", &ckpt.params.embedding);
        optimizer.add("head", &ckpt.params.head);
        for (auto& [name, ab] : ckpt.adapters) {
            optimizer.add(name + ".lora_a", &ab.a);
            optimizer.add(name + ".lora_b", &ab.b);
        }
    }

    std::vector<std::size_t> order(seqs.size());
    std::iota(order.begin(), order.end(), 0);

    Params<float> grads = Params<float>::zeros(cfg);
    std::map<std::string, Eigen::MatrixXf> factor_grads;
    const float scale = ckpt.adapter_scale();

    int steps_done = 0;
    const int max_steps = opt.max_steps;
    for (int epoch = 0; epoch < opt.epochs; ++epoch) {
        Rng shuffle_rng(mix_seed(opt.seed, static_cast<std::uint64_t>(epoch) + 1000));
        for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[shuffle_rng.uniform_int(i)]);

        double epoch_loss = 0.0;
        std::size_t epoch_count = 0;
        for (std::size_t at = 0; at < order.size(); at += static_cast<std::size_t>(opt.batch_size)) {
            if (max_steps >= 0 && steps_done >= max_steps) break;
            const std::size_t end = std::min(order.size(), at + static_cast<std::size_t>(opt.batch_size));
            const float inv_batch = 1.0f / static_cast<float>(end - at);

            DeltaMap<float> deltas;
            if (!full_params) materialize_deltas(ckpt, deltas);
            const Params<float> eff =
                effective_params<float>(ckpt.params, deltas.empty() ? nullptr : &deltas);

            grads.for_each_tensor([](const std::string&, Eigen::MatrixXf& m) { m.setZero(); });
            double batch_loss = 0.0;
            for (std::size_t bi = at; bi < end; ++bi) {
                batch_loss += run_network<float>(eff, cfg.n_heads, seqs[order[bi]],
                                                 BackwardMode::kLoss, 0, &grads, inv_batch,
                                                 nullptr) *
                              inv_batch;
            }
            if (!std::isfinite(batch_loss))
                throw std::runtime_error("training diverged: non-finite loss at step " +
                                         std::to_string(steps_done) + " (epoch " +
                                         std::to_string(epoch) + ")");
            epoch_loss += batch_loss * static_cast<double>(end - at);
            epoch_count += end - at;

            std::map<std::string, const Eigen::MatrixXf*> grad_refs;
            if (full_params) {
                grads.for_each_tensor([&](const std::string& name, Eigen::MatrixXf& m) {
                    grad_refs[name] = &m;
                });
            } else {
                grad_refs["embedding"] = &grads.embedding;
                grad_refs["head"] = &grads.head;
                for (auto& [name, ab] : ckpt.adapters) {
                    const Eigen::MatrixXf& g = grads.tensor(name);
                    factor_grads[name + ".lora_a"] = scale * (g * ab.b.transpose());
                    factor_grads[name + ".lora_b"] = scale * (ab.a.transpose() * g);
                    grad_refs[name + ".lora_a"] = &factor_grads[name + ".lora_a"];
                    grad_refs[name + ".lora_b"] = &factor_grads[name + ".lora_b"];
                }
            }
            optimizer.step(grad_refs, opt.lr, opt.weight_decay);
            ++steps_done;
        }
        if (epoch_count > 0) stats.epoch_loss.push_back(epoch_loss / static_cast<double>(epoch_count));
        if (max_steps >= 0 && steps_done >= max_steps) break;
    }
    stats.steps = steps_done;
    if (!full_params) {
        ckpt.deltas.clear();
        materialize_deltas(ckpt, ckpt.deltas);
    }
    return stats;
}

}  // namespace

Checkpoint pretrain_base(const ModelConfig& cfg, const std::vector<std::vector<TokenId>>& corpus,
                         const tokenizer::Vocab& vocab, const TrainOptions& opt,
                         TrainStats* stats) {
    if (cfg.vocab_size != vocab.size())
        throw std::invalid_argument("pretrain_base: cfg.vocab_size does not match vocab");
    Checkpoint ckpt;
    ckpt.cfg = cfg;
    ckpt.params = init_params(cfg);
    ckpt.vocab_hash = vocab.hash_hex();
    ckpt.seed = cfg.seed;
    const TrainStats s = run_training(ckpt, corpus, opt, /*full_params=*/true);
    if (stats) *stats = s;
    return ckpt;
}

Checkpoint make_instruct_variant(const Checkpoint& base,
                                 const std::vector<std::vector<TokenId>>& corpus, int steps,
                                 float lr, std::uint64_t seed, TrainStats* stats) {
    if (!base.adapters.empty())
        throw std::invalid_argument("make_instruct_variant: base must not carry adapters");
    Checkpoint ckpt = base;
    if (steps <= 0) {
        if (stats) *stats = {};
        return ckpt;
    }
    TrainOptions opt;
    opt.lr = lr;
    opt.batch_size = base.cfg.batch_size;
    opt.epochs = 1 << 20;  // bounded by max_steps
    opt.max_steps = steps;
    opt.seed = mix_seed(seed, "instruct");
    const TrainStats s = run_training(ckpt, corpus, opt, /*full_params=*/true);
    if (stats) *stats = s;
    return ckpt;
}

Checkpoint extend_vocab(const Checkpoint& base, const tokenizer::Vocab& extended) {
    if (!base.adapters.empty())
        throw std::invalid_argument("extend_vocab: checkpoint already fine-tuned");
    if (extended.size() < base.cfg.vocab_size)
        throw std::invalid_argument("extend_vocab: extended vocab smaller than checkpoint's");
    Checkpoint out = base;
    const std::int64_t n_new = extended.size() - base.cfg.vocab_size;
    tokenizer::mean_init_rows(out.params.embedding, out.params.head, n_new);
    out.cfg.vocab_size = extended.size();
    out.vocab_hash = extended.hash_hex();
    return out;
}

Checkpoint finetune_task(const Checkpoint& theta0,
                         const std::vector<std::vector<TokenId>>& dataset,
                         const TrainOptions& opt, TrainStats* stats) {
    if (!theta0.adapters.empty())
        throw std::invalid_argument("finetune_task: initialization already carries adapters");
    Checkpoint ckpt = theta0;
    // Fresh adapters: b zero so the initial delta is exactly zero; the "a"
    // side gets a fixed small-noise init derived from the projection name so
    // it does not depend on map iteration order.
    for (const auto& name : adapted_projection_names(ckpt.cfg.n_layers)) {
        const auto [in, out] = projection_shape(name, ckpt.cfg);
        AdapterPair ab;
        ab.a.resize(in, ckpt.cfg.adapter_rank);
        Rng rng(mix_seed(mix_seed(opt.seed, "adapter-init"), name));
        fill_normal(ab.a, rng, 0.01f);
        ab.b = Eigen::MatrixXf::Zero(ckpt.cfg.adapter_rank, out);
        ckpt.adapters.emplace(name, std::move(ab));
    }
    const TrainStats s = run_training(ckpt, dataset, opt, /*full_params=*/false);
    if (stats) *stats = s;
    return ckpt;
}

Eigen::VectorXf next_token_logits(const Checkpoint& ckpt, const std::vector<TokenId>& prefix) {
    const Mat<float> logits = full_logits(ckpt, prefix);
    return logits.row(logits.rows() - 1).transpose();
}

Mat<float> full_logits(const Checkpoint& ckpt, const std::vector<TokenId>& ids) {
    const Params<float> eff = ckpt.effective();
    return forward_logits<float>(eff, ckpt.cfg.n_heads, ids);
}

double dataset_loss(const Checkpoint& ckpt, const std::vector<std::vector<TokenId>>& seqs) {
    if (seqs.empty()) throw std::invalid_argument("dataset_loss: empty dataset");
    const Params<float> eff = ckpt.effective();
    double acc = 0.0;
    for (const auto& s : seqs) acc += sequence_loss<float>(eff, ckpt.cfg.n_heads, s);
    return acc / static_cast<double>(seqs.size());
}

Params<float> dataset_loss_grads(const Checkpoint& ckpt,
                                 const std::vector<std::vector<TokenId>>& seqs) {
    if (seqs.empty()) throw std::invalid_argument("dataset_loss_grads: empty dataset");
    const Params<float> eff = ckpt.effective();
    Params<float> grads = Params<float>::zeros(ckpt.cfg);
    const float inv = 1.0f / static_cast<float>(seqs.size());
    for (const auto& s : seqs)
        run_network<float>(eff, ckpt.cfg.n_heads, s, BackwardMode::kLoss, 0, &grads, inv,
                           nullptr);
    return grads;
}

Params<float> logit_grads(const Checkpoint& ckpt, const std::vector<TokenId>& prefix,
                          TokenId token) {
    const Params<float> eff = ckpt.effective();
    Params<float> grads = Params<float>::zeros(ckpt.cfg);
    run_network<float>(eff, ckpt.cfg.n_heads, prefix, BackwardMode::kLogit, token, &grads, 1.0f,
                       nullptr);
    return grads;
}

std::vector<mobility::Trajectory> sample_trajectories(
    const Checkpoint& ckpt, const tokenizer::Vocab& vocab,
    const std::vector<StartCondition>& starts, std::size_t n, double temperature,
    std::uint64_t seed, SampleReport* report, std::size_t min_len) {
    if (starts.empty()) throw std::invalid_argument("sample_trajectories: no start conditions");
    if (temperature < 0.0) throw std::invalid_argument("sample_trajectories: temperature < 0");
    if (vocab.size() != ckpt.cfg.vocab_size)
        throw std::invalid_argument("sample_trajectories: vocab does not match checkpoint");
    const Params<float> eff = ckpt.effective();
    const Eigen::Index vsize = ckpt.cfg.vocab_size;

    SampleReport rep;
    rep.requested = n;
    std::vector<mobility::Trajectory> out;

    for (std::size_t i = 0; i < n; ++i) {
        Rng rng(mix_seed(mix_seed(seed, "sample"), i));
        const StartCondition start = starts[rng.uniform_int(starts.size())];
        std::vector<TokenId> ids =
            tokenizer::serialize({{start.cell, start.minute}}, vocab);
        ids.pop_back();  // drop EOS; the model continues from the prompt

        KvCache<float> cache = KvCache<float>::make(ckpt.cfg);
        Eigen::Matrix<float, 1, Eigen::Dynamic> logits;
        for (std::size_t t = 0; t + 1 < ids.size(); ++t)
            decode_step<float>(eff, ckpt.cfg, cache, ids[t]);
        logits = decode_step<float>(eff, ckpt.cfg, cache, ids.back());

        bool got_eos = false;
        while (static_cast<int>(ids.size()) < ckpt.cfg.max_seq) {
            TokenId next;
            if (temperature == 0.0) {
                Eigen::Index arg;
                logits.maxCoeff(&arg);
                next = static_cast<TokenId>(arg);
            } else {
                const double mx = static_cast<double>(logits.maxCoeff());
                double total = 0.0;
                std::vector<double> w(static_cast<std::size_t>(vsize));
                for (Eigen::Index j = 0; j < vsize; ++j) {
                    w[static_cast<std::size_t>(j)] =
                        std::exp((static_cast<double>(logits(j)) - mx) / temperature);
                    total += w[static_cast<std::size_t>(j)];
                }
                const double u = rng.uniform() * total;
                double acc = 0.0;
                next = static_cast<TokenId>(vsize - 1);
                for (Eigen::Index j = 0; j < vsize; ++j) {
                    acc += w[static_cast<std::size_t>(j)];
                    if (u < acc) {
                        next = static_cast<TokenId>(j);
                        break;
                    }
                }
            }
            ids.push_back(next);
            if (next == tokenizer::Vocab::kEos) {
                got_eos = true;
                break;
            }
            if (static_cast<int>(ids.size()) >= ckpt.cfg.max_seq) break;
            logits = decode_step<float>(eff, ckpt.cfg, cache, next);
        }

        const tokenizer::ParseResult parsed = tokenizer::parse(ids, vocab);
        if (!parsed.complete) {
            if (got_eos) ++rep.parse_failed;
            else ++rep.truncated;
            continue;
        }
        bool monotone = true;
        for (std::size_t r = 0; r + 1 < parsed.records.size(); ++r)
            if (parsed.records[r + 1].minute < parsed.records[r].minute) monotone = false;
        if (!monotone) {
            ++rep.nonmonotone_time;
            continue;
        }
        if (parsed.records.size() < min_len) {
            ++rep.too_short;
            continue;
        }
        mobility::Trajectory t;
        t.id = "gen_" + std::to_string(i);
        t.records = parsed.records;
        out.push_back(std::move(t));
        ++rep.parsed_ok;
    }
    rep.validity_rate =
        rep.requested ? static_cast<double>(rep.parsed_ok) / static_cast<double>(rep.requested)
                      : 0.0;
    if (report) *report = rep;
    return out;
}

namespace {

container::TensorFile to_tensor_file(const Checkpoint& ckpt) {
    container::TensorFile f;
    nlohmann::json meta;
    meta["kind"] = "checkpoint";
    meta["config"] = nlohmann::json::parse(config_to_json(ckpt.cfg));
    meta["vocab_hash"] = ckpt.vocab_hash;
    meta["seed"] = ckpt.seed;
    auto& adapted = meta["adapted"] = nlohmann::json::array();
    for (const auto& [name, ab] : ckpt.adapters) adapted.push_back(name);
    f.meta_json = meta.dump();

    ckpt.params.for_each_tensor([&](const std::string& name, const Eigen::MatrixXf& m) {
        f.tensors.push_back({name, m});
    });
    for (const auto& [name, ab] : ckpt.adapters) {
        f.tensors.push_back({name + ".lora_a", ab.a});
        f.tensors.push_back({name + ".lora_b", ab.b});
    }
    for (const auto& [name, d] : ckpt.deltas) f.tensors.push_back({name + ".delta", d});
    return f;
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    container::save(path, to_tensor_file(ckpt));
}

Checkpoint load_checkpoint(const std::string& path) {
    const container::TensorFile f = container::load(path);
    const auto meta = nlohmann::json::parse(f.meta_json);
    if (meta.value("kind", "") != "checkpoint")
        throw std::runtime_error("not a checkpoint file: " + path);
    Checkpoint ckpt;
    ckpt.cfg = config_from_json(meta.at("config").dump());
    ckpt.vocab_hash = meta.at("vocab_hash").get<std::string>();
    ckpt.seed = meta.at("seed").get<std::uint64_t>();
    ckpt.params = Params<float>::zeros(ckpt.cfg);
    ckpt.params.for_each_tensor([&](const std::string& name, Eigen::MatrixXf& m) {
        const Eigen::MatrixXf& v = f.at(name);
        if (v.rows() != m.rows() || v.cols() != m.cols())
            throw std::runtime_error("checkpoint tensor shape mismatch: " + name);
        m = v;
    });
    for (const auto& e : meta.at("adapted")) {
        const std::string name = e.get<std::string>();
        AdapterPair ab;
        ab.a = f.at(name + ".lora_a");
        ab.b = f.at(name + ".lora_b");
        ckpt.adapters.emplace(name, std::move(ab));
        ckpt.deltas[name] = f.at(name + ".delta");
    }
    return ckpt;
}

std::string checkpoint_hash(const Checkpoint& ckpt) {
    return content_hash_hex(container::to_bytes(to_tensor_file(ckpt)));
}

}  // namespace trajta::model
