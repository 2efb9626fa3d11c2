#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "trajta/mobility.hpp"
#include "trajta/tokenizer.hpp"
#include "trajta/transformer.hpp"

namespace trajta::model {

// Low-rank adapter factors for one projection: delta = a * b * (alpha/rank),
// a of shape (in x rank) initialized small random, b of shape (rank x out)
// initialized to zero so a fresh adapter changes nothing.
struct AdapterPair {
    Eigen::MatrixXf a;
    Eigen::MatrixXf b;
};

struct Checkpoint {
    ModelConfig cfg;
    Params<float> params;
    std::map<std::string, AdapterPair> adapters;  // present after fine-tuning
    DeltaMap<float> deltas;                       // materialized adapter deltas
    std::string vocab_hash;
    std::uint64_t seed = 0;

    float adapter_scale() const {
        return cfg.adapter_alpha / static_cast<float>(cfg.adapter_rank);
    }
    Params<float> effective() const {
        return effective_params<float>(params, deltas.empty() ? nullptr : &deltas);
    }
};

std::string config_to_json(const ModelConfig& cfg);
ModelConfig config_from_json(const std::string& text);
std::string config_hash(const ModelConfig& cfg);

// Full random initialization (weights N(0, 0.02), norms at identity),
// deterministic in cfg.seed.
Params<float> init_params(const ModelConfig& cfg);

// Neutral synthetic corpora over base tokens only.
std::vector<std::vector<TokenId>> make_pretrain_corpus(std::size_t n, std::uint64_t seed);
// Auxiliary non-trajectory task (digit sequence copy and sort), the
// stand-in for instruction tuning.
std::vector<std::vector<TokenId>> make_instruct_corpus(std::size_t n, std::uint64_t seed);

struct TrainOptions {
    float lr = 5e-4f;
    int batch_size = 4;
    int epochs = 3;
    int max_steps = -1;  // cap on optimizer steps when >= 0
    float weight_decay = 0.0f;
    std::uint64_t seed = 1;

    static TrainOptions from_config(const ModelConfig& cfg) {
        TrainOptions o;
        o.lr = cfg.lr;
        o.batch_size = cfg.batch_size;
        o.epochs = cfg.epochs;
        o.weight_decay = cfg.weight_decay;
        o.seed = cfg.seed;
        return o;
    }
};

struct TrainStats {
    std::vector<double> epoch_loss;
    int steps = 0;
};

// Full-parameter next-token training from random init on a base-token
// corpus; the stand-in for the pretrained reference model.
Checkpoint pretrain_base(const ModelConfig& cfg, const std::vector<std::vector<TokenId>>& corpus,
                         const tokenizer::Vocab& vocab, const TrainOptions& opt,
                         TrainStats* stats = nullptr);

// Short full-parameter tuning of the base checkpoint on the auxiliary task.
Checkpoint make_instruct_variant(const Checkpoint& base,
                                 const std::vector<std::vector<TokenId>>& corpus, int steps,
                                 float lr, std::uint64_t seed, TrainStats* stats = nullptr);

// Grows embedding and head by mean-initialized rows to match the extended
// vocabulary. The input checkpoint must not carry adapters.
Checkpoint extend_vocab(const Checkpoint& base, const tokenizer::Vocab& extended);

// Attaches fresh adapters to the six projections per layer and trains
// embedding, head and adapter factors with AdamW; the backbone stays
// frozen. Sequences longer than cfg.max_seq are an error.
Checkpoint finetune_task(const Checkpoint& theta0,
                         const std::vector<std::vector<TokenId>>& dataset,
                         const TrainOptions& opt, TrainStats* stats = nullptr);

Eigen::VectorXf next_token_logits(const Checkpoint& ckpt, const std::vector<TokenId>& prefix);
Mat<float> full_logits(const Checkpoint& ckpt, const std::vector<TokenId>& ids);
double dataset_loss(const Checkpoint& ckpt, const std::vector<std::vector<TokenId>>& seqs);

// Mean full-batch loss gradient over the dataset, all parameter groups.
Params<float> dataset_loss_grads(const Checkpoint& ckpt,
                                 const std::vector<std::vector<TokenId>>& seqs);
// Gradient of the logit of `token` at the final prefix position.
Params<float> logit_grads(const Checkpoint& ckpt, const std::vector<TokenId>& prefix,
                          TokenId token);

struct StartCondition {
    std::int32_t minute = 0;
    std::int32_t cell = 0;
};

struct SampleReport {
    std::size_t requested = 0;
    std::size_t parsed_ok = 0;
    std::size_t parse_failed = 0;     // malformed token structure
    std::size_t truncated = 0;        // hit the length budget before EOS
    std::size_t nonmonotone_time = 0; // parsed but minutes decrease
    std::size_t too_short = 0;        // parsed but fewer than min_len records
    double validity_rate = 0.0;
};

// Autoregressive sampling with temperature; every output is parsed and
// failures are counted per reason rather than silently dropped.
std::vector<mobility::Trajectory> sample_trajectories(
    const Checkpoint& ckpt, const tokenizer::Vocab& vocab,
    const std::vector<StartCondition>& starts, std::size_t n, double temperature,
    std::uint64_t seed, SampleReport* report = nullptr, std::size_t min_len = 3);

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);
std::string checkpoint_hash(const Checkpoint& ckpt);

}  // namespace trajta::model
