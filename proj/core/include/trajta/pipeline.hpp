#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "trajta/metrics.hpp"
#include "trajta/model.hpp"
#include "trajta/subspace.hpp"
#include "trajta/synthcity.hpp"
#include "trajta/taskvec.hpp"
#include "trajta/tokenizer.hpp"

namespace trajta::pipeline {

std::vector<std::vector<model::TokenId>> serialize_all(
    const std::vector<mobility::Trajectory>& trajs, const tokenizer::Vocab& vocab);

std::vector<metrics::CellRecord> to_cell_records(const mobility::Trajectory& t);
std::vector<std::vector<metrics::CellRecord>> to_cell_records(
    const std::vector<mobility::Trajectory>& ts);

metrics::SpatialDist spatial_dist(const std::vector<mobility::Trajectory>& trajs,
                                  std::int64_t n_cells);

// Joint empirical (minute, cell) pairs of trip starts.
std::vector<model::StartCondition> start_conditions(
    const std::vector<mobility::Trajectory>& bus_trajs);

struct TransferConfig {
    synth::CityParams city;
    model::ModelConfig model;          // vocab_size derived from the grid
    taskvec::MuCoefficients mu;
    std::size_t n_traj = 2000;         // per dataset
    std::size_t n_generate = 2000;
    double temperature = 1.0;
    std::size_t pretrain_sequences = 4000;
    int pretrain_epochs = 3;
    float pretrain_lr = 1e-3f;
    std::size_t n_held_out = 40;  // sequences reserved for distribution diagnostics
};

// Twin synthetic cities and their discretized, serialized datasets. The
// source and target cities share the deviation-family prior but differ in
// routes, hotspots and drawn parameters.
struct ExperimentData {
    synth::CityModel src_city, tgt_city;
    tokenizer::Vocab vocab;
    std::int64_t n_cells = 0;
    double cell_size = 1000.0;

    std::vector<mobility::Trajectory> src_bus, src_mob, tgt_bus;
    std::vector<mobility::Trajectory> tgt_mob_test;  // held-out ground truth
    std::vector<std::vector<model::TokenId>> src_bus_seqs, src_mob_seqs, tgt_bus_seqs;
    std::vector<std::vector<model::TokenId>> held_out_seqs;  // never trained on
    std::vector<model::StartCondition> starts;       // from target bus data
};

ExperimentData make_experiment_data(const TransferConfig& cfg, std::uint64_t seed);

struct TrainedVectors {
    model::Checkpoint theta0_ext;  // extended initialization the vectors refer to
    taskvec::TaskVector src_mob, src_bus, tgt_bus;
};

// Pretrains the base model on a neutral corpus, extends the vocabulary with
// mean-initialized rows, fine-tunes the three tasks and extracts their
// vectors. When `init_override` is nonnull it is used as the (unextended)
// initialization instead of pretraining, which the stability analysis uses
// to share one base across variants.
TrainedVectors train_task_vectors(const ExperimentData& data, const TransferConfig& cfg,
                                  std::uint64_t seed,
                                  const model::Checkpoint* init_override = nullptr);

struct EvalResult {
    metrics::GenerationReport report;
    model::SampleReport samples;
};

EvalResult evaluate_checkpoint(const model::Checkpoint& ckpt, const ExperimentData& data,
                               const TransferConfig& cfg, std::uint64_t sample_seed);

struct StabilityConfig {
    int m_max = 64;
    int instruct_steps = 150;
    float instruct_lr = 2e-4f;
    std::size_t instruct_sequences = 600;
    double eta = 0.01;
    std::size_t held_out = 40;
    std::size_t subspace_sample_per_task = 200;
};

struct StabilityReport {
    int subspace_m = 0;
    double qtq_max_abs_err = 0.0;     // ||Q^T Q - I||_max
    double delta0_ratio = 0.0;        // ||P d0|| / ||d0||
    double delta0_norm = 0.0;
    double srcmob_ratio_base = 0.0;   // ||P V_B(src-mob)|| / ||V_B(src-mob)||
    subspace::DiffReport diff_tgt_bus, diff_src_mob, diff_src_bus;
    subspace::ComposedStabilityReport composed;
    double tv_composed_pair = 0.0;    // composed-B vs composed-I
    double tv_composed_b_vs_base = 0.0;
    double tv_composed_i_vs_base = 0.0;

    std::string to_json() const;
    std::string summary_table() const;
};

StabilityReport run_stability_analysis(const ExperimentData& data, const TransferConfig& cfg,
                                       const StabilityConfig& scfg, std::uint64_t seed);

}  // namespace trajta::pipeline
