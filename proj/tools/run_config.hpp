#pragma once

#include <cstdlib>
#include <map>
#include <string>

#include <nlohmann/json.hpp>

#include "trajta/common.hpp"
#include "trajta/pipeline.hpp"

namespace trajta::cli {

// Single structured config file; paths may be overridden through
// TRAJTA_DATA_DIR / TRAJTA_CHECKPOINTS_DIR / TRAJTA_REPORTS_DIR.
struct RunConfig {
    nlohmann::json raw;
    std::string config_hash;

    std::string data_dir;
    std::string checkpoints_dir;
    std::string reports_dir;

    double cell_size = 1000.0;
    model::ModelConfig model;
    taskvec::MuCoefficients mu;
    std::uint64_t pipeline_seed = 1;
    std::uint64_t sampling_seed = 7;

    synth::CityParams city;
    std::uint64_t source_city_seed = 11;
    std::uint64_t target_city_seed = 22;
    std::size_t n_traj = 2000;

    std::size_t pretrain_sequences = 1500;
    int pretrain_epochs = 2;
    float pretrain_lr = 1e-3f;

    int instruct_steps = 150;
    float instruct_lr = 2e-4f;
    std::size_t instruct_sequences = 600;

    std::size_t generate_n = 2000;
    double temperature = 1.0;

    int eval_bins = 50;
    double corridor_radius = 100.0;

    pipeline::StabilityConfig stability;

    std::string sweep_subspace = "l";
    std::vector<double> sweep_values = {0.0, 0.25, 0.5, 0.75, 1.0};

    pipeline::TransferConfig transfer() const {
        pipeline::TransferConfig t;
        t.city = city;
        t.model = model;
        t.mu = mu;
        t.n_traj = n_traj;
        t.n_generate = generate_n;
        t.temperature = temperature;
        t.pretrain_sequences = pretrain_sequences;
        t.pretrain_epochs = pretrain_epochs;
        t.pretrain_lr = pretrain_lr;
        return t;
    }
};

RunConfig load_run_config(const std::string& path);

// Writes <output>.manifest.json next to the outputs: config hash, input
// hashes, tool version and seeds, so a rerun is fully reproducible.
void write_manifest(const std::string& out_path, const std::string& command,
                    const RunConfig& cfg, const std::map<std::string, std::string>& inputs,
                    const std::vector<std::string>& outputs);

constexpr const char* kToolVersion = "trajta 0.1.0";

}  // namespace trajta::cli
