#include "run_config.hpp"

#include <stdexcept>

namespace trajta::cli {

namespace {

std::string env_or(const char* name, const std::string& fallback) {
    const char* v = std::getenv(name);
    return v && *v ? std::string(v) : fallback;
}

}  // namespace

RunConfig load_run_config(const std::string& path) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_file(path));
    } catch (const std::exception& e) {
        throw std::runtime_error("malformed config " + path + ": " + e.what());
    }
    RunConfig c;
    c.raw = j;
    c.config_hash = content_hash_hex(j.dump());

    const auto paths = j.value("paths", nlohmann::json::object());
    c.data_dir = env_or("TRAJTA_DATA_DIR", paths.value("data", "runs/data"));
    c.checkpoints_dir =
        env_or("TRAJTA_CHECKPOINTS_DIR", paths.value("checkpoints", "runs/checkpoints"));
    c.reports_dir = env_or("TRAJTA_REPORTS_DIR", paths.value("reports", "runs/reports"));

    const auto grid = j.value("grid", nlohmann::json::object());
    c.cell_size = grid.value("cell_size", 1000.0);

    if (j.contains("model")) c.model = model::config_from_json(j.at("model").dump());

    const auto mu = j.value("mu", nlohmann::json::object());
    c.mu.e = mu.value("e", 0.01);
    c.mu.l = mu.value("l", 0.5);
    c.mu.h = mu.value("h", 0.02);
    c.mu.validate();

    const auto seeds = j.value("seeds", nlohmann::json::object());
    c.pipeline_seed = seeds.value("pipeline", 1ULL);
    c.sampling_seed = seeds.value("sampling", 7ULL);

    const auto synth = j.value("synth", nlohmann::json::object());
    c.city.extent = synth.value("extent", c.city.extent);
    c.city.n_routes = synth.value("n_routes", c.city.n_routes);
    c.city.n_hotspots = synth.value("n_hotspots", c.city.n_hotspots);
    c.city.departures_per_direction =
        synth.value("departures_per_direction", c.city.departures_per_direction);
    c.city.service_start = synth.value("service_start", c.city.service_start);
    c.city.headway = synth.value("headway", c.city.headway);
    c.city.p_dev = synth.value("p_dev", c.city.p_dev);
    c.city.k_dev = synth.value("k_dev", c.city.k_dev);
    c.city.dwell_enabled = synth.value("dwell_enabled", c.city.dwell_enabled);
    c.city.cell_size = c.cell_size;
    c.city.validate();
    c.source_city_seed = synth.value("source_seed", 11ULL);
    c.target_city_seed = synth.value("target_seed", 22ULL);
    c.n_traj = synth.value("n_traj", 2000ULL);

    const auto pre = j.value("pretrain", nlohmann::json::object());
    c.pretrain_sequences = pre.value("sequences", 4000ULL);
    c.pretrain_epochs = pre.value("epochs", 3);
    c.pretrain_lr = pre.value("lr", 1e-3f);

    const auto instr = j.value("instruct", nlohmann::json::object());
    c.instruct_steps = instr.value("steps", 150);
    c.instruct_lr = instr.value("lr", 2e-4f);
    c.instruct_sequences = instr.value("sequences", 600ULL);

    const auto gen = j.value("generate", nlohmann::json::object());
    c.generate_n = gen.value("n", 2000ULL);
    c.temperature = gen.value("temperature", 1.0);

    const auto ev = j.value("evaluate", nlohmann::json::object());
    c.eval_bins = ev.value("bins", 50);
    c.corridor_radius = ev.value("corridor_radius", 100.0);

    const auto sub = j.value("subspace", nlohmann::json::object());
    c.stability.m_max = sub.value("m_max", 64);
    c.stability.eta = sub.value("eta", 0.01);
    c.stability.held_out = sub.value("held_out", 40ULL);
    c.stability.subspace_sample_per_task = sub.value("sample_per_task", 200ULL);
    c.stability.instruct_steps = c.instruct_steps;
    c.stability.instruct_lr = c.instruct_lr;
    c.stability.instruct_sequences = c.instruct_sequences;

    const auto sweep = j.value("sweep", nlohmann::json::object());
    c.sweep_subspace = sweep.value("subspace", "l");
    if (sweep.contains("values"))
        c.sweep_values = sweep.at("values").get<std::vector<double>>();

    return c;
}

void write_manifest(const std::string& out_path, const std::string& command,
                    const RunConfig& cfg, const std::map<std::string, std::string>& inputs,
                    const std::vector<std::string>& outputs) {
    nlohmann::json m;
    m["tool"] = kToolVersion;
    m["command"] = command;
    m["config_hash"] = cfg.config_hash;
    m["seeds"] = {{"pipeline", cfg.pipeline_seed}, {"sampling", cfg.sampling_seed}};
    m["threads"] = 1;  // all kernels run single-threaded for bit stability
    nlohmann::json in = nlohmann::json::object();
    for (const auto& [path, hash] : inputs) in[path] = hash;
    m["inputs"] = in;
    m["outputs"] = outputs;
    write_file(out_path, m.dump(2) + "\n");
}

}  // namespace trajta::cli
