#include <filesystem>
#include <iostream>
#include <map>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "run_config.hpp"
#include "trajta/common.hpp"
#include "trajta/pipeline.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace trajta;
using cli::RunConfig;

namespace {

std::string join(const std::string& dir, const std::string& name) {
    return (fs::path(dir) / name).string();
}

void require_input(const std::string& path, const std::string& role) {
    if (!file_exists(path))
        throw std::runtime_error("missing input for " + role + ": " + path +
                                 " (run the producing command first)");
}

tokenizer::Vocab load_vocab_checked(const std::string& path) {
    require_input(path, "vocabulary");
    return tokenizer::Vocab::from_json(read_file(path));
}

model::Checkpoint load_ckpt_checked(const std::string& path, const tokenizer::Vocab* vocab) {
    require_input(path, "checkpoint");
    model::Checkpoint ckpt = model::load_checkpoint(path);
    if (vocab && ckpt.vocab_hash != vocab->hash_hex())
        throw std::runtime_error("vocab hash mismatch: checkpoint " + path + " carries " +
                                 ckpt.vocab_hash + " but the vocab file hashes to " +
                                 vocab->hash_hex());
    return ckpt;
}

taskvec::TaskVector load_tv_checked(const std::string& path, const std::string& role) {
    if (!file_exists(path))
        throw std::runtime_error("missing task vector for role '" + role + "': " + path);
    return taskvec::load_task_vector(path);
}

json generation_report_json(const metrics::GenerationReport& rep,
                            const model::SampleReport& samples) {
    json j;
    j["jsd"] = {{"distance", rep.distance.jsd},
                {"radius", rep.radius.jsd},
                {"duration", rep.duration.jsd},
                {"locations", rep.locations.jsd},
                {"mean", rep.mean()}};
    j["degenerate"] = {{"distance", rep.distance.degenerate},
                       {"radius", rep.radius.degenerate},
                       {"duration", rep.duration.degenerate},
                       {"locations", rep.locations.degenerate}};
    j["samples"] = {{"requested", samples.requested},
                    {"parsed_ok", samples.parsed_ok},
                    {"parse_failed", samples.parse_failed},
                    {"truncated", samples.truncated},
                    {"nonmonotone_time", samples.nonmonotone_time},
                    {"too_short", samples.too_short},
                    {"validity_rate", samples.validity_rate}};
    return j;
}

std::string generation_report_csv(const metrics::GenerationReport& rep) {
    std::ostringstream csv;
    csv << "metric,value\n";
    csv << "jsd_distance," << rep.distance.jsd << "\n";
    csv << "jsd_radius," << rep.radius.jsd << "\n";
    csv << "jsd_duration," << rep.duration.jsd << "\n";
    csv << "jsd_locations," << rep.locations.jsd << "\n";
    csv << "jsd_mean," << rep.mean() << "\n";
    return csv.str();
}

// ---------------------------------------------------------------------
// synth: twin cities, CSV datasets, region files and the shared vocab.
// ---------------------------------------------------------------------
void cmd_synth(const RunConfig& cfg) {
    const synth::CityModel src = synth::gen_city(cfg.city, cfg.source_city_seed);
    const synth::CityModel tgt = synth::gen_city(cfg.city, cfg.target_city_seed);

    const std::string d = cfg.data_dir;
    synth::write_region_file(src, join(d, "src_region.json"));
    synth::write_region_file(tgt, join(d, "tgt_region.json"));
    synth::write_bus_csv(src, join(d, "src_bus.csv"));
    synth::write_bus_csv(tgt, join(d, "tgt_bus.csv"));
    synth::write_mob_csv(src, join(d, "src_mob.csv"), cfg.n_traj, /*stream=*/1);
    synth::write_mob_csv(tgt, join(d, "tgt_mob_test.csv"), cfg.n_traj, /*stream=*/2);
    synth::write_mob_csv(src, join(d, "src_mob_heldout.csv"), cfg.stability.held_out,
                         /*stream=*/7);

    const std::int64_t n_cells = std::max(synth::city_grid(src).vocab_cell_count(),
                                          synth::city_grid(tgt).vocab_cell_count());
    const tokenizer::Vocab vocab =
        tokenizer::Vocab::with_locations(n_cells, synth::city_grid(tgt).hash_hex());
    write_file(join(d, "vocab.json"), vocab.to_json());

    std::vector<std::string> outputs = {
        join(d, "src_region.json"), join(d, "tgt_region.json"), join(d, "src_bus.csv"),
        join(d, "tgt_bus.csv"),     join(d, "src_mob.csv"),     join(d, "tgt_mob_test.csv"),
        join(d, "src_mob_heldout.csv"), join(d, "vocab.json")};
    cli::write_manifest(join(d, "synth.manifest.json"), "synth", cfg, {}, outputs);
    std::cout << "synth: wrote twin-city datasets to " << d << " (vocab " << vocab.size()
              << " tokens)\n";
}

// ---------------------------------------------------------------------
// ingest: CSV -> filtered, discretized, split JSONL.
// ---------------------------------------------------------------------
void cmd_ingest(const RunConfig& cfg, const std::string& input, const std::string& region,
                const std::string& kind, const std::string& output) {
    require_input(input, "ingest input");
    require_input(region, "region polygon");
    const geo::GridSpec grid = geo::grid_from_region_file(region, cfg.cell_size);

    mobility::IngestReport rep;
    std::vector<mobility::Trajectory> trajs;
    if (kind == "mob") {
        trajs = mobility::split_all(
            mobility::crop_and_filter(mobility::ingest_trajectories(input, rep), grid));
    } else if (kind == "bus") {
        trajs = mobility::split_all(
            mobility::crop_and_filter_trips(mobility::ingest_timetable(input, rep), grid));
    } else {
        throw std::runtime_error("ingest: --kind must be 'mob' or 'bus'");
    }
    mobility::write_trajectories_jsonl(output, trajs);

    json report;
    report["rows_total"] = rep.rows_total;
    report["rows_ok"] = rep.rows_ok;
    report["trajectories"] = trajs.size();
    report["grid_hash"] = grid.hash_hex();
    report["vocab_cells_needed"] = grid.vocab_cell_count();
    json issues = json::array();
    for (const auto& i : rep.issues)
        issues.push_back({{"line", i.line}, {"message", i.message}});
    report["issues"] = issues;
    write_file(output + ".report.json", report.dump(2) + "\n");

    cli::write_manifest(output + ".manifest.json", "ingest", cfg,
                        {{input, file_hash_hex(input)}, {region, file_hash_hex(region)}},
                        {output, output + ".report.json"});
    std::cout << "ingest: " << trajs.size() << " trajectories -> " << output << " ("
              << rep.issues.size() << " rows skipped)\n";
}

// ---------------------------------------------------------------------
// pretrain / instruct: reference initializations over the base vocab.
// ---------------------------------------------------------------------
void cmd_pretrain(const RunConfig& cfg) {
    const tokenizer::Vocab base_vocab = tokenizer::Vocab::base();
    model::ModelConfig mc = cfg.model;
    mc.vocab_size = base_vocab.size();
    mc.seed = mix_seed(cfg.pipeline_seed, "pretrain");
    model::TrainOptions opt = model::TrainOptions::from_config(mc);
    opt.lr = cfg.pretrain_lr;
    opt.epochs = cfg.pretrain_epochs;
    opt.seed = mc.seed;
    const auto corpus =
        model::make_pretrain_corpus(cfg.pretrain_sequences, mix_seed(cfg.pipeline_seed, "corpus"));
    model::TrainStats stats;
    const model::Checkpoint ckpt = model::pretrain_base(mc, corpus, base_vocab, opt, &stats);
    const std::string out = join(cfg.checkpoints_dir, "base.ckpt");
    model::save_checkpoint(out, ckpt);
    cli::write_manifest(out + ".manifest.json", "pretrain", cfg, {}, {out});
    std::cout << "pretrain: " << stats.steps << " steps, final epoch loss "
              << (stats.epoch_loss.empty() ? 0.0 : stats.epoch_loss.back()) << " -> " << out
              << "\n";
}

void cmd_instruct(const RunConfig& cfg) {
    const std::string base_path = join(cfg.checkpoints_dir, "base.ckpt");
    const model::Checkpoint base = load_ckpt_checked(base_path, nullptr);
    const auto aux = model::make_instruct_corpus(cfg.instruct_sequences,
                                                 mix_seed(cfg.pipeline_seed, "aux"));
    model::TrainStats stats;
    const model::Checkpoint instr =
        model::make_instruct_variant(base, aux, cfg.instruct_steps, cfg.instruct_lr,
                                     mix_seed(cfg.pipeline_seed, "instruct"), &stats);
    const std::string out = join(cfg.checkpoints_dir, "instruct.ckpt");
    model::save_checkpoint(out, instr);
    cli::write_manifest(out + ".manifest.json", "instruct", cfg,
                        {{base_path, file_hash_hex(base_path)}}, {out});
    std::cout << "instruct: " << stats.steps << " steps -> " << out << "\n";
}

// ---------------------------------------------------------------------
// finetune: extend vocab, train adapters + embedding/head, extract vector.
// ---------------------------------------------------------------------
void cmd_finetune(const RunConfig& cfg, const std::string& init_path,
                  const std::string& data_path, const std::string& vocab_path,
                  const std::string& tag) {
    const tokenizer::Vocab vocab = load_vocab_checked(vocab_path);
    const model::Checkpoint init = load_ckpt_checked(init_path, nullptr);
    require_input(data_path, "training data");
    const auto trajs = mobility::read_trajectories_jsonl(data_path);
    if (trajs.empty()) throw std::runtime_error("finetune: empty dataset " + data_path);
    const auto seqs = pipeline::serialize_all(trajs, vocab);

    const model::Checkpoint theta0 = model::extend_vocab(init, vocab);
    const std::string stem = fs::path(init_path).stem().string();
    const std::string theta0_path = join(cfg.checkpoints_dir, stem + "_ext.ckpt");
    model::save_checkpoint(theta0_path, theta0);

    model::TrainOptions opt = model::TrainOptions::from_config(cfg.model);
    opt.seed = mix_seed(cfg.pipeline_seed, "ft-" + tag);
    model::TrainStats stats;
    const model::Checkpoint tuned = model::finetune_task(theta0, seqs, opt, &stats);
    const std::string ckpt_out = join(cfg.checkpoints_dir, "ft_" + tag + ".ckpt");
    model::save_checkpoint(ckpt_out, tuned);

    taskvec::TaskVector v = taskvec::extract(tuned, theta0);
    v.provenance.dataset_id = tag;
    const std::string tv_out = join(cfg.checkpoints_dir, tag + ".tv");
    taskvec::save_task_vector(tv_out, v);

    cli::write_manifest(ckpt_out + ".manifest.json", "finetune", cfg,
                        {{init_path, file_hash_hex(init_path)},
                         {data_path, file_hash_hex(data_path)},
                         {vocab_path, file_hash_hex(vocab_path)}},
                        {theta0_path, ckpt_out, tv_out});
    std::cout << "finetune[" << tag << "]: " << stats.steps << " steps, final epoch loss "
              << (stats.epoch_loss.empty() ? 0.0 : stats.epoch_loss.back()) << " -> " << ckpt_out
              << ", task vector " << tv_out << "\n";
}

// ---------------------------------------------------------------------
// compose: exactly three task vectors plus mu -> composed vector + model.
// ---------------------------------------------------------------------
void cmd_compose(const RunConfig& cfg, const std::string& tgt_bus_path,
                 const std::string& src_mob_path, const std::string& src_bus_path,
                 const std::string& base_path, const std::string& out_stem) {
    const taskvec::TaskVector tgt_bus = load_tv_checked(tgt_bus_path, "tgt-bus");
    const taskvec::TaskVector src_mob = load_tv_checked(src_mob_path, "src-mob");
    const taskvec::TaskVector src_bus = load_tv_checked(src_bus_path, "src-bus");
    const model::Checkpoint base = load_ckpt_checked(base_path, nullptr);

    const taskvec::TaskVector composed =
        taskvec::compose_target(tgt_bus, src_mob, src_bus, cfg.mu);
    const std::string tv_out = join(cfg.checkpoints_dir, out_stem + ".tv");
    taskvec::save_task_vector(tv_out, composed);
    const model::Checkpoint target_model = taskvec::apply(base, composed);
    const std::string ckpt_out = join(cfg.checkpoints_dir, out_stem + ".ckpt");
    model::save_checkpoint(ckpt_out, target_model);

    cli::write_manifest(ckpt_out + ".manifest.json", "compose", cfg,
                        {{tgt_bus_path, file_hash_hex(tgt_bus_path)},
                         {src_mob_path, file_hash_hex(src_mob_path)},
                         {src_bus_path, file_hash_hex(src_bus_path)},
                         {base_path, file_hash_hex(base_path)}},
                        {tv_out, ckpt_out});
    std::cout << "compose: mu=(" << cfg.mu.e << "," << cfg.mu.l << "," << cfg.mu.h << ") -> "
              << ckpt_out << "\n";
}

// ---------------------------------------------------------------------
// generate: sample trajectories with start conditions from bus data.
// ---------------------------------------------------------------------
void cmd_generate(const RunConfig& cfg, const std::string& model_path,
                  const std::string& starts_path, const std::string& vocab_path,
                  const std::string& output) {
    const tokenizer::Vocab vocab = load_vocab_checked(vocab_path);
    const model::Checkpoint ckpt = load_ckpt_checked(model_path, &vocab);
    require_input(starts_path, "start conditions");
    const auto bus = mobility::read_trajectories_jsonl(starts_path);
    const auto starts = pipeline::start_conditions(bus);

    model::SampleReport rep;
    const auto generated = model::sample_trajectories(
        ckpt, vocab, starts, cfg.generate_n, cfg.temperature, cfg.sampling_seed, &rep);
    mobility::write_trajectories_jsonl(output, generated);

    json report;
    report["requested"] = rep.requested;
    report["parsed_ok"] = rep.parsed_ok;
    report["parse_failed"] = rep.parse_failed;
    report["truncated"] = rep.truncated;
    report["nonmonotone_time"] = rep.nonmonotone_time;
    report["too_short"] = rep.too_short;
    report["validity_rate"] = rep.validity_rate;
    write_file(output + ".report.json", report.dump(2) + "\n");

    cli::write_manifest(output + ".manifest.json", "generate", cfg,
                        {{model_path, file_hash_hex(model_path)},
                         {starts_path, file_hash_hex(starts_path)},
                         {vocab_path, file_hash_hex(vocab_path)}},
                        {output, output + ".report.json"});
    std::cout << "generate: " << generated.size() << "/" << rep.requested
              << " valid trajectories -> " << output << " (validity " << rep.validity_rate
              << ")\n";
}

// ---------------------------------------------------------------------
// evaluate: the four distribution divergences against held-out data.
// ---------------------------------------------------------------------
void cmd_evaluate(const RunConfig& cfg, const std::string& real_path,
                  const std::string& gen_path, const std::string& out_stem) {
    require_input(real_path, "real trajectories");
    require_input(gen_path, "generated trajectories");
    const auto real = mobility::read_trajectories_jsonl(real_path);
    const auto gen = mobility::read_trajectories_jsonl(gen_path);
    if (real.empty() || gen.empty())
        throw std::runtime_error("evaluate: empty trajectory set");

    const auto rep = metrics::evaluate_generation(pipeline::to_cell_records(real),
                                                  pipeline::to_cell_records(gen),
                                                  cfg.cell_size, cfg.eval_bins);
    const std::string json_out = join(cfg.reports_dir, out_stem + ".json");
    const std::string csv_out = join(cfg.reports_dir, out_stem + ".csv");
    model::SampleReport dummy;
    dummy.requested = gen.size();
    dummy.parsed_ok = gen.size();
    dummy.validity_rate = 1.0;
    write_file(json_out, generation_report_json(rep, dummy).dump(2) + "\n");
    write_file(csv_out, generation_report_csv(rep));

    cli::write_manifest(json_out + ".manifest.json", "evaluate", cfg,
                        {{real_path, file_hash_hex(real_path)},
                         {gen_path, file_hash_hex(gen_path)}},
                        {json_out, csv_out});
    std::cout << "evaluate: mean JSD " << rep.mean() << " -> " << json_out << "\n";
}

// ---------------------------------------------------------------------
// analyze-empirical: bus-vs-mobility correlation suite (plus optional
// year-over-year station sequence stability when a second bus file is given).
// ---------------------------------------------------------------------
void cmd_analyze_empirical(const RunConfig& cfg, const std::string& bus_path,
                           const std::string& mob_path, const std::string& region_path,
                           const std::string& bus_b_path, const std::string& out_stem) {
    require_input(bus_path, "bus timetable");
    require_input(mob_path, "mobility trajectories");
    require_input(region_path, "region polygon");
    const geo::GridSpec grid = geo::grid_from_region_file(region_path, cfg.cell_size);

    mobility::IngestReport rep_bus, rep_mob;
    const auto trips = mobility::ingest_timetable(bus_path, rep_bus);
    const auto raw_mob = mobility::ingest_trajectories(mob_path, rep_mob);

    // Discretized distributions over the shared cell universe.
    const auto bus_trajs = mobility::split_all(mobility::crop_and_filter_trips(trips, grid));
    const auto mob_trajs = mobility::split_all(mobility::crop_and_filter(raw_mob, grid));
    const std::int64_t n_cells = grid.vocab_cell_count();
    const auto bus_dist = pipeline::spatial_dist(bus_trajs, n_cells);
    const auto mob_dist = pipeline::spatial_dist(mob_trajs, n_cells);

    json out;
    out["spatial"] = {{"jsd", metrics::spatial_jsd(bus_dist, mob_dist)},
                      {"cosine", metrics::spatial_cos(bus_dist, mob_dist)},
                      {"pearson", metrics::spatial_pearson(bus_dist, mob_dist)}};

    // Corridor coverage on the raw planar geometry.
    std::vector<metrics::Polyline> bus_lines;
    for (const auto& t : trips) {
        metrics::Polyline line;
        for (const auto& s : t.stops) line.push_back(grid.project(s.lon, s.lat));
        bus_lines.push_back(std::move(line));
    }
    const auto corridors = metrics::build_corridors(bus_lines, cfg.corridor_radius);
    std::vector<geo::Vec2> mob_points;
    std::vector<metrics::Polyline> mob_lines;
    for (const auto& t : raw_mob) {
        if (t.prediscretized) continue;
        metrics::Polyline line;
        for (const auto& p : t.points) {
            const geo::Vec2 v = grid.project(p.lon, p.lat);
            if (!grid.in_region(v)) continue;
            mob_points.push_back(v);
            line.push_back(v);
        }
        if (line.size() >= 2) mob_lines.push_back(std::move(line));
    }
    if (!mob_points.empty() && !corridors.polylines.empty()) {
        out["coverage"] = {
            {"radius_m", cfg.corridor_radius},
            {"point_coverage", metrics::point_coverage(mob_points, corridors)},
            {"route_coverage", metrics::mean_route_coverage(mob_lines, corridors)},
            {"units", "fraction"}};
    }

    // Hourly temporal correlation.
    std::array<double, 24> t_bus{}, t_mob{};
    for (const auto& t : bus_trajs)
        for (const auto& r : t.records) t_bus[static_cast<std::size_t>(r.minute / 60)] += 1.0;
    for (const auto& t : mob_trajs)
        for (const auto& r : t.records) t_mob[static_cast<std::size_t>(r.minute / 60)] += 1.0;
    double sb = 0.0, sm = 0.0;
    for (int h = 0; h < 24; ++h) {
        sb += t_bus[static_cast<std::size_t>(h)];
        sm += t_mob[static_cast<std::size_t>(h)];
    }
    for (int h = 0; h < 24; ++h) {
        t_bus[static_cast<std::size_t>(h)] /= sb;
        t_mob[static_cast<std::size_t>(h)] /= sm;
    }
    out["temporal"] = {{"pearson", metrics::temporal_pearson(t_bus, t_mob)}};

    std::map<std::string, std::string> inputs = {
        {bus_path, file_hash_hex(bus_path)},
        {mob_path, file_hash_hex(mob_path)},
        {region_path, file_hash_hex(region_path)}};

    // Optional station-sequence stability between two timetable snapshots.
    if (!bus_b_path.empty()) {
        require_input(bus_b_path, "second bus timetable");
        mobility::IngestReport rep_b;
        const auto trips_b = mobility::ingest_timetable(bus_b_path, rep_b);
        const auto seq_a = mobility::station_sequences(trips);
        const auto seq_b = mobility::station_sequences(trips_b);
        const auto matches = mobility::match_routes(seq_a, seq_b);
        double lcs = 0, jac = 0, dic = 0, ed = 0, dt = 0;
        std::map<std::pair<std::string, std::string>, const mobility::StationSequence*> by_key_a,
            by_key_b;
        for (const auto& s : seq_a) by_key_a[{s.route_id, s.direction}] = &s;
        for (const auto& s : seq_b) by_key_b[{s.route_id, s.direction}] = &s;
        for (const auto& m : matches.matched) {
            const auto& a = *by_key_a.at({m.route_id, m.direction_a});
            const auto& b = *by_key_b.at({m.route_id, m.direction_b});
            lcs += metrics::lcs_ratio(a.stations, b.stations);
            jac += metrics::jaccard(a.stations, b.stations);
            dic += metrics::dice(a.stations, b.stations);
            ed += metrics::edr(a.stations, b.stations);
            dt += metrics::dtw(a.stations, b.stations);
        }
        const double n = std::max<std::size_t>(1, matches.matched.size());
        out["station_stability"] = {{"matched_routes", matches.matched.size()},
                                    {"unmatched_a", matches.unmatched_a.size()},
                                    {"unmatched_b", matches.unmatched_b.size()},
                                    {"lcs", lcs / n},
                                    {"jaccard", jac / n},
                                    {"dice", dic / n},
                                    {"edr", ed / n},
                                    {"dtw", dt / n}};
        inputs[bus_b_path] = file_hash_hex(bus_b_path);
    }

    const std::string json_out = join(cfg.reports_dir, out_stem + ".json");
    write_file(json_out, out.dump(2) + "\n");
    std::ostringstream csv;
    csv << "metric,value\n";
    csv << "spatial_jsd," << out["spatial"]["jsd"].get<double>() << "\n";
    csv << "spatial_cosine," << out["spatial"]["cosine"].get<double>() << "\n";
    csv << "spatial_pearson," << out["spatial"]["pearson"].get<double>() << "\n";
    if (out.contains("coverage")) {
        csv << "point_coverage," << out["coverage"]["point_coverage"].get<double>() << "\n";
        csv << "route_coverage," << out["coverage"]["route_coverage"].get<double>() << "\n";
    }
    csv << "temporal_pearson," << out["temporal"]["pearson"].get<double>() << "\n";
    const std::string csv_out = join(cfg.reports_dir, out_stem + ".csv");
    write_file(csv_out, csv.str());
    cli::write_manifest(json_out + ".manifest.json", "analyze-empirical", cfg, inputs,
                        {json_out, csv_out});
    std::cout << "analyze-empirical -> " << json_out << "\n";
}

// ---------------------------------------------------------------------
// analyze-subspace: the full base-vs-instruct stability comparison.
// ---------------------------------------------------------------------
pipeline::ExperimentData experiment_data_from_files(const RunConfig& cfg) {
    const std::string d = cfg.data_dir;
    for (const char* f : {"src_region.json", "tgt_region.json", "src_bus.csv", "src_mob.csv",
                          "tgt_bus.csv", "tgt_mob_test.csv", "vocab.json"})
        require_input(join(d, f), std::string("synth output ") + f);

    pipeline::ExperimentData data;
    data.cell_size = cfg.cell_size;
    const geo::GridSpec src_grid =
        geo::grid_from_region_file(join(d, "src_region.json"), cfg.cell_size);
    const geo::GridSpec tgt_grid =
        geo::grid_from_region_file(join(d, "tgt_region.json"), cfg.cell_size);
    data.vocab = load_vocab_checked(join(d, "vocab.json"));
    data.n_cells = data.vocab.n_locations();

    mobility::IngestReport rep;
    auto mob_of = [&](const std::string& file, const geo::GridSpec& grid) {
        return mobility::split_all(
            mobility::crop_and_filter(mobility::ingest_trajectories(join(d, file), rep), grid));
    };
    auto bus_of = [&](const std::string& file, const geo::GridSpec& grid) {
        return mobility::split_all(mobility::crop_and_filter_trips(
            mobility::ingest_timetable(join(d, file), rep), grid));
    };
    data.src_bus = bus_of("src_bus.csv", src_grid);
    data.tgt_bus = bus_of("tgt_bus.csv", tgt_grid);
    data.src_mob = mob_of("src_mob.csv", src_grid);
    data.tgt_mob_test = mob_of("tgt_mob_test.csv", tgt_grid);
    if (static_cast<std::size_t>(data.src_bus.size()) > cfg.n_traj)
        data.src_bus.resize(cfg.n_traj);
    if (static_cast<std::size_t>(data.tgt_bus.size()) > cfg.n_traj)
        data.tgt_bus.resize(cfg.n_traj);
    data.src_bus_seqs = pipeline::serialize_all(data.src_bus, data.vocab);
    data.src_mob_seqs = pipeline::serialize_all(data.src_mob, data.vocab);
    data.tgt_bus_seqs = pipeline::serialize_all(data.tgt_bus, data.vocab);
    data.starts = pipeline::start_conditions(data.tgt_bus);
    if (file_exists(join(d, "src_mob_heldout.csv")))
        data.held_out_seqs = pipeline::serialize_all(mob_of("src_mob_heldout.csv", src_grid),
                                                     data.vocab);
    return data;
}

void cmd_analyze_subspace(const RunConfig& cfg) {
    const pipeline::ExperimentData data = experiment_data_from_files(cfg);
    const pipeline::StabilityReport rep = pipeline::run_stability_analysis(
        data, cfg.transfer(), cfg.stability, cfg.pipeline_seed);
    const std::string json_out = join(cfg.reports_dir, "stability.json");
    write_file(json_out, rep.to_json() + "\n");
    const std::string txt_out = join(cfg.reports_dir, "stability.txt");
    write_file(txt_out, rep.summary_table());
    cli::write_manifest(json_out + ".manifest.json", "analyze-subspace", cfg, {},
                        {json_out, txt_out});
    std::cout << rep.summary_table();
}

// ---------------------------------------------------------------------
// ablate: the 8-row E/L/H grid; a masked subspace keeps only its
// target-bus component (no transferred shift).
// ---------------------------------------------------------------------
void cmd_ablate(const RunConfig& cfg, const std::string& tgt_bus_path,
                const std::string& src_mob_path, const std::string& src_bus_path,
                const std::string& base_path, const std::string& starts_path,
                const std::string& real_path, const std::string& vocab_path) {
    const taskvec::TaskVector tgt_bus = load_tv_checked(tgt_bus_path, "tgt-bus");
    const taskvec::TaskVector src_mob = load_tv_checked(src_mob_path, "src-mob");
    const taskvec::TaskVector src_bus = load_tv_checked(src_bus_path, "src-bus");
    const tokenizer::Vocab vocab = load_vocab_checked(vocab_path);
    const model::Checkpoint base = load_ckpt_checked(base_path, &vocab);
    const auto starts = pipeline::start_conditions(
        mobility::read_trajectories_jsonl(starts_path));
    const auto real = pipeline::to_cell_records(mobility::read_trajectories_jsonl(real_path));

    json rows = json::array();
    std::ostringstream csv;
    csv << "E,L,H,jsd_distance,jsd_radius,jsd_duration,jsd_locations,jsd_mean,validity\n";
    for (int mask = 0; mask < 8; ++mask) {
        const taskvec::SubspaceMask keep{(mask & 4) != 0, (mask & 2) != 0, (mask & 1) != 0};
        taskvec::MuCoefficients mu = cfg.mu;
        if (!keep.e) mu.e = 0.0;
        if (!keep.l) mu.l = 0.0;
        if (!keep.h) mu.h = 0.0;
        const auto composed = taskvec::compose_target(tgt_bus, src_mob, src_bus, mu);
        const auto ckpt = taskvec::apply(base, composed);
        model::SampleReport srep;
        const auto gen = model::sample_trajectories(ckpt, vocab, starts, cfg.generate_n,
                                                    cfg.temperature, cfg.sampling_seed, &srep);
        const auto rep = metrics::evaluate_generation(real, pipeline::to_cell_records(gen),
                                                      cfg.cell_size, cfg.eval_bins);
        json row;
        row["E"] = keep.e;
        row["L"] = keep.l;
        row["H"] = keep.h;
        row["jsd"] = {{"distance", rep.distance.jsd},
                      {"radius", rep.radius.jsd},
                      {"duration", rep.duration.jsd},
                      {"locations", rep.locations.jsd},
                      {"mean", rep.mean()}};
        row["validity"] = srep.validity_rate;
        rows.push_back(row);
        csv << (keep.e ? 1 : 0) << ',' << (keep.l ? 1 : 0) << ',' << (keep.h ? 1 : 0) << ','
            << rep.distance.jsd << ',' << rep.radius.jsd << ',' << rep.duration.jsd << ','
            << rep.locations.jsd << ',' << rep.mean() << ',' << srep.validity_rate << "\n";
        std::cout << "ablate E=" << keep.e << " L=" << keep.l << " H=" << keep.h
                  << ": mean JSD " << rep.mean() << "\n";
    }
    const std::string json_out = join(cfg.reports_dir, "ablation.json");
    write_file(json_out, rows.dump(2) + "\n");
    const std::string csv_out = join(cfg.reports_dir, "ablation.csv");
    write_file(csv_out, csv.str());
    cli::write_manifest(json_out + ".manifest.json", "ablate", cfg,
                        {{tgt_bus_path, file_hash_hex(tgt_bus_path)},
                         {src_mob_path, file_hash_hex(src_mob_path)},
                         {src_bus_path, file_hash_hex(src_bus_path)},
                         {base_path, file_hash_hex(base_path)}},
                        {json_out, csv_out});
}

// ---------------------------------------------------------------------
// sweep-mu: sensitivity over one subspace coefficient.
// ---------------------------------------------------------------------
void cmd_sweep_mu(const RunConfig& cfg, const std::string& tgt_bus_path,
                  const std::string& src_mob_path, const std::string& src_bus_path,
                  const std::string& base_path, const std::string& starts_path,
                  const std::string& real_path, const std::string& vocab_path) {
    if (cfg.sweep_subspace != "e" && cfg.sweep_subspace != "l" && cfg.sweep_subspace != "h")
        throw std::runtime_error("sweep: config sweep.subspace must be 'e', 'l' or 'h'");
    const taskvec::TaskVector tgt_bus = load_tv_checked(tgt_bus_path, "tgt-bus");
    const taskvec::TaskVector src_mob = load_tv_checked(src_mob_path, "src-mob");
    const taskvec::TaskVector src_bus = load_tv_checked(src_bus_path, "src-bus");
    const tokenizer::Vocab vocab = load_vocab_checked(vocab_path);
    const model::Checkpoint base = load_ckpt_checked(base_path, &vocab);
    const auto starts = pipeline::start_conditions(
        mobility::read_trajectories_jsonl(starts_path));
    const auto real = pipeline::to_cell_records(mobility::read_trajectories_jsonl(real_path));

    json rows = json::array();
    std::ostringstream csv;
    csv << "mu_" << cfg.sweep_subspace
        << ",jsd_distance,jsd_radius,jsd_duration,jsd_locations,jsd_mean,validity\n";
    for (const double value : cfg.sweep_values) {
        taskvec::MuCoefficients mu = cfg.mu;
        if (cfg.sweep_subspace == "e") mu.e = value;
        else if (cfg.sweep_subspace == "l") mu.l = value;
        else mu.h = value;
        const auto composed = taskvec::compose_target(tgt_bus, src_mob, src_bus, mu);
        const auto ckpt = taskvec::apply(base, composed);
        model::SampleReport srep;
        const auto gen = model::sample_trajectories(ckpt, vocab, starts, cfg.generate_n,
                                                    cfg.temperature, cfg.sampling_seed, &srep);
        const auto rep = metrics::evaluate_generation(real, pipeline::to_cell_records(gen),
                                                      cfg.cell_size, cfg.eval_bins);
        json row;
        row["value"] = value;
        row["jsd_mean"] = rep.mean();
        row["jsd"] = {{"distance", rep.distance.jsd},
                      {"radius", rep.radius.jsd},
                      {"duration", rep.duration.jsd},
                      {"locations", rep.locations.jsd}};
        row["validity"] = srep.validity_rate;
        rows.push_back(row);
        csv << value << ',' << rep.distance.jsd << ',' << rep.radius.jsd << ','
            << rep.duration.jsd << ',' << rep.locations.jsd << ',' << rep.mean() << ','
            << srep.validity_rate << "\n";
        std::cout << "sweep mu_" << cfg.sweep_subspace << "=" << value << ": mean JSD "
                  << rep.mean() << "\n";
    }
    const std::string json_out =
        join(cfg.reports_dir, "sweep_mu_" + cfg.sweep_subspace + ".json");
    write_file(json_out, rows.dump(2) + "\n");
    const std::string csv_out = join(cfg.reports_dir, "sweep_mu_" + cfg.sweep_subspace + ".csv");
    write_file(csv_out, csv.str());
    cli::write_manifest(json_out + ".manifest.json", "sweep-mu", cfg, {}, {json_out, csv_out});
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"trajta: bus-conditioned zero-shot trajectory generation via task arithmetic"};
    app.require_subcommand(1);

    std::string config_path = "trajta.json";
    app.add_option("-c,--config", config_path, "Run configuration file (JSON)");

    std::string input, region, kind = "mob", output;
    auto* synth_cmd = app.add_subcommand("synth", "Generate twin synthetic city datasets");
    auto* ingest_cmd = app.add_subcommand("ingest", "Discretize a trajectory/timetable CSV");
    ingest_cmd->add_option("--input", input)->required();
    ingest_cmd->add_option("--region", region)->required();
    ingest_cmd->add_option("--kind", kind, "mob or bus");
    ingest_cmd->add_option("--output", output)->required();

    auto* pretrain_cmd = app.add_subcommand("pretrain", "Pretrain the base model");
    auto* instruct_cmd = app.add_subcommand("instruct", "Create the instruct variant");

    std::string init_path, data_path, vocab_path, tag;
    auto* finetune_cmd = app.add_subcommand("finetune", "Fine-tune on a trajectory dataset");
    finetune_cmd->add_option("--init", init_path)->required();
    finetune_cmd->add_option("--data", data_path)->required();
    finetune_cmd->add_option("--vocab", vocab_path)->required();
    finetune_cmd->add_option("--tag", tag)->required();

    std::string tv_tgt_bus, tv_src_mob, tv_src_bus, base_path, out_stem = "composed";
    auto* compose_cmd = app.add_subcommand("compose", "Compose the target mobility vector");
    compose_cmd->add_option("--tgt-bus", tv_tgt_bus)->required();
    compose_cmd->add_option("--src-mob", tv_src_mob)->required();
    compose_cmd->add_option("--src-bus", tv_src_bus)->required();
    compose_cmd->add_option("--base", base_path)->required();
    compose_cmd->add_option("--out", out_stem);

    std::string model_path, starts_path;
    auto* generate_cmd = app.add_subcommand("generate", "Sample trajectories from a model");
    generate_cmd->add_option("--model", model_path)->required();
    generate_cmd->add_option("--starts", starts_path)->required();
    generate_cmd->add_option("--vocab", vocab_path)->required();
    generate_cmd->add_option("--output", output)->required();

    std::string real_path, gen_path;
    auto* evaluate_cmd = app.add_subcommand("evaluate", "Distribution JSDs vs held-out data");
    evaluate_cmd->add_option("--real", real_path)->required();
    evaluate_cmd->add_option("--generated", gen_path)->required();
    evaluate_cmd->add_option("--out", out_stem);

    std::string bus_path, mob_path, bus_b_path;
    auto* empirical_cmd =
        app.add_subcommand("analyze-empirical", "Bus-vs-mobility correlation metrics");
    empirical_cmd->add_option("--bus", bus_path)->required();
    empirical_cmd->add_option("--mob", mob_path)->required();
    empirical_cmd->add_option("--region", region)->required();
    empirical_cmd->add_option("--bus-b", bus_b_path);
    empirical_cmd->add_option("--out", out_stem);

    auto* subspace_cmd =
        app.add_subcommand("analyze-subspace", "Base-vs-instruct stability verification");

    auto* ablate_cmd = app.add_subcommand("ablate", "E/L/H composition ablation grid");
    ablate_cmd->add_option("--tgt-bus", tv_tgt_bus)->required();
    ablate_cmd->add_option("--src-mob", tv_src_mob)->required();
    ablate_cmd->add_option("--src-bus", tv_src_bus)->required();
    ablate_cmd->add_option("--base", base_path)->required();
    ablate_cmd->add_option("--starts", starts_path)->required();
    ablate_cmd->add_option("--real", real_path)->required();
    ablate_cmd->add_option("--vocab", vocab_path)->required();

    auto* sweep_cmd = app.add_subcommand("sweep-mu", "Sensitivity curve for one coefficient");
    sweep_cmd->add_option("--tgt-bus", tv_tgt_bus)->required();
    sweep_cmd->add_option("--src-mob", tv_src_mob)->required();
    sweep_cmd->add_option("--src-bus", tv_src_bus)->required();
    sweep_cmd->add_option("--base", base_path)->required();
    sweep_cmd->add_option("--starts", starts_path)->required();
    sweep_cmd->add_option("--real", real_path)->required();
    sweep_cmd->add_option("--vocab", vocab_path)->required();

    CLI11_PARSE(app, argc, argv);

    try {
        const RunConfig cfg = cli::load_run_config(config_path);
        if (synth_cmd->parsed()) cmd_synth(cfg);
        else if (ingest_cmd->parsed()) cmd_ingest(cfg, input, region, kind, output);
        else if (pretrain_cmd->parsed()) cmd_pretrain(cfg);
        else if (instruct_cmd->parsed()) cmd_instruct(cfg);
        else if (finetune_cmd->parsed())
            cmd_finetune(cfg, init_path, data_path, vocab_path, tag);
        else if (compose_cmd->parsed())
            cmd_compose(cfg, tv_tgt_bus, tv_src_mob, tv_src_bus, base_path, out_stem);
        else if (generate_cmd->parsed())
            cmd_generate(cfg, model_path, starts_path, vocab_path, output);
        else if (evaluate_cmd->parsed()) cmd_evaluate(cfg, real_path, gen_path, out_stem);
        else if (empirical_cmd->parsed())
            cmd_analyze_empirical(cfg, bus_path, mob_path, region, bus_b_path, out_stem);
        else if (subspace_cmd->parsed()) cmd_analyze_subspace(cfg);
        else if (ablate_cmd->parsed())
            cmd_ablate(cfg, tv_tgt_bus, tv_src_mob, tv_src_bus, base_path, starts_path,
                       real_path, vocab_path);
        else if (sweep_cmd->parsed())
            cmd_sweep_mu(cfg, tv_tgt_bus, tv_src_mob, tv_src_bus, base_path, starts_path,
                         real_path, vocab_path);
    } catch (const std::exception& e) {
        json err;
        err["error"] = {{"message", e.what()}};
        std::cerr << err.dump() << "\n";
        return 1;
    }
    return 0;
}
