#include "trajta/pipeline.hpp"

#include <algorithm>
#include <sstream>

#include <nlohmann/json.hpp>

#include "trajta/common.hpp"

namespace trajta::pipeline {

std::vector<std::vector<model::TokenId>> serialize_all(
    const std::vector<mobility::Trajectory>& trajs, const tokenizer::Vocab& vocab) {
    std::vector<std::vector<model::TokenId>> out;
    out.reserve(trajs.size());
    for (const auto& t : trajs) out.push_back(tokenizer::serialize(t.records, vocab));
    return out;
}

std::vector<metrics::CellRecord> to_cell_records(const mobility::Trajectory& t) {
    std::vector<metrics::CellRecord> out;
    out.reserve(t.records.size());
    for (const auto& r : t.records) out.push_back({r.cell, r.minute});
    return out;
}

std::vector<std::vector<metrics::CellRecord>> to_cell_records(
    const std::vector<mobility::Trajectory>& ts) {
    std::vector<std::vector<metrics::CellRecord>> out;
    out.reserve(ts.size());
    for (const auto& t : ts) out.push_back(to_cell_records(t));
    return out;
}

metrics::SpatialDist spatial_dist(const std::vector<mobility::Trajectory>& trajs,
                                  std::int64_t n_cells) {
    std::vector<double> counts(static_cast<std::size_t>(n_cells), 0.0);
    for (const auto& t : trajs) {
        for (const auto& r : t.records) {
            if (r.cell < 0 || r.cell >= n_cells)
                throw std::out_of_range("spatial_dist: cell outside universe");
            counts[static_cast<std::size_t>(r.cell)] += 1.0;
        }
    }
    return metrics::SpatialDist::from_counts(counts);
}

std::vector<model::StartCondition> start_conditions(
    const std::vector<mobility::Trajectory>& bus_trajs) {
    std::vector<model::StartCondition> out;
    for (const auto& t : bus_trajs) {
        if (t.records.empty()) continue;
        out.push_back({t.records.front().minute, t.records.front().cell});
    }
    if (out.empty()) throw std::invalid_argument("start_conditions: no usable trajectories");
    return out;
}

namespace {

std::vector<mobility::Trajectory> discretize_mob(const synth::CityModel& city, std::size_t n,
                                                 std::uint64_t stream) {
    const geo::GridSpec grid = synth::city_grid(city);
    const auto raw = synth::gen_mob_raw(city, n, stream);
    return mobility::split_all(mobility::crop_and_filter(raw, grid));
}

std::vector<mobility::Trajectory> discretize_bus(const synth::CityModel& city) {
    const geo::GridSpec grid = synth::city_grid(city);
    return mobility::split_all(mobility::crop_and_filter_trips(synth::gen_bus_trips(city), grid));
}

}  // namespace

ExperimentData make_experiment_data(const TransferConfig& cfg, std::uint64_t seed) {
    ExperimentData data;
    data.src_city = synth::gen_city(cfg.city, mix_seed(seed, "src-city"));
    data.tgt_city = synth::gen_city(cfg.city, mix_seed(seed, "tgt-city"));
    data.cell_size = cfg.city.cell_size;

    const geo::GridSpec src_grid = synth::city_grid(data.src_city);
    const geo::GridSpec tgt_grid = synth::city_grid(data.tgt_city);
    data.n_cells = std::max(src_grid.vocab_cell_count(), tgt_grid.vocab_cell_count());
    data.vocab = tokenizer::Vocab::with_locations(data.n_cells, tgt_grid.hash_hex());

    data.src_bus = discretize_bus(data.src_city);
    data.tgt_bus = discretize_bus(data.tgt_city);
    data.src_mob = discretize_mob(data.src_city, cfg.n_traj, /*stream=*/1);
    data.tgt_mob_test = discretize_mob(data.tgt_city, cfg.n_traj, /*stream=*/2);

    // Bus datasets are capped to n_traj trips for comparable training sizes.
    if (data.src_bus.size() > cfg.n_traj) data.src_bus.resize(cfg.n_traj);
    if (data.tgt_bus.size() > cfg.n_traj) data.tgt_bus.resize(cfg.n_traj);

    data.src_bus_seqs = serialize_all(data.src_bus, data.vocab);
    data.src_mob_seqs = serialize_all(data.src_mob, data.vocab);
    data.tgt_bus_seqs = serialize_all(data.tgt_bus, data.vocab);
    data.held_out_seqs = serialize_all(
        discretize_mob(data.src_city, cfg.n_held_out, /*stream=*/7), data.vocab);
    data.starts = start_conditions(data.tgt_bus);
    return data;
}

TrainedVectors train_task_vectors(const ExperimentData& data, const TransferConfig& cfg,
                                  std::uint64_t seed, const model::Checkpoint* init_override) {
    TrainedVectors out;

    model::Checkpoint theta0_base;
    if (init_override) {
        theta0_base = *init_override;
    } else {
        const tokenizer::Vocab base_vocab = tokenizer::Vocab::base();
        model::ModelConfig pre_cfg = cfg.model;
        pre_cfg.vocab_size = base_vocab.size();
        pre_cfg.seed = mix_seed(seed, "pretrain");
        model::TrainOptions opt = model::TrainOptions::from_config(pre_cfg);
        opt.lr = cfg.pretrain_lr;
        opt.epochs = cfg.pretrain_epochs;
        opt.seed = pre_cfg.seed;
        const auto corpus =
            model::make_pretrain_corpus(cfg.pretrain_sequences, mix_seed(seed, "corpus"));
        theta0_base = model::pretrain_base(pre_cfg, corpus, base_vocab, opt);
    }

    out.theta0_ext = model::extend_vocab(theta0_base, data.vocab);

    auto finetune = [&](const std::vector<std::vector<model::TokenId>>& seqs,
                        const std::string& tag) {
        model::TrainOptions opt = model::TrainOptions::from_config(cfg.model);
        opt.seed = mix_seed(seed, "ft-" + tag);
        const model::Checkpoint tuned = model::finetune_task(out.theta0_ext, seqs, opt);
        taskvec::TaskVector v = taskvec::extract(tuned, out.theta0_ext);
        v.provenance.dataset_id = tag;
        return v;
    };
    out.src_mob = finetune(data.src_mob_seqs, "src-mob");
    out.src_bus = finetune(data.src_bus_seqs, "src-bus");
    out.tgt_bus = finetune(data.tgt_bus_seqs, "tgt-bus");
    return out;
}

EvalResult evaluate_checkpoint(const model::Checkpoint& ckpt, const ExperimentData& data,
                               const TransferConfig& cfg, std::uint64_t sample_seed) {
    EvalResult res;
    const auto generated =
        model::sample_trajectories(ckpt, data.vocab, data.starts, cfg.n_generate,
                                   cfg.temperature, sample_seed, &res.samples);
    if (generated.empty())
        throw std::runtime_error("evaluate_checkpoint: no valid generated trajectories");
    res.report = metrics::evaluate_generation(to_cell_records(data.tgt_mob_test),
                                              to_cell_records(generated), data.cell_size);
    return res;
}

std::string StabilityReport::to_json() const {
    nlohmann::json j;
    j["subspace_m"] = subspace_m;
    j["qtq_max_abs_err"] = qtq_max_abs_err;
    j["delta0_ratio"] = delta0_ratio;
    j["delta0_norm"] = delta0_norm;
    j["srcmob_ratio_base"] = srcmob_ratio_base;
    auto diff = [](const subspace::DiffReport& d) {
        nlohmann::json o;
        o["proj_diff_norm"] = d.proj_diff_norm;
        o["diff_norm"] = d.diff_norm;
        o["proj_b_norm"] = d.proj_b_norm;
        o["proj_i_norm"] = d.proj_i_norm;
        return o;
    };
    j["diff_tgt_bus"] = diff(diff_tgt_bus);
    j["diff_src_mob"] = diff(diff_src_mob);
    j["diff_src_bus"] = diff(diff_src_bus);
    j["composed"] = {{"lhs_norm", composed.lhs_norm},
                     {"tgt_bus_term", composed.tgt_bus_term},
                     {"src_mob_term", composed.src_mob_term},
                     {"src_bus_term", composed.src_bus_term},
                     {"triangle_holds", composed.triangle_holds},
                     {"linearity_residual", composed.linearity_residual}};
    j["tv"] = {{"composed_pair", tv_composed_pair},
               {"composed_b_vs_base", tv_composed_b_vs_base},
               {"composed_i_vs_base", tv_composed_i_vs_base}};
    return j.dump(2);
}

std::string StabilityReport::summary_table() const {
    std::ostringstream s;
    s << "stability summary (base vs instruct initialization)\n";
    s << "  subspace size m:                    " << subspace_m << "\n";
    s << "  ||P d0|| / ||d0||:                  " << delta0_ratio << "\n";
    s << "  ||P V_B(src-mob)|| / ||V||:         " << srcmob_ratio_base << "\n";
    auto row = [&](const char* name, const subspace::DiffReport& d) {
        s << "  " << name << ": ||P(VB-VI)|| = " << d.proj_diff_norm
          << "  ||VB-VI|| = " << d.diff_norm << "\n";
    };
    row("tgt-bus", diff_tgt_bus);
    row("src-mob", diff_src_mob);
    row("src-bus", diff_src_bus);
    s << "  composed: ||P(comp_B-comp_I)|| = " << composed.lhs_norm
      << " <= " << composed.tgt_bus_term << " + " << composed.src_mob_term << " + "
      << composed.src_bus_term << (composed.triangle_holds ? "  (holds)" : "  (VIOLATED)")
      << "\n";
    s << "  mean step TV: composed pair = " << tv_composed_pair
      << ", vs base = " << tv_composed_b_vs_base << " / " << tv_composed_i_vs_base << "\n";
    return s.str();
}

StabilityReport run_stability_analysis(const ExperimentData& data, const TransferConfig& cfg,
                                       const StabilityConfig& scfg, std::uint64_t seed) {
    // Base and instruct initializations over the base vocabulary.
    const tokenizer::Vocab base_vocab = tokenizer::Vocab::base();
    model::ModelConfig pre_cfg = cfg.model;
    pre_cfg.vocab_size = base_vocab.size();
    pre_cfg.seed = mix_seed(seed, "pretrain");
    model::TrainOptions pre_opt = model::TrainOptions::from_config(pre_cfg);
    pre_opt.lr = cfg.pretrain_lr;
    pre_opt.epochs = cfg.pretrain_epochs;
    pre_opt.seed = pre_cfg.seed;
    const auto corpus =
        model::make_pretrain_corpus(cfg.pretrain_sequences, mix_seed(seed, "corpus"));
    const model::Checkpoint theta0_b = model::pretrain_base(pre_cfg, corpus, base_vocab, pre_opt);
    const auto aux =
        model::make_instruct_corpus(scfg.instruct_sequences, mix_seed(seed, "aux"));
    const model::Checkpoint theta0_i = model::make_instruct_variant(
        theta0_b, aux, scfg.instruct_steps, scfg.instruct_lr, mix_seed(seed, "instruct"));

    const TrainedVectors base_side = train_task_vectors(data, cfg, seed, &theta0_b);
    const TrainedVectors instr_side =
        train_task_vectors(data, cfg, mix_seed(seed, "instr-side"), &theta0_i);

    const subspace::Registry reg = subspace::Registry::build(base_side.theta0_ext.cfg);

    // X_traj mixture: equal parts of the three task serializations.
    std::vector<std::vector<model::TokenId>> mixture;
    const std::size_t per = scfg.subspace_sample_per_task;
    for (std::size_t i = 0; i < per; ++i) {
        if (i < data.src_bus_seqs.size()) mixture.push_back(data.src_bus_seqs[i]);
        if (i < data.src_mob_seqs.size()) mixture.push_back(data.src_mob_seqs[i]);
        if (i < data.tgt_bus_seqs.size()) mixture.push_back(data.tgt_bus_seqs[i]);
    }
    const subspace::SubspaceBasis basis = subspace::build_subspace(
        base_side.theta0_ext, reg, mixture, data.vocab, scfg.m_max, mix_seed(seed, "basis"));

    StabilityReport rep;
    rep.subspace_m = basis.m();
    rep.qtq_max_abs_err =
        (basis.q.transpose() * basis.q -
         Eigen::MatrixXd::Identity(basis.m(), basis.m()))
            .cwiseAbs()
            .maxCoeff();

    const Eigen::VectorXd delta0 =
        reg.flatten_param_diff(instr_side.theta0_ext, base_side.theta0_ext);
    rep.delta0_norm = delta0.norm();
    rep.delta0_ratio = subspace::project(basis.q, delta0).ratio;

    const Eigen::VectorXd v_sm_b = reg.flatten(base_side.src_mob);
    rep.srcmob_ratio_base = subspace::project(basis.q, v_sm_b).ratio;

    rep.diff_tgt_bus = subspace::projected_tv_diff(basis, reg.flatten(base_side.tgt_bus),
                                                   reg.flatten(instr_side.tgt_bus));
    rep.diff_src_mob =
        subspace::projected_tv_diff(basis, v_sm_b, reg.flatten(instr_side.src_mob));
    rep.diff_src_bus = subspace::projected_tv_diff(basis, reg.flatten(base_side.src_bus),
                                                   reg.flatten(instr_side.src_bus));

    const taskvec::TaskVector comp_b =
        taskvec::compose_target(base_side.tgt_bus, base_side.src_mob, base_side.src_bus, cfg.mu);
    const taskvec::TaskVector comp_i = taskvec::compose_target(
        instr_side.tgt_bus, instr_side.src_mob, instr_side.src_bus, cfg.mu);
    rep.composed = subspace::composed_stability(
        basis, reg, comp_b, comp_i, base_side.tgt_bus, instr_side.tgt_bus, base_side.src_mob,
        instr_side.src_mob, base_side.src_bus, instr_side.src_bus, cfg.mu);

    // Per-step distribution proximity on held-out serializations.
    if (data.held_out_seqs.empty())
        throw std::invalid_argument("run_stability_analysis: no held-out sequences");
    const auto& held_seqs = data.held_out_seqs;
    const model::Checkpoint model_b = taskvec::apply(base_side.theta0_ext, comp_b);
    const model::Checkpoint model_i = taskvec::apply(instr_side.theta0_ext, comp_i);
    const auto vtraj = data.vocab.vtraj_ids();
    rep.tv_composed_pair = subspace::mean_step_tv(model_b, model_i, held_seqs, vtraj);
    rep.tv_composed_b_vs_base =
        subspace::mean_step_tv(model_b, base_side.theta0_ext, held_seqs, vtraj);
    rep.tv_composed_i_vs_base =
        subspace::mean_step_tv(model_i, base_side.theta0_ext, held_seqs, vtraj);
    return rep;
}

}  // namespace trajta::pipeline
