#include "trajta/taskvec.hpp"

#include <cmath>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "trajta/common.hpp"
#include "trajta/container.hpp"

namespace trajta::taskvec {

void MuCoefficients::validate() const {
    if (!std::isfinite(e) || !std::isfinite(l) || !std::isfinite(h))
        throw std::invalid_argument("mu coefficients must be finite");
}

TaskVector TaskVector::zeros_like(const TaskVector& other) {
    TaskVector v;
    v.v_e = Eigen::MatrixXf::Zero(other.v_e.rows(), other.v_e.cols());
    for (const auto& [name, m] : other.v_l)
        v.v_l[name] = Eigen::MatrixXf::Zero(m.rows(), m.cols());
    v.v_h = Eigen::MatrixXf::Zero(other.v_h.rows(), other.v_h.cols());
    v.provenance = other.provenance;
    return v;
}

namespace {

void require_same_shapes(const TaskVector& a, const TaskVector& b, const char* who) {
    auto bad = [&](const std::string& what) {
        throw std::invalid_argument(std::string(who) + ": shape mismatch in " + what);
    };
    if (a.v_e.rows() != b.v_e.rows() || a.v_e.cols() != b.v_e.cols()) bad("embedding delta");
    if (a.v_h.rows() != b.v_h.rows() || a.v_h.cols() != b.v_h.cols()) bad("head delta");
    if (a.v_l.size() != b.v_l.size()) bad("backbone delta set");
    for (const auto& [name, m] : a.v_l) {
        const auto it = b.v_l.find(name);
        if (it == b.v_l.end()) bad("backbone delta " + name);
        if (it->second.rows() != m.rows() || it->second.cols() != m.cols())
            bad("backbone delta " + name);
    }
}

void require_same_base(const TaskVector& a, const TaskVector& b, const char* who) {
    if (a.provenance.base_hash != b.provenance.base_hash)
        throw std::invalid_argument(std::string(who) +
                                    ": task vectors come from different base checkpoints (" +
                                    a.provenance.base_hash + " vs " + b.provenance.base_hash +
                                    ")");
}

}  // namespace

TaskVector extract(const model::Checkpoint& finetuned, const model::Checkpoint& base) {
    if (finetuned.vocab_hash != base.vocab_hash)
        throw std::invalid_argument("extract: vocab hash mismatch between checkpoints");
    if (finetuned.cfg.n_layers != base.cfg.n_layers ||
        finetuned.cfg.d_model != base.cfg.d_model || finetuned.cfg.d_ff != base.cfg.d_ff ||
        finetuned.cfg.vocab_size != base.cfg.vocab_size)
        throw std::invalid_argument("extract: architecture mismatch between checkpoints");
    if (!base.adapters.empty() || !base.deltas.empty())
        throw std::invalid_argument("extract: base checkpoint must be an initialization");

    TaskVector v;
    v.v_e = finetuned.params.embedding - base.params.embedding;
    v.v_h = finetuned.params.head - base.params.head;
    for (const auto& name : model::adapted_projection_names(base.cfg.n_layers)) {
        const auto it = finetuned.deltas.find(name);
        if (it != finetuned.deltas.end()) {
            v.v_l[name] = it->second;
        } else {
            // Full-parameter fine-tune: the backbone shift is the dense
            // difference of the projection weights themselves.
            v.v_l[name] = finetuned.params.tensor(name) - base.params.tensor(name);
        }
    }
    v.provenance.base_hash = model::checkpoint_hash(base);
    v.provenance.config_hash = model::config_hash(base.cfg);
    return v;
}

TaskVector compose_target(const TaskVector& tgt_bus, const TaskVector& src_mob,
                          const TaskVector& src_bus, const MuCoefficients& mu) {
    mu.validate();
    require_same_base(tgt_bus, src_mob, "compose_target");
    require_same_base(tgt_bus, src_bus, "compose_target");
    require_same_shapes(tgt_bus, src_mob, "compose_target");
    require_same_shapes(tgt_bus, src_bus, "compose_target");

    TaskVector out;
    out.v_e = tgt_bus.v_e +
              static_cast<float>(mu.e) * (src_mob.v_e - src_bus.v_e);
    out.v_h = tgt_bus.v_h +
              static_cast<float>(mu.h) * (src_mob.v_h - src_bus.v_h);
    for (const auto& [name, tb] : tgt_bus.v_l)
        out.v_l[name] =
            tb + static_cast<float>(mu.l) * (src_mob.v_l.at(name) - src_bus.v_l.at(name));
    out.provenance = tgt_bus.provenance;
    out.provenance.dataset_id = "composed(" + tgt_bus.provenance.dataset_id + "+" +
                                src_mob.provenance.dataset_id + "-" +
                                src_bus.provenance.dataset_id + ")";
    return out;
}

model::Checkpoint apply(const model::Checkpoint& base, const TaskVector& v,
                        const SubspaceCoeffs& c) {
    // Application only needs architectural compatibility (the additive
    // inverse is applied to a shifted checkpoint, not the original base);
    // base-identity is enforced where vectors are combined, in compose/add.
    if (!v.provenance.config_hash.empty() &&
        v.provenance.config_hash != model::config_hash(base.cfg))
        throw std::invalid_argument(
            "apply: task vector config hash does not match the checkpoint (" +
            v.provenance.config_hash + " vs " + model::config_hash(base.cfg) + ")");
    if (v.v_e.rows() != base.params.embedding.rows() ||
        v.v_e.cols() != base.params.embedding.cols())
        throw std::invalid_argument("apply: embedding delta shape mismatch");
    if (v.v_h.rows() != base.params.head.rows() || v.v_h.cols() != base.params.head.cols())
        throw std::invalid_argument("apply: head delta shape mismatch");

    model::Checkpoint out = base;
    out.params.embedding += static_cast<float>(c.e) * v.v_e;
    out.params.head += static_cast<float>(c.h) * v.v_h;
    for (const auto& [name, d] : v.v_l) {
        const auto& w = base.params.tensor(name);
        if (w.rows() != d.rows() || w.cols() != d.cols())
            throw std::invalid_argument("apply: backbone delta shape mismatch for " + name);
        Eigen::MatrixXf scaled = static_cast<float>(c.l) * d;
        auto it = out.deltas.find(name);
        if (it == out.deltas.end()) out.deltas[name] = std::move(scaled);
        else it->second += scaled;
    }
    return out;
}

TaskVector ablate(const TaskVector& v, const SubspaceMask& keep) {
    TaskVector out = v;
    if (!keep.e) out.v_e.setZero();
    if (!keep.h) out.v_h.setZero();
    if (!keep.l)
        for (auto& [name, m] : out.v_l) m.setZero();
    return out;
}

TaskVector add(const TaskVector& a, const TaskVector& b) {
    require_same_base(a, b, "add");
    require_same_shapes(a, b, "add");
    TaskVector out = a;
    out.v_e += b.v_e;
    out.v_h += b.v_h;
    for (auto& [name, m] : out.v_l) m += b.v_l.at(name);
    return out;
}

TaskVector scale(const TaskVector& v, double factor) {
    TaskVector out = v;
    const float f = static_cast<float>(factor);
    out.v_e *= f;
    out.v_h *= f;
    for (auto& [name, m] : out.v_l) m *= f;
    return out;
}

double norm(const TaskVector& v) {
    double acc = static_cast<double>(v.v_e.cast<double>().squaredNorm()) +
                 static_cast<double>(v.v_h.cast<double>().squaredNorm());
    for (const auto& [name, m] : v.v_l) acc += m.cast<double>().squaredNorm();
    return std::sqrt(acc);
}

void save_task_vector(const std::string& path, const TaskVector& v) {
    container::TensorFile f;
    nlohmann::json meta;
    meta["kind"] = "task_vector";
    meta["base_hash"] = v.provenance.base_hash;
    meta["dataset_id"] = v.provenance.dataset_id;
    meta["config_hash"] = v.provenance.config_hash;
    f.meta_json = meta.dump();
    f.tensors.push_back({"embedding.delta", v.v_e});
    for (const auto& [name, m] : v.v_l) f.tensors.push_back({name + ".delta", m});
    f.tensors.push_back({"head.delta", v.v_h});
    container::save(path, f);
}

TaskVector load_task_vector(const std::string& path) {
    const container::TensorFile f = container::load(path);
    const auto meta = nlohmann::json::parse(f.meta_json);
    if (meta.value("kind", "") != "task_vector")
        throw std::runtime_error("not a task vector file: " + path);
    TaskVector v;
    v.provenance.base_hash = meta.value("base_hash", "");
    v.provenance.dataset_id = meta.value("dataset_id", "");
    v.provenance.config_hash = meta.value("config_hash", "");
    for (const auto& t : f.tensors) {
        if (t.name == "embedding.delta") v.v_e = t.value;
        else if (t.name == "head.delta") v.v_h = t.value;
        else if (t.name.ends_with(".delta"))
            v.v_l[t.name.substr(0, t.name.size() - 6)] = t.value;
        else throw std::runtime_error("unexpected tensor in task vector: " + t.name);
    }
    if (v.v_e.size() == 0 || v.v_h.size() == 0)
        throw std::runtime_error("task vector missing embedding/head delta: " + path);
    return v;
}

}  // namespace trajta::taskvec
