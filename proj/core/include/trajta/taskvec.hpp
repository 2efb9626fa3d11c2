#pragma once

#include <map>
#include <optional>
#include <string>

#include "trajta/model.hpp"

namespace trajta::taskvec {

struct Provenance {
    std::string base_hash;    // hash of the initialization checkpoint
    std::string dataset_id;
    std::string config_hash;
    friend bool operator==(const Provenance&, const Provenance&) = default;
};

struct MuCoefficients {
    double e = 0.01;
    double l = 0.5;
    double h = 0.02;

    void validate() const;
};

// Parameter shift of one fine-tuning run relative to its initialization,
// decomposed into the embedding delta, the per-projection backbone deltas
// (dense), and the head delta.
struct TaskVector {
    Eigen::MatrixXf v_e;
    std::map<std::string, Eigen::MatrixXf> v_l;
    Eigen::MatrixXf v_h;
    Provenance provenance;

    static TaskVector zeros_like(const TaskVector& other);
};

// Elementwise difference of the fine-tuned checkpoint against its
// initialization. Architecture and vocab hash must match.
TaskVector extract(const model::Checkpoint& finetuned, const model::Checkpoint& base);

// v_hat_s = tgt_bus_s + mu_s * (src_mob_s - src_bus_s) per subspace
// s in {E, L, H}; pure arithmetic, no gradient steps.
TaskVector compose_target(const TaskVector& tgt_bus, const TaskVector& src_mob,
                          const TaskVector& src_bus, const MuCoefficients& mu);

struct SubspaceCoeffs {
    double e = 1.0;
    double l = 1.0;
    double h = 1.0;
};

// theta = theta0 + sum_s c_s V_s; the backbone shift is carried as a dense
// delta applied at forward time.
model::Checkpoint apply(const model::Checkpoint& base, const TaskVector& v,
                        const SubspaceCoeffs& c = {});

struct SubspaceMask {
    bool e = true;  // true keeps the subspace, false zeroes it
    bool l = true;
    bool h = true;
};

TaskVector ablate(const TaskVector& v, const SubspaceMask& keep);

// Vector-space helpers (shapes and provenance base hash must match).
TaskVector add(const TaskVector& a, const TaskVector& b);
TaskVector scale(const TaskVector& v, double factor);

double norm(const TaskVector& v);

void save_task_vector(const std::string& path, const TaskVector& v);
TaskVector load_task_vector(const std::string& path);

}  // namespace trajta::taskvec
