#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "trajta/model.hpp"
#include "trajta/taskvec.hpp"

namespace trajta::subspace {

// Flattening registry over exactly the groups task vectors live in: the
// embedding, the six adapted projections per layer (as dense deltas), and
// the head. Frozen weights and layer norms are excluded.
class Registry {
public:
    struct Entry {
        std::string name;
        Eigen::Index rows = 0;
        Eigen::Index cols = 0;
        std::int64_t offset = 0;
    };

    static Registry build(const model::ModelConfig& cfg);

    std::int64_t dim() const { return dim_; }
    const std::vector<Entry>& entries() const { return entries_; }

    // Gradient buffers hold all groups; only registry groups are read.
    Eigen::VectorXd flatten_grads(const model::Params<float>& grads) const;
    Eigen::VectorXd flatten(const taskvec::TaskVector& v) const;
    // Per-group parameter difference a - b over the registry (used for the
    // base-vs-instruct initialization difference).
    Eigen::VectorXd flatten_param_diff(const model::Checkpoint& a,
                                       const model::Checkpoint& b) const;

private:
    std::vector<Entry> entries_;
    std::int64_t dim_ = 0;
};

struct SubspaceBasis {
    Eigen::MatrixXd q;          // dim x m, orthonormal columns
    std::string anchor_hash;    // hash of the base checkpoint
    std::string manifest_json;  // sampled (sequence, position, token) triples

    int m() const { return static_cast<int>(q.cols()); }
};

// Spans gradients of single trajectory-token logits at the final prefix
// position, computed at the base checkpoint. Directions whose residual after
// orthogonalization falls below 1e-8 are dropped.
SubspaceBasis build_subspace(const model::Checkpoint& base, const Registry& reg,
                             const std::vector<std::vector<model::TokenId>>& sequences,
                             const tokenizer::Vocab& vocab, int m_max, std::uint64_t seed);

struct Projection {
    Eigen::VectorXd parallel;
    double ratio = 0.0;  // ||P v|| / ||v||, in [0, 1]
};

Projection project(const Eigen::MatrixXd& q, const Eigen::VectorXd& v);

struct DiffReport {
    double proj_diff_norm = 0.0;  // ||P (v_b - v_i)||
    double diff_norm = 0.0;       // ||v_b - v_i||
    double proj_b_norm = 0.0;     // ||P v_b||
    double proj_i_norm = 0.0;     // ||P v_i||
};

DiffReport projected_tv_diff(const SubspaceBasis& basis, const Eigen::VectorXd& v_b,
                             const Eigen::VectorXd& v_i);

struct ComposedStabilityReport {
    double lhs_norm = 0.0;       // ||P (comp_b - comp_i)||
    double tgt_bus_term = 0.0;   // ||P (tb_b - tb_i)||
    double src_mob_term = 0.0;   // mu-scaled ||P mu(sm_b - sm_i)||
    double src_bus_term = 0.0;   // mu-scaled ||P mu(sb_b - sb_i)||
    bool triangle_holds = false;
    double linearity_residual = 0.0;  // exact three-term identity check
};

// Verifies the three-term expansion of the composed difference inside the
// subspace; throws if the provided composed vectors do not match the
// constituents under the given mu (mu mismatch).
ComposedStabilityReport composed_stability(
    const SubspaceBasis& basis, const Registry& reg, const taskvec::TaskVector& comp_b,
    const taskvec::TaskVector& comp_i, const taskvec::TaskVector& tb_b,
    const taskvec::TaskVector& tb_i, const taskvec::TaskVector& sm_b,
    const taskvec::TaskVector& sm_i, const taskvec::TaskVector& sb_b,
    const taskvec::TaskVector& sb_i, const taskvec::MuCoefficients& mu);

// -eta times the mean full-batch loss gradient at the checkpoint, flattened
// over the registry.
Eigen::VectorXd first_order_vector(const model::Checkpoint& ckpt,
                                   const std::vector<std::vector<model::TokenId>>& dataset,
                                   double eta, const Registry& reg);

// Mean per-step total-variation distance between the two models'
// next-token distributions, restricted to the trajectory-token set and
// averaged over all prediction positions of the held-out sequences.
double mean_step_tv(const model::Checkpoint& a, const model::Checkpoint& b,
                    const std::vector<std::vector<model::TokenId>>& held_out,
                    const std::vector<model::TokenId>& vtraj);

}  // namespace trajta::subspace
