#pragma once

#include <functional>
#include <span>
#include <vector>

#include "weakpair/graph.hpp"

namespace weakpair::grad {

// Builds a scalar loss node from parameter nodes registered in the same order
// as the tensors handed to grad_check.
using LossBuilder = std::function<NodeId(Graph& graph, std::span<const NodeId> params)>;

struct GradReport {
    std::vector<Tensor> analytic;
    std::vector<Tensor> numeric;
    double max_rel_error = 0.0;
    std::size_t worst_param = 0;
    std::size_t worst_entry = 0;

    bool passed(double tol) const { return max_rel_error < tol; }
};

// |a - n| / max(|a|, |n|, 1e-8)
double relative_error(double analytic, double numeric);

// backward() of the built loss, one tensor per parameter.
std::vector<Tensor> analytic_gradients(const LossBuilder& loss, std::span<const Tensor> params,
                                       const BackwardTable& rules = BackwardTable::standard());

// Compares backward() against central differences with step `eps` on every
// parameter entry. `eps` must lie in [1e-7, 1e-3].
GradReport grad_check(const LossBuilder& loss, std::span<const Tensor> params, double eps,
                      const BackwardTable& rules = BackwardTable::standard());

// Analytic gradients of `loss` against central differences of `reference`.
// For graphs with detach nodes the reference is the same expression with the
// detached values substituted as constants.
GradReport grad_check(const LossBuilder& loss, const LossBuilder& reference,
                      std::span<const Tensor> params, double eps,
                      const BackwardTable& rules = BackwardTable::standard());

}  // namespace weakpair::grad
