#include "weakpair/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace weakpair::grad {

double relative_error(double analytic, double numeric) {
    const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
    return std::abs(analytic - numeric) / denom;
}

namespace {

double evaluate(const LossBuilder& loss, std::span<const Tensor> params,
                const BackwardTable& rules) {
    Graph g(rules);
    std::vector<NodeId> ids;
    ids.reserve(params.size());
    for (const Tensor& p : params) ids.push_back(g.parameter(p));
    return g.value(loss(g, ids)).item();
}

}  // namespace

std::vector<Tensor> analytic_gradients(const LossBuilder& loss, std::span<const Tensor> params,
                                       const BackwardTable& rules) {
    Graph g(rules);
    std::vector<NodeId> ids;
    for (const Tensor& p : params) ids.push_back(g.parameter(p));
    const Gradients grads = g.backward(loss(g, ids));
    std::vector<Tensor> out;
    for (NodeId id : ids) out.push_back(grads.of(id));
    return out;
}

GradReport grad_check(const LossBuilder& loss, std::span<const Tensor> params, double eps,
                      const BackwardTable& rules) {
    return grad_check(loss, loss, params, eps, rules);
}

GradReport grad_check(const LossBuilder& loss, const LossBuilder& reference,
                      std::span<const Tensor> params, double eps, const BackwardTable& rules) {
    if (!(eps >= 1e-7 && eps <= 1e-3)) {
        throw std::invalid_argument("grad_check: eps must lie in [1e-7, 1e-3]");
    }
    GradReport report;
    report.analytic = analytic_gradients(loss, params, rules);

    std::vector<Tensor> work(params.begin(), params.end());
    for (std::size_t p = 0; p < work.size(); ++p) {
        Tensor numeric(work[p].rows(), work[p].cols());
        for (std::size_t i = 0; i < work[p].size(); ++i) {
            const double orig = work[p][i];
            work[p][i] = orig + eps;
            const double up = evaluate(reference, work, rules);
            work[p][i] = orig - eps;
            const double down = evaluate(reference, work, rules);
            work[p][i] = orig;
            numeric[i] = (up - down) / (2.0 * eps);

            const double err = relative_error(report.analytic[p][i], numeric[i]);
            if (err > report.max_rel_error || std::isnan(err)) {
                report.max_rel_error = std::isnan(err) ? std::numeric_limits<double>::infinity() : err;
                report.worst_param = p;
                report.worst_entry = i;
            }
        }
        report.numeric.push_back(std::move(numeric));
    }
    return report;
}

}  // namespace weakpair::grad
