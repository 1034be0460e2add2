#pragma once

// The full gradient audit: every op of the kernel on its own, then every
// training objective on a small random model at many random points.

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "weakpair/graph.hpp"

namespace weakpair::grad {

struct SuiteOptions {
    std::size_t points = 100;     // random points per objective
    std::size_t op_points = 10;   // random points per op
    double eps = 1e-5;
    double tol = 1e-4;
    std::uint64_t seed = 0;
};

struct SuiteEntry {
    std::string name;  // "op:<op>" or "loss:<objective>"
    std::size_t points = 0;
    double max_rel_error = 0.0;
    bool passed = true;
    std::string detail;  // worst parameter, or the failing ops behind a failing loss
};

struct SuiteReport {
    std::vector<SuiteEntry> entries;
    double seconds = 0.0;
    bool passed() const;
    std::vector<std::string> failing_ops() const;
};

// Objectives: itc, uitc, itm, gitm, total.
const std::vector<std::string>& suite_objectives();

SuiteReport run_gradcheck_suite(const SuiteOptions& opts,
                                const BackwardTable& rules = BackwardTable::standard());

// One objective only; `points` random points.
SuiteEntry check_objective(const std::string& name, std::size_t points, std::uint64_t seed,
                           double eps, double tol,
                           const BackwardTable& rules = BackwardTable::standard());
SuiteEntry check_op(Op op, std::size_t points, std::uint64_t seed, double eps, double tol,
                    const BackwardTable& rules = BackwardTable::standard());

// name,points,max_rel_error,status,detail
void write_report(const SuiteReport& r, std::ostream& os);

}  // namespace weakpair::grad
