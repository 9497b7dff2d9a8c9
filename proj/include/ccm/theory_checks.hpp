#pragma once

// Numerical checks of the interpolation lemma, the continuation bound and the
// finite-difference reading of endpoint task vectors.
//
// Curves are sampled on an alpha grid; each sample is a flat vector in
// function space. ||v||_rho is the root-mean-square of the vector entries,
// i.e. the mean-square norm over a probe batch of equally sized rollouts.

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "ccm/ccm_select.hpp"
#include "ccm/merge_engine.hpp"
#include "ccm/pde_sim.hpp"

namespace ccm {

struct CurveSamples {
  std::vector<double> alphas;               // strictly increasing, contains -1 and +1
  std::vector<std::vector<double>> values;  // one function-space vector per alpha

  void validate() const;
  // Index of alpha on the grid (within 1e-12), or nullopt.
  std::optional<std::size_t> find(double alpha) const;
};

double rho_norm(const std::vector<double>& v);

struct CurvaturePoint {
  double alpha = 0.0;
  double value = 0.0;
};

// ||F(a + d) - 2 F(a) + F(a - d)||_rho / d^2 at every grid alpha whose
// neighbours a +- d are on the grid. Throws InvalidArgument if none are.
std::vector<CurvaturePoint> empirical_curvature(const CurveSamples& curve, double delta);

// |1 - a|/2 eps_minus + |1 + a|/2 eps_plus + |a^2 - 1|/2 k_e
double continuation_bound(double eps_minus, double eps_plus, double k_e, double alpha);

struct LemmaReport {
  std::vector<double> alphas;
  std::vector<double> errors;  // ||phi(a) - l_phi(a)||
  std::vector<double> bounds;  // |a^2 - 1|/2 * sup ||phi''|| over the enclosing interval
  double min_slack = 0.0;
};

using VectorCurve = std::function<std::vector<double>(double)>;
// sup of ||phi''|| over [lo, hi]
using IntervalSup = std::function<double(double lo, double hi)>;

// Two-point interpolation l_phi(a) = (1-a)/2 phi(-1) + (1+a)/2 phi(1) against
// the Lagrange-remainder bound, with Euclidean norms.
LemmaReport verify_lemma_synthetic(const VectorCurve& phi, const IntervalSup& sup_second,
                                   const std::vector<double>& alphas);

struct FdOrders {
  std::vector<double> hs;
  std::vector<double> shared_errors;       // ||(U(-h) + U(h))/2 - U(0)||
  std::vector<double> directional_errors;  // ||(U(h) - U(-h))/2 - h U'(0)||
  std::optional<double> shared_slope;      // log-log least squares; empty if degenerate
  std::optional<double> directional_slope;
};

// Least-squares slope of log(y) against log(x). Throws DegenerateInput for
// fewer than two points or non-positive values.
double loglog_slope(const std::vector<double>& x, const std::vector<double>& y);

FdOrders finite_difference_orders(const VectorCurve& branch, const std::vector<double>& derivative_at_zero,
                                  const std::vector<double>& hs);

struct BoundRow {
  double alpha = 0.0;
  double measured = 0.0;   // ||F_a - S_a||_rho
  double k_e = 0.0;        // sup of K_E over the enclosing interval
  double k_f = 0.0;
  double k_s = 0.0;
  double bound = 0.0;      // computable form, K_F + K_S
  double bound_ke = 0.0;   // with the error curvature K_E
  double slack = 0.0;      // bound - measured
  double tolerance = 0.0;  // curvature discretization estimate times |a^2 - 1|/2
  bool flagged = false;    // slack < -tolerance
  // Coordinate-mismatch check against S at the next grid alpha (NaN at the top end).
  double mismatch_measured = 0.0;
  double mismatch_bound = 0.0;
};

struct BoundReport {
  double eps_minus = 0.0;
  double eps_plus = 0.0;
  double lipschitz_s = 0.0;
  double delta = 0.0;
  std::vector<BoundRow> rows;
};

// Audit from sampled model curve F and reference curve S on a uniform grid of
// spacing delta.
BoundReport bound_audit(const CurveSamples& model, const CurveSamples& reference, double delta);

struct ProbeBatch {
  std::vector<std::uint64_t> seeds;
};

// Seeded probe initial conditions (8 by default), disjoint from the split seed banks.
ProbeBatch make_probe_batch(std::uint64_t seed, int count = 8);

// Samples F_a (rollouts of theta(a)) and S_a (simulations at lambda(a)) on the
// bank grid and audits them. jobs parallelizes over alpha.
BoundReport bound_audit(const CoordinateLine& line, const FamilySpec& spec, const AlphaBank& bank,
                        const ProbeBatch& probes, int jobs = 1);

}  // namespace ccm
