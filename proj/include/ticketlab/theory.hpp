// SPDX-License-Identifier: Apache-2.0
//
// Numerical probes of the low-rank Fisher picture: the KL quadratic form,
// sensitivity of the top-r eigenspace versus its complement, span recovery
// from a random coordinate subset, and concentration of the restricted Gram
// matrix.

#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ticketlab/numerics.hpp"
#include "ticketlab/policy.hpp"
#include "ticketlab/seed_stream.hpp"

namespace ticketlab::theory {

/// Exact rank-r Fisher V diag(lambda) V^T with orthonormal V (d x r).
struct SynthFisher {
  std::size_t dim = 0;
  std::size_t rank = 0;
  std::vector<double> eigenvalues;  ///< positive, descending
  numerics::Matrix basis;           ///< d x r
  double coherence = 0.0;           ///< sqrt(d) * max |V_ij|
};

/// sqrt(d) * max |entry| of a d x r basis.
double coherence(const numerics::Matrix& basis);

/// Coherence above which a d x r basis is treated as localized. Orthonormalized
/// Gaussian columns sit near sqrt(2 ln(2dr)); this allows twice that.
double delocalization_bound(std::size_t d, std::size_t r);
bool delocalized(const SynthFisher& f);

/// Default spectrum lambda_i = 1 / (i + 1).
std::vector<double> default_spectrum(std::size_t r);

/// Orthonormalized Gaussian columns. ContractViolation if r > d.
SynthFisher synth_delocalized_basis(std::size_t d, std::size_t r, numerics::SeedStream stream,
                                    std::optional<std::vector<double>> eigenvalues = std::nullopt);

/// Columns are the first r standard basis vectors (maximally localized).
SynthFisher synth_axis_basis(std::size_t d, std::size_t r, std::optional<std::vector<double>> eigenvalues = std::nullopt);

/// sqrt(u^T V diag(lambda) V^T u).
double fisher_seminorm(const SynthFisher& f, std::span<const double> u);

/// min over c' of ||V c - P_S V c'||_F divided by ||V c||_F, in the Fisher seminorm.
/// `active` lists coordinates in [0, d). ContractViolation if ||V c||_F = 0.
double mask_span_residual(const SynthFisher& f, std::span<const double> coeffs, std::span<const std::uint64_t> active);

/// Coefficients whose image Lambda^{1/2} c is isotropic Gaussian.
std::vector<double> fisher_isotropic_coeffs(const SynthFisher& f, numerics::SeedStream& stream);

struct PhasePoint {
  std::size_t k = 0;
  double median = 0.0;
  double mean = 0.0;
  double fraction_below_005 = 0.0;
  std::size_t median_restricted_rank = 0;  ///< rank of V_S^T V_S
  std::vector<double> residuals;
};

struct PhaseCurve {
  std::vector<PhasePoint> points;
  bool monotone_median = true;  ///< medians non-increasing in k (1e-12 slack)
};

/// For each k, `trials` independent (support, coefficient) draws.
PhaseCurve phase_transition_curve(const SynthFisher& f, std::span<const std::size_t> k_grid, std::size_t trials,
                                  const numerics::SeedStream& stream);

struct ConcentrationStats {
  std::size_t k = 0;
  double mean = 0.0;
  double max = 0.0;
  std::vector<double> deviations;
};

/// ||(d/k) V_S^T V_S - I_r||_2 over `trials` random supports of size k.
ConcentrationStats gram_concentration_trial(const SynthFisher& f, std::size_t k, std::size_t trials,
                                            const numerics::SeedStream& stream);

/// Least-squares slope of log(y) against log(x).
double loglog_slope(std::span<const double> x, std::span<const double> y);

// ---------------------------------------------------------------------------
// Probes on a real policy, using exact enumeration over a fixed horizon.

struct PolicyProbe {
  policy::Policy policy;
  std::vector<TokenList> prompts;
  std::size_t horizon = 2;
};

/// Mean over prompts of KL(pi_theta || pi_{theta + delta}).
double mean_exact_kl(const PolicyProbe& probe, std::span<const double> delta);
double mean_total_variation(const PolicyProbe& probe, std::span<const double> delta);

/// Exact Fisher of the probe (full parameter vector).
numerics::Matrix exact_fisher(const PolicyProbe& probe);

struct KlQuadraticPoint {
  double scale = 0.0;
  double exact_kl = 0.0;
  double quadratic = 0.0;
  double error = 0.0;
};

std::vector<KlQuadraticPoint> kl_quadratic_check(const PolicyProbe& probe, const numerics::Matrix& fisher,
                                                 std::span<const double> direction, std::span<const double> scales);

struct SensitivityReport {
  std::size_t rank = 0;
  double lambda_r = 0.0;
  double lambda_next = 0.0;
  double gap_ratio = 0.0;         ///< lambda_{r+1} / lambda_r
  double kl_parallel = 0.0;
  double kl_perp = 0.0;
  double tv_parallel = 0.0;
  double tv_perp = 0.0;
  double kl_ratio = 0.0;          ///< kl_perp / kl_parallel
  double step_norm = 0.0;         ///< shared Euclidean norm of both perturbations
  bool inconclusive = false;      ///< gap_ratio > 0.9
  bool bound_holds = false;       ///< kl_ratio <= gap_ratio * (1 + tol)
};

/// Random unit directions in span(v_1..v_r) and span(v_{r+1}..v_d), both
/// scaled to the Euclidean norm at which the parallel one has quadratic KL = K.
SensitivityReport subspace_sensitivity(const PolicyProbe& probe, const numerics::SymEig& fisher_eig, std::size_t r,
                                       double kl_budget, numerics::SeedStream stream, double tol = 0.1);

/// A small random policy and prompt set for the probes above.
struct ProbeSpec {
  policy::PolicyArch arch{4, 3, 4, {8}};
  std::size_t prompts = 2;
  std::size_t prompt_len = 2;
  std::size_t horizon = 3;
  double embed_scale = 1.0;
  double gain = 1.5;
};
PolicyProbe make_probe(const ProbeSpec& spec, numerics::SeedStream stream);

// ---------------------------------------------------------------------------

struct SuiteOptions {
  std::string suite = "all";  ///< all | kl | subspace | phase | concentration | coherence
  std::uint64_t seed = 0;
  bool quick = false;         ///< smaller trial counts
};

/// Runs the requested checks and returns a JSON report (one entry per check
/// with name, parameters, statistics and status pass/fail/inconclusive).
std::string run_suite(const SuiteOptions& options, const std::string& config_hash = {});

}  // namespace ticketlab::theory
