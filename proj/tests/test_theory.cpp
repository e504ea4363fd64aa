// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <json.hpp>
#include <numeric>

#include "ticketlab/errors.hpp"
#include "ticketlab/theory.hpp"

using namespace ticketlab;
using namespace ticketlab::theory;
using numerics::Matrix;

namespace {

double max_offdiag_identity(const Matrix& m) {
  double worst = 0.0;
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) worst = std::max(worst, std::abs(m(i, j) - (i == j ? 1.0 : 0.0)));
  return worst;
}

std::vector<std::uint64_t> iota_indices(std::size_t n) {
  std::vector<std::uint64_t> v(n);
  std::iota(v.begin(), v.end(), 0);
  return v;
}

// Independent residual oracle: pseudo-inverse of the normal equations in the
// Fisher geometry, built from the d-dimensional vectors directly.
double residual_oracle(const SynthFisher& f, const std::vector<double>& c, const std::vector<std::uint64_t>& active) {
  const std::size_t d = f.dim, r = f.rank;
  std::vector<double> target(d, 0.0);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < r; ++j) target[i] += f.basis(i, j) * c[j];
  // Columns of B are P_S v_j.
  Matrix b(d, r);
  for (auto i : active)
    for (std::size_t j = 0; j < r; ++j) b(i, j) = f.basis(i, j);
  // Fisher inner product <x, y>_F = x^T V Lambda V^T y.
  auto proj = [&](const std::vector<double>& x) {
    std::vector<double> out(r, 0.0);
    for (std::size_t j = 0; j < r; ++j)
      for (std::size_t i = 0; i < d; ++i) out[j] += f.basis(i, j) * x[i];
    return out;
  };
  auto col = [&](std::size_t j) {
    std::vector<double> x(d);
    for (std::size_t i = 0; i < d; ++i) x[i] = b(i, j);
    return proj(x);
  };
  std::vector<std::vector<double>> pc(r);
  for (std::size_t j = 0; j < r; ++j) pc[j] = col(j);
  const auto pt = proj(target);
  Matrix n(r, r);
  std::vector<double> rhs(r, 0.0);
  for (std::size_t a = 0; a < r; ++a) {
    for (std::size_t q = 0; q < r; ++q)
      for (std::size_t l = 0; l < r; ++l) n(a, q) += pc[a][l] * f.eigenvalues[l] * pc[q][l];
    for (std::size_t l = 0; l < r; ++l) rhs[a] += pc[a][l] * f.eigenvalues[l] * pt[l];
  }
  const auto e = numerics::sym_eig(n);
  std::vector<double> x(r, 0.0);
  for (std::size_t k = 0; k < r; ++k) {
    if (e.values[k] <= 1e-12 * std::max(e.values[0], 1e-300)) continue;
    double dot = 0.0;
    for (std::size_t a = 0; a < r; ++a) dot += e.vectors(a, k) * rhs[a];
    for (std::size_t a = 0; a < r; ++a) x[a] += e.vectors(a, k) * dot / e.values[k];
  }
  std::vector<double> diff = target;
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < r; ++j) diff[i] -= b(i, j) * x[j];
  return fisher_seminorm(f, diff) / fisher_seminorm(f, target);
}

}  // namespace

TEST_CASE("delocalized synthetic basis: orthonormal with moderate coherence") {
  const auto f = synth_delocalized_basis(1000, 10, numerics::SeedStream(1, "basis"));
  CHECK(max_offdiag_identity(f.basis.transpose() * f.basis) < 1e-8);
  CHECK(f.coherence == doctest::Approx(coherence(f.basis)));
  CHECK(f.coherence < 5.0);
  CHECK(delocalized(f));
  CHECK(f.eigenvalues == default_spectrum(10));
  for (std::size_t i = 1; i < f.eigenvalues.size(); ++i) CHECK(f.eigenvalues[i] < f.eigenvalues[i - 1]);

  const auto sq = synth_delocalized_basis(6, 6, numerics::SeedStream(2, "basis"));
  CHECK(max_offdiag_identity(sq.basis.transpose() * sq.basis) < 1e-12);
  CHECK_THROWS_AS(synth_delocalized_basis(3, 4, numerics::SeedStream(0, "x")), ContractViolation);
}

TEST_CASE("axis-aligned basis is maximally coherent and flagged") {
  const auto f = synth_axis_basis(400, 5);
  CHECK(f.coherence == doctest::Approx(20.0));
  CHECK_FALSE(delocalized(f));
  CHECK(delocalization_bound(1000, 10) == doctest::Approx(2.0 * std::sqrt(2.0 * std::log(20000.0))));
}

TEST_CASE("Fisher seminorm vanishes exactly on the orthogonal complement") {
  const auto f = synth_delocalized_basis(50, 4, numerics::SeedStream(3, "basis"));
  numerics::SeedStream s(4, "u");
  for (int t = 0; t < 20; ++t) {
    std::vector<double> u(50);
    for (double& x : u) x = s.normal();
    CHECK(fisher_seminorm(f, u) > 0.0);
    // Remove the span of V.
    for (std::size_t j = 0; j < 4; ++j) {
      double dot = 0.0;
      for (std::size_t i = 0; i < 50; ++i) dot += f.basis(i, j) * u[i];
      for (std::size_t i = 0; i < 50; ++i) u[i] -= dot * f.basis(i, j);
    }
    CHECK(fisher_seminorm(f, u) < 1e-12);
  }
}

TEST_CASE("mask_span_residual: boundary cases and independent oracle") {
  const auto f = synth_delocalized_basis(30, 5, numerics::SeedStream(5, "basis"));
  numerics::SeedStream s(6, "c");
  const auto c = fisher_isotropic_coeffs(f, s);
  CHECK(mask_span_residual(f, c, iota_indices(30)) < 1e-10);
  CHECK(mask_span_residual(f, c, std::vector<std::uint64_t>{}) == doctest::Approx(1.0));
  CHECK_THROWS_AS(mask_span_residual(f, std::vector<double>(5, 0.0), iota_indices(30)), ContractViolation);

  for (std::size_t k : {1, 3, 5, 8, 15}) {
    const auto active = numerics::random_subset(30, k, numerics::SeedStream(k, "subset"));
    CHECK(std::abs(mask_span_residual(f, c, active) - residual_oracle(f, c, active)) < 1e-9);
  }
}

TEST_CASE("mask_span_residual is non-increasing on nested supports") {
  const auto f = synth_delocalized_basis(80, 6, numerics::SeedStream(7, "basis"));
  numerics::SeedStream s(8, "c");
  for (int t = 0; t < 10; ++t) {
    const auto c = fisher_isotropic_coeffs(f, s);
    auto order = numerics::random_subset(80, 80, numerics::SeedStream(t, "perm"));
    // Shuffle via a second stream so prefixes are random nested sets.
    numerics::SeedStream sh(t, "shuffle");
    for (std::size_t i = order.size() - 1; i > 0; --i) std::swap(order[i], order[sh.below(i + 1)]);
    double prev = 1.0 + 1e-12;
    for (std::size_t k = 0; k <= 80; k += 4) {
      std::vector<std::uint64_t> active(order.begin(), order.begin() + k);
      std::sort(active.begin(), active.end());
      const double r = mask_span_residual(f, c, active);
      CHECK(r <= prev + 1e-10);
      prev = r;
    }
  }
}

TEST_CASE("phase curve endpoints and monotone median") {
  const auto f = synth_delocalized_basis(200, 5, numerics::SeedStream(9, "basis"));
  const std::vector<std::size_t> ks = {0, 2, 5, 20, 100, 200};
  const auto curve = phase_transition_curve(f, ks, 20, numerics::SeedStream(10, "phase"));
  REQUIRE(curve.points.size() == ks.size());
  CHECK(curve.points.front().median == doctest::Approx(1.0));
  CHECK(curve.points.back().median < 1e-10);
  CHECK(curve.monotone_median);
  CHECK(curve.points[1].median_restricted_rank == 2);
  CHECK(curve.points[4].median_restricted_rank == 5);
}

TEST_CASE("Gram concentration: zero deviation at k = d; localized basis is worse") {
  const auto f = synth_delocalized_basis(300, 4, numerics::SeedStream(11, "basis"));
  const auto full = gram_concentration_trial(f, 300, 3, numerics::SeedStream(12, "conc"));
  CHECK(full.max == 0.0);
  const auto deloc = gram_concentration_trial(f, 60, 40, numerics::SeedStream(13, "conc"));
  const auto axis = gram_concentration_trial(synth_axis_basis(300, 4), 60, 40, numerics::SeedStream(13, "conc"));
  CHECK(axis.mean > deloc.mean);
  CHECK(deloc.deviations.size() == 40);
}

TEST_CASE("Gram concentration is label-permutation invariant in distribution") {
  // Permuting coordinate labels of the basis leaves the deviation law unchanged.
  const auto f = synth_delocalized_basis(200, 4, numerics::SeedStream(14, "basis"));
  auto g = f;
  numerics::SeedStream sh(15, "perm");
  std::vector<std::size_t> perm(200);
  std::iota(perm.begin(), perm.end(), 0);
  for (std::size_t i = 199; i > 0; --i) std::swap(perm[i], perm[sh.below(i + 1)]);
  for (std::size_t i = 0; i < 200; ++i)
    for (std::size_t j = 0; j < 4; ++j) g.basis(i, j) = f.basis(perm[i], j);
  const auto a = gram_concentration_trial(f, 50, 200, numerics::SeedStream(16, "a"));
  const auto b = gram_concentration_trial(g, 50, 200, numerics::SeedStream(17, "b"));
  auto sd = [](const ConcentrationStats& s) {
    double v = 0.0;
    for (double x : s.deviations) v += (x - s.mean) * (x - s.mean);
    return std::sqrt(v / (s.deviations.size() - 1));
  };
  const double se = std::sqrt((sd(a) * sd(a) + sd(b) * sd(b)) / 200.0);
  CHECK(std::abs(a.mean - b.mean) < 3 * se);
}

TEST_CASE("loglog_slope recovers an exact power law") {
  const std::vector<double> x = {1, 2, 4, 8, 16};
  std::vector<double> y;
  for (double v : x) y.push_back(3.0 * std::pow(v, -0.5));
  CHECK(loglog_slope(x, y) == doctest::Approx(-0.5).epsilon(1e-12));
}

TEST_CASE("policy probe: exact Fisher, KL at zero and cubic remainder") {
  const auto probe = make_probe(ProbeSpec{}, numerics::SeedStream(1, "probe"));
  const auto fisher = exact_fisher(probe);
  const std::size_t d = probe.policy.params.total_params();
  REQUIRE(fisher.rows() == d);
  CHECK(mean_exact_kl(probe, std::vector<double>(d, 0.0)) == 0.0);
  CHECK(mean_total_variation(probe, std::vector<double>(d, 0.0)) == 0.0);

  numerics::SeedStream s(2, "dir");
  std::vector<double> dir(d);
  for (double& x : dir) x = s.normal();
  const std::vector<double> scales = {0.0, 1e-1, 1e-2, 1e-3};
  const auto pts = kl_quadratic_check(probe, fisher, dir, scales);
  CHECK(pts[0].exact_kl == 0.0);
  CHECK(pts[0].error == 0.0);
  // Errors shrink faster than the quadratic term.
  CHECK(pts[3].error / pts[3].quadratic < pts[2].error / pts[2].quadratic);
  CHECK(pts[2].error / pts[2].quadratic < pts[1].error / pts[1].quadratic);
  std::vector<double> xs, ys;
  for (std::size_t i = 1; i < pts.size(); ++i) {
    xs.push_back(pts[i].scale);
    ys.push_back(pts[i].error);
  }
  CHECK(std::abs(loglog_slope(xs, ys) - 3.0) < 0.3);
}

TEST_CASE("null-space direction: KL stays below a cubic bound") {
  // Direction of the smallest eigenvalue of the exact Fisher.
  const auto probe = make_probe(ProbeSpec{}, numerics::SeedStream(3, "probe"));
  const auto fisher = exact_fisher(probe);
  const auto eig = numerics::sym_eig(fisher);
  const std::size_t d = fisher.rows();
  REQUIRE(eig.values.back() < 1e-12 * eig.values.front());
  std::vector<double> v(d);
  for (std::size_t i = 0; i < d; ++i) v[i] = eig.vectors(i, d - 1);
  const auto pts = kl_quadratic_check(probe, fisher, v, std::vector<double>{1e-1, 1e-2});
  CHECK(pts[0].quadratic < 1e-12);
  CHECK(pts[1].exact_kl < pts[0].exact_kl);
  CHECK(pts[1].exact_kl <= 1e-5);
}

TEST_CASE("subspace sensitivity: equal norms and the spectral bound") {
  const auto probe = make_probe(ProbeSpec{}, numerics::SeedStream(4, "probe"));
  const auto eig = numerics::sym_eig(exact_fisher(probe));
  std::size_t r = 1;
  while (eig.values[r] > 0.1 * eig.values[0]) ++r;
  const auto rep = subspace_sensitivity(probe, eig, r, 1e-4, numerics::SeedStream(5, "draw"));
  CHECK(rep.rank == r);
  CHECK(rep.gap_ratio == doctest::Approx(eig.values[r] / eig.values[r - 1]));
  CHECK(rep.kl_parallel == doctest::Approx(1e-4).epsilon(0.05));
  CHECK(rep.kl_perp >= 0.0);
  CHECK(rep.inconclusive == (rep.gap_ratio > 0.9));
  CHECK(rep.bound_holds == (rep.kl_ratio <= rep.gap_ratio * 1.1));
}

TEST_CASE("verify suite emits a report per check") {
  const auto text = run_suite({"coherence", 0, true}, "hash");
  const auto j = nlohmann::json::parse(text);
  REQUIRE(j["checks"].size() >= 1);
  for (const auto& c : j["checks"]) {
    CHECK(c.contains("name"));
    CHECK(c.contains("status"));
  }
  CHECK_THROWS(run_suite({"nope", 0, true}));
}
