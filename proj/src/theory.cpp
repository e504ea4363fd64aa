// SPDX-License-Identifier: Apache-2.0

#include "ticketlab/theory.hpp"

#include <algorithm>
#include <cmath>
#include <json.hpp>

#include "ticketlab/analysis.hpp"
#include "ticketlab/errors.hpp"

namespace ticketlab::theory {

using numerics::Matrix;

double coherence(const Matrix& basis) {
  double m = 0.0;
  for (double v : basis.entries()) m = std::max(m, std::abs(v));
  return std::sqrt(static_cast<double>(basis.rows())) * m;
}

double delocalization_bound(std::size_t d, std::size_t r) {
  return 2.0 * std::sqrt(2.0 * std::log(2.0 * static_cast<double>(d) * static_cast<double>(r)));
}

bool delocalized(const SynthFisher& f) { return f.coherence <= delocalization_bound(f.dim, f.rank); }

std::vector<double> default_spectrum(std::size_t r) {
  std::vector<double> out(r);
  for (std::size_t i = 0; i < r; ++i) out[i] = 1.0 / static_cast<double>(i + 1);
  return out;
}

namespace {

std::vector<double> checked_spectrum(std::size_t r, std::optional<std::vector<double>> eigenvalues) {
  auto lam = eigenvalues ? std::move(*eigenvalues) : default_spectrum(r);
  TICKETLAB_REQUIRE(lam.size() == r, "spectrum length must equal rank");
  for (std::size_t i = 0; i < r; ++i) {
    TICKETLAB_REQUIRE(lam[i] > 0.0 && std::isfinite(lam[i]), "spectrum entries must be positive");
    TICKETLAB_REQUIRE(i == 0 || lam[i] <= lam[i - 1], "spectrum must be descending");
  }
  return lam;
}

// Two passes of modified Gram-Schmidt over the columns.
void orthonormalize_columns(Matrix& a) {
  const auto n = a.rows();
  for (int pass = 0; pass < 2; ++pass) {
    for (std::size_t j = 0; j < a.cols(); ++j) {
      for (std::size_t i = 0; i < j; ++i) {
        double p = 0.0;
        for (std::size_t t = 0; t < n; ++t) p += a(t, i) * a(t, j);
        for (std::size_t t = 0; t < n; ++t) a(t, j) -= p * a(t, i);
      }
      double s = 0.0;
      for (std::size_t t = 0; t < n; ++t) s += a(t, j) * a(t, j);
      s = std::sqrt(s);
      TICKETLAB_REQUIRE(s > 0.0, "orthonormalize: degenerate column");
      for (std::size_t t = 0; t < n; ++t) a(t, j) /= s;
    }
  }
}

// V_S^T V_S accumulated over rows in increasing index order.
Matrix restricted_gram(const Matrix& v, std::span<const std::uint64_t> rows) {
  const auto r = v.cols();
  Matrix g(r, r);
  for (auto idx : rows) {
    TICKETLAB_REQUIRE(idx < v.rows(), "support index out of range");
    const auto row = v.row(static_cast<std::size_t>(idx));
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < r; ++j) g(i, j) += row[i] * row[j];
  }
  return g;
}

double median_of(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const auto n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double mean_of(std::span<const double> v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

}  // namespace

SynthFisher synth_delocalized_basis(std::size_t d, std::size_t r, numerics::SeedStream stream,
                                    std::optional<std::vector<double>> eigenvalues) {
  TICKETLAB_REQUIRE(r >= 1 && r <= d, "synth_delocalized_basis: need 1 <= r <= d");
  SynthFisher f;
  f.dim = d;
  f.rank = r;
  f.eigenvalues = checked_spectrum(r, std::move(eigenvalues));
  f.basis = Matrix(d, r);
  for (double& x : f.basis.entries()) x = stream.normal();
  orthonormalize_columns(f.basis);
  f.coherence = coherence(f.basis);
  return f;
}

SynthFisher synth_axis_basis(std::size_t d, std::size_t r, std::optional<std::vector<double>> eigenvalues) {
  TICKETLAB_REQUIRE(r >= 1 && r <= d, "synth_axis_basis: need 1 <= r <= d");
  SynthFisher f;
  f.dim = d;
  f.rank = r;
  f.eigenvalues = checked_spectrum(r, std::move(eigenvalues));
  f.basis = Matrix(d, r);
  for (std::size_t i = 0; i < r; ++i) f.basis(i, i) = 1.0;
  f.coherence = coherence(f.basis);
  return f;
}

double fisher_seminorm(const SynthFisher& f, std::span<const double> u) {
  TICKETLAB_REQUIRE(u.size() == f.dim, "fisher_seminorm: dimension mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < f.rank; ++i) {
    double p = 0.0;
    for (std::size_t t = 0; t < f.dim; ++t) p += f.basis(t, i) * u[t];
    s += f.eigenvalues[i] * p * p;
  }
  return std::sqrt(s);
}

double mask_span_residual(const SynthFisher& f, std::span<const double> coeffs, std::span<const std::uint64_t> active) {
  const auto r = f.rank;
  TICKETLAB_REQUIRE(coeffs.size() == r, "mask_span_residual: coefficient length must equal rank");
  for (double c : coeffs) TICKETLAB_REQUIRE(std::isfinite(c), "mask_span_residual: non-finite coefficient");

  // With V orthonormal, ||w||_F = ||Lambda^{1/2} V^T w||, and V^T P_S V = V_S^T V_S,
  // so the problem reduces to min ||Lambda^{1/2}(c - M c')|| with M = V_S^T V_S.
  std::vector<double> b(r);
  for (std::size_t i = 0; i < r; ++i) b[i] = std::sqrt(f.eigenvalues[i]) * coeffs[i];
  const double target = numerics::norm2(b);
  TICKETLAB_REQUIRE(target > 0.0, "mask_span_residual: target has zero Fisher norm");
  if (active.empty()) return 1.0;

  Matrix a = restricted_gram(f.basis, active);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < r; ++j) a(i, j) *= std::sqrt(f.eigenvalues[i]);
  const auto x = numerics::least_squares(a, b);
  auto fit = a * std::span<const double>(x);
  for (std::size_t i = 0; i < r; ++i) fit[i] -= b[i];
  return numerics::norm2(fit) / target;
}

std::vector<double> fisher_isotropic_coeffs(const SynthFisher& f, numerics::SeedStream& stream) {
  std::vector<double> c(f.rank);
  for (std::size_t i = 0; i < f.rank; ++i) c[i] = stream.normal() / std::sqrt(f.eigenvalues[i]);
  return c;
}

PhaseCurve phase_transition_curve(const SynthFisher& f, std::span<const std::size_t> k_grid, std::size_t trials,
                                  const numerics::SeedStream& stream) {
  PhaseCurve curve;
  for (auto k : k_grid) {
    TICKETLAB_REQUIRE(k <= f.dim, "phase_transition_curve: k exceeds dimension");
    PhasePoint pt;
    pt.k = k;
    std::vector<double> ranks;
    const auto ks = stream.split("k").split(k);
    for (std::size_t t = 0; t < trials; ++t) {
      const auto ts = ks.split(t);
      const auto support = numerics::random_subset(f.dim, k, ts.split("support"));
      auto cs = ts.split("coeffs");
      const auto c = fisher_isotropic_coeffs(f, cs);
      pt.residuals.push_back(mask_span_residual(f, c, support));
      const auto sv = numerics::svd(restricted_gram(f.basis, support)).s;
      const double cut = static_cast<double>(f.rank) * 2.220446049250313e-16 * (sv.empty() ? 0.0 : sv[0]);
      ranks.push_back(static_cast<double>(std::count_if(sv.begin(), sv.end(), [&](double s) { return s > cut; })));
    }
    pt.median = median_of(pt.residuals);
    pt.mean = mean_of(pt.residuals);
    pt.fraction_below_005 =
        trials ? static_cast<double>(std::count_if(pt.residuals.begin(), pt.residuals.end(),
                                                   [](double x) { return x < 0.05; })) /
                     static_cast<double>(trials)
               : 0.0;
    pt.median_restricted_rank = static_cast<std::size_t>(median_of(ranks));
    curve.points.push_back(std::move(pt));
  }
  for (std::size_t i = 1; i < curve.points.size(); ++i)
    if (curve.points[i].k >= curve.points[i - 1].k && curve.points[i].median > curve.points[i - 1].median + 1e-12)
      curve.monotone_median = false;
  return curve;
}

ConcentrationStats gram_concentration_trial(const SynthFisher& f, std::size_t k, std::size_t trials,
                                            const numerics::SeedStream& stream) {
  TICKETLAB_REQUIRE(k >= 1 && k <= f.dim, "gram_concentration_trial: need 1 <= k <= d");
  ConcentrationStats st;
  st.k = k;
  // Deviation is measured against V^T V rather than I: identical for an
  // orthonormal basis, and exactly zero when the support is everything.
  const Matrix full = restricted_gram(f.basis, numerics::random_subset(f.dim, f.dim, stream.split("full")));
  const double scale = static_cast<double>(f.dim) / static_cast<double>(k);
  for (std::size_t t = 0; t < trials; ++t) {
    const auto support = numerics::random_subset(f.dim, k, stream.split("support").split(t));
    Matrix g = restricted_gram(f.basis, support);
    for (std::size_t i = 0; i < f.rank; ++i)
      for (std::size_t j = 0; j < f.rank; ++j) g(i, j) = scale * g(i, j) - full(i, j);
    double dev = 0.0;
    for (double ev : numerics::sym_eig(g).values) dev = std::max(dev, std::abs(ev));
    st.deviations.push_back(dev);
  }
  st.mean = mean_of(st.deviations);
  st.max = st.deviations.empty() ? 0.0 : *std::max_element(st.deviations.begin(), st.deviations.end());
  return st;
}

double loglog_slope(std::span<const double> x, std::span<const double> y) {
  TICKETLAB_REQUIRE(x.size() == y.size() && x.size() >= 2, "loglog_slope: need at least two points");
  double mx = 0.0, my = 0.0;
  const double n = static_cast<double>(x.size());
  std::vector<double> lx, ly;
  for (std::size_t i = 0; i < x.size(); ++i) {
    TICKETLAB_REQUIRE(x[i] > 0.0 && y[i] > 0.0, "loglog_slope: values must be positive");
    lx.push_back(std::log(x[i]));
    ly.push_back(std::log(y[i]));
    mx += lx.back();
    my += ly.back();
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    sxy += (lx[i] - mx) * (ly[i] - my);
    sxx += (lx[i] - mx) * (lx[i] - mx);
  }
  TICKETLAB_REQUIRE(sxx > 0.0, "loglog_slope: x values are all equal");
  return sxy / sxx;
}

// ---------------------------------------------------------------------------

double mean_exact_kl(const PolicyProbe& probe, std::span<const double> delta) {
  const auto moved = policy::perturbed(probe.policy, delta);
  double s = 0.0;
  for (const auto& p : probe.prompts) s += policy::exact_kl(probe.policy, moved, p, probe.horizon);
  return s / static_cast<double>(probe.prompts.size());
}

double mean_total_variation(const PolicyProbe& probe, std::span<const double> delta) {
  const auto moved = policy::perturbed(probe.policy, delta);
  double s = 0.0;
  for (const auto& p : probe.prompts) s += policy::total_variation(probe.policy, moved, p, probe.horizon);
  return s / static_cast<double>(probe.prompts.size());
}

Matrix exact_fisher(const PolicyProbe& probe) {
  policy::FisherOptions opts;
  opts.mode = policy::FisherMode::exact_enumeration;
  opts.horizon = probe.horizon;
  return policy::estimate_fisher(probe.policy, probe.prompts, opts).matrix;
}

namespace {

double quadratic_form(const Matrix& f, std::span<const double> x) {
  const auto fx = f * x;
  return numerics::dot(x, fx);
}

}  // namespace

std::vector<KlQuadraticPoint> kl_quadratic_check(const PolicyProbe& probe, const Matrix& fisher,
                                                 std::span<const double> direction, std::span<const double> scales) {
  TICKETLAB_REQUIRE(fisher.rows() == direction.size(), "kl_quadratic_check: direction/Fisher size mismatch");
  const double q = quadratic_form(fisher, direction);
  std::vector<KlQuadraticPoint> out;
  std::vector<double> delta(direction.size());
  for (double a : scales) {
    for (std::size_t i = 0; i < delta.size(); ++i) delta[i] = a * direction[i];
    KlQuadraticPoint pt;
    pt.scale = a;
    pt.exact_kl = a == 0.0 ? 0.0 : mean_exact_kl(probe, delta);
    pt.quadratic = 0.5 * a * a * q;
    pt.error = std::abs(pt.exact_kl - pt.quadratic);
    out.push_back(pt);
  }
  return out;
}

SensitivityReport subspace_sensitivity(const PolicyProbe& probe, const numerics::SymEig& fisher_eig, std::size_t r,
                                       double kl_budget, numerics::SeedStream stream, double tol) {
  const auto d = fisher_eig.values.size();
  TICKETLAB_REQUIRE(r >= 1 && r < d, "subspace_sensitivity: need 1 <= r < d");
  TICKETLAB_REQUIRE(kl_budget > 0.0, "subspace_sensitivity: KL budget must be positive");
  SensitivityReport rep;
  rep.rank = r;
  rep.lambda_r = fisher_eig.values[r - 1];
  rep.lambda_next = std::max(fisher_eig.values[r], 0.0);
  rep.gap_ratio = rep.lambda_r > 0.0 ? rep.lambda_next / rep.lambda_r : 1.0;
  rep.inconclusive = rep.gap_ratio > 0.9;

  auto combine = [&](std::size_t lo, std::size_t hi, numerics::SeedStream s) {
    std::vector<double> coef(hi - lo);
    for (double& c : coef) c = s.normal();
    const double n = numerics::norm2(coef);
    std::vector<double> v(d, 0.0);
    for (std::size_t i = lo; i < hi; ++i)
      for (std::size_t t = 0; t < d; ++t) v[t] += coef[i - lo] / n * fisher_eig.vectors(t, i);
    return v;
  };
  auto par = combine(0, r, stream.split("parallel"));
  auto perp = combine(r, d, stream.split("perp"));

  double q_par = 0.0;
  {
    // Quadratic form from the eigen-expansion; exact since par lies in span(v_1..v_r).
    for (std::size_t i = 0; i < r; ++i) {
      double p = 0.0;
      for (std::size_t t = 0; t < d; ++t) p += fisher_eig.vectors(t, i) * par[t];
      q_par += fisher_eig.values[i] * p * p;
    }
  }
  if (!(q_par > 0.0)) {
    rep.inconclusive = true;
    return rep;
  }
  rep.step_norm = std::sqrt(2.0 * kl_budget / q_par);
  for (double& x : par) x *= rep.step_norm;
  for (double& x : perp) x *= rep.step_norm;

  rep.kl_parallel = mean_exact_kl(probe, par);
  rep.kl_perp = mean_exact_kl(probe, perp);
  rep.tv_parallel = mean_total_variation(probe, par);
  rep.tv_perp = mean_total_variation(probe, perp);
  rep.kl_ratio = rep.kl_parallel > 0.0 ? rep.kl_perp / rep.kl_parallel : 0.0;
  rep.bound_holds = rep.kl_ratio <= rep.gap_ratio * (1.0 + tol);
  return rep;
}

PolicyProbe make_probe(const ProbeSpec& spec, numerics::SeedStream stream) {
  PolicyProbe probe;
  probe.policy = policy::make_policy(spec.arch);
  policy::init_policy(probe.policy, stream.split("init"), spec.embed_scale, spec.gain);
  probe.horizon = spec.horizon;
  auto ps = stream.split("prompts");
  for (std::size_t i = 0; i < spec.prompts; ++i) {
    TokenList p;
    for (std::size_t j = 0; j < spec.prompt_len; ++j)
      p.push_back(static_cast<Token>(1 + ps.below(spec.arch.vocab_size - 1)));
    probe.prompts.push_back(std::move(p));
  }
  return probe;
}

// ---------------------------------------------------------------------------

namespace {

using nlohmann::ordered_json;

ordered_json check_entry(const std::string& name, const std::string& status, ordered_json params, ordered_json stats) {
  ordered_json j;
  j["name"] = name;
  j["status"] = status;
  j["parameters"] = std::move(params);
  j["statistics"] = std::move(stats);
  return j;
}

ordered_json coherence_check(const numerics::SeedStream& root, bool quick) {
  const std::size_t d = 1000, r = 10, seeds = quick ? 20 : 100;
  std::vector<double> mus;
  std::size_t below5 = 0;
  for (std::size_t s = 0; s < seeds; ++s) {
    const auto f = synth_delocalized_basis(d, r, root.split("coherence").split(s));
    mus.push_back(f.coherence);
    if (f.coherence < 5.0) ++below5;
  }
  const auto axis = synth_axis_basis(d, r);
  const bool ok = 2 * below5 > seeds && !delocalized(axis);
  return check_entry("coherence", ok ? "pass" : "fail", {{"d", d}, {"r", r}, {"seeds", seeds}},
                     {{"median_coherence", median_of(mus)},
                      {"fraction_below_5", static_cast<double>(below5) / static_cast<double>(seeds)},
                      {"axis_coherence", axis.coherence},
                      {"axis_flagged", !delocalized(axis)}});
}

ordered_json kl_check(const numerics::SeedStream& root) {
  const auto probe = make_probe(ProbeSpec{}, root.split("kl"));
  const auto f = exact_fisher(probe);
  auto ds = root.split("kl").split("direction");
  std::vector<double> dir(f.rows());
  for (double& x : dir) x = ds.normal();
  const double fn = std::sqrt(quadratic_form(f, dir));
  for (double& x : dir) x /= fn;
  const std::vector<double> scales = {1e-1, 3e-2, 1e-2, 3e-3, 1e-3};
  const auto pts = kl_quadratic_check(probe, f, dir, scales);
  std::vector<double> errs;
  ordered_json curve = ordered_json::array();
  for (const auto& p : pts) {
    errs.push_back(p.error);
    curve.push_back({{"scale", p.scale}, {"exact_kl", p.exact_kl}, {"quadratic", p.quadratic}, {"error", p.error}});
  }
  const double slope = loglog_slope(scales, errs);
  return check_entry("kl_quadratic", std::abs(slope - 3.0) <= 0.3 ? "pass" : "fail",
                     {{"scales", scales}, {"horizon", probe.horizon}}, {{"slope", slope}, {"curve", curve}});
}

ordered_json subspace_check(const numerics::SeedStream& root, bool quick) {
  const std::size_t draws = quick ? 3 : 10;
  const double budget = 1e-4;
  std::size_t held = 0, conclusive = 0;
  ordered_json rows = ordered_json::array();
  for (std::size_t i = 0; i < draws; ++i) {
    const auto ds = root.split("subspace").split(i);
    const auto probe = make_probe(ProbeSpec{}, ds);
    const auto eig = numerics::sym_eig(exact_fisher(probe));
    const auto r = analysis::effective_rank(eig.values, 0.01);
    if (r >= eig.values.size()) {
      rows.push_back({{"draw", i}, {"rank", r}, {"inconclusive", true}});
      continue;
    }
    const auto rep = subspace_sensitivity(probe, eig, r, budget, ds.split("directions"));
    if (!rep.inconclusive) {
      ++conclusive;
      if (rep.bound_holds) ++held;
    }
    rows.push_back({{"draw", i},
                    {"rank", r},
                    {"gap_ratio", rep.gap_ratio},
                    {"kl_parallel", rep.kl_parallel},
                    {"kl_perp", rep.kl_perp},
                    {"kl_ratio", rep.kl_ratio},
                    {"tv_parallel", rep.tv_parallel},
                    {"tv_perp", rep.tv_perp},
                    {"inconclusive", rep.inconclusive},
                    {"bound_holds", rep.bound_holds}});
  }
  const std::string status = conclusive == 0 ? "inconclusive" : (held == conclusive ? "pass" : "fail");
  return check_entry("subspace_sensitivity", status, {{"draws", draws}, {"kl_budget", budget}, {"epsilon", 0.01}},
                     {{"conclusive", conclusive}, {"bound_held", held}, {"draws", rows}});
}

ordered_json phase_check(const numerics::SeedStream& root, bool quick) {
  const std::size_t d = 1000, r = 10, trials = quick ? 10 : 50;
  const auto f = synth_delocalized_basis(d, r, root.split("phase").split("basis"));
  const std::vector<std::size_t> ks = {0, 2, 5, 8, 10, 20, 50, 100, 200, 500, 1000};
  const auto curve = phase_transition_curve(f, ks, trials, root.split("phase").split("trials"));
  bool low_ok = true, high_ok = true;
  ordered_json pts = ordered_json::array();
  for (const auto& p : curve.points) {
    if ((p.k == 2 || p.k == 5 || p.k == 8) && !(p.median > 0.5)) low_ok = false;
    if (p.k >= 200 && !(p.median < 0.05)) high_ok = false;
    pts.push_back({{"k", p.k},
                   {"median", p.median},
                   {"mean", p.mean},
                   {"fraction_below_0.05", p.fraction_below_005},
                   {"median_restricted_rank", p.median_restricted_rank}});
  }
  const bool ok = low_ok && high_ok && curve.monotone_median;
  return check_entry("mask_span_phase_transition", ok ? "pass" : "fail", {{"d", d}, {"r", r}, {"trials", trials}},
                     {{"curve", pts},
                      {"below_rank_median_above_0.5", low_ok},
                      {"large_k_median_below_0.05", high_ok},
                      {"monotone_median", curve.monotone_median}});
}

ordered_json concentration_check(const numerics::SeedStream& root, bool quick) {
  const std::size_t d = 2000, r = 10, trials = quick ? 20 : 100;
  const auto f = synth_delocalized_basis(d, r, root.split("concentration").split("basis"));
  const auto axis = synth_axis_basis(d, r);
  const std::vector<double> ks = {50, 100, 200, 400, 800};
  std::vector<double> means;
  bool axis_worse = true;
  ordered_json pts = ordered_json::array();
  for (double kd : ks) {
    const auto k = static_cast<std::size_t>(kd);
    const auto st = gram_concentration_trial(f, k, trials, root.split("concentration").split(k));
    const auto ax = gram_concentration_trial(axis, k, trials, root.split("concentration-axis").split(k));
    means.push_back(st.mean);
    if (!(ax.mean > st.mean)) axis_worse = false;
    pts.push_back({{"k", k}, {"mean", st.mean}, {"max", st.max}, {"axis_mean", ax.mean}});
  }
  const double slope = loglog_slope(ks, means);
  const bool ok = std::abs(slope + 0.5) <= 0.15 && axis_worse;
  return check_entry("gram_concentration", ok ? "pass" : "fail", {{"d", d}, {"r", r}, {"trials", trials}},
                     {{"slope", slope}, {"axis_exceeds_everywhere", axis_worse}, {"curve", pts}});
}

}  // namespace

std::string run_suite(const SuiteOptions& options, const std::string& config_hash) {
  const auto& s = options.suite;
  if (s != "all" && s != "kl" && s != "subspace" && s != "phase" && s != "concentration" && s != "coherence")
    throw ConfigError("unknown theory suite '" + s + "'");
  const numerics::SeedStream root(options.seed, "theory");
  ordered_json j;
  if (!config_hash.empty()) j["config_hash"] = config_hash;
  j["seed"] = options.seed;
  j["quick"] = options.quick;
  ordered_json checks = ordered_json::array();
  if (s == "all" || s == "coherence") checks.push_back(coherence_check(root, options.quick));
  if (s == "all" || s == "kl") checks.push_back(kl_check(root));
  if (s == "all" || s == "subspace") checks.push_back(subspace_check(root, options.quick));
  if (s == "all" || s == "phase") checks.push_back(phase_check(root, options.quick));
  if (s == "all" || s == "concentration") checks.push_back(concentration_check(root, options.quick));
  j["checks"] = std::move(checks);
  return j.dump(2) + "\n";
}

}  // namespace ticketlab::theory
