// SPDX-License-Identifier: Apache-2.0

#include "ticketlab/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <json.hpp>

#include "ticketlab/errors.hpp"
#include "ticketlab/numerics.hpp"

namespace ticketlab::analysis {

namespace {

std::size_t intersection_size(std::span<const std::uint64_t> a, std::span<const std::uint64_t> b) {
  std::size_t n = 0;
  auto i = a.begin();
  auto j = b.begin();
  while (i != a.end() && j != b.end()) {
    if (*i < *j) {
      ++i;
    } else if (*j < *i) {
      ++j;
    } else {
      ++n;
      ++i;
      ++j;
    }
  }
  return n;
}

}  // namespace

double jaccard(const masking::MaskSet& a, const masking::MaskSet& b) {
  TICKETLAB_REQUIRE(a.per_tensor.size() == b.per_tensor.size(), "jaccard: masks cover different tensor counts");
  std::size_t inter = 0;
  std::size_t uni = 0;
  for (std::size_t i = 0; i < a.per_tensor.size(); ++i) {
    const auto& ta = a.per_tensor[i];
    const auto& tb = b.per_tensor[i];
    TICKETLAB_REQUIRE(ta.name == tb.name, "jaccard: tensor '" + ta.name + "' vs '" + tb.name + "'");
    TICKETLAB_REQUIRE(ta.tensor_size == 0 || tb.tensor_size == 0 || ta.tensor_size == tb.tensor_size,
                      "jaccard: tensor '" + ta.name + "' has different sizes");
    const auto n = intersection_size(ta.active, tb.active);
    inter += n;
    uni += ta.active.size() + tb.active.size() - n;
  }
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

PairwiseJaccard pairwise_jaccard(std::span<const masking::MaskSet> masks) {
  PairwiseJaccard out;
  const auto n = masks.size();
  out.matrix.assign(n, std::vector<double>(n, 0.0));
  std::vector<double> values;
  for (std::size_t i = 0; i < n; ++i) {
    out.matrix[i][i] = jaccard(masks[i], masks[i]);
    for (std::size_t j = i + 1; j < n; ++j) {
      const double v = jaccard(masks[i], masks[j]);
      out.matrix[i][j] = out.matrix[j][i] = v;
      values.push_back(v);
    }
  }
  if (!values.empty()) {
    double s = 0.0;
    for (double v : values) s += v;
    out.mean = s / static_cast<double>(values.size());
    if (values.size() > 1) {
      double ss = 0.0;
      for (double v : values) ss += (v - out.mean) * (v - out.mean);
      out.stderr_mean = std::sqrt(ss / static_cast<double>(values.size() - 1) / static_cast<double>(values.size()));
    }
  }
  return out;
}

void GradientLog::append(std::vector<double> row) {
  if (rows.empty() && dim == 0) dim = row.size();
  TICKETLAB_REQUIRE(row.size() == dim, "gradient log row has the wrong length");
  rows.push_back(std::move(row));
}

std::size_t effective_rank(std::span<const double> eigenvalues, double epsilon) {
  TICKETLAB_REQUIRE(epsilon >= 0.0 && epsilon < 1.0, "effective_rank: epsilon must lie in [0, 1)");
  double top = 0.0;
  for (double v : eigenvalues) top = std::max(top, std::abs(v));
  std::vector<double> lam;
  lam.reserve(eigenvalues.size());
  for (double v : eigenvalues) {
    TICKETLAB_REQUIRE(v >= -1e-8 * top, "effective_rank: eigenvalue is materially negative");
    lam.push_back(std::max(v, 0.0));
  }
  std::sort(lam.begin(), lam.end(), std::greater<>());
  double total = 0.0;
  for (double v : lam) total += v;
  TICKETLAB_REQUIRE(total > 0.0, "effective_rank: spectrum is all zero");
  const double target = (1.0 - epsilon) * total;
  double acc = 0.0;
  for (std::size_t r = 0; r < lam.size(); ++r) {
    acc += lam[r];
    if (acc >= target) return r + 1;
  }
  return lam.size();
}

EigenReport gram_spectrum(const GradientLog& log, double epsilon) {
  TICKETLAB_REQUIRE(!log.rows.empty(), "gram_spectrum: empty gradient log");
  numerics::Matrix g(log.rows.size(), log.dim);
  for (std::size_t t = 0; t < log.rows.size(); ++t) {
    TICKETLAB_REQUIRE(log.rows[t].size() == log.dim, "gram_spectrum: ragged gradient log");
    for (double v : log.rows[t])
      if (!std::isfinite(v)) throw NumericFailure("gram_spectrum: non-finite gradient at step " + std::to_string(t));
    std::copy(log.rows[t].begin(), log.rows[t].end(), g.row(t).begin());
  }
  const auto gram = numerics::gram_rows(g);
  auto eig = numerics::sym_eig(gram);
  EigenReport rep;
  rep.epsilon = epsilon;
  rep.trace = gram.trace();
  rep.eigenvalues = std::move(eig.values);
  rep.effective_rank = effective_rank(rep.eigenvalues, epsilon);
  return rep;
}

std::string eigen_report_json(const EigenReport& report, const std::string& config_hash) {
  nlohmann::ordered_json j;
  if (!config_hash.empty()) j["config_hash"] = config_hash;
  j["epsilon"] = report.epsilon;
  j["trace"] = report.trace;
  j["effective_rank"] = report.effective_rank;
  j["eigenvalues"] = report.eigenvalues;
  return j.dump(2) + "\n";
}

}  // namespace ticketlab::analysis
