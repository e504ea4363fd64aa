// SPDX-License-Identifier: Apache-2.0
//
// Mask overlap and gradient-subspace spectra.

#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "ticketlab/masking.hpp"

namespace ticketlab::analysis {

/// |A ∩ B| / |A ∪ B| over all tensors; 0 when both are empty.
/// ContractViolation if the two masks cover different tensors.
double jaccard(const masking::MaskSet& a, const masking::MaskSet& b);

struct PairwiseJaccard {
  std::vector<std::vector<double>> matrix;  ///< symmetric, diagonal 1 (or 0 for empty masks)
  double mean = 0.0;                        ///< over distinct pairs i < j
  double stderr_mean = 0.0;
};
PairwiseJaccard pairwise_jaccard(std::span<const masking::MaskSet> masks);

/// Expected Jaccard of two independent uniform masks with keep ratio p.
inline double expected_jaccard(double keep_ratio) { return keep_ratio / (2.0 - keep_ratio); }

struct GradientLog {
  std::size_t dim = 0;
  std::vector<std::vector<double>> rows;  ///< one flattened gradient per logged step

  void append(std::vector<double> row);
  std::size_t steps() const { return rows.size(); }
};

struct EigenReport {
  std::vector<double> eigenvalues;  ///< descending
  std::size_t effective_rank = 0;
  double epsilon = 0.01;
  double trace = 0.0;
};

/// Minimal r whose top-r eigenvalues hold at least 1 - epsilon of the total.
/// Tiny negatives (>= -1e-8 max) are clamped to zero.
std::size_t effective_rank(std::span<const double> eigenvalues, double epsilon);

/// Eigenvalues of the T x T Gram matrix G G^T. NumericFailure on non-finite rows.
EigenReport gram_spectrum(const GradientLog& log, double epsilon = 0.01);

std::string eigen_report_json(const EigenReport& report, const std::string& config_hash = {});

}  // namespace ticketlab::analysis
