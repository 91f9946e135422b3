#pragma once

#include <span>
#include <utility>
#include <vector>

#include "cwhar/model.h"
#include "cwhar/spectrogram.h"

namespace cwhar::contrastive {

/// Rows [0, N) hold view one of each sample, rows [N, 2N) view two.
struct ProjectionBatch {
  Tensor z;  // 2N × d
  std::size_t n = 0;

  std::size_t rows() const { return 2 * n; }
  std::size_t positive_of(std::size_t i) const { return (i + n) % (2 * n); }
};

/// Builds a batch from an existing 2N×d matrix. Odd row counts throw ShapeError.
ProjectionBatch make_projection_batch(Tensor z);

struct LossConfig {
  double temperature = 0.5;
};

using ViewPair = std::pair<Modality, Modality>;

/// Pairwise cosine similarities. A zero row throws NumericError naming it.
Tensor cosine_similarity_matrix(const Tensor& z);

struct NtXentResult {
  Tensor loss;         // scalar, mean of per_element
  Tensor per_element;  // 2N
};

/// Normalized-temperature cross entropy. The denominator of row i sums
/// exp(s_ik/τ) over every k ≠ i, positive included; rows are stabilized by
/// subtracting their max. N < 2 or τ ≤ 0 throws ArgumentError.
NtXentResult nt_xent(const ProjectionBatch& batch, const LossConfig& cfg = {});

/// Runs view one of every sample through encoder/head of its modality and
/// likewise view two. A sample missing either view throws DataError.
ProjectionBatch assemble_projection_batch(std::span<const SyncedSample* const> samples, nn::ModelBundle& bundle,
                                          ViewPair views, BatchNormMode mode);
ProjectionBatch assemble_projection_batch(std::span<const SyncedSample> samples, nn::ModelBundle& bundle,
                                          ViewPair views, BatchNormMode mode);

struct AlignmentStats {
  double positive_mean = 0.0;  // mean s_{i, positive_of(i)}
  double negative_mean = 0.0;  // mean over k ∉ {i, positive_of(i)}
  double gap() const { return positive_mean - negative_mean; }
};

AlignmentStats alignment(const ProjectionBatch& batch);

}  // namespace cwhar::contrastive
