#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "cwhar/tensor.h"

namespace cwhar {

// Dense algebra ------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
// x: B×n, bias: n. Adds bias to every row.
Tensor add_bias(const Tensor& x, const Tensor& bias);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor square(const Tensor& a);

Tensor relu(const Tensor& a);
Tensor tanh(const Tensor& a);

Tensor reshape(const Tensor& a, Shape shape);
// B×... → B×(product of the rest).
Tensor flatten(const Tensor& a);
// Joins 2-D tensors along columns (all inputs share the row count).
Tensor concat_cols(std::span<const Tensor> parts);
// Joins tensors along the leading axis (trailing extents must agree).
Tensor concat_rows(std::span<const Tensor> parts);

// Spatial ops ----------------------------------------------------------------
//
// Accept C×H×W or B×C×H×W; a 3-D input yields a 3-D output.

struct Conv2dOptions {
  std::size_t stride = 1;
  std::size_t padding = 0;
};

/// Cross-correlation (no kernel flip). `bias` may be undefined.
Tensor conv2d(const Tensor& x, const Tensor& weights, const Tensor& bias, Conv2dOptions options = {});

/// Window maximum with floor output extents. The gradient goes to the first
/// maximal element in row-major scan order of each window.
Tensor maxpool2d(const Tensor& x, std::size_t window, std::size_t stride);

/// Replicates each pixel into a factor×factor block.
Tensor nearest_upsample(const Tensor& x, std::size_t factor);

enum class BatchNormMode { train, eval };

struct BatchNormOptions {
  BatchNormMode mode = BatchNormMode::train;
  double eps = 1e-5;
  double momentum = 0.1;
};

/// Per-channel normalization of a B×C×H×W tensor.
///
/// Train mode normalizes with the biased batch variance and folds the batch
/// mean and unbiased variance into the running buffers with an exponential
/// moving average. Eval mode reads the running buffers only.
Tensor batchnorm2d(const Tensor& x, const Tensor& gamma, const Tensor& beta, Tensor& running_mean,
                   Tensor& running_var, BatchNormOptions options = {});

// Losses and normalization ---------------------------------------------------

/// Divides every row by its Euclidean norm. A zero row is a NumericError.
Tensor l2_normalize_rows(const Tensor& x);

/// Softmax cross-entropy for every row of a B×K logit matrix, returned as a
/// length-B vector. With `exclude_diagonal`, column i is removed from row i's
/// softmax (square inputs only). Rows are shifted by their max before
/// exponentiation.
Tensor cross_entropy_rows(const Tensor& logits, std::span<const std::size_t> targets,
                          bool exclude_diagonal = false);

/// Mean of cross_entropy_rows.
Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> targets);

}  // namespace cwhar
