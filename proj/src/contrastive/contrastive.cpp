#include "cwhar/contrastive.h"

#include <string>

#include "cwhar/dataset.h"
#include "cwhar/errors.h"
#include "cwhar/ops.h"

namespace cwhar::contrastive {

ProjectionBatch make_projection_batch(Tensor z) {
  if (z.rank() != 2) throw ShapeError("projection batch must be a matrix, got " + shape_str(z.shape()));
  if (z.dim(0) % 2 != 0) throw ShapeError("projection batch needs an even row count, got " + std::to_string(z.dim(0)));
  const std::size_t n = z.dim(0) / 2;
  return {std::move(z), n};
}

Tensor cosine_similarity_matrix(const Tensor& z) {
  const Tensor unit = l2_normalize_rows(z);
  return matmul(unit, transpose(unit));
}

NtXentResult nt_xent(const ProjectionBatch& batch, const LossConfig& cfg) {
  if (!(cfg.temperature > 0.0)) throw ArgumentError("temperature must be positive, got " + std::to_string(cfg.temperature));
  if (batch.z.rank() != 2 || batch.z.dim(0) != batch.rows()) {
    throw ShapeError("projection batch of " + std::to_string(batch.n) + " pairs has shape " + shape_str(batch.z.shape()));
  }
  if (batch.n < 2) throw ArgumentError("nt_xent needs at least 2 pairs per batch, got " + std::to_string(batch.n));
  std::vector<std::size_t> targets(batch.rows());
  for (std::size_t i = 0; i < targets.size(); ++i) targets[i] = batch.positive_of(i);
  const Tensor logits = scale(cosine_similarity_matrix(batch.z), 1.0 / cfg.temperature);
  Tensor per_element = cross_entropy_rows(logits, targets, /*exclude_diagonal=*/true);
  Tensor loss = mean(per_element);
  return {std::move(loss), std::move(per_element)};
}

ProjectionBatch assemble_projection_batch(std::span<const SyncedSample* const> samples, nn::ModelBundle& bundle,
                                          ViewPair views, BatchNormMode mode) {
  if (views.first == views.second) throw ArgumentError("view pair must name two different modalities");
  // Check every sample before running any encoder so the error names the sample.
  for (const SyncedSample* s : samples) {
    s->view(views.first);
    s->view(views.second);
  }
  const std::size_t v1 = bundle.view_index(views.first);
  const std::size_t v2 = bundle.view_index(views.second);
  const Tensor z1 = bundle.project(v1, bundle.embed(v1, stack_view(samples, views.first), mode));
  const Tensor z2 = bundle.project(v2, bundle.embed(v2, stack_view(samples, views.second), mode));
  const Tensor parts[] = {z1, z2};
  return {concat_rows(parts), samples.size()};
}

ProjectionBatch assemble_projection_batch(std::span<const SyncedSample> samples, nn::ModelBundle& bundle,
                                          ViewPair views, BatchNormMode mode) {
  std::vector<const SyncedSample*> ptrs;
  ptrs.reserve(samples.size());
  for (const auto& s : samples) ptrs.push_back(&s);
  return assemble_projection_batch(std::span<const SyncedSample* const>(ptrs), bundle, views, mode);
}

AlignmentStats alignment(const ProjectionBatch& batch) {
  if (batch.n < 2) throw ArgumentError("alignment needs at least 2 pairs");
  NoGradGuard no_grad;
  const Tensor s = cosine_similarity_matrix(batch.z);
  const std::size_t m = batch.rows();
  double pos = 0.0, neg = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t k = 0; k < m; ++k) {
      if (k == i) continue;
      (k == batch.positive_of(i) ? pos : neg) += s.at({i, k});
    }
  }
  return {pos / static_cast<double>(m), neg / static_cast<double>(m * (m - 2))};
}

}  // namespace cwhar::contrastive
