// Copyright 2026 The spanattr Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "spanattr/error.hpp"
#include "spanattr/types.hpp"

namespace spanattr {

/// Layer used for attention similarity in a model of depth L: floor(L/2)+1.
constexpr int attention_layer_for_depth(int depth) { return depth / 2 + 1; }

/// Layer used for hidden-state similarity in a model of depth L: floor(L/2).
constexpr int hidden_layer_for_depth(int depth) { return depth / 2; }

struct SimilarityConfig {
  SimilarityKind kind = SimilarityKind::kAttentionAverage;
  std::optional<int> explicit_layer;

  /// Resolves the layer for a model of the given depth; explicit layers must
  /// lie in [1, depth].
  int resolve_layer(int depth) const {
    if (explicit_layer) {
      if (*explicit_layer < 1 || *explicit_layer > depth) {
        throw ArgumentError("layer " + std::to_string(*explicit_layer) + " outside [1, " +
                            std::to_string(depth) + "]");
      }
      return *explicit_layer;
    }
    return kind == SimilarityKind::kHiddenCosine ? hidden_layer_for_depth(depth)
                                                 : attention_layer_for_depth(depth);
  }
};

/// Mean over heads of one layer's attention. Accumulates in double so the
/// result does not depend on head order at test tolerance.
inline SimilarityMatrix attention_average(const AttentionStack& stack) {
  if (stack.heads.empty()) throw ArgumentError("attention stack has no heads");
  const std::size_t rows = stack.heads[0].rows();
  const std::size_t cols = stack.heads[0].cols();
  for (const auto& h : stack.heads) {
    if (h.rows() != rows || h.cols() != cols) throw ShapeError("attention heads differ in shape");
  }
  SimilarityMatrix out;
  out.values = DenseMatrix(rows, cols);
  auto& acc = out.values.values();
  for (const auto& h : stack.heads) {
    const auto& v = h.values();
    for (std::size_t i = 0; i < v.size(); ++i) acc[i] += v[i];
  }
  const double inv = static_cast<double>(stack.heads.size());
  for (double& x : acc) x /= inv;
  out.provenance = {SimilarityKind::kAttentionAverage, stack.layer,
                    static_cast<int>(stack.heads.size())};
  out.doc_offset = stack.doc_offset;
  return out;
}

namespace detail {

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline std::vector<double> row_norms(const DenseMatrix& m, const char* what) {
  std::vector<double> out(m.rows());
  for (std::size_t r = 0; r < m.rows(); ++r) {
    out[r] = std::sqrt(dot(m.row(r), m.row(r)));
    if (out[r] == 0.0) {
      throw ZeroNormError(std::string(what) + " row " + std::to_string(r) +
                          " has zero norm; cosine similarity is undefined");
    }
  }
  return out;
}

}  // namespace detail

/// Cosine similarity between every response state and every prompt state.
inline SimilarityMatrix hidden_cosine(const HiddenStates& h) {
  if (h.prompt.cols() != h.response.cols()) {
    throw ShapeError("prompt and response hidden states differ in width");
  }
  const auto pn = detail::row_norms(h.prompt, "prompt hidden state");
  const auto rn = detail::row_norms(h.response, "response hidden state");
  SimilarityMatrix out;
  out.values = DenseMatrix(h.response.rows(), h.prompt.rows());
  for (std::size_t i = 0; i < h.response.rows(); ++i) {
    for (std::size_t j = 0; j < h.prompt.rows(); ++j) {
      double c = detail::dot(h.response.row(i), h.prompt.row(j)) / (rn[i] * pn[j]);
      out.values(i, j) = std::clamp(c, -1.0, 1.0);
    }
  }
  out.provenance = {SimilarityKind::kHiddenCosine, h.layer, std::nullopt};
  out.doc_offset = h.doc_offset;
  return out;
}

}  // namespace spanattr
