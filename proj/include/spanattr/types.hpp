// Copyright 2026 The spanattr Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Core data model shared by every module: token ranges, the tokenized RAG
// instance, dense score matrices and their provenance, dependency parses and
// log-probability drop tables.

#include <cstddef>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "spanattr/error.hpp"

namespace spanattr {

/// Half-open index range [begin, end).
struct Range {
  std::size_t begin = 0;
  std::size_t end = 0;

  constexpr std::size_t size() const noexcept { return end - begin; }
  constexpr bool empty() const noexcept { return end <= begin; }
  constexpr bool contains(std::size_t i) const noexcept { return i >= begin && i < end; }
  constexpr bool overlaps(const Range& o) const noexcept {
    return begin < o.end && o.begin < end;
  }
  friend constexpr bool operator==(const Range&, const Range&) = default;
};

/// Expands a range into its indices.
inline std::vector<std::size_t> indices_of(const Range& r) {
  std::vector<std::size_t> out;
  out.reserve(r.size());
  for (std::size_t i = r.begin; i < r.end; ++i) out.push_back(i);
  return out;
}

/// Row-major dense matrix of doubles.
class DenseMatrix {
 public:
  DenseMatrix() = default;
  DenseMatrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  DenseMatrix(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw ShapeError("matrix data has " + std::to_string(data_.size()) +
                       " values, expected " + std::to_string(rows_ * cols_));
    }
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<const double> row(std::size_t r) const {
    return {data_.data() + r * cols_, cols_};
  }
  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }

  const std::vector<double>& values() const noexcept { return data_; }
  std::vector<double>& values() noexcept { return data_; }

  friend bool operator==(const DenseMatrix&, const DenseMatrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// A tokenized RAG instance.
///
/// The prompt seen by the model is laid out as
/// `question_tokens[0, o) ++ documents ++ question_tokens[o, m)`, so every
/// non-document prompt token (template text, the question itself) is counted
/// in `m` and documents occupy prompt columns [o, o + c).
struct TokenizedInstance {
  std::string instance_id;
  std::vector<std::vector<std::string>> passages;
  std::vector<std::string> question_tokens;
  std::vector<std::string> response_tokens;
  std::vector<Range> passage_boundaries;
  std::vector<Range> sentence_boundaries;
  std::size_t doc_offset = 0;

  // Detokenized answer and per-token character spans into it.
  std::string response_text;
  std::vector<Range> response_char_spans;

  // role -> path (relative to the instance file) of sidecar files.
  std::map<std::string, std::string> sidecars;

  std::size_t doc_count() const noexcept {
    return passage_boundaries.empty() ? 0 : passage_boundaries.back().end;
  }
  std::size_t question_count() const noexcept { return question_tokens.size(); }
  std::size_t response_count() const noexcept { return response_tokens.size(); }
  std::size_t prompt_length() const noexcept { return doc_count() + question_count(); }
  std::size_t passage_count() const noexcept { return passage_boundaries.size(); }

  /// Passage containing flattened document token j.
  std::size_t passage_of(std::size_t j) const {
    for (std::size_t p = 0; p < passage_boundaries.size(); ++p) {
      if (passage_boundaries[p].contains(j)) return p;
    }
    throw ArgumentError("document token " + std::to_string(j) + " outside all passages");
  }

  /// Sentence containing response token i.
  std::size_t sentence_of(std::size_t i) const {
    for (std::size_t s = 0; s < sentence_boundaries.size(); ++s) {
      if (sentence_boundaries[s].contains(i)) return s;
    }
    throw ArgumentError("response token " + std::to_string(i) + " outside all sentences");
  }

  /// Flattened document token j.
  const std::string& doc_token(std::size_t j) const {
    const std::size_t p = passage_of(j);
    return passages[p][j - passage_boundaries[p].begin];
  }
};

enum class SimilarityKind { kAttentionAverage, kHiddenCosine, kExternal };

struct Provenance {
  SimilarityKind kind = SimilarityKind::kExternal;
  std::optional<int> layer;
  std::optional<int> heads_averaged;
  friend bool operator==(const Provenance&, const Provenance&) = default;
};

/// Response-to-prompt scores, n x (c + m). Row i scores the prediction of
/// response token i; producers shift decoder rows before writing.
struct SimilarityMatrix {
  DenseMatrix values;
  Provenance provenance;
  std::size_t doc_offset = 0;
};

/// Per-head attention of one layer, each head n x (c + m).
struct AttentionStack {
  int layer = 0;
  std::vector<DenseMatrix> heads;
  std::size_t doc_offset = 0;

  std::size_t head_count() const noexcept { return heads.size(); }
};

/// Hidden states of one layer, split into prompt and response rows.
struct HiddenStates {
  int layer = 0;
  DenseMatrix prompt;    // (c + m) x dim
  DenseMatrix response;  // n x dim
  std::size_t doc_offset = 0;

  std::size_t dim() const noexcept { return prompt.cols(); }
};

/// Response-to-response scores, n x n; row i scores earlier tokens j < i.
struct ResponseMatrix {
  DenseMatrix values;
  std::optional<int> layer;
};

/// Dependency parse of one response sentence. Word indices are local to the
/// sentence; `head[w] == -1` marks the root.
struct DepSentence {
  Range tokens;  // response token range of this sentence
  std::vector<std::string> words;
  std::vector<int> head;
  std::vector<std::string> label;
  std::vector<std::string> pos;
  std::vector<bool> is_punct;
  std::vector<Range> char_spans;  // absolute offsets into the response text

  std::size_t size() const noexcept { return words.size(); }
  int root() const {
    for (std::size_t w = 0; w < head.size(); ++w) {
      if (head[w] < 0) return static_cast<int>(w);
    }
    return -1;
  }
};

struct DepParse {
  std::string instance_id;
  std::string response_text;
  std::vector<Range> token_char_spans;
  std::vector<DepSentence> sentences;

  /// Index of the sentence whose token range holds response token i.
  std::optional<std::size_t> sentence_of_token(std::size_t i) const {
    for (std::size_t s = 0; s < sentences.size(); ++s) {
      if (sentences[s].tokens.contains(i)) return s;
    }
    return std::nullopt;
  }
};

/// Log-probabilities of one target span with all passages present and with
/// each passage ablated in turn.
struct DropEntry {
  std::string instance_id;
  Range span;
  double log_p_full = 0.0;
  std::vector<double> log_p_ablated;
};

struct DropTable {
  std::vector<DropEntry> entries;

  const DropEntry* find(const std::string& id, const Range& span) const {
    for (const auto& e : entries) {
      if (e.instance_id == id && e.span == span) return &e;
    }
    return nullptr;
  }
};

/// A target span to evaluate, with optional gold passage.
struct Target {
  std::string instance_id;
  Range span;
  std::optional<std::size_t> gold_passage;
};

inline constexpr std::size_t kNoLimit = std::numeric_limits<std::size_t>::max();

}  // namespace spanattr
