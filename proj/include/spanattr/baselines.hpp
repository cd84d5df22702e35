// Copyright 2026 The spanattr Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Comparison methods: sliding-window hidden-state similarity (with and
// without span expansion), union attribution over hidden-state cosine,
// sentence completion, and augmentation through response self-attention.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <memory>
#include <mutex>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "spanattr/attribution.hpp"
#include "spanattr/error.hpp"
#include "spanattr/similarity.hpp"
#include "spanattr/types.hpp"

namespace spanattr {

/// Best sliding window of an HSSAvg query.
struct WindowScore {
  std::size_t start = 0;
  std::size_t width = 0;
  double score = 0.0;
  std::size_t passage = 0;
  // Highest window score per passage (-inf when no window maps there).
  std::vector<double> passage_best;
};

namespace detail {

inline std::vector<double> mean_rows(const DenseMatrix& m, std::span<const std::size_t> rows) {
  std::vector<double> out(m.cols(), 0.0);
  for (std::size_t r : rows) {
    const auto row = m.row(r);
    for (std::size_t d = 0; d < out.size(); ++d) out[d] += row[d];
  }
  for (double& x : out) x /= static_cast<double>(rows.size());
  return out;
}

inline double norm(std::span<const double> v) { return std::sqrt(dot(v, v)); }

}  // namespace detail

/// Passage owning window [start, start + width): the passage holding most of
/// its tokens, the start token's passage on ties.
inline std::size_t window_passage(const TokenizedInstance& inst, std::size_t start, std::size_t width) {
  std::vector<std::size_t> counts(inst.passage_count(), 0);
  for (std::size_t j = start; j < start + width; ++j) ++counts[inst.passage_of(j)];
  const std::size_t start_passage = inst.passage_of(start);
  std::size_t best = start_passage;
  for (std::size_t p = 0; p < counts.size(); ++p) {
    if (counts[p] > counts[best]) best = p;
  }
  return best;
}

/// HSSAvg: cosine between the span's mean response state and the mean prompt
/// state of every stride-1 document window of width W. The span mean is
/// recomputed on every call. Ties go to the lowest window start; windows
/// whose mean has zero norm are skipped.
inline WindowScore hss_avg(const TokenizedInstance& inst, const HiddenStates& h,
                           std::vector<std::size_t> span, std::size_t width) {
  span = normalize_span(std::move(span), inst.response_count());
  const std::size_t c = inst.doc_count();
  if (width < 1) throw ArgumentError("window width must be >= 1");
  if (width > c) {
    throw ArgumentError("window width " + std::to_string(width) + " exceeds document length " +
                        std::to_string(c));
  }
  const auto query = detail::mean_rows(h.response, span);
  const double qn = detail::norm(query);
  if (qn == 0.0) throw ZeroNormError("mean hidden state of the target span has zero norm");

  WindowScore best;
  best.width = width;
  best.score = -std::numeric_limits<double>::infinity();
  best.passage_best.assign(inst.passage_count(), -std::numeric_limits<double>::infinity());
  bool found = false;
  std::vector<std::size_t> rows(width);
  for (std::size_t s = 0; s + width <= c; ++s) {
    for (std::size_t t = 0; t < width; ++t) rows[t] = inst.doc_offset + s + t;
    const auto win = detail::mean_rows(h.prompt, rows);
    const double wn = detail::norm(win);
    if (wn == 0.0) continue;
    const double score = detail::dot(query, win) / (qn * wn);
    const std::size_t p = window_passage(inst, s, width);
    best.passage_best[p] = std::max(best.passage_best[p], score);
    if (!found || score > best.score) {
      found = true;
      best.start = s;
      best.score = score;
      best.passage = p;
    }
  }
  if (!found) throw ZeroNormError("every document window has a zero-norm mean hidden state");
  return best;
}

/// Union of A(r_i) over the span tokens.
inline std::vector<std::size_t> expand_span(std::span<const std::size_t> span, const Augmenter& aug) {
  std::set<std::size_t> out;
  for (std::size_t i : span) {
    for (std::size_t a : aug.elements(i)) out.insert(a);
  }
  return {out.begin(), out.end()};
}

/// HSSAvgDep: HSSAvg over the span expanded by dependency augmentation.
inline WindowScore hss_avg_dep(const TokenizedInstance& inst, const HiddenStates& h,
                               std::vector<std::size_t> span, std::size_t width,
                               const Augmenter& facts) {
  span = normalize_span(std::move(span), inst.response_count());
  return hss_avg(inst, h, expand_span(span, facts), width);
}

/// SentComp span: every response sentence touched by the span, in full.
inline std::vector<std::size_t> sentence_completion(const TokenizedInstance& inst,
                                                    std::vector<std::size_t> span) {
  span = normalize_span(std::move(span), inst.response_count());
  std::set<std::size_t> sentences;
  for (std::size_t i : span) sentences.insert(inst.sentence_of(i));
  std::vector<std::size_t> out;
  for (std::size_t s : sentences) {
    for (std::size_t i = inst.sentence_boundaries[s].begin; i < inst.sentence_boundaries[s].end; ++i) {
      out.push_back(i);
    }
  }
  return out;
}

/// SentComp: union attribution after completing the span to whole sentences.
inline EvidenceSet sent_comp(const Attributor& attr, std::vector<std::size_t> span) {
  return attr.attribute(sentence_completion(attr.instance(), std::move(span)));
}

/// HSSUnion engine: the union pipeline fed with hidden-state cosine scores.
inline std::unique_ptr<Attributor> make_hss_union(std::shared_ptr<const TokenizedInstance> inst,
                                                  const HiddenStates& h, EngineConfig cfg) {
  auto sim = std::make_shared<const SimilarityMatrix>(hidden_cosine(h));
  return std::make_unique<Attributor>(std::move(inst), std::move(sim), cfg);
}

enum class AttnVariant { kFull, kLocalSentence };

/// AugmentByAttn: A(r_i) = {r_i} plus the top-k earlier response tokens of
/// row i of a response-to-response score matrix (ties at the k-th value all
/// kept, strictly positive only, no isolation filter). The local-sentence
/// variant only considers earlier tokens of r_i's own sentence.
class AttnAugmenter final : public Augmenter {
 public:
  AttnAugmenter(std::shared_ptr<const TokenizedInstance> inst,
                std::shared_ptr<const ResponseMatrix> resp, std::size_t k, AttnVariant variant)
      : inst_(std::move(inst)), resp_(std::move(resp)), k_(k), variant_(variant),
        slots_(std::make_unique<Slot[]>(inst_->response_count())) {
    if (k_ < 1) throw ArgumentError("k must be >= 1");
    const std::size_t n = inst_->response_count();
    if (resp_->values.rows() != n || resp_->values.cols() != n) {
      throw ShapeError("response attention must be " + std::to_string(n) + "x" + std::to_string(n));
    }
  }

  const std::vector<std::size_t>& elements(std::size_t i) const override {
    if (i >= inst_->response_count()) throw ArgumentError("response token out of range");
    Slot& s = slots_[i];
    std::call_once(s.once, [&] { s.tokens = compute(i); });
    return s.tokens;
  }

  /// Earlier tokens picked for token i (excluding i itself).
  std::vector<std::size_t> picked(std::size_t i) const {
    std::vector<std::size_t> out;
    for (std::size_t a : elements(i)) {
      if (a != i) out.push_back(a);
    }
    return out;
  }

 private:
  std::vector<std::size_t> compute(std::size_t i) const {
    const std::size_t lo =
        variant_ == AttnVariant::kLocalSentence ? inst_->sentence_boundaries[inst_->sentence_of(i)].begin : 0;
    std::vector<std::size_t> out;
    if (lo < i) {
      const auto row = resp_->values.row(i).subspan(lo, i - lo);
      const double kth = kth_largest(row, k_);
      for (std::size_t j = 0; j < row.size(); ++j) {
        if (row[j] >= kth && row[j] > 0.0) out.push_back(lo + j);
      }
    }
    out.push_back(i);
    return out;
  }

  struct Slot {
    std::once_flag once;
    std::vector<std::size_t> tokens;
  };
  std::shared_ptr<const TokenizedInstance> inst_;
  std::shared_ptr<const ResponseMatrix> resp_;
  std::size_t k_;
  AttnVariant variant_;
  std::unique_ptr<Slot[]> slots_;
};

/// AugmentByAttn evidence: augmented per-token maps, union, then the usual
/// span-level isolation filter of `attr`'s config.
inline EvidenceSet augment_by_attn(const Attributor& attr, const AttnAugmenter& aug,
                                   std::vector<std::size_t> span) {
  return attr.attribute(std::move(span), &aug);
}

}  // namespace spanattr
