// Copyright 2026 The spanattr Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Deterministic fixture generators: the "fig1" worked example, a large
// synthetic instance for latency checks, and random instances and trees for
// property tests. Random draws use std::mt19937_64 with explicit conversions
// so generated files are identical across standard libraries.

#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "spanattr/interchange.hpp"
#include "spanattr/types.hpp"

namespace spanattr::fixtures {

using Rng = std::mt19937_64;

/// Uniform double in [0, 1).
inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

/// Uniform integer in [lo, hi].
inline std::size_t uniform_int(Rng& rng, std::size_t lo, std::size_t hi) {
  return lo + static_cast<std::size_t>(rng() % (hi - lo + 1));
}

inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  return h;
}

// ---------------------------------------------------------------------------
// fig1: "The company earned one million dollars and two million dollars in
// 2012 and 2013, respectively." over two passages, one per year.

struct Fig1 {
  TokenizedInstance instance;
  AttentionStack attention;                  // default layer
  std::map<int, AttentionStack> layer_variants;  // other layers for sweeps
  HiddenStates hidden;
  ResponseMatrix response_attention;
  DepParse depparse;
  std::vector<Target> targets;
  DropTable drops;
};

inline constexpr int kFig1Depth = 8;
inline constexpr double kFig1Unit = 1.0 / 128.0;

namespace detail {

inline TokenizedInstance fig1_instance() {
  TokenizedInstance inst;
  inst.instance_id = "fig1";
  inst.passages = {
      {"In", " 2013", ",", " the", " company", " earned", " $", "2,000,000", "."},
      {"The", " company", " earned", " $", "1,000,000", " in", " 2012", "."},
  };
  inst.question_tokens = {"Documents", ":", "\n",     "Question", ":",     " How", " much",
                          " did",      " the", " company", " earn", " each", " year", "?"};
  inst.doc_offset = 3;
  inst.response_tokens = {"The",   " company", " earned", " one",  " million",      " dollars",
                          " and",  " two",     " million", " dollars", " in",       " 2012",
                          " and",  " 2013",    ",",        " respectively", "."};
  inst.sentence_boundaries = {{0, 17}};
  derive_passage_boundaries(inst);
  derive_char_spans(inst);
  inst.sidecars = {{"attention", "fig1.attention"},
                   {"hidden", "fig1.hidden"},
                   {"response_attention", "fig1.response_attention"},
                   {"depparse", "fig1.depparse.json"}};
  return inst;
}

// Designed average attention in units of 1/128: {row, {doc token, weight}}.
// Question columns are addressed with negative keys: -1 - question index.
inline std::vector<std::vector<std::pair<int, int>>> fig1_design() {
  return {
      {{9, 40}, {10, 26}},    // The
      {{10, 40}, {9, 26}},    // company
      {{11, 40}, {10, 26}},   // earned
      {{6, 32}, {7, 40}},     // one
      {{7, 40}, {6, 26}},     // million
      {{12, 26}, {13, 32}},   // dollars
      {{-1, 51}, {-14, 26}},  // and
      {{7, 40}, {6, 26}},     // two
      {{7, 40}, {6, 26}},     // million
      {{6, 32}, {7, 26}},     // dollars
      {{14, 45}, {15, 26}},   // in
      {{15, 51}, {14, 26}},   // 2012
      {{-1, 51}, {-14, 26}},  // and
      {{1, 51}, {0, 26}},     // 2013
      {{2, 40}, {1, 13}},     // ,
      {{11, 26}, {5, 26}},    // respectively
      {{8, 40}, {16, 40}},    // .
  };
}

inline std::size_t prompt_column(const TokenizedInstance& inst, int key) {
  if (key >= 0) return static_cast<std::size_t>(key) + inst.doc_offset;
  const auto q = static_cast<std::size_t>(-1 - key);
  return q < inst.doc_offset ? q : q + inst.doc_count();
}

inline DenseMatrix fig1_average(const TokenizedInstance& inst) {
  DenseMatrix a(inst.response_count(), inst.prompt_length());
  for (double& v : a.values()) v = kFig1Unit;
  const auto design = fig1_design();
  for (std::size_t i = 0; i < design.size(); ++i) {
    for (const auto& [key, w] : design[i]) a(i, prompt_column(inst, key)) = w * kFig1Unit;
  }
  return a;
}

// Two heads whose mean is `avg` exactly: 0.5x and 1.5x in a checkerboard.
inline AttentionStack split_heads(const DenseMatrix& avg, int layer, std::size_t o) {
  AttentionStack st;
  st.layer = layer;
  st.doc_offset = o;
  DenseMatrix h0(avg.rows(), avg.cols());
  DenseMatrix h1(avg.rows(), avg.cols());
  for (std::size_t i = 0; i < avg.rows(); ++i) {
    for (std::size_t j = 0; j < avg.cols(); ++j) {
      const double f = (i + j) % 2 == 0 ? 0.5 : 1.5;
      h0(i, j) = avg(i, j) * f;
      h1(i, j) = avg(i, j) * (2.0 - f);
    }
  }
  st.heads = {std::move(h0), std::move(h1)};
  return st;
}

// Neighbouring layers: the design blurred towards the row's next token.
inline DenseMatrix fig1_blur(const DenseMatrix& a, std::size_t shift) {
  DenseMatrix out(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < a.cols(); ++j) {
      out(i, j) = (a(i, j) + a(i, (j + shift) % a.cols())) / 2.0;
    }
  }
  return out;
}

inline std::string normalize_word(std::string s) {
  std::string out;
  for (char ch : s) {
    if (ch == ' ' || ch == '$' || ch == ',') continue;
    out += static_cast<char>(ch >= 'A' && ch <= 'Z' ? ch - 'A' + 'a' : ch);
  }
  return out.empty() ? s : out;
}

inline std::vector<double> word_vector(const std::string& word, std::size_t dim) {
  Rng rng(fnv1a(normalize_word(word)));
  std::vector<double> v(dim);
  for (double& x : v) x = 2.0 * uniform01(rng) - 1.0;
  return v;
}

inline HiddenStates fig1_hidden(const TokenizedInstance& inst, std::size_t dim) {
  HiddenStates h;
  h.layer = kFig1Depth / 2;
  h.doc_offset = inst.doc_offset;
  h.prompt = DenseMatrix(inst.prompt_length(), dim);
  h.response = DenseMatrix(inst.response_count(), dim);
  Rng noise(7);
  auto fill = [&](DenseMatrix& m, std::size_t row, const std::string& tok) {
    const auto v = word_vector(tok, dim);
    for (std::size_t d = 0; d < dim; ++d) m(row, d) = v[d] + 0.25 * (2.0 * uniform01(noise) - 1.0);
  };
  for (std::size_t q = 0; q < inst.question_count(); ++q) {
    fill(h.prompt, q < inst.doc_offset ? q : q + inst.doc_count(), inst.question_tokens[q]);
  }
  for (std::size_t j = 0; j < inst.doc_count(); ++j) fill(h.prompt, j + inst.doc_offset, inst.doc_token(j));
  for (std::size_t i = 0; i < inst.response_count(); ++i) fill(h.response, i, inst.response_tokens[i]);
  return h;
}

inline ResponseMatrix fig1_response_attention(const TokenizedInstance& inst) {
  const std::size_t n = inst.response_count();
  ResponseMatrix r;
  r.layer = kFig1Depth / 2 + 1;
  r.values = DenseMatrix(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t start = inst.sentence_boundaries[inst.sentence_of(i)].begin;
    for (std::size_t j = 0; j < i; ++j) {
      double w = 1.0;
      if (j + 1 == i) w += 50.0;
      if (j == start) w += 20.0;
      r.values(i, j) = w * kFig1Unit;
    }
  }
  return r;
}

// UD-style analysis with PTB tags. "and" attaches to the following conjunct.
inline DepParse fig1_depparse(const TokenizedInstance& inst) {
  struct W {
    const char* pos;
    int head;
    const char* label;
  };
  const std::vector<W> words = {
      {"DT", 1, "det"},     {"NN", 2, "nsubj"},    {"VBD", -1, "root"}, {"CD", 4, "compound"},
      {"CD", 5, "nummod"},  {"NNS", 2, "obj"},     {"CC", 9, "cc"},     {"CD", 8, "compound"},
      {"CD", 9, "nummod"},  {"NNS", 5, "conj"},    {"IN", 11, "case"},  {"CD", 2, "obl"},
      {"CC", 13, "cc"},     {"CD", 11, "conj"},    {",", 15, "punct"},  {"RB", 2, "advmod"},
      {".", 2, "punct"},
  };
  DepParse p;
  p.instance_id = inst.instance_id;
  p.response_text = inst.response_text;
  p.token_char_spans = inst.response_char_spans;
  DepSentence s;
  s.tokens = {0, inst.response_count()};
  for (std::size_t w = 0; w < words.size(); ++w) {
    Range cs = inst.response_char_spans[w];
    while (cs.begin < cs.end && inst.response_text[cs.begin] == ' ') ++cs.begin;
    s.words.push_back(inst.response_text.substr(cs.begin, cs.size()));
    s.head.push_back(words[w].head);
    s.label.push_back(words[w].label);
    s.pos.push_back(words[w].pos);
    s.is_punct.push_back(std::string(words[w].label) == "punct");
    s.char_spans.push_back(cs);
  }
  p.sentences.push_back(std::move(s));
  return p;
}

}  // namespace detail

/// Gold targets: each number phrase belongs to the passage of its year.
inline Fig1 fig1() {
  Fig1 f;
  f.instance = detail::fig1_instance();
  const auto avg = detail::fig1_average(f.instance);
  const int layer = kFig1Depth / 2 + 1;
  f.attention = detail::split_heads(avg, layer, f.instance.doc_offset);
  f.layer_variants[layer - 1] = detail::split_heads(detail::fig1_blur(avg, 1), layer - 1, f.instance.doc_offset);
  f.layer_variants[layer + 1] = detail::split_heads(detail::fig1_blur(avg, 5), layer + 1, f.instance.doc_offset);
  for (const auto& [l, _] : f.layer_variants) {
    f.instance.sidecars["attention.L" + std::to_string(l)] = "fig1.attention.L" + std::to_string(l);
  }
  f.instance.sidecars["attention.L" + std::to_string(layer)] = "fig1.attention";
  f.hidden = detail::fig1_hidden(f.instance, 16);
  f.response_attention = detail::fig1_response_attention(f.instance);
  f.depparse = detail::fig1_depparse(f.instance);
  f.targets = {{"fig1", {3, 6}, 1}, {"fig1", {7, 10}, 0}, {"fig1", {11, 12}, 1}, {"fig1", {13, 14}, 0}};
  f.drops.entries = {{"fig1", {3, 6}, -1.2, {-1.5, -4.0}},
                     {"fig1", {7, 10}, -1.0, {-3.8, -1.3}},
                     {"fig1", {11, 12}, -0.5, {-0.7, -2.9}},
                     {"fig1", {13, 14}, -0.6, {-2.4, -0.8}}};
  return f;
}

/// Writes the fig1 instance, sidecars, targets.json and drops.json into `dir`.
inline void write_fig1(const fs::path& dir) {
  const Fig1 f = fig1();
  save_instance(dir / "fig1.instance.json", f.instance);
  save_matrix(dir / "fig1.attention", f.attention);
  for (const auto& [l, st] : f.layer_variants) save_matrix(dir / ("fig1.attention.L" + std::to_string(l)), st);
  save_matrix(dir / "fig1.hidden", f.hidden);
  save_matrix(dir / "fig1.response_attention", f.response_attention, f.instance.doc_offset);
  save_depparse(dir / "fig1.depparse.json", f.depparse);
  save_targets(dir / "targets.json", f.targets);
  save_drops(dir / "drops.json", f.drops);
}

// ---------------------------------------------------------------------------
// Large synthetic instance

struct Synthetic {
  TokenizedInstance instance;
  SimilarityMatrix similarity;
};

/// `doc_tokens` document tokens in `passages` equal passages, `n` response
/// tokens in sentences of 16, random non-negative scores.
inline Synthetic synthetic(std::uint64_t seed, std::size_t doc_tokens = 8192, std::size_t n = 64,
                           std::size_t passages = 16, std::size_t question = 16, std::size_t o = 4) {
  Rng rng(seed);
  Synthetic s;
  auto& inst = s.instance;
  inst.instance_id = "synthetic-" + std::to_string(seed);
  const std::size_t per = doc_tokens / passages;
  for (std::size_t p = 0; p < passages; ++p) {
    const std::size_t len = p + 1 == passages ? doc_tokens - per * (passages - 1) : per;
    std::vector<std::string> toks(len);
    for (std::size_t t = 0; t < len; ++t) toks[t] = " w" + std::to_string(uniform_int(rng, 0, 999));
    inst.passages.push_back(std::move(toks));
  }
  derive_passage_boundaries(inst);
  for (std::size_t q = 0; q < question; ++q) inst.question_tokens.push_back(" q" + std::to_string(q));
  inst.doc_offset = o;
  for (std::size_t i = 0; i < n; ++i) inst.response_tokens.push_back(" r" + std::to_string(i));
  for (std::size_t b = 0; b < n; b += 16) inst.sentence_boundaries.push_back({b, std::min(n, b + 16)});
  derive_char_spans(inst);
  const std::size_t cols = inst.prompt_length();
  s.similarity.values = DenseMatrix(n, cols);
  for (double& v : s.similarity.values.values()) v = uniform01(rng) * 0.01;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t peak = uniform_int(rng, 0, doc_tokens - 2);
    s.similarity.values(i, peak + o) = 0.5;
    s.similarity.values(i, peak + o + 1) = 0.4;
  }
  s.similarity.provenance = {SimilarityKind::kAttentionAverage, 1, 1};
  s.similarity.doc_offset = o;
  return s;
}

/// `count` random spans of 1..max_len tokens within [0, n).
inline std::vector<Range> random_spans(Rng& rng, std::size_t n, std::size_t count, std::size_t max_len) {
  std::vector<Range> out;
  for (std::size_t s = 0; s < count; ++s) {
    const std::size_t len = uniform_int(rng, 1, std::min(max_len, n));
    const std::size_t b = uniform_int(rng, 0, n - len);
    out.push_back({b, b + len});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Random small cases

struct RandomCase {
  TokenizedInstance instance;
  SimilarityMatrix similarity;
};

/// n <= max_n, c + m <= max_prompt, o drawn from `offsets`. Scores come from
/// a small grid of values so ties are frequent; about a fifth are zero.
inline RandomCase random_case(Rng& rng, std::size_t max_n = 20, std::size_t max_prompt = 50,
                              std::vector<std::size_t> offsets = {0, 3}) {
  RandomCase rc;
  auto& inst = rc.instance;
  inst.instance_id = "random";
  const std::size_t o = offsets[uniform_int(rng, 0, offsets.size() - 1)];
  const std::size_t prompt = uniform_int(rng, o + 2, max_prompt);
  const std::size_t c = uniform_int(rng, 1, prompt - o - 1);
  const std::size_t m = prompt - c;
  std::size_t left = c;
  while (left > 0) {
    const std::size_t len = uniform_int(rng, 1, left);
    inst.passages.emplace_back(len, " d");
    left -= len;
  }
  derive_passage_boundaries(inst);
  inst.question_tokens.assign(m, " q");
  inst.doc_offset = o;
  const std::size_t n = uniform_int(rng, 1, max_n);
  inst.response_tokens.assign(n, " r");
  std::size_t b = 0;
  while (b < n) {
    const std::size_t len = uniform_int(rng, 1, n - b);
    inst.sentence_boundaries.push_back({b, b + len});
    b += len;
  }
  derive_char_spans(inst);
  rc.similarity.values = DenseMatrix(n, prompt);
  for (double& v : rc.similarity.values.values()) {
    v = uniform_int(rng, 0, 4) == 0 ? 0.0 : static_cast<double>(uniform_int(rng, 1, 8)) / 8.0;
  }
  rc.similarity.doc_offset = o;
  return rc;
}

/// Random dependency tree over `size` words (head -1 marks the root) with
/// labels drawn so conj/cc chains appear often.
struct RandomTree {
  std::vector<int> head;
  std::vector<std::string> label;
};

inline RandomTree random_tree(Rng& rng, std::size_t size) {
  static const std::vector<std::string> labels = {"conj", "conj", "conj", "cc",   "nsubj", "obj",
                                                  "det",  "amod", "obl",  "case", "advmod", "punct"};
  RandomTree t;
  t.head.assign(size, -1);
  t.label.assign(size, "root");
  std::vector<std::size_t> order(size);
  for (std::size_t w = 0; w < size; ++w) order[w] = w;
  for (std::size_t w = size; w > 1; --w) std::swap(order[w - 1], order[uniform_int(rng, 0, w - 1)]);
  for (std::size_t p = 1; p < size; ++p) {
    const std::size_t w = order[p];
    t.head[w] = static_cast<int>(order[uniform_int(rng, 0, p - 1)]);
    t.label[w] = labels[uniform_int(rng, 0, labels.size() - 1)];
  }
  return t;
}

/// Random single-sentence parse of `size` words, one response token per word.
inline DepSentence random_sentence(Rng& rng, std::size_t size, std::size_t first_token = 0,
                                   std::size_t first_char = 0) {
  static const std::vector<std::string> tags = {"VB", "VBD", "NN", "NNS", "DT", "JJ", "IN", "CD", "RB", "CC"};
  auto tree = random_tree(rng, size);
  DepSentence s;
  s.tokens = {first_token, first_token + size};
  s.head = tree.head;
  s.label = tree.label;
  for (std::size_t w = 0; w < size; ++w) {
    s.words.push_back("w" + std::to_string(w));
    s.pos.push_back(tree.label[w] == "punct" ? "," : tags[uniform_int(rng, 0, tags.size() - 1)]);
    s.is_punct.push_back(tree.label[w] == "punct");
    s.char_spans.push_back({first_char + 3 * w, first_char + 3 * w + 2});
  }
  return s;
}

}  // namespace spanattr::fixtures
