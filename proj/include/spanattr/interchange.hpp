// Copyright 2026 The spanattr Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// On-disk data model. All JSON files are written canonically (sorted keys,
// two-space indent, trailing newline) so save(load(x)) reproduces x byte for
// byte. Matrices are little-endian float32, row-major, next to a JSON sidecar;
// see docs/formats.md for the exact schemas.

#include <nlohmann/json.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "spanattr/error.hpp"
#include "spanattr/types.hpp"

namespace spanattr {

using json = nlohmann::json;
namespace fs = std::filesystem;

inline constexpr const char* kInstanceSchema = "spanattr.instance/1";
inline constexpr const char* kMatrixSchema = "spanattr.matrix/1";
inline constexpr const char* kDepParseSchema = "spanattr.depparse/1";
inline constexpr const char* kDropsSchema = "spanattr.drops/1";
inline constexpr const char* kTargetsSchema = "spanattr.targets/1";

namespace detail {

inline const json& require(const json& obj, const std::string& key, const std::string& path) {
  if (!obj.is_object()) throw SchemaError(path, "expected an object");
  auto it = obj.find(key);
  if (it == obj.end()) throw SchemaError(path.empty() ? key : path + "." + key, "missing field");
  return *it;
}

inline std::string join(const std::string& path, const std::string& key) {
  return path.empty() ? key : path + "." + key;
}

inline std::string at(const std::string& path, std::size_t i) {
  return path + "[" + std::to_string(i) + "]";
}

inline std::string as_string(const json& v, const std::string& path) {
  if (!v.is_string()) throw SchemaError(path, "expected a string");
  return v.get<std::string>();
}

inline std::size_t as_index(const json& v, const std::string& path) {
  if (!v.is_number_integer() || v.get<long long>() < 0) {
    throw SchemaError(path, "expected a non-negative integer");
  }
  return v.get<std::size_t>();
}

inline int as_int(const json& v, const std::string& path) {
  if (!v.is_number_integer()) throw SchemaError(path, "expected an integer");
  return v.get<int>();
}

inline double as_double(const json& v, const std::string& path) {
  if (!v.is_number()) throw SchemaError(path, "expected a number");
  return v.get<double>();
}

inline bool as_bool(const json& v, const std::string& path) {
  if (!v.is_boolean()) throw SchemaError(path, "expected a boolean");
  return v.get<bool>();
}

inline const json& as_array(const json& v, const std::string& path) {
  if (!v.is_array()) throw SchemaError(path, "expected an array");
  return v;
}

inline std::vector<std::string> string_list(const json& v, const std::string& path) {
  as_array(v, path);
  std::vector<std::string> out;
  out.reserve(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out.push_back(as_string(v[i], at(path, i)));
  return out;
}

inline Range as_range(const json& v, const std::string& path) {
  if (!v.is_array() || v.size() != 2) throw SchemaError(path, "expected [begin, end]");
  Range r{as_index(v[0], at(path, 0)), as_index(v[1], at(path, 1))};
  if (r.end < r.begin) throw SchemaError(path, "end precedes begin");
  return r;
}

inline std::vector<Range> range_list(const json& v, const std::string& path) {
  as_array(v, path);
  std::vector<Range> out;
  out.reserve(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out.push_back(as_range(v[i], at(path, i)));
  return out;
}

inline json range_json(const Range& r) { return json::array({r.begin, r.end}); }

inline json range_list_json(const std::vector<Range>& rs) {
  json out = json::array();
  for (const auto& r : rs) out.push_back(range_json(r));
  return out;
}

inline void check_schema(const json& doc, const char* expected) {
  const auto& s = require(doc, "schema", "");
  if (as_string(s, "schema") != expected) {
    throw SchemaError("schema", "expected '" + std::string(expected) + "', found '" +
                                    s.get<std::string>() + "'");
  }
}

inline json read_json(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw SchemaError("<document>", path.string() + ": " + e.what());
  }
}

inline std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

/// Checks that `ranges` are sorted, disjoint and exactly cover [0, total).
inline void check_cover(const std::vector<Range>& ranges, std::size_t total, const char* what) {
  std::size_t cursor = 0;
  for (std::size_t i = 0; i < ranges.size(); ++i) {
    const Range& r = ranges[i];
    if (r.begin < cursor) {
      throw ValidationError(std::string(what) + " " + std::to_string(i) + " [" +
                            std::to_string(r.begin) + ", " + std::to_string(r.end) +
                            ") overlaps the previous range ending at " + std::to_string(cursor));
    }
    if (r.begin > cursor) {
      throw ValidationError(std::string(what) + " gap: indices [" + std::to_string(cursor) +
                            ", " + std::to_string(r.begin) + ") before range " +
                            std::to_string(i) + " are uncovered");
    }
    if (r.empty()) {
      throw ValidationError(std::string(what) + " " + std::to_string(i) + " is empty");
    }
    cursor = r.end;
  }
  if (cursor != total) {
    throw ValidationError(std::string(what) + " cover [0, " + std::to_string(cursor) +
                          ") but " + std::to_string(total) + " tokens exist");
  }
}

}  // namespace detail

/// Canonical serialization used for every JSON file the library writes.
inline std::string canonical_dump(const json& doc) { return doc.dump(2) + "\n"; }

/// Derives response text and char spans by concatenating tokens verbatim.
inline void derive_char_spans(TokenizedInstance& inst) {
  inst.response_text.clear();
  inst.response_char_spans.clear();
  for (const auto& tok : inst.response_tokens) {
    const std::size_t b = inst.response_text.size();
    inst.response_text += tok;
    inst.response_char_spans.push_back({b, inst.response_text.size()});
  }
}

/// Sets passage boundaries from passage lengths.
inline void derive_passage_boundaries(TokenizedInstance& inst) {
  inst.passage_boundaries.clear();
  std::size_t cursor = 0;
  for (const auto& p : inst.passages) {
    inst.passage_boundaries.push_back({cursor, cursor + p.size()});
    cursor += p.size();
  }
}

/// Throws ValidationError unless every TokenizedInstance invariant holds.
inline void validate(const TokenizedInstance& inst) {
  if (inst.instance_id.empty()) throw ValidationError("instance_id is empty");
  if (inst.passage_boundaries.size() != inst.passages.size()) {
    throw ValidationError("passage_boundaries has " +
                          std::to_string(inst.passage_boundaries.size()) + " ranges for " +
                          std::to_string(inst.passages.size()) + " passages");
  }
  std::size_t c = 0;
  for (const auto& p : inst.passages) c += p.size();
  detail::check_cover(inst.passage_boundaries, c, "passage boundary");
  for (std::size_t p = 0; p < inst.passages.size(); ++p) {
    if (inst.passage_boundaries[p].size() != inst.passages[p].size()) {
      throw ValidationError("passage " + std::to_string(p) + " has " +
                            std::to_string(inst.passages[p].size()) + " tokens but its boundary [" +
                            std::to_string(inst.passage_boundaries[p].begin) + ", " +
                            std::to_string(inst.passage_boundaries[p].end) + ") spans " +
                            std::to_string(inst.passage_boundaries[p].size()));
    }
  }
  detail::check_cover(inst.sentence_boundaries, inst.response_count(), "sentence boundary");
  if (inst.doc_offset + c > inst.prompt_length()) {
    throw ValidationError("doc_offset " + std::to_string(inst.doc_offset) + " + c " +
                          std::to_string(c) + " exceeds prompt length " +
                          std::to_string(inst.prompt_length()));
  }
  if (inst.response_char_spans.size() != inst.response_count()) {
    throw ValidationError("response_char_spans has " +
                          std::to_string(inst.response_char_spans.size()) + " entries for " +
                          std::to_string(inst.response_count()) + " response tokens");
  }
  std::size_t prev_end = 0;
  for (std::size_t i = 0; i < inst.response_char_spans.size(); ++i) {
    const Range& r = inst.response_char_spans[i];
    if (r.begin < prev_end || r.end > inst.response_text.size()) {
      throw ValidationError("response_char_spans[" + std::to_string(i) +
                            "] is unsorted or outside response_text");
    }
    prev_end = r.end;
  }
}

inline TokenizedInstance instance_from_json(const json& doc) {
  using namespace detail;
  check_schema(doc, kInstanceSchema);
  TokenizedInstance inst;
  inst.instance_id = as_string(require(doc, "instance_id", ""), "instance_id");
  const auto& passages = as_array(require(doc, "passages", ""), "passages");
  for (std::size_t p = 0; p < passages.size(); ++p) {
    inst.passages.push_back(string_list(passages[p], at("passages", p)));
  }
  inst.passage_boundaries =
      range_list(require(doc, "passage_boundaries", ""), "passage_boundaries");
  inst.question_tokens = string_list(require(doc, "question_tokens", ""), "question_tokens");
  inst.response_tokens = string_list(require(doc, "response_tokens", ""), "response_tokens");
  inst.sentence_boundaries = range_list(require(doc, "response_sentence_boundaries", ""),
                                        "response_sentence_boundaries");
  if (auto it = doc.find("doc_offset"); it != doc.end()) {
    inst.doc_offset = as_index(*it, "doc_offset");
  }
  const bool has_text = doc.contains("response_text");
  const bool has_spans = doc.contains("response_char_spans");
  if (has_text != has_spans) {
    throw SchemaError(has_text ? "response_char_spans" : "response_text",
                      "response_text and response_char_spans must appear together");
  }
  if (has_text) {
    inst.response_text = as_string(doc["response_text"], "response_text");
    inst.response_char_spans = range_list(doc["response_char_spans"], "response_char_spans");
  } else {
    derive_char_spans(inst);
  }
  if (auto it = doc.find("sidecars"); it != doc.end()) {
    if (!it->is_object()) throw SchemaError("sidecars", "expected an object");
    for (const auto& [role, path] : it->items()) {
      inst.sidecars[role] = as_string(path, "sidecars." + role);
    }
  }
  validate(inst);
  return inst;
}

inline json instance_to_json(const TokenizedInstance& inst) {
  json doc;
  doc["schema"] = kInstanceSchema;
  doc["instance_id"] = inst.instance_id;
  doc["passages"] = inst.passages;
  doc["passage_boundaries"] = detail::range_list_json(inst.passage_boundaries);
  doc["question_tokens"] = inst.question_tokens;
  doc["response_tokens"] = inst.response_tokens;
  doc["response_sentence_boundaries"] = detail::range_list_json(inst.sentence_boundaries);
  doc["doc_offset"] = inst.doc_offset;
  doc["response_text"] = inst.response_text;
  doc["response_char_spans"] = detail::range_list_json(inst.response_char_spans);
  doc["sidecars"] = json::object();
  for (const auto& [role, path] : inst.sidecars) doc["sidecars"][role] = path;
  return doc;
}

inline TokenizedInstance load_instance(const fs::path& path) {
  return instance_from_json(detail::read_json(path));
}

inline void save_instance(const fs::path& path, const TokenizedInstance& inst) {
  validate(inst);
  detail::write_text(path, canonical_dump(instance_to_json(inst)));
}

// ---------------------------------------------------------------------------
// Matrices

/// Sidecar metadata of a float32 matrix file.
struct MatrixMeta {
  std::string kind;  // attention-average | hidden-cosine | external |
                     // attention-stack | hidden-states | response-attention
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::optional<int> layer;
  std::optional<int> heads;
  std::size_t doc_offset = 0;

  // For similarity kinds `heads` records how many heads were averaged; only an
  // attention-stack stores one block per head.
  std::size_t value_count() const noexcept {
    return rows * cols * (kind == "attention-stack" && heads ? static_cast<std::size_t>(*heads) : 1);
  }
};

using LoadedMatrix = std::variant<SimilarityMatrix, AttentionStack, HiddenStates, ResponseMatrix>;

inline std::string kind_name(SimilarityKind k) {
  switch (k) {
    case SimilarityKind::kAttentionAverage: return "attention-average";
    case SimilarityKind::kHiddenCosine: return "hidden-cosine";
    case SimilarityKind::kExternal: return "external";
  }
  return "external";
}

/// Strips ".f32" / ".meta.json" so either file (or the bare base) can be named.
inline fs::path matrix_base(const fs::path& path) {
  std::string s = path.string();
  for (const std::string suffix : {".meta.json", ".f32"}) {
    if (s.size() > suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0) {
      return s.substr(0, s.size() - suffix.size());
    }
  }
  return path;
}

inline json meta_to_json(const MatrixMeta& m) {
  json doc;
  doc["schema"] = kMatrixSchema;
  doc["kind"] = m.kind;
  doc["rows"] = m.rows;
  doc["cols"] = m.cols;
  doc["layer"] = m.layer ? json(*m.layer) : json(nullptr);
  doc["heads"] = m.heads ? json(*m.heads) : json(nullptr);
  doc["o"] = m.doc_offset;
  doc["dtype"] = "f32le";
  return doc;
}

inline MatrixMeta meta_from_json(const json& doc) {
  using namespace detail;
  check_schema(doc, kMatrixSchema);
  MatrixMeta m;
  m.kind = as_string(require(doc, "kind", ""), "kind");
  static const std::vector<std::string> kinds = {"attention-average", "hidden-cosine",
                                                 "external",          "attention-stack",
                                                 "hidden-states",     "response-attention"};
  if (std::find(kinds.begin(), kinds.end(), m.kind) == kinds.end()) {
    throw SchemaError("kind", "unknown matrix kind '" + m.kind + "'");
  }
  m.rows = as_index(require(doc, "rows", ""), "rows");
  m.cols = as_index(require(doc, "cols", ""), "cols");
  if (auto it = doc.find("layer"); it != doc.end() && !it->is_null()) m.layer = as_int(*it, "layer");
  if (auto it = doc.find("heads"); it != doc.end() && !it->is_null()) {
    m.heads = as_int(*it, "heads");
    if (*m.heads < 1) throw SchemaError("heads", "must be >= 1");
  }
  if (m.kind == "attention-stack" && !m.heads) throw SchemaError("heads", "required for attention-stack");
  if (auto it = doc.find("o"); it != doc.end()) m.doc_offset = as_index(*it, "o");
  if (auto it = doc.find("dtype"); it != doc.end() && as_string(*it, "dtype") != "f32le") {
    throw SchemaError("dtype", "only f32le is supported");
  }
  return m;
}

namespace detail {

inline std::vector<double> read_f32(const fs::path& path, std::size_t count) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  if (bytes.size() != count * 4) {
    throw ShapeError(path.string() + ": expected " + std::to_string(count * 4) + " bytes (" +
                     std::to_string(count) + " floats), found " + std::to_string(bytes.size()));
  }
  std::vector<double> out(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::uint32_t u = static_cast<std::uint32_t>(bytes[4 * i]) |
                            static_cast<std::uint32_t>(bytes[4 * i + 1]) << 8 |
                            static_cast<std::uint32_t>(bytes[4 * i + 2]) << 16 |
                            static_cast<std::uint32_t>(bytes[4 * i + 3]) << 24;
    out[i] = static_cast<double>(std::bit_cast<float>(u));
  }
  return out;
}

inline void append_f32(std::string& buf, double v) {
  const std::uint32_t u = std::bit_cast<std::uint32_t>(static_cast<float>(v));
  buf.push_back(static_cast<char>(u & 0xFF));
  buf.push_back(static_cast<char>((u >> 8) & 0xFF));
  buf.push_back(static_cast<char>((u >> 16) & 0xFF));
  buf.push_back(static_cast<char>((u >> 24) & 0xFF));
}

inline void check_finite(const std::vector<double>& v, std::size_t rows, std::size_t cols,
                         const fs::path& path) {
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!std::isfinite(v[i])) {
      const std::size_t per = rows * cols;
      std::ostringstream msg;
      msg << path.string() << ": non-finite value at ";
      if (v.size() > per) msg << "head " << i / per << ", ";
      msg << "row " << (i % per) / cols << ", col " << i % cols;
      throw ValidationError(msg.str());
    }
  }
}

inline void expect_shape(const char* what, std::size_t expected, std::size_t found) {
  if (expected != found) {
    throw ShapeError(std::string(what) + ": expected " + std::to_string(expected) + ", found " +
                     std::to_string(found));
  }
}

}  // namespace detail

/// Loads a matrix file and cross-checks its shape against `inst`.
inline LoadedMatrix load_matrix(const fs::path& path, const TokenizedInstance& inst) {
  const fs::path base = matrix_base(path);
  const MatrixMeta meta = meta_from_json(detail::read_json(base.string() + ".meta.json"));
  const fs::path data_path = base.string() + ".f32";
  const std::size_t n = inst.response_count();
  const std::size_t prompt = inst.prompt_length();

  if (meta.doc_offset != inst.doc_offset) {
    throw ShapeError("doc offset o: expected " + std::to_string(inst.doc_offset) + ", found " +
                     std::to_string(meta.doc_offset));
  }

  if (meta.kind == "hidden-states") {
    detail::expect_shape("hidden-states rows (c+m+n)", prompt + n, meta.rows);
    auto values = detail::read_f32(data_path, meta.value_count());
    detail::check_finite(values, meta.rows, meta.cols, data_path);
    HiddenStates h;
    h.layer = meta.layer.value_or(0);
    h.doc_offset = meta.doc_offset;
    const auto split = values.begin() + static_cast<std::ptrdiff_t>(prompt * meta.cols);
    h.prompt = DenseMatrix(prompt, meta.cols, std::vector<double>(values.begin(), split));
    h.response = DenseMatrix(n, meta.cols, std::vector<double>(split, values.end()));
    return h;
  }
  if (meta.kind == "response-attention") {
    detail::expect_shape("response-attention rows (n)", n, meta.rows);
    detail::expect_shape("response-attention cols (n)", n, meta.cols);
    auto values = detail::read_f32(data_path, meta.value_count());
    detail::check_finite(values, meta.rows, meta.cols, data_path);
    return ResponseMatrix{DenseMatrix(n, n, std::move(values)), meta.layer};
  }

  detail::expect_shape("matrix rows (n)", n, meta.rows);
  detail::expect_shape("matrix cols (c+m)", prompt, meta.cols);
  auto values = detail::read_f32(data_path, meta.value_count());
  detail::check_finite(values, meta.rows, meta.cols, data_path);

  if (meta.kind == "attention-stack") {
    AttentionStack stack;
    stack.layer = meta.layer.value_or(0);
    stack.doc_offset = meta.doc_offset;
    const std::size_t per = meta.rows * meta.cols;
    for (int h = 0; h < *meta.heads; ++h) {
      auto first = values.begin() + static_cast<std::ptrdiff_t>(h * per);
      DenseMatrix head(meta.rows, meta.cols, std::vector<double>(first, first + static_cast<std::ptrdiff_t>(per)));
      for (std::size_t i = 0; i < head.values().size(); ++i) {
        if (head.values()[i] < 0.0) {
          throw ValidationError(data_path.string() + ": negative attention at head " +
                                std::to_string(h) + ", row " + std::to_string(i / meta.cols) +
                                ", col " + std::to_string(i % meta.cols));
        }
      }
      stack.heads.push_back(std::move(head));
    }
    return stack;
  }

  SimilarityMatrix s;
  s.values = DenseMatrix(meta.rows, meta.cols, std::move(values));
  s.doc_offset = meta.doc_offset;
  s.provenance.layer = meta.layer;
  s.provenance.heads_averaged = meta.heads;
  s.provenance.kind = meta.kind == "attention-average" ? SimilarityKind::kAttentionAverage
                      : meta.kind == "hidden-cosine"   ? SimilarityKind::kHiddenCosine
                                                       : SimilarityKind::kExternal;
  return s;
}

namespace detail {

inline void write_matrix_files(const fs::path& path, const MatrixMeta& meta,
                               const std::vector<const DenseMatrix*>& blocks) {
  const fs::path base = matrix_base(path);
  std::string buf;
  buf.reserve(meta.value_count() * 4);
  for (const auto* m : blocks) {
    for (double v : m->values()) append_f32(buf, v);
  }
  write_text(base.string() + ".f32", buf);
  write_text(base.string() + ".meta.json", canonical_dump(meta_to_json(meta)));
}

}  // namespace detail

inline void save_matrix(const fs::path& path, const SimilarityMatrix& s) {
  MatrixMeta meta{kind_name(s.provenance.kind), s.values.rows(), s.values.cols(),
                  s.provenance.layer, s.provenance.heads_averaged, s.doc_offset};
  detail::write_matrix_files(path, meta, {&s.values});
}

inline void save_matrix(const fs::path& path, const AttentionStack& stack) {
  if (stack.heads.empty()) throw ArgumentError("attention stack has no heads");
  MatrixMeta meta{"attention-stack", stack.heads[0].rows(), stack.heads[0].cols(), stack.layer,
                  static_cast<int>(stack.heads.size()), stack.doc_offset};
  std::vector<const DenseMatrix*> blocks;
  for (const auto& h : stack.heads) blocks.push_back(&h);
  detail::write_matrix_files(path, meta, blocks);
}

inline void save_matrix(const fs::path& path, const HiddenStates& h) {
  MatrixMeta meta{"hidden-states", h.prompt.rows() + h.response.rows(), h.prompt.cols(), h.layer,
                  std::nullopt, h.doc_offset};
  detail::write_matrix_files(path, meta, {&h.prompt, &h.response});
}

inline void save_matrix(const fs::path& path, const ResponseMatrix& r, std::size_t doc_offset = 0) {
  MatrixMeta meta{"response-attention", r.values.rows(), r.values.cols(), r.layer, std::nullopt,
                  doc_offset};
  detail::write_matrix_files(path, meta, {&r.values});
}

// ---------------------------------------------------------------------------
// Dependency parses

/// Throws ValidationError unless every sentence is a single-rooted tree with
/// consistent arrays and sorted, non-overlapping word spans.
inline void validate(const DepParse& parse) {
  std::size_t prev_token_end = 0;
  for (std::size_t s = 0; s < parse.sentences.size(); ++s) {
    const DepSentence& sent = parse.sentences[s];
    const std::string where = "sentence " + std::to_string(s);
    const std::size_t w = sent.words.size();
    if (sent.head.size() != w || sent.label.size() != w || sent.pos.size() != w ||
        sent.is_punct.size() != w || sent.char_spans.size() != w) {
      throw ValidationError(where + ": head/label/pos/is_punct/char_spans lengths differ from words");
    }
    if (sent.tokens.begin != prev_token_end) {
      throw ValidationError(where + ": token range does not continue the previous sentence");
    }
    prev_token_end = sent.tokens.end;
    if (w == 0) continue;
    int roots = 0;
    for (std::size_t i = 0; i < w; ++i) {
      if (sent.head[i] < 0) {
        if (sent.head[i] != -1) throw ValidationError(where + ": head sentinel must be -1");
        ++roots;
      } else if (static_cast<std::size_t>(sent.head[i]) >= w) {
        throw ValidationError(where + ": head of word " + std::to_string(i) + " out of range");
      }
    }
    if (roots != 1) {
      throw ValidationError(where + ": expected exactly one root, found " + std::to_string(roots));
    }
    for (std::size_t i = 0; i < w; ++i) {
      std::size_t steps = 0;
      for (int cur = static_cast<int>(i); cur >= 0; cur = sent.head[static_cast<std::size_t>(cur)]) {
        if (++steps > w) throw ValidationError(where + ": head links form a cycle through word " + std::to_string(i));
      }
    }
    for (std::size_t i = 0; i < w; ++i) {
      if (sent.char_spans[i].empty()) {
        throw ValidationError(where + ": word " + std::to_string(i) + " has an empty char span");
      }
      if (i > 0 && sent.char_spans[i].begin < sent.char_spans[i - 1].end) {
        throw ValidationError(where + ": word char spans unsorted or overlapping at word " + std::to_string(i));
      }
      if (sent.char_spans[i].end > parse.response_text.size()) {
        throw ValidationError(where + ": word " + std::to_string(i) + " char span beyond response text");
      }
    }
  }
  if (prev_token_end != parse.token_char_spans.size()) {
    throw ValidationError("sentence token ranges cover " + std::to_string(prev_token_end) +
                          " tokens but token_char_spans has " +
                          std::to_string(parse.token_char_spans.size()));
  }
}

/// Cross-checks a parse against the instance it annotates.
inline void check_against(const DepParse& parse, const TokenizedInstance& inst) {
  if (parse.sentences.size() != inst.sentence_boundaries.size()) {
    throw ValidationError("parse has " + std::to_string(parse.sentences.size()) +
                          " sentences, instance has " +
                          std::to_string(inst.sentence_boundaries.size()));
  }
  for (std::size_t s = 0; s < parse.sentences.size(); ++s) {
    if (!(parse.sentences[s].tokens == inst.sentence_boundaries[s])) {
      throw ValidationError("parse sentence " + std::to_string(s) +
                            " token range differs from the instance sentence boundary");
    }
  }
  if (parse.token_char_spans != inst.response_char_spans || parse.response_text != inst.response_text) {
    throw ValidationError("parse token char spans / response text differ from the instance");
  }
}

inline DepParse depparse_from_json(const json& doc) {
  using namespace detail;
  check_schema(doc, kDepParseSchema);
  DepParse parse;
  parse.instance_id = as_string(require(doc, "instance_id", ""), "instance_id");
  parse.response_text = as_string(require(doc, "response_text", ""), "response_text");
  parse.token_char_spans = range_list(require(doc, "token_char_spans", ""), "token_char_spans");
  const auto& sentences = as_array(require(doc, "sentences", ""), "sentences");
  for (std::size_t s = 0; s < sentences.size(); ++s) {
    const std::string p = at("sentences", s);
    const json& js = sentences[s];
    DepSentence sent;
    sent.tokens = as_range(require(js, "tokens", p), join(p, "tokens"));
    sent.words = string_list(require(js, "words", p), join(p, "words"));
    const auto& heads = as_array(require(js, "head", p), join(p, "head"));
    for (std::size_t i = 0; i < heads.size(); ++i) sent.head.push_back(as_int(heads[i], at(join(p, "head"), i)));
    sent.label = string_list(require(js, "label", p), join(p, "label"));
    sent.pos = string_list(require(js, "pos", p), join(p, "pos"));
    const auto& punct = as_array(require(js, "is_punct", p), join(p, "is_punct"));
    for (std::size_t i = 0; i < punct.size(); ++i) sent.is_punct.push_back(as_bool(punct[i], at(join(p, "is_punct"), i)));
    sent.char_spans = range_list(require(js, "char_spans", p), join(p, "char_spans"));
    parse.sentences.push_back(std::move(sent));
  }
  validate(parse);
  return parse;
}

inline json depparse_to_json(const DepParse& parse) {
  json doc;
  doc["schema"] = kDepParseSchema;
  doc["instance_id"] = parse.instance_id;
  doc["response_text"] = parse.response_text;
  doc["token_char_spans"] = detail::range_list_json(parse.token_char_spans);
  doc["sentences"] = json::array();
  for (const auto& s : parse.sentences) {
    json js;
    js["tokens"] = detail::range_json(s.tokens);
    js["words"] = s.words;
    js["head"] = s.head;
    js["label"] = s.label;
    js["pos"] = s.pos;
    js["is_punct"] = s.is_punct;
    js["char_spans"] = detail::range_list_json(s.char_spans);
    doc["sentences"].push_back(std::move(js));
  }
  return doc;
}

inline DepParse load_depparse(const fs::path& path) {
  return depparse_from_json(detail::read_json(path));
}

inline void save_depparse(const fs::path& path, const DepParse& parse) {
  validate(parse);
  detail::write_text(path, canonical_dump(depparse_to_json(parse)));
}

// ---------------------------------------------------------------------------
// Drop tables and target lists

inline DropTable drops_from_json(const json& doc) {
  using namespace detail;
  check_schema(doc, kDropsSchema);
  DropTable table;
  const auto& entries = as_array(require(doc, "entries", ""), "entries");
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const std::string p = at("entries", i);
    DropEntry e;
    e.instance_id = as_string(require(entries[i], "instance_id", p), join(p, "instance_id"));
    e.span = as_range(require(entries[i], "span", p), join(p, "span"));
    e.log_p_full = as_double(require(entries[i], "log_p_full", p), join(p, "log_p_full"));
    const auto& abl = as_array(require(entries[i], "log_p_ablated", p), join(p, "log_p_ablated"));
    for (std::size_t k = 0; k < abl.size(); ++k) {
      e.log_p_ablated.push_back(as_double(abl[k], at(join(p, "log_p_ablated"), k)));
    }
    if (e.log_p_ablated.empty()) throw SchemaError(join(p, "log_p_ablated"), "must not be empty");
    table.entries.push_back(std::move(e));
  }
  return table;
}

inline json drops_to_json(const DropTable& table) {
  json doc;
  doc["schema"] = kDropsSchema;
  doc["entries"] = json::array();
  for (const auto& e : table.entries) {
    doc["entries"].push_back({{"instance_id", e.instance_id},
                              {"span", detail::range_json(e.span)},
                              {"log_p_full", e.log_p_full},
                              {"log_p_ablated", e.log_p_ablated}});
  }
  return doc;
}

/// One ablated entry per passage of the instance it refers to.
inline void check_against(const DropEntry& e, const TokenizedInstance& inst) {
  if (e.log_p_ablated.size() != inst.passage_count()) {
    throw ValidationError("drop entry for " + e.instance_id + " has " +
                          std::to_string(e.log_p_ablated.size()) + " ablated values for " +
                          std::to_string(inst.passage_count()) + " passages");
  }
}

inline DropTable load_drops(const fs::path& path) { return drops_from_json(detail::read_json(path)); }

inline void save_drops(const fs::path& path, const DropTable& table) {
  detail::write_text(path, canonical_dump(drops_to_json(table)));
}

inline std::vector<Target> targets_from_json(const json& doc) {
  using namespace detail;
  check_schema(doc, kTargetsSchema);
  std::vector<Target> out;
  const auto& items = as_array(require(doc, "targets", ""), "targets");
  for (std::size_t i = 0; i < items.size(); ++i) {
    const std::string p = at("targets", i);
    Target t;
    t.instance_id = as_string(require(items[i], "instance_id", p), join(p, "instance_id"));
    t.span = as_range(require(items[i], "span", p), join(p, "span"));
    if (t.span.empty()) throw SchemaError(join(p, "span"), "span must be non-empty");
    if (auto it = items[i].find("gold_passage"); it != items[i].end() && !it->is_null()) {
      t.gold_passage = as_index(*it, join(p, "gold_passage"));
    }
    out.push_back(std::move(t));
  }
  return out;
}

inline json targets_to_json(const std::vector<Target>& targets) {
  json doc;
  doc["schema"] = kTargetsSchema;
  doc["targets"] = json::array();
  for (const auto& t : targets) {
    doc["targets"].push_back({{"instance_id", t.instance_id},
                              {"span", detail::range_json(t.span)},
                              {"gold_passage", t.gold_passage ? json(*t.gold_passage) : json(nullptr)}});
  }
  return doc;
}

inline std::vector<Target> load_targets(const fs::path& path) {
  return targets_from_json(detail::read_json(path));
}

inline void save_targets(const fs::path& path, const std::vector<Target>& targets) {
  detail::write_text(path, canonical_dump(targets_to_json(targets)));
}

}  // namespace spanattr
