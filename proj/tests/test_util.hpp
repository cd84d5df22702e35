// Copyright 2026 The spanattr Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <atomic>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <string>
#include <sys/wait.h>
#include <vector>

#include "spanattr/interchange.hpp"
#include "spanattr/types.hpp"

namespace testutil {

namespace fs = std::filesystem;

/// Scratch directory removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    const auto stamp = std::chrono::steady_clock::now().time_since_epoch().count();
    path_ = fs::temp_directory_path() /
            ("spanattr-test-" + std::to_string(stamp) + "-" + std::to_string(counter++));
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

/// Instance with the given passage lengths, m question tokens, n response
/// tokens in one sentence, and doc offset o.
inline spanattr::TokenizedInstance make_instance(const std::vector<std::size_t>& passage_lengths,
                                                 std::size_t m, std::size_t n, std::size_t o = 0) {
  spanattr::TokenizedInstance inst;
  inst.instance_id = "t";
  for (std::size_t len : passage_lengths) inst.passages.emplace_back(len, " d");
  spanattr::derive_passage_boundaries(inst);
  inst.question_tokens.assign(m, " q");
  inst.response_tokens.assign(n, " r");
  inst.sentence_boundaries = {{0, n}};
  inst.doc_offset = o;
  spanattr::derive_char_spans(inst);
  return inst;
}

inline spanattr::SimilarityMatrix make_similarity(std::size_t rows, std::size_t cols,
                                                  const std::vector<double>& values, std::size_t o = 0) {
  spanattr::SimilarityMatrix s;
  s.values = spanattr::DenseMatrix(rows, cols, values);
  s.doc_offset = o;
  return s;
}

inline std::vector<std::vector<double>> rows_of(const spanattr::DenseMatrix& m) {
  std::vector<std::vector<double>> out;
  for (std::size_t r = 0; r < m.rows(); ++r) out.emplace_back(m.row(r).begin(), m.row(r).end());
  return out;
}

struct CommandResult {
  int exit_code = -1;
  std::string out;
};

/// Runs a shell command and captures its stdout.
inline CommandResult run_command(const std::string& cmd) {
  CommandResult r;
  FILE* pipe = ::popen(cmd.c_str(), "r");
  if (!pipe) return r;
  char buf[4096];
  std::size_t got = 0;
  while ((got = std::fread(buf, 1, sizeof buf, pipe)) > 0) r.out.append(buf, got);
  const int status = ::pclose(pipe);
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

inline std::string quoted(const fs::path& p) { return "'" + p.string() + "'"; }

}  // namespace testutil
