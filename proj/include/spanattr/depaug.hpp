// Copyright 2026 The spanattr Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

/**
 * Dependency-parse augmentation.
 *
 * For a response token the atomic fact around it is approximated by the
 * clause headed by the closest verb ancestor: the verb plus all of its
 * non-punctuation descendants, with coordinated constituents that do not
 * belong to the target's reading removed. Coordinations are found and pruned
 * in four steps:
 *
 *   1. find_coordinations   leaders and their conj / same-label children
 *   2. reform_tree          lift non-leader members (and leader children that
 *                           follow them) to the leader's head
 *   3. prune_coordinations  groups crossed by the verb->target path keep only
 *                           the crossed member; parallel groups (same size)
 *                           keep the member at the same position
 *   4. recollect            descendants of the verb in the pruned tree
 *
 * Words and model tokens are aligned through character spans: a token maps
 * to every word it overlaps, a word set maps back to every token overlapping
 * one of its words.
 */

#include <algorithm>
#include <cstddef>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "spanattr/attribution.hpp"
#include "spanattr/error.hpp"
#include "spanattr/types.hpp"

namespace spanattr {

/// POS tags treated as verbs. Defaults to the PTB verb tags.
struct VerbTags {
  std::set<std::string> tags{"VB", "VBD", "VBG", "VBN", "VBP", "VBZ"};
  bool contains(const std::string& pos) const { return tags.count(pos) > 0; }
};

struct Coordination {
  std::vector<std::size_t> members;  // sorted word indices
  std::size_t leader() const { return members.front(); }
  std::size_t size() const { return members.size(); }
  friend bool operator==(const Coordination&, const Coordination&) = default;
};

struct WordSet {
  std::size_t sentence = 0;
  std::vector<std::size_t> words;
};

namespace detail {

inline std::vector<std::vector<std::size_t>> children_of(std::span<const int> head) {
  std::vector<std::vector<std::size_t>> kids(head.size());
  for (std::size_t w = 0; w < head.size(); ++w) {
    if (head[w] >= 0) kids[static_cast<std::size_t>(head[w])].push_back(w);
  }
  return kids;
}

inline bool is_forest_acyclic(std::span<const int> head) {
  for (std::size_t w = 0; w < head.size(); ++w) {
    std::size_t steps = 0;
    for (int cur = static_cast<int>(w); cur >= 0; cur = head[static_cast<std::size_t>(cur)]) {
      if (++steps > head.size()) return false;
    }
  }
  return true;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Word <-> token alignment

/// Minimal word set covering response token i: every word of i's sentence
/// whose char span overlaps the token's char span.
inline WordSet token_to_words(const DepParse& parse, std::size_t token) {
  const auto s = parse.sentence_of_token(token);
  if (!s) throw ArgumentError("token " + std::to_string(token) + " lies outside every parsed sentence");
  const Range span = parse.token_char_spans.at(token);
  WordSet out{*s, {}};
  const DepSentence& sent = parse.sentences[*s];
  for (std::size_t w = 0; w < sent.size(); ++w) {
    if (sent.char_spans[w].overlaps(span)) out.words.push_back(w);
  }
  if (out.words.empty()) {
    throw ArgumentError("token " + std::to_string(token) + " [" + std::to_string(span.begin) + ", " +
                        std::to_string(span.end) + ") overlaps no word of sentence " +
                        std::to_string(*s) + "; parse is misaligned");
  }
  return out;
}

/// Minimal token set covering the given words of one sentence.
inline std::vector<std::size_t> words_to_tokens(const DepParse& parse, std::size_t sentence,
                                                std::span<const std::size_t> words) {
  std::vector<std::size_t> out;
  if (words.empty()) return out;
  const DepSentence& sent = parse.sentences.at(sentence);
  for (std::size_t t = sent.tokens.begin; t < sent.tokens.end; ++t) {
    const Range span = parse.token_char_spans[t];
    for (std::size_t w : words) {
      if (sent.char_spans.at(w).overlaps(span)) {
        out.push_back(t);
        break;
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Tree rules

/// First word on the chain word -> head -> ... -> root (the word itself
/// included) whose POS is a verb.
inline std::optional<std::size_t> closest_verb_ancestor(const DepSentence& sent, std::size_t word,
                                                        const VerbTags& verbs = {}) {
  std::size_t steps = 0;
  for (int cur = static_cast<int>(word); cur >= 0; cur = sent.head[static_cast<std::size_t>(cur)]) {
    if (verbs.contains(sent.pos[static_cast<std::size_t>(cur)])) return static_cast<std::size_t>(cur);
    if (++steps > sent.size()) break;
  }
  return std::nullopt;
}

/// v and its descendants under `head`, minus punctuation; subtrees rooted at
/// `deleted` words are skipped entirely. Sorted.
inline std::vector<std::size_t> collect_successors(std::span<const int> head,
                                                   const std::vector<bool>& is_punct, std::size_t v,
                                                   const std::vector<bool>* deleted = nullptr) {
  const auto kids = detail::children_of(head);
  std::vector<std::size_t> out;
  std::vector<std::size_t> stack{v};
  while (!stack.empty()) {
    const std::size_t w = stack.back();
    stack.pop_back();
    if (deleted && (*deleted)[w]) continue;
    if (!is_punct[w]) out.push_back(w);
    for (std::size_t c : kids[w]) stack.push_back(c);
  }
  std::sort(out.begin(), out.end());
  return out;
}

inline std::vector<std::size_t> collect_successors(const DepSentence& sent, std::size_t v) {
  return collect_successors(sent.head, sent.is_punct, v);
}

/// Coordinating structures in leader order. A candidate leader j collects
/// every later child k with label(k) == label(j) or label(k) == "conj";
/// groups of one are dropped and grouped words are never leaders again.
inline std::vector<Coordination> find_coordinations(std::span<const int> head,
                                                    std::span<const std::string> label) {
  const auto kids = detail::children_of(head);
  std::vector<Coordination> out;
  std::vector<bool> grouped(head.size(), false);
  for (std::size_t j = 0; j + 1 < head.size(); ++j) {
    if (grouped[j]) continue;
    Coordination g{{j}};
    for (std::size_t k : kids[j]) {
      if (k > j && (label[k] == label[j] || label[k] == "conj")) g.members.push_back(k);
    }
    if (g.size() > 1) {
      std::sort(g.members.begin(), g.members.end());
      for (std::size_t m : g.members) grouped[m] = true;
      out.push_back(std::move(g));
    }
  }
  return out;
}

inline std::vector<Coordination> find_coordinations(const DepSentence& sent) {
  return find_coordinations(sent.head, sent.label);
}

/// Head array with every coordination made symmetric: non-leader members are
/// re-headed to the leader's head, and the leader's other children keep the
/// leader only if they precede the first non-leader member. Groups whose
/// leader is the sentence root are left as they are so the tree stays
/// single-rooted. Groups are applied in leader order on the evolving tree;
/// each change lifts a word to its grandparent, so no cycle can form.
inline std::vector<int> reform_tree(std::span<const int> head,
                                    const std::vector<Coordination>& coords) {
  std::vector<int> out(head.begin(), head.end());
  for (const auto& g : coords) {
    const std::size_t leader = g.leader();
    const int grand = out[leader];
    if (grand < 0) continue;
    const std::size_t first_other = g.members[1];
    for (std::size_t w = 0; w < out.size(); ++w) {
      if (out[w] != static_cast<int>(leader)) continue;
      const bool member = std::binary_search(g.members.begin(), g.members.end(), w);
      if (member || w > first_other) out[w] = grand;
    }
  }
  if (!detail::is_forest_acyclic(out)) {
    throw std::logic_error("reform_tree produced a cycle");
  }
  return out;
}

/// Words from `from` down to `to` in the tree given by `head`; if `from` is
/// not an ancestor of `to`, the chain from `to` up to its root.
inline std::vector<std::size_t> tree_path(std::span<const int> head, std::size_t from, std::size_t to) {
  std::vector<std::size_t> chain;
  for (int cur = static_cast<int>(to); cur >= 0; cur = head[static_cast<std::size_t>(cur)]) {
    chain.push_back(static_cast<std::size_t>(cur));
    if (static_cast<std::size_t>(cur) == from) break;
    if (chain.size() > head.size()) break;
  }
  std::reverse(chain.begin(), chain.end());
  return chain;
}

struct PruneResult {
  std::vector<bool> deleted;                           // per word; deleted member roots
  std::vector<std::optional<std::size_t>> retained;    // per coordination: kept position
};

/// Decides which coordination members to delete given the verb->target path.
///
/// A group crossed by the path keeps the crossed member(s). A group that is
/// not crossed keeps only the member at the position retained by its parallel
/// group: the nearest crossed group of equal size preceding it in the text,
/// else the nearest following one. Groups with no parallel are kept whole.
inline PruneResult prune_coordinations(std::span<const std::size_t> path,
                                       const std::vector<Coordination>& coords,
                                       std::size_t word_count) {
  PruneResult out{std::vector<bool>(word_count, false),
                  std::vector<std::optional<std::size_t>>(coords.size())};
  std::vector<bool> on_path(word_count, false);
  for (std::size_t w : path) on_path[w] = true;

  std::vector<bool> crossed(coords.size(), false);
  for (std::size_t g = 0; g < coords.size(); ++g) {
    const auto& members = coords[g].members;
    for (std::size_t pos = 0; pos < members.size(); ++pos) {
      if (on_path[members[pos]]) {
        crossed[g] = true;
        out.retained[g] = pos;  // highest crossed position wins
      }
    }
    if (!crossed[g]) continue;
    for (std::size_t m : members) {
      if (!on_path[m]) out.deleted[m] = true;
    }
  }

  // coords come in leader order, which is textual order.
  for (std::size_t g = 0; g < coords.size(); ++g) {
    if (crossed[g]) continue;
    std::optional<std::size_t> partner;
    for (std::size_t p = g; p-- > 0;) {
      if (crossed[p] && coords[p].size() == coords[g].size()) {
        partner = p;
        break;
      }
    }
    if (!partner) {
      for (std::size_t p = g + 1; p < coords.size(); ++p) {
        if (crossed[p] && coords[p].size() == coords[g].size()) {
          partner = p;
          break;
        }
      }
    }
    if (!partner) continue;
    const std::size_t keep = *out.retained[*partner];
    out.retained[g] = keep;
    for (std::size_t pos = 0; pos < coords[g].size(); ++pos) {
      if (pos != keep) out.deleted[coords[g].members[pos]] = true;
    }
  }
  return out;
}

/// Atomic-fact words of one word: the pruned clause of its closest verb
/// ancestor. Empty when no verb lies on the word's head chain.
inline std::vector<std::size_t> atomic_fact_words(const DepSentence& sent, std::size_t word,
                                                  const VerbTags& verbs = {}) {
  const auto v = closest_verb_ancestor(sent, word, verbs);
  if (!v) return {};
  const auto coords = find_coordinations(sent);
  const auto reformed = reform_tree(sent.head, coords);
  const auto path = tree_path(reformed, *v, word);
  const auto pruned = prune_coordinations(path, coords, sent.size());
  return collect_successors(reformed, sent.is_punct, *v, &pruned.deleted);
}

/// A(r_i): tokens of the atomic fact containing response token i. Always
/// contains i and never leaves i's sentence; {i} when the token is unaligned
/// or has no verb ancestor.
inline std::vector<std::size_t> atomic_fact_elements(const DepParse& parse, std::size_t token,
                                                     const VerbTags& verbs = {}) {
  WordSet ws;
  try {
    ws = token_to_words(parse, token);
  } catch (const ArgumentError&) {
    return {token};
  }
  const DepSentence& sent = parse.sentences[ws.sentence];
  std::set<std::size_t> words;
  for (std::size_t w : ws.words) {
    for (std::size_t a : atomic_fact_words(sent, w, verbs)) words.insert(a);
  }
  const std::vector<std::size_t> word_list(words.begin(), words.end());
  auto tokens = words_to_tokens(parse, ws.sentence, word_list);
  if (!std::binary_search(tokens.begin(), tokens.end(), token)) {
    tokens.insert(std::upper_bound(tokens.begin(), tokens.end(), token), token);
  }
  return tokens;
}

/// Sums the maps of the augmentation elements: union of supports, scores added.
inline TokenMap augment_map(std::span<const TokenMap> member_maps) {
  std::vector<const TokenMap*> ptrs;
  for (const auto& m : member_maps) ptrs.push_back(&m);
  return sum_maps(ptrs);
}

/// Augmenter backed by a dependency parse; A(r_i) is computed once per token.
class DepAugmenter final : public Augmenter {
 public:
  DepAugmenter(std::shared_ptr<const DepParse> parse, std::size_t response_count, VerbTags verbs = {})
      : parse_(std::move(parse)), verbs_(std::move(verbs)), n_(response_count),
        slots_(std::make_unique<Slot[]>(response_count)) {}

  const std::vector<std::size_t>& elements(std::size_t i) const override {
    if (i >= n_) throw ArgumentError("response token " + std::to_string(i) + " out of range");
    Slot& s = slots_[i];
    std::call_once(s.once, [&] { s.tokens = atomic_fact_elements(*parse_, i, verbs_); });
    return s.tokens;
  }

  const DepParse& parse() const noexcept { return *parse_; }

 private:
  struct Slot {
    std::once_flag once;
    std::vector<std::size_t> tokens;
  };
  std::shared_ptr<const DepParse> parse_;
  VerbTags verbs_;
  std::size_t n_;
  std::unique_ptr<Slot[]> slots_;
};

}  // namespace spanattr
