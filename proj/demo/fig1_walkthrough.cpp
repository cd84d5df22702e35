// Copyright 2026 The spanattr Authors
// SPDX-License-Identifier: Apache-2.0

// Attributes "one million dollars" in the fig1 fixture with and without
// dependency augmentation, entirely in memory.

#include <iostream>
#include <memory>

#include "spanattr/attribution.hpp"
#include "spanattr/depaug.hpp"
#include "spanattr/fixtures.hpp"
#include "spanattr/similarity.hpp"

int main() {
  using namespace spanattr;
  const auto fx = fixtures::fig1();
  auto inst = std::make_shared<const TokenizedInstance>(fx.instance);
  auto sim = std::make_shared<const SimilarityMatrix>(attention_average(fx.attention));
  auto parse = std::make_shared<const DepParse>(fx.depparse);

  Attributor engine(inst, sim, EngineConfig{});
  DepAugmenter facts(parse, inst->response_count());
  const Range span{3, 6};

  std::cout << "A(\"one\"):";
  for (std::size_t t : facts.elements(3)) std::cout << inst->response_tokens[t];
  std::cout << "\n";

  for (const Augmenter* aug : {static_cast<const Augmenter*>(nullptr), static_cast<const Augmenter*>(&facts)}) {
    const auto ev = engine.attribute(span, aug);
    std::cout << (aug ? "with augmentation:   " : "without augmentation:");
    for (std::size_t p = 0; p < ev.passage_scores.size(); ++p) {
      std::cout << " p" << p << "=" << ev.passage_scores[p];
    }
    const auto best = predict_passage(ev);
    std::cout << "  -> passage " << (best ? std::to_string(*best) : "none") << "\n";
  }
  std::cout << "row scans: " << engine.row_scans() << "\n";
}
