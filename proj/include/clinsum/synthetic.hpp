#pragma once

#include "clinsum/corpus.hpp"
#include "clinsum/dkd.hpp"
#include "clinsum/visual.hpp"

namespace clinsum {

struct SyntheticOptions {
  int n_dialogues = 20;
  int n_departments = 4;
  int vocab_size_hint = 100;  // upper bound the generated token inventory should respect
  uint64_t seed = 7;
  int d_v = 16;  // visual feature width
};

struct SyntheticBundle {
  Corpus corpus;
  TripleStore store;
  VisualFeatureStore visuals;
};

// Template dialogues with per-department symptom tokens. Summaries are a
// pure function of (symptom set, department), every dialogue carries one
// image id resolvable in the bundled feature store, and the triple store
// covers every symptom token. Deterministic under seed.
SyntheticBundle generate_synthetic(const SyntheticOptions& opts);

}  // namespace clinsum
