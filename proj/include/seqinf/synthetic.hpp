#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "seqinf/corpus.hpp"
#include "seqinf/noise.hpp"

namespace seqinf {

// Seeded generator for a desk-scale tagging benchmark: BIO over ORG/LOC with
// capitalized name tokens, city names that appear both standalone (LOC) and
// inside club-style ORG spans, a SOCCER document prefix, and a small rate of
// inherent span-type noise so trained models keep honest errors.
struct SynthConfig {
  int train_docs = 240;
  int val_docs = 80;
  int test_docs = 40;
  int min_len = 5;
  int max_len = 15;
  int embed_dim = 20;
  int n_common = 120;
  int n_cities = 40;
  int n_org_suffixes = 12;
  double soccer_fraction = 0.45;
  double entity_start_prob = 0.22;
  double span_type_noise = 0.05;
  std::uint64_t seed = 1;
};

struct SynthBundle {
  Corpus train;
  Corpus val;
  Corpus test;
  std::vector<std::string> gazetteer_entries;  // the city vocabulary
  std::vector<std::string> stopwords;          // marker tokens, incl. the artifact
  std::string embeddings_text;                 // "token v1 ... v_dim" lines
};

SynthBundle make_synthetic(const SynthConfig& config);

// Two-way label-inconsistency corpus: drug mentions followed by dosage tokens
// (number + unit), with the dosage included in the entity span for an
// inside_fraction of train docs and excluded otherwise. Test docs always use
// the outside convention. Shares the embedding vocabulary of make_synthetic.
struct InconsistencyConfig {
  int train_docs = 60;
  int test_docs = 24;
  double inside_fraction = 0.6;
  int min_len = 6;
  int max_len = 12;
  std::uint64_t seed = 2;
};

struct InconsistencyBundle {
  Corpus train;
  Corpus test;
  std::vector<std::string> patterns;  // dosage token regexes
};

InconsistencyBundle make_inconsistency(const InconsistencyConfig& config);

}  // namespace seqinf
