#pragma once

#include <optional>
#include <regex>
#include <set>
#include <string>
#include <vector>

#include "seqinf/corpus.hpp"
#include "seqinf/influence.hpp"

namespace seqinf {

enum class CorruptionKind { Artifact, Random, Systematic };

// One replayable operation on a document. Positions are 1-based and refer to
// the document as it stands when the operation applies (inserts shift the
// positions that follow them).
struct CorruptionOp {
  enum class Type { Insert, Edit };
  Type type = Type::Edit;
  int position = 0;
  std::string token;      // Insert only
  std::string old_label;  // Edit only
  std::string new_label;
};

struct DocCorruption {
  std::string doc_id;
  std::vector<CorruptionOp> ops;
};

struct CorruptionManifest {
  CorruptionKind kind = CorruptionKind::Random;
  std::uint64_t seed = 0;
  std::vector<DocCorruption> docs;  // every selected doc appears, even with no edits

  std::set<std::string> corrupted_doc_ids() const;
  int total_edits() const;
};

// Versioned line format; replaying a manifest on the clean corpus reproduces
// the corrupted corpus exactly.
void save_manifest(const CorruptionManifest& manifest, const std::string& path);
CorruptionManifest load_manifest(const std::string& path);
Corpus apply_manifest(const Corpus& clean, const CorruptionManifest& manifest);

struct Gazetteer {
  std::set<std::string> entries;  // stored lowercase

  bool matches(const std::string& token) const;
  static Gazetteer from_file(const std::string& path);
  static Gazetteer from_entries(const std::vector<std::string>& entries);
};

// Inserts an out-of-distribution marker token into floor(rate*N) seeded-random
// docs and forces the following token's label. The marker itself is labeled
// with the outside tag.
std::pair<Corpus, CorruptionManifest> insert_artifact(const Corpus& dataset, double rate,
                                                      const std::string& artifact_token,
                                                      const std::string& forced_label,
                                                      std::uint64_t seed);

// Rewrites every entity span in n_docs seeded-random docs to a uniformly
// random different type. Optionally excludes documents (by index) from
// selection so corruptions can be layered without overlap.
std::pair<Corpus, CorruptionManifest> random_entity_noise(
    const Corpus& dataset, int n_docs, std::uint64_t seed,
    const std::set<int>& excluded_docs = {});

// In n_docs docs whose first token equals doc_prefix, relabels from_type
// tokens that gazetteer-match to to_type, keeping BIO spans consistent.
std::pair<Corpus, CorruptionManifest> systematic_relabel(
    const Corpus& dataset, const std::string& doc_prefix, const Gazetteer& gazetteer,
    const std::string& from_type, const std::string& to_type, int n_docs, std::uint64_t seed);

// Per-document misannotation score; higher = more suspicious.
struct MisannotationScore {
  std::string doc_id;
  std::string scorer;
  enum class Aggregation { None, Mean, Max } aggregation = Aggregation::None;
  double doc_score = 0.0;
  std::vector<double> token_scores;  // empty for instance-level scorers
  bool flagged = false;              // degenerate candidate sets and the like
};

// All scores of one scorer across the corpus, in document order.
struct ScoreTable {
  std::string scorer;
  std::vector<MisannotationScore> docs;
};

// Loss, gradient-norm, and entropy baselines at instance and token level,
// with Mean and Max document aggregations for the token-level ones.
std::vector<ScoreTable> score_baselines(const Dataset& dataset,
                                        const std::vector<std::string>& doc_ids,
                                        const CrfParams& params);

// Influence-based scorers against a small clean validation set: mean instance
// influence, and per-token mean of the top-10 segment-influence values.
std::vector<ScoreTable> score_influence(const Dataset& dataset,
                                        const std::vector<std::string>& doc_ids,
                                        const Dataset& clean_val, const CrfParams& params,
                                        const GradientCache& cache, const HessianMode& mode);

// Similarity scorer: per-token mean of the top-10 dot products against
// validation tokens with a different label.
std::vector<ScoreTable> score_segment_nn(const Dataset& dataset,
                                         const std::vector<std::string>& doc_ids,
                                         const Dataset& clean_val);

struct RetrievalCurve {
  std::vector<double> fraction_found;  // index n-1 = fraction after n docs
  double auc = 0.0;
};

// Docs ranked by descending score (ties by doc id); fraction of manifest docs
// within each prefix, and the mean of the curve as a normalized area.
RetrievalCurve retrieval_curve(const ScoreTable& scores, const std::set<std::string>& corrupted);

// Token-level pattern matcher backed by full-match regexes, one per line.
class PatternMatcher {
 public:
  static PatternMatcher from_file(const std::string& path);
  static PatternMatcher from_patterns(const std::vector<std::string>& patterns);
  static PatternMatcher default_dosage();

  bool token_matches(const std::string& token) const;
  // maximal runs of consecutive matching tokens, 1-based
  std::vector<Segment> spans(const std::vector<std::string>& tokens) const;

  const std::vector<std::string>& sources() const { return sources_; }

 private:
  std::vector<std::string> sources_;
  std::vector<std::regex> compiled_;
};

struct ConflictRecord {
  Locator test;
  Locator top_supporting;
  Locator top_opposing;
  bool supporting_excludes_pattern = false;
  bool opposing_includes_pattern = false;
  bool conflict = false;
};

struct ConflictReport {
  std::vector<ConflictRecord> records;
  double conflict_rate = 0.0;
  bool no_pattern_matches = false;
};

// For each mispredicted test token inside a pattern span, finds the most
// supporting (most negative) and most opposing (most positive) train item at
// the cache's granularity, and checks the two-way label inconsistency.
ConflictReport conflict_analysis(const Dataset& test_set, const Corpus& test_corpus,
                                 const Dataset& train_set, const Corpus& train_corpus,
                                 const CrfParams& params, const GradientCache& cache,
                                 const HessianMode& mode, const PatternMatcher& matcher);

}  // namespace seqinf
