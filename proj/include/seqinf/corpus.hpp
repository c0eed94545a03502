#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "seqinf/crf.hpp"
#include "seqinf/features.hpp"

namespace seqinf {

// One tagged sequence; the unit documents are attributed and corrupted at.
struct LabeledDoc {
  std::string id;
  std::vector<std::string> tokens;
  LabelSequence labels;  // indices into the owning corpus's label set

  int length() const { return static_cast<int>(tokens.size()); }
};

struct BioWarning {
  std::string doc_id;
  int position = 0;  // 1-based
  std::string message;
};

struct Corpus {
  std::vector<LabeledDoc> documents;
  LabelSet label_set;
  std::string provenance;
  std::vector<BioWarning> bio_warnings;

  int size() const { return static_cast<int>(documents.size()); }
  int total_tokens() const;
};

// Two whitespace-separated columns per line (token label); a blank line ends a
// sequence and a doc_marker line is treated as a boundary as well. When
// `labels` is supplied, unknown labels are an error; otherwise the label set
// is collected in order of first appearance.
Corpus load_conll(const std::string& path, const LabelSet* labels = nullptr,
                  const std::string& doc_marker = "-DOCSTART-");

void write_conll(const Corpus& corpus, const std::string& path);
std::string conll_string(const Corpus& corpus);

// FNV-1a over the normalized CoNLL serialization.
std::uint64_t corpus_fingerprint(const Corpus& corpus);

// BIO span utilities. Labels follow the B-TYPE / I-TYPE / O convention.
struct EntitySpan {
  std::string type;
  int a = 0;  // 1-based inclusive
  int b = 0;
};

bool parse_bio(const std::string& label, char& tag, std::string& type);
std::vector<EntitySpan> entity_spans(const LabeledDoc& doc, const LabelSet& labels);
std::vector<std::string> entity_types(const LabelSet& labels);
std::vector<BioWarning> check_bio(const Corpus& corpus);

// Feature extraction over a whole corpus, preserving document order.
Dataset make_dataset(const Corpus& corpus, const EmbeddingTable& table,
                     const FeatureConfig& config);

// Trained model bundle.
struct Model {
  CrfParams params;
  LabelSet label_set;
  FeatureConfig feature_config;
  int embedding_dim = 0;
  std::uint64_t corpus_fingerprint = 0;
};

// Versioned little-endian binary; W and T are stored row-major.
void save_model(const Model& model, const std::string& path);
Model load_model(const std::string& path);

}  // namespace seqinf
