#include "seqinf/corpus.hpp"

#include <fstream>
#include <sstream>

#include "seqinf/binio.hpp"
#include "seqinf/errors.hpp"

namespace seqinf {

namespace {

std::string doc_name(int index) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "doc%05d", index);
  return buf;
}

}  // namespace

int Corpus::total_tokens() const {
  int n = 0;
  for (const auto& doc : documents) n += doc.length();
  return n;
}

Corpus load_conll(const std::string& path, const LabelSet* labels,
                  const std::string& doc_marker) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read corpus file: " + path);

  Corpus corpus;
  corpus.provenance = path;
  std::vector<std::string> label_names;
  if (labels) label_names = labels->names;

  const auto label_index = [&](const std::string& name, int line_no) -> int {
    for (std::size_t i = 0; i < label_names.size(); ++i)
      if (label_names[i] == name) return static_cast<int>(i);
    if (labels) {
      throw DataError("unknown label '" + name + "' at line " + std::to_string(line_no) +
                      " in " + path);
    }
    label_names.push_back(name);
    return static_cast<int>(label_names.size()) - 1;
  };

  LabeledDoc current;
  const auto flush = [&]() {
    if (current.tokens.empty()) return;
    current.id = doc_name(corpus.size());
    corpus.documents.push_back(std::move(current));
    current = LabeledDoc{};
  };

  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) {
      flush();
      continue;
    }
    std::istringstream ss(line);
    std::string token, label, extra;
    ss >> token;
    if (token == doc_marker) {
      flush();
      continue;
    }
    if (!(ss >> label) || (ss >> extra)) {
      throw DataError("malformed line " + std::to_string(line_no) + " in " + path +
                      " (expected 'token label')");
    }
    current.tokens.push_back(token);
    current.labels.push_back(label_index(label, line_no));
  }
  flush();

  if (label_names.size() < 2) {
    if (corpus.documents.empty()) {
      // empty corpus: keep a degenerate label set so callers can still inspect it
      label_names = {"O", "UNK"};
    } else {
      label_names.push_back(label_names.empty() ? "O" : "UNK");
    }
  }
  corpus.label_set = LabelSet{label_names};
  corpus.bio_warnings = check_bio(corpus);
  return corpus;
}

std::string conll_string(const Corpus& corpus) {
  std::ostringstream out;
  for (std::size_t i = 0; i < corpus.documents.size(); ++i) {
    const auto& doc = corpus.documents[i];
    for (int t = 0; t < doc.length(); ++t)
      out << doc.tokens[t] << ' ' << corpus.label_set.names[doc.labels[t]] << '\n';
    out << '\n';
  }
  return out.str();
}

void write_conll(const Corpus& corpus, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write corpus file: " + path);
  out << conll_string(corpus);
}

std::uint64_t corpus_fingerprint(const Corpus& corpus) {
  const std::string text = conll_string(corpus);
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

bool parse_bio(const std::string& label, char& tag, std::string& type) {
  if (label == "O") {
    tag = 'O';
    type.clear();
    return true;
  }
  if (label.size() >= 3 && (label[0] == 'B' || label[0] == 'I') && label[1] == '-') {
    tag = label[0];
    type = label.substr(2);
    return true;
  }
  return false;
}

std::vector<EntitySpan> entity_spans(const LabeledDoc& doc, const LabelSet& labels) {
  std::vector<EntitySpan> spans;
  EntitySpan open;
  bool in_span = false;
  for (int t = 0; t < doc.length(); ++t) {
    char tag;
    std::string type;
    if (!parse_bio(labels.names[doc.labels[t]], tag, type)) tag = 'O';
    const bool continues = in_span && tag == 'I' && type == open.type;
    if (continues) {
      open.b = t + 1;
      continue;
    }
    if (in_span) {
      spans.push_back(open);
      in_span = false;
    }
    if (tag == 'B' || tag == 'I') {  // a dangling I starts a span here
      open = EntitySpan{type, t + 1, t + 1};
      in_span = true;
    }
  }
  if (in_span) spans.push_back(open);
  return spans;
}

std::vector<std::string> entity_types(const LabelSet& labels) {
  std::vector<std::string> types;
  for (const auto& name : labels.names) {
    char tag;
    std::string type;
    if (parse_bio(name, tag, type) && tag == 'B') types.push_back(type);
  }
  return types;
}

std::vector<BioWarning> check_bio(const Corpus& corpus) {
  std::vector<BioWarning> warnings;
  for (const auto& doc : corpus.documents) {
    std::string prev_type;
    char prev_tag = 'O';
    for (int t = 0; t < doc.length(); ++t) {
      const std::string& name = corpus.label_set.names[doc.labels[t]];
      char tag;
      std::string type;
      if (!parse_bio(name, tag, type)) {
        warnings.push_back({doc.id, t + 1, "label '" + name + "' is not BIO-shaped"});
        prev_tag = 'O';
        prev_type.clear();
        continue;
      }
      if (tag == 'I' && !(prev_tag != 'O' && prev_type == type)) {
        warnings.push_back({doc.id, t + 1, "I-" + type + " does not continue a span"});
      }
      prev_tag = tag;
      prev_type = type;
    }
  }
  return warnings;
}

Dataset make_dataset(const Corpus& corpus, const EmbeddingTable& table,
                     const FeatureConfig& config) {
  Dataset data;
  data.reserve(corpus.documents.size());
  for (const auto& doc : corpus.documents) {
    TaggedExample ex;
    ex.obs = extract_features(doc.tokens, table, config);
    ex.labels = doc.labels;
    data.push_back(std::move(ex));
  }
  return data;
}

namespace {
constexpr char kModelMagic[8] = {'S', 'Q', 'I', 'N', 'F', 'M', 'D', 'L'};
constexpr std::uint32_t kModelVersion = 1;
}  // namespace

void save_model(const Model& model, const std::string& path) {
  binio::Writer w(path);
  w.magic(kModelMagic);
  w.u32(kModelVersion);
  const int C = model.params.num_labels();
  const int d = model.params.feature_dim();
  w.u32(static_cast<std::uint32_t>(C));
  w.u32(static_cast<std::uint32_t>(d));
  w.u32(static_cast<std::uint32_t>(model.label_set.size()));
  for (const auto& name : model.label_set.names) w.str(name);

  const FeatureConfig& fc = model.feature_config;
  w.u8(fc.use_embeddings ? 1 : 0);
  w.u8(fc.syntactic_flags);
  w.u8(static_cast<std::uint8_t>(fc.context_window));
  w.u8(fc.lowercase_lookup ? 1 : 0);
  w.u32(static_cast<std::uint32_t>(model.embedding_dim));
  w.u32(static_cast<std::uint32_t>(fc.stopword_list.size()));
  for (const auto& s : fc.stopword_list) w.str(s);

  for (int r = 0; r < C; ++r)
    for (int c = 0; c < d; ++c) w.f64(model.params.emission(r, c));
  for (int r = 0; r < C; ++r)
    for (int c = 0; c < C; ++c) w.f64(model.params.transition(r, c));
  w.u64(model.corpus_fingerprint);
}

Model load_model(const std::string& path) {
  binio::Reader r(path);
  r.expect_magic(kModelMagic);
  const std::uint32_t version = r.u32();
  if (version != kModelVersion)
    throw DataError("unsupported model version " + std::to_string(version) + " in " + path);

  Model model;
  const int C = static_cast<int>(r.u32());
  const int d = static_cast<int>(r.u32());
  const int n_labels = static_cast<int>(r.u32());
  if (n_labels != C) throw DataError("label count does not match C in " + path);
  std::vector<std::string> names(n_labels);
  for (auto& name : names) name = r.str();
  model.label_set = LabelSet{names};

  model.feature_config.use_embeddings = r.u8() != 0;
  model.feature_config.syntactic_flags = r.u8();
  model.feature_config.context_window = r.u8();
  model.feature_config.lowercase_lookup = r.u8() != 0;
  model.embedding_dim = static_cast<int>(r.u32());
  const std::uint32_t n_stop = r.u32();
  model.feature_config.stopword_list.resize(n_stop);
  for (auto& s : model.feature_config.stopword_list) s = r.str();

  model.params = CrfParams::zero(C, d);
  for (int row = 0; row < C; ++row)
    for (int col = 0; col < d; ++col) model.params.emission(row, col) = r.f64();
  for (int row = 0; row < C; ++row)
    for (int col = 0; col < C; ++col) model.params.transition(row, col) = r.f64();
  model.corpus_fingerprint = r.u64();
  return model;
}

}  // namespace seqinf
