#include "seqinf/synthetic.hpp"

#include <sstream>

#include "seqinf/rng.hpp"

namespace seqinf {

namespace {

const std::vector<std::string> kLabels = {"O", "B-ORG", "I-ORG", "B-LOC", "I-LOC"};

struct Vocab {
  std::vector<std::string> common;    // lowercase filler words
  std::vector<std::string> cities;    // capitalized, double as LOC surface forms
  std::vector<std::string> suffixes;  // capitalized club-name tails
};

Vocab make_vocab(const SynthConfig& cfg) {
  Vocab v;
  for (int i = 0; i < cfg.n_common; ++i) v.common.push_back("word" + std::to_string(i));
  for (int i = 0; i < cfg.n_cities; ++i) v.cities.push_back("City" + std::to_string(i));
  for (int i = 0; i < cfg.n_org_suffixes; ++i) v.suffixes.push_back("Club" + std::to_string(i));
  return v;
}

LabeledDoc make_doc(Rng& rng, const SynthConfig& cfg, const Vocab& vocab, const LabelSet& labels,
                    bool soccer, int index) {
  LabeledDoc doc;
  char buf[16];
  std::snprintf(buf, sizeof(buf), "doc%05d", index);
  doc.id = buf;

  const auto push = [&](const std::string& token, const std::string& label) {
    doc.tokens.push_back(token);
    doc.labels.push_back(labels.index_of(label));
  };

  if (soccer) push("SOCCER", "O");
  const int target_len = cfg.min_len + rng.uniform_int(cfg.max_len - cfg.min_len + 1);
  while (doc.length() < target_len) {
    const int room = target_len - doc.length();
    if (room >= 2 && rng.uniform() < cfg.entity_start_prob) {
      const bool noisy = rng.uniform() < cfg.span_type_noise;
      if (rng.uniform() < 0.5) {
        // ORG span: [City Club] most of the time, bare [Club] otherwise
        const std::string type = noisy ? "LOC" : "ORG";
        if (rng.uniform() < 0.6) {
          push(vocab.cities[rng.uniform_int((int)vocab.cities.size())], "B-" + type);
          push(vocab.suffixes[rng.uniform_int((int)vocab.suffixes.size())], "I-" + type);
        } else {
          push(vocab.suffixes[rng.uniform_int((int)vocab.suffixes.size())], "B-" + type);
        }
      } else {
        // standalone LOC: a bare city
        const std::string type = noisy ? "ORG" : "LOC";
        push(vocab.cities[rng.uniform_int((int)vocab.cities.size())], "B-" + type);
      }
    } else {
      push(vocab.common[rng.uniform_int((int)vocab.common.size())], "O");
    }
  }
  return doc;
}

Corpus make_split(Rng& rng, const SynthConfig& cfg, const Vocab& vocab, int n_docs,
                  const std::string& provenance) {
  Corpus corpus;
  corpus.label_set = LabelSet::from_names(kLabels);
  corpus.provenance = provenance;
  for (int i = 0; i < n_docs; ++i) {
    const bool soccer = rng.uniform() < cfg.soccer_fraction;
    corpus.documents.push_back(make_doc(rng, cfg, vocab, corpus.label_set, soccer, i));
  }
  corpus.bio_warnings = check_bio(corpus);
  return corpus;
}

}  // namespace

SynthBundle make_synthetic(const SynthConfig& cfg) {
  Rng rng(cfg.seed);
  const Vocab vocab = make_vocab(cfg);

  SynthBundle bundle;
  bundle.train = make_split(rng, cfg, vocab, cfg.train_docs, "synthetic-train");
  bundle.val = make_split(rng, cfg, vocab, cfg.val_docs, "synthetic-val");
  bundle.test = make_split(rng, cfg, vocab, cfg.test_docs, "synthetic-test");
  bundle.gazetteer_entries = vocab.cities;
  bundle.stopwords = {"special"};

  std::ostringstream emb;
  emb.precision(17);
  // keys are stored lowercase; the table lookup lowercases queries by default
  const auto write_embedding = [&](std::string token) {
    for (auto& c : token) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    emb << token;
    for (int j = 0; j < cfg.embed_dim; ++j) emb << ' ' << 0.5 * rng.normal();
    emb << '\n';
  };
  for (const auto& w : vocab.common) write_embedding(w);
  for (const auto& w : vocab.cities) write_embedding(w);
  for (const auto& w : vocab.suffixes) write_embedding(w);
  write_embedding("soccer");
  write_embedding("special");
  // vocabulary of the inconsistency corpus, so one embedding file serves both
  for (int i = 0; i < 10; ++i) write_embedding("Drug" + std::to_string(i));
  for (const char* w : {"5", "10", "20", "50", "100", "250", "mg", "ml", "kg"})
    write_embedding(w);
  bundle.embeddings_text = emb.str();
  return bundle;
}

InconsistencyBundle make_inconsistency(const InconsistencyConfig& cfg) {
  Rng rng(cfg.seed);
  const std::vector<std::string> labels = {"O", "B-INT", "I-INT"};
  const std::vector<std::string> drugs = {"Drug0", "Drug1", "Drug2", "Drug3", "Drug4",
                                          "Drug5", "Drug6", "Drug7", "Drug8", "Drug9"};
  const std::vector<std::string> numbers = {"5", "10", "20", "50", "100", "250"};
  const std::vector<std::string> units = {"mg", "ml", "kg"};
  std::vector<std::string> filler;
  for (int i = 0; i < 60; ++i) filler.push_back("word" + std::to_string(i));

  const auto make_doc = [&](const LabelSet& ls, bool inside, int index) {
    LabeledDoc doc;
    char buf[16];
    std::snprintf(buf, sizeof(buf), "doc%05d", index);
    doc.id = buf;
    const auto push = [&](const std::string& token, const std::string& label) {
      doc.tokens.push_back(token);
      doc.labels.push_back(ls.index_of(label));
    };
    const int lead = 1 + rng.uniform_int(3);
    for (int i = 0; i < lead; ++i) push(filler[rng.uniform_int((int)filler.size())], "O");
    push(drugs[rng.uniform_int((int)drugs.size())], "B-INT");
    push(numbers[rng.uniform_int((int)numbers.size())], inside ? "I-INT" : "O");
    push(units[rng.uniform_int((int)units.size())], inside ? "I-INT" : "O");
    const int target_len = cfg.min_len + rng.uniform_int(cfg.max_len - cfg.min_len + 1);
    while (doc.length() < target_len) push(filler[rng.uniform_int((int)filler.size())], "O");
    return doc;
  };

  InconsistencyBundle bundle;
  bundle.train.label_set = LabelSet::from_names(labels);
  bundle.train.provenance = "synthetic-inconsistency-train";
  for (int i = 0; i < cfg.train_docs; ++i) {
    const bool inside = rng.uniform() < cfg.inside_fraction;
    bundle.train.documents.push_back(make_doc(bundle.train.label_set, inside, i));
  }
  bundle.test.label_set = LabelSet::from_names(labels);
  bundle.test.provenance = "synthetic-inconsistency-test";
  for (int i = 0; i < cfg.test_docs; ++i)
    bundle.test.documents.push_back(make_doc(bundle.test.label_set, false, i));
  bundle.train.bio_warnings = check_bio(bundle.train);
  bundle.test.bio_warnings = check_bio(bundle.test);
  bundle.patterns = {R"([0-9]+)", R"(mg|ml|kg)"};
  return bundle;
}

}  // namespace seqinf
