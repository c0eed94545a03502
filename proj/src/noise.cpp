#include "seqinf/noise.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <regex>
#include <sstream>

#include "seqinf/errors.hpp"
#include "seqinf/rng.hpp"

namespace seqinf {

namespace {

std::string to_lower(const std::string& s) {
  std::string out = s;
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return std::tolower(c); });
  return out;
}

int require_label(const LabelSet& labels, const std::string& name, const std::string& ctx) {
  const int idx = labels.index_of(name);
  if (idx < 0) throw DataError(ctx + ": label '" + name + "' is not in the label set");
  return idx;
}

const char* kind_name(CorruptionKind kind) {
  switch (kind) {
    case CorruptionKind::Artifact: return "artifact";
    case CorruptionKind::Random: return "random";
    case CorruptionKind::Systematic: return "systematic";
  }
  return "?";
}

CorruptionKind kind_from(const std::string& name) {
  if (name == "artifact") return CorruptionKind::Artifact;
  if (name == "random") return CorruptionKind::Random;
  if (name == "systematic") return CorruptionKind::Systematic;
  throw DataError("unknown corruption kind '" + name + "'");
}

// ascending selection of n seeded-random documents
std::vector<int> pick_docs(Rng& rng, const std::vector<int>& eligible, int n) {
  std::vector<int> pool = eligible;
  rng.shuffle(pool);
  pool.resize(std::min<std::size_t>(pool.size(), std::max(n, 0)));
  std::sort(pool.begin(), pool.end());
  return pool;
}

}  // namespace

std::set<std::string> CorruptionManifest::corrupted_doc_ids() const {
  std::set<std::string> ids;
  for (const auto& doc : docs) ids.insert(doc.doc_id);
  return ids;
}

int CorruptionManifest::total_edits() const {
  int n = 0;
  for (const auto& doc : docs) n += static_cast<int>(doc.ops.size());
  return n;
}

void save_manifest(const CorruptionManifest& manifest, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write manifest: " + path);
  out << "seqinf-manifest 1\n";
  out << "kind " << kind_name(manifest.kind) << "\n";
  out << "seed " << manifest.seed << "\n";
  for (const auto& doc : manifest.docs) {
    out << "doc " << doc.doc_id << "\n";
    for (const auto& op : doc.ops) {
      if (op.type == CorruptionOp::Type::Insert)
        out << "insert " << op.position << ' ' << op.token << ' ' << op.new_label << "\n";
      else
        out << "edit " << op.position << ' ' << op.old_label << ' ' << op.new_label << "\n";
    }
  }
  out << "end\n";
}

CorruptionManifest load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read manifest: " + path);
  CorruptionManifest manifest;
  std::string line;
  int line_no = 0;
  bool saw_header = false, saw_end = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string word;
    ss >> word;
    const auto fail = [&](const std::string& why) -> void {
      throw DataError("manifest " + path + " line " + std::to_string(line_no) + ": " + why);
    };
    if (!saw_header) {
      std::string version;
      if (word != "seqinf-manifest" || !(ss >> version) || version != "1")
        fail("expected 'seqinf-manifest 1'");
      saw_header = true;
    } else if (word == "kind") {
      std::string k;
      ss >> k;
      manifest.kind = kind_from(k);
    } else if (word == "seed") {
      ss >> manifest.seed;
    } else if (word == "doc") {
      DocCorruption doc;
      if (!(ss >> doc.doc_id)) fail("doc line without an id");
      manifest.docs.push_back(doc);
    } else if (word == "insert" || word == "edit") {
      if (manifest.docs.empty()) fail("operation before any doc line");
      CorruptionOp op;
      if (word == "insert") {
        op.type = CorruptionOp::Type::Insert;
        if (!(ss >> op.position >> op.token >> op.new_label)) fail("malformed insert");
      } else {
        op.type = CorruptionOp::Type::Edit;
        if (!(ss >> op.position >> op.old_label >> op.new_label)) fail("malformed edit");
      }
      manifest.docs.back().ops.push_back(op);
    } else if (word == "end") {
      saw_end = true;
      break;
    } else {
      fail("unknown directive '" + word + "'");
    }
  }
  if (!saw_header || !saw_end) throw DataError("manifest " + path + " is incomplete");
  return manifest;
}

Corpus apply_manifest(const Corpus& clean, const CorruptionManifest& manifest) {
  Corpus out = clean;
  for (const auto& entry : manifest.docs) {
    auto it = std::find_if(out.documents.begin(), out.documents.end(),
                           [&](const LabeledDoc& d) { return d.id == entry.doc_id; });
    if (it == out.documents.end())
      throw DataError("manifest references unknown doc " + entry.doc_id);
    for (const auto& op : entry.ops) {
      LabeledDoc& doc = *it;
      if (op.type == CorruptionOp::Type::Insert) {
        if (op.position < 1 || op.position > doc.length() + 1)
          throw DataError("manifest insert out of range in " + entry.doc_id);
        doc.tokens.insert(doc.tokens.begin() + op.position - 1, op.token);
        doc.labels.insert(doc.labels.begin() + op.position - 1,
                          require_label(out.label_set, op.new_label, "manifest insert"));
      } else {
        if (op.position < 1 || op.position > doc.length())
          throw DataError("manifest edit out of range in " + entry.doc_id);
        const int old_idx = doc.labels[op.position - 1];
        if (out.label_set.names[old_idx] != op.old_label)
          throw DataError("manifest does not match corpus at " + entry.doc_id + ":" +
                          std::to_string(op.position) + " (have " +
                          out.label_set.names[old_idx] + ", manifest says " + op.old_label +
                          ")");
        doc.labels[op.position - 1] =
            require_label(out.label_set, op.new_label, "manifest edit");
      }
    }
  }
  out.bio_warnings = check_bio(out);
  return out;
}

bool Gazetteer::matches(const std::string& token) const {
  return entries.count(to_lower(token)) > 0;
}

Gazetteer Gazetteer::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read gazetteer: " + path);
  Gazetteer g;
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ss(line);
    std::string w;
    if (ss >> w) g.entries.insert(to_lower(w));
  }
  return g;
}

Gazetteer Gazetteer::from_entries(const std::vector<std::string>& entries) {
  Gazetteer g;
  for (const auto& e : entries) g.entries.insert(to_lower(e));
  return g;
}

std::pair<Corpus, CorruptionManifest> insert_artifact(const Corpus& dataset, double rate,
                                                      const std::string& artifact_token,
                                                      const std::string& forced_label,
                                                      std::uint64_t seed) {
  require(rate >= 0.0 && rate <= 1.0, "rate must lie in [0, 1]");
  CorruptionManifest manifest;
  manifest.kind = CorruptionKind::Artifact;
  manifest.seed = seed;
  const int n_pick = static_cast<int>(rate * dataset.size());
  if (n_pick == 0) return {dataset, manifest};

  require_label(dataset.label_set, forced_label, "insert_artifact");
  const int outside = require_label(dataset.label_set, "O", "insert_artifact");
  (void)outside;
  for (const auto& doc : dataset.documents)
    if (doc.length() < 2)
      throw DataError("insert_artifact requires sequences of length >= 2 (doc " + doc.id + ")");

  Rng rng(seed);
  std::vector<int> all(dataset.size());
  for (int i = 0; i < dataset.size(); ++i) all[i] = i;
  const std::vector<int> chosen = pick_docs(rng, all, n_pick);

  Corpus out = dataset;
  for (int idx : chosen) {
    LabeledDoc& doc = out.documents[idx];
    const int T = doc.length();
    const int pos = 1 + rng.uniform_int(T - 1);  // artifact lands at this position
    DocCorruption entry;
    entry.doc_id = doc.id;
    entry.ops.push_back(
        {CorruptionOp::Type::Insert, pos, artifact_token, std::string(), "O"});
    const std::string old_label = dataset.label_set.names[doc.labels[pos - 1]];
    entry.ops.push_back(
        {CorruptionOp::Type::Edit, pos + 1, std::string(), old_label, forced_label});
    manifest.docs.push_back(entry);
  }
  return {apply_manifest(dataset, manifest), manifest};
}

std::pair<Corpus, CorruptionManifest> random_entity_noise(const Corpus& dataset, int n_docs,
                                                          std::uint64_t seed,
                                                          const std::set<int>& excluded_docs) {
  CorruptionManifest manifest;
  manifest.kind = CorruptionKind::Random;
  manifest.seed = seed;
  if (n_docs == 0) return {dataset, manifest};
  require(n_docs <= dataset.size(), "cannot corrupt more docs than the corpus holds");

  const std::vector<std::string> types = entity_types(dataset.label_set);
  if (types.size() < 2)
    throw DataError("random_entity_noise needs a BIO label set with at least two entity types");

  Rng rng(seed);
  std::vector<int> eligible;
  for (int i = 0; i < dataset.size(); ++i)
    if (!excluded_docs.count(i)) eligible.push_back(i);
  const std::vector<int> chosen = pick_docs(rng, eligible, n_docs);

  Corpus out = dataset;
  for (int idx : chosen) {
    const LabeledDoc& doc = dataset.documents[idx];
    DocCorruption entry;
    entry.doc_id = doc.id;
    for (const EntitySpan& span : entity_spans(doc, dataset.label_set)) {
      // uniformly random different type for the whole span
      std::vector<std::string> others;
      for (const auto& t : types)
        if (t != span.type) others.push_back(t);
      const std::string new_type = others[rng.uniform_int(static_cast<int>(others.size()))];
      for (int t = span.a; t <= span.b; ++t) {
        const std::string old_label = dataset.label_set.names[doc.labels[t - 1]];
        const std::string new_label = (t == span.a ? "B-" : "I-") + new_type;
        if (old_label != new_label)
          entry.ops.push_back(
              {CorruptionOp::Type::Edit, t, std::string(), old_label, new_label});
      }
    }
    manifest.docs.push_back(entry);  // kept even when the doc had no entities
  }
  return {apply_manifest(dataset, manifest), manifest};
}

std::pair<Corpus, CorruptionManifest> systematic_relabel(
    const Corpus& dataset, const std::string& doc_prefix, const Gazetteer& gazetteer,
    const std::string& from_type, const std::string& to_type, int n_docs, std::uint64_t seed) {
  CorruptionManifest manifest;
  manifest.kind = CorruptionKind::Systematic;
  manifest.seed = seed;

  std::vector<int> prefixed;
  for (int i = 0; i < dataset.size(); ++i)
    if (!dataset.documents[i].tokens.empty() && dataset.documents[i].tokens[0] == doc_prefix)
      prefixed.push_back(i);
  if (static_cast<int>(prefixed.size()) < n_docs)
    throw DataError("only " + std::to_string(prefixed.size()) + " documents start with '" +
                    doc_prefix + "', need " + std::to_string(n_docs));

  Rng rng(seed);
  const std::vector<int> chosen = pick_docs(rng, prefixed, n_docs);

  Corpus out = dataset;
  for (int idx : chosen) {
    const LabeledDoc& doc = dataset.documents[idx];
    DocCorruption entry;
    entry.doc_id = doc.id;
    for (const EntitySpan& span : entity_spans(doc, dataset.label_set)) {
      if (span.type != from_type) continue;
      // split the span into maximal gazetteer-match / non-match runs; each run
      // becomes its own BIO span, matches flipping to to_type
      int run_start = span.a;
      while (run_start <= span.b) {
        const bool matching = gazetteer.matches(doc.tokens[run_start - 1]);
        int run_end = run_start;
        while (run_end + 1 <= span.b &&
               gazetteer.matches(doc.tokens[run_end]) == matching)
          ++run_end;
        const std::string type = matching ? to_type : from_type;
        for (int t = run_start; t <= run_end; ++t) {
          const std::string old_label = dataset.label_set.names[doc.labels[t - 1]];
          const std::string new_label = (t == run_start ? "B-" : "I-") + type;
          if (old_label != new_label)
            entry.ops.push_back(
                {CorruptionOp::Type::Edit, t, std::string(), old_label, new_label});
        }
        run_start = run_end + 1;
      }
    }
    manifest.docs.push_back(entry);
  }
  return {apply_manifest(dataset, manifest), manifest};
}

namespace {

MisannotationScore aggregate(const std::string& doc_id, const std::string& scorer,
                             MisannotationScore::Aggregation agg,
                             std::vector<double> token_scores) {
  MisannotationScore s;
  s.doc_id = doc_id;
  s.scorer = scorer;
  s.aggregation = agg;
  if (agg == MisannotationScore::Aggregation::Mean) {
    double sum = 0.0;
    for (double v : token_scores) sum += v;
    s.doc_score = token_scores.empty() ? 0.0 : sum / token_scores.size();
  } else if (agg == MisannotationScore::Aggregation::Max) {
    s.doc_score = token_scores.empty()
                      ? 0.0
                      : *std::max_element(token_scores.begin(), token_scores.end());
  }
  s.token_scores = std::move(token_scores);
  return s;
}

// mean of the k highest values
double top_k_mean(std::vector<double> values, int k) {
  if (values.empty()) return 0.0;
  k = std::min<int>(k, static_cast<int>(values.size()));
  std::partial_sort(values.begin(), values.begin() + k, values.end(), std::greater<double>());
  double sum = 0.0;
  for (int i = 0; i < k; ++i) sum += values[i];
  return sum / k;
}

void emit_token_scorer(std::vector<ScoreTable>& out, const std::string& name,
                       const std::vector<std::string>& doc_ids,
                       const std::vector<std::vector<double>>& per_doc) {
  for (const auto agg :
       {MisannotationScore::Aggregation::Mean, MisannotationScore::Aggregation::Max}) {
    ScoreTable table;
    table.scorer =
        name + (agg == MisannotationScore::Aggregation::Mean ? "_mean" : "_max");
    for (std::size_t i = 0; i < per_doc.size(); ++i)
      table.docs.push_back(aggregate(doc_ids[i], table.scorer, agg, per_doc[i]));
    out.push_back(std::move(table));
  }
}

}  // namespace

std::vector<ScoreTable> score_baselines(const Dataset& dataset,
                                        const std::vector<std::string>& doc_ids,
                                        const CrfParams& params) {
  require(dataset.size() == doc_ids.size(), "doc id list does not match the dataset");
  const int n = static_cast<int>(dataset.size());

  ScoreTable inst_loss{"instance_loss", {}};
  ScoreTable inst_grad{"instance_grad_norm", {}};
  std::vector<std::vector<double>> token_loss(n), token_grad(n), token_entropy(n);

  for (int i = 0; i < n; ++i) {
    const TaggedExample& ex = dataset[i];
    MisannotationScore loss_score;
    loss_score.doc_id = doc_ids[i];
    loss_score.scorer = "instance_loss";
    loss_score.doc_score = -joint_log_prob(ex.obs, ex.labels, params);
    inst_loss.docs.push_back(loss_score);

    MisannotationScore grad_score;
    grad_score.doc_id = doc_ids[i];
    grad_score.scorer = "instance_grad_norm";
    grad_score.doc_score = std::sqrt(grad_joint_loss(ex.obs, ex.labels, params).squared_norm());
    inst_grad.docs.push_back(grad_score);

    const Eigen::MatrixXd marginals = position_marginals(ex.obs, params);
    for (int t = 1; t <= ex.obs.length(); ++t) {
      token_loss[i].push_back(
          -conditional_segment_log_prob(ex.obs, ex.labels, {t, t}, params));
      token_grad[i].push_back(
          std::sqrt(grad_conditional_loss(ex.obs, ex.labels, {t, t}, params).squared_norm()));
      double h = 0.0;
      for (int c = 0; c < params.num_labels(); ++c) {
        const double p = marginals(t - 1, c);
        if (p > 0.0) h -= p * std::log(p);
      }
      token_entropy[i].push_back(h);
    }
  }

  std::vector<ScoreTable> out;
  out.push_back(std::move(inst_loss));
  out.push_back(std::move(inst_grad));
  emit_token_scorer(out, "token_loss", doc_ids, token_loss);
  emit_token_scorer(out, "token_grad_norm", doc_ids, token_grad);
  emit_token_scorer(out, "token_entropy", doc_ids, token_entropy);
  return out;
}

std::vector<ScoreTable> score_influence(const Dataset& dataset,
                                        const std::vector<std::string>& doc_ids,
                                        const Dataset& clean_val, const CrfParams& params,
                                        const GradientCache& cache, const HessianMode& mode) {
  require(dataset.size() == doc_ids.size(), "doc id list does not match the dataset");
  require(!clean_val.empty(), "influence scoring needs a non-empty validation set");
  const int n = static_cast<int>(dataset.size());
  const InfluenceEngine engine(dataset, params, mode);

  // instance scorer: mean influence on the validation examples
  std::vector<CrfGradient> solved_val;
  for (const auto& v : clean_val)
    solved_val.push_back(engine.solve(grad_joint_loss(v.obs, v.labels, params)));

  ScoreTable inst{"influence_instance", {}};
  for (int i = 0; i < n; ++i) {
    const CrfGradient g =
        cache.granularity == Granularity::Instance && i < static_cast<int>(cache.instances.size())
            ? cache.instances[i]
            : grad_joint_loss(dataset[i].obs, dataset[i].labels, params);
    double sum = 0.0;
    for (const auto& s : solved_val) sum += -s.dot(g);
    MisannotationScore score;
    score.doc_id = doc_ids[i];
    score.scorer = inst.scorer;
    score.doc_score = sum / static_cast<double>(clean_val.size());
    inst.docs.push_back(score);
  }

  // token scorer: mean of the 10 highest segment-influence values against all
  // validation tokens
  std::vector<CrfGradient> solved_val_tokens;
  for (const auto& v : clean_val)
    for (int t = 1; t <= v.obs.length(); ++t)
      solved_val_tokens.push_back(
          engine.solve(grad_conditional_loss(v.obs, v.labels, {t, t}, params)));

  require(cache.granularity == Granularity::Token,
          "token-level influence scoring needs a token-granularity cache");
  std::vector<std::vector<double>> token_scores(n);
  for (int i = 0; i < n; ++i) token_scores[i].resize(dataset[i].obs.length(), 0.0);
  for (const auto& rec : cache.tokens) {
    std::vector<double> values;
    values.reserve(solved_val_tokens.size());
    for (const auto& s : solved_val_tokens) values.push_back(-engine.record_dot(s, rec));
    token_scores[rec.example][rec.position - 1] = top_k_mean(std::move(values), 10);
  }

  std::vector<ScoreTable> out;
  out.push_back(std::move(inst));
  emit_token_scorer(out, "influence_token", doc_ids, token_scores);
  return out;
}

std::vector<ScoreTable> score_segment_nn(const Dataset& dataset,
                                         const std::vector<std::string>& doc_ids,
                                         const Dataset& clean_val) {
  require(dataset.size() == doc_ids.size(), "doc id list does not match the dataset");
  struct ValToken {
    Eigen::VectorXd features;
    int label;
  };
  std::vector<ValToken> val_tokens;
  for (const auto& v : clean_val)
    for (int t = 1; t <= v.obs.length(); ++t)
      val_tokens.push_back({v.obs.features.col(t - 1), v.labels[t - 1]});

  const int n = static_cast<int>(dataset.size());
  std::vector<std::vector<double>> token_scores(n);
  bool any_empty_candidates = false;
  for (int i = 0; i < n; ++i) {
    const TaggedExample& ex = dataset[i];
    for (int t = 1; t <= ex.obs.length(); ++t) {
      std::vector<double> dots;
      for (const auto& vt : val_tokens)
        if (vt.label != ex.labels[t - 1]) dots.push_back(vt.features.dot(ex.obs.features.col(t - 1)));
      if (dots.empty()) any_empty_candidates = true;
      token_scores[i].push_back(top_k_mean(std::move(dots), 10));
    }
  }

  std::vector<ScoreTable> out;
  emit_token_scorer(out, "segment_nn", doc_ids, token_scores);
  if (any_empty_candidates)
    for (auto& table : out)
      for (auto& doc : table.docs) doc.flagged = true;
  return out;
}

RetrievalCurve retrieval_curve(const ScoreTable& scores,
                               const std::set<std::string>& corrupted) {
  std::vector<const MisannotationScore*> order;
  order.reserve(scores.docs.size());
  for (const auto& d : scores.docs) order.push_back(&d);
  std::sort(order.begin(), order.end(),
            [](const MisannotationScore* a, const MisannotationScore* b) {
              if (a->doc_score != b->doc_score) return a->doc_score > b->doc_score;
              return a->doc_id < b->doc_id;
            });

  RetrievalCurve curve;
  const double denom = corrupted.empty() ? 1.0 : static_cast<double>(corrupted.size());
  int found = 0;
  double auc = 0.0;
  for (const auto* doc : order) {
    if (corrupted.count(doc->doc_id)) ++found;
    const double frac = found / denom;
    curve.fraction_found.push_back(frac);
    auc += frac;
  }
  curve.auc = order.empty() ? 0.0 : auc / static_cast<double>(order.size());
  return curve;
}

namespace {

std::vector<std::regex> compile_patterns(const std::vector<std::string>& sources) {
  std::vector<std::regex> out;
  for (const auto& s : sources) {
    try {
      out.emplace_back(s, std::regex::ECMAScript);
    } catch (const std::regex_error& e) {
      throw DataError("bad pattern '" + s + "': " + e.what());
    }
  }
  return out;
}

}  // namespace

PatternMatcher PatternMatcher::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read pattern file: " + path);
  std::vector<std::string> sources;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    sources.push_back(line);
  }
  if (sources.empty()) throw DataError("pattern file has no patterns: " + path);
  return from_patterns(sources);
}

PatternMatcher PatternMatcher::from_patterns(const std::vector<std::string>& patterns) {
  PatternMatcher m;
  m.sources_ = patterns;
  m.compiled_ = compile_patterns(patterns);
  return m;
}

PatternMatcher PatternMatcher::default_dosage() {
  return from_patterns({
      R"([0-9]+([.,/][0-9]+)?)",
      R"((mg|ml|g|kg|mcg|iu|cc|unit|units)(/[a-z]+)*)",
      R"([0-9]+(mg|ml|g|kg|mcg))",
  });
}

bool PatternMatcher::token_matches(const std::string& token) const {
  const std::string lower = to_lower(token);
  for (const auto& re : compiled_)
    if (std::regex_match(lower, re)) return true;
  return false;
}

std::vector<Segment> PatternMatcher::spans(const std::vector<std::string>& tokens) const {
  std::vector<Segment> out;
  int t = 1;
  const int T = static_cast<int>(tokens.size());
  while (t <= T) {
    if (!token_matches(tokens[t - 1])) {
      ++t;
      continue;
    }
    int b = t;
    while (b + 1 <= T && token_matches(tokens[b])) ++b;
    out.push_back({t, b});
    t = b + 1;
  }
  return out;
}

namespace {

bool label_is_entity(const LabelSet& labels, int idx) {
  char tag;
  std::string type;
  return parse_bio(labels.names[idx], tag, type) && tag != 'O';
}

// does the example demonstrate a pattern span excluded from every entity?
bool has_pattern_outside_entity(const LabeledDoc& doc, const LabelSet& labels,
                                const PatternMatcher& matcher) {
  for (const Segment& span : matcher.spans(doc.tokens)) {
    bool all_outside = true;
    for (int t = span.a; t <= span.b; ++t)
      if (label_is_entity(labels, doc.labels[t - 1])) all_outside = false;
    if (all_outside) return true;
  }
  return false;
}

bool has_pattern_inside_entity(const LabeledDoc& doc, const LabelSet& labels,
                               const PatternMatcher& matcher) {
  for (const Segment& span : matcher.spans(doc.tokens))
    for (int t = span.a; t <= span.b; ++t)
      if (label_is_entity(labels, doc.labels[t - 1])) return true;
  return false;
}

}  // namespace

ConflictReport conflict_analysis(const Dataset& test_set, const Corpus& test_corpus,
                                 const Dataset& train_set, const Corpus& train_corpus,
                                 const CrfParams& params, const GradientCache& cache,
                                 const HessianMode& mode, const PatternMatcher& matcher) {
  require(test_set.size() == test_corpus.documents.size(), "test corpus/dataset mismatch");
  require(train_set.size() == train_corpus.documents.size(), "train corpus/dataset mismatch");
  const InfluenceEngine engine(train_set, params, mode);

  ConflictReport report;
  int conflicts = 0;
  for (int i = 0; i < static_cast<int>(test_set.size()); ++i) {
    const TaggedExample& ex = test_set[i];
    const LabeledDoc& doc = test_corpus.documents[i];
    const LabelSequence decoded = viterbi_decode(ex.obs, params).first;

    for (const Segment& span : matcher.spans(doc.tokens)) {
      for (int t = span.a; t <= span.b; ++t) {
        if (decoded[t - 1] == ex.labels[t - 1]) continue;  // only mispredictions

        ConflictRecord rec;
        rec.test = Locator{i, Segment{t, t}};
        if (cache.granularity == Granularity::Token) {
          const CrfGradient g =
              grad_conditional_loss(ex.obs, ex.labels, rec.test.segment, params);
          const CrfGradient solved = engine.solve(g);
          double best = std::numeric_limits<double>::infinity();
          double worst = -std::numeric_limits<double>::infinity();
          for (const auto& r : cache.tokens) {
            const double value = -engine.record_dot(solved, r);
            if (value < best) {
              best = value;
              rec.top_supporting = Locator{r.example, Segment{r.position, r.position}};
            }
            if (value > worst) {
              worst = value;
              rec.top_opposing = Locator{r.example, Segment{r.position, r.position}};
            }
          }
        } else {
          const CrfGradient g = grad_joint_loss(ex.obs, ex.labels, params);
          const CrfGradient solved = engine.solve(g);
          double best = std::numeric_limits<double>::infinity();
          double worst = -std::numeric_limits<double>::infinity();
          for (int k = 0; k < static_cast<int>(cache.instances.size()); ++k) {
            const double value = -solved.dot(cache.instances[k]);
            if (value < best) {
              best = value;
              rec.top_supporting = Locator{k, Segment{1, train_set[k].obs.length()}};
            }
            if (value > worst) {
              worst = value;
              rec.top_opposing = Locator{k, Segment{1, train_set[k].obs.length()}};
            }
          }
        }

        const LabeledDoc& sup = train_corpus.documents[rec.top_supporting.example];
        const LabeledDoc& opp = train_corpus.documents[rec.top_opposing.example];
        rec.supporting_excludes_pattern =
            has_pattern_outside_entity(sup, train_corpus.label_set, matcher);
        rec.opposing_includes_pattern =
            has_pattern_inside_entity(opp, train_corpus.label_set, matcher);
        rec.conflict = rec.supporting_excludes_pattern && rec.opposing_includes_pattern;
        if (rec.conflict) ++conflicts;
        report.records.push_back(rec);
      }
    }
  }
  report.no_pattern_matches = report.records.empty();
  report.conflict_rate =
      report.records.empty() ? 0.0
                             : static_cast<double>(conflicts) / report.records.size();
  return report;
}

}  // namespace seqinf
