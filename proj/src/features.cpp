#include "seqinf/features.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

#include "seqinf/errors.hpp"

namespace seqinf {

namespace {

std::string to_lower(const std::string& s) {
  std::string out = s;
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return std::tolower(c); });
  return out;
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

// splitmix64, used to derive a stable pseudo-embedding per hash bucket
std::uint64_t mix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

}  // namespace

Eigen::VectorXd EmbeddingTable::lookup(const std::string& token) const {
  const std::string key = lowercase_lookup ? to_lower(token) : token;
  const auto it = entries.find(key);
  if (it != entries.end()) return it->second;
  if (oov_policy == OovPolicy::ZeroVector || hash_buckets <= 0)
    return Eigen::VectorXd::Zero(dim);
  std::uint64_t state = mix(fnv1a(key) % static_cast<std::uint64_t>(hash_buckets) + 1);
  Eigen::VectorXd v(dim);
  for (int i = 0; i < dim; ++i) {
    state = mix(state);
    v[i] = static_cast<double>(state >> 11) * 0x1.0p-53 - 0.5;
  }
  return v;
}

EmbeddingTable load_embeddings(const std::string& path, OovPolicy oov_policy, int hash_buckets) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read embedding file: " + path);

  EmbeddingTable table;
  table.oov_policy = oov_policy;
  table.hash_buckets = hash_buckets;

  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string token;
    ss >> token;
    std::vector<double> values;
    double v;
    while (ss >> v) values.push_back(v);
    if (token.empty() || values.empty() || !ss.eof()) {
      throw DataError("malformed embedding line " + std::to_string(line_no) + " in " + path);
    }
    if (table.dim == 0) {
      table.dim = static_cast<int>(values.size());
    } else if (static_cast<int>(values.size()) != table.dim) {
      throw DataError("inconsistent embedding dimension at line " + std::to_string(line_no) +
                      " in " + path);
    }
    const auto it = table.entries.find(token);
    if (it == table.entries.end()) {
      table.entries.emplace(token, Eigen::Map<const Eigen::VectorXd>(
                                       values.data(), static_cast<Eigen::Index>(values.size())));
    }
  }
  if (table.entries.empty()) throw DataError("no embeddings loaded from " + path);
  return table;
}

int FeatureConfig::flag_count() const {
  int n = 0;
  for (std::uint8_t f : {kFlagDigit, kFlagCapitalized, kFlagTitleCase, kFlagStopword})
    if (syntactic_flags & f) ++n;
  return n;
}

int FeatureConfig::dimension(int embedding_dim) const {
  const int blocks = 1 + (context_window >= 1 ? 2 : 0);
  return (use_embeddings ? embedding_dim : 0) + blocks * flag_count();
}

std::vector<std::string> load_stopwords(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read stopword file: " + path);
  std::vector<std::string> words;
  std::string line;
  while (std::getline(in, line)) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    std::istringstream ss(line);
    std::string w;
    if (ss >> w) words.push_back(w);
  }
  return words;
}

std::vector<std::string> default_stopwords() {
  return {"a",  "an", "and", "at", "by", "for", "in", "of",
          "on", "or", "the", "to", "with"};
}

Eigen::VectorXd syntactic_indicators(const std::string& token, const FeatureConfig& config) {
  const auto is_digit = [](unsigned char c) { return std::isdigit(c) != 0; };
  const auto is_upper = [](unsigned char c) { return std::isupper(c) != 0; };
  const auto is_alpha = [](unsigned char c) { return std::isalpha(c) != 0; };

  const bool all_digits =
      !token.empty() && std::all_of(token.begin(), token.end(),
                                    [&](char c) { return is_digit(static_cast<unsigned char>(c)); });
  const bool capitalized = !token.empty() && is_upper(static_cast<unsigned char>(token[0]));
  bool title = capitalized;
  for (std::size_t i = 1; i < token.size() && title; ++i) {
    const auto c = static_cast<unsigned char>(token[i]);
    if (is_alpha(c) && is_upper(c)) title = false;
  }
  bool stop = false;
  if (config.syntactic_flags & kFlagStopword) {
    const std::string lower = to_lower(token);
    stop = std::find(config.stopword_list.begin(), config.stopword_list.end(), lower) !=
           config.stopword_list.end();
  }

  Eigen::VectorXd v(config.flag_count());
  int i = 0;
  if (config.syntactic_flags & kFlagDigit) v[i++] = all_digits ? 1.0 : 0.0;
  if (config.syntactic_flags & kFlagCapitalized) v[i++] = capitalized ? 1.0 : 0.0;
  if (config.syntactic_flags & kFlagTitleCase) v[i++] = title ? 1.0 : 0.0;
  if (config.syntactic_flags & kFlagStopword) v[i++] = stop ? 1.0 : 0.0;
  return v;
}

ObservationSequence extract_features(const std::vector<std::string>& tokens,
                                     const EmbeddingTable& table, const FeatureConfig& config) {
  require(!tokens.empty(), "cannot extract features from an empty token sequence");
  const int T = static_cast<int>(tokens.size());
  const int nf = config.flag_count();
  const int ed = config.use_embeddings ? table.dim : 0;
  const int d = config.dimension(table.dim);

  Eigen::MatrixXd indicators(nf, T);
  for (int t = 0; t < T; ++t) indicators.col(t) = syntactic_indicators(tokens[t], config);

  ObservationSequence obs;
  obs.tokens = tokens;
  obs.features = Eigen::MatrixXd::Zero(d, T);
  for (int t = 0; t < T; ++t) {
    int at = 0;
    if (config.use_embeddings) {
      obs.features.col(t).segment(at, ed) = table.lookup(tokens[t]);
      at += ed;
    }
    obs.features.col(t).segment(at, nf) = indicators.col(t);
    at += nf;
    if (config.context_window >= 1) {
      if (t > 0) obs.features.col(t).segment(at, nf) = indicators.col(t - 1);
      at += nf;
      if (t + 1 < T) obs.features.col(t).segment(at, nf) = indicators.col(t + 1);
    }
  }
  return obs;
}

}  // namespace seqinf
