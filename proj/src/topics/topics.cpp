#include "clinpred/topics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "clinpred/common.hpp"

namespace clinpred {

namespace {

const std::set<std::string, std::less<>>& stop_words() {
  static const std::set<std::string, std::less<>> words = {
      "a",     "an",    "and",  "are",  "as",   "at",   "be",   "but",  "by",
      "for",   "from",  "had",  "has",  "have", "he",   "her",  "his",  "if",
      "in",    "is",    "it",   "its",  "no",   "not",  "of",   "on",   "or",
      "she",   "so",    "that", "the",  "their", "then", "there", "these", "they",
      "this",  "to",    "was",  "were", "will", "with", "we",   "you",  "been",
      "being", "which", "who",  "would", "can", "did",  "do",   "does", "than",
      "also",  "per",   "after", "all", "am",   "any",  "into", "more", "our"};
  return words;
}

struct Sampler {
  std::mt19937_64 rng;
  std::uniform_real_distribution<double> unit{0.0, 1.0};

  explicit Sampler(std::uint64_t seed) : rng(seed) {}

  int draw(const std::vector<double>& weights, double total) {
    double u = unit(rng) * total;
    const int k = static_cast<int>(weights.size());
    for (int i = 0; i < k; ++i) {
      u -= weights[static_cast<std::size_t>(i)];
      if (u < 0.0) return i;
    }
    return k - 1;
  }
};

std::vector<int> expand(const TokenCounts& doc, const Vocabulary& vocab) {
  std::vector<int> words;
  for (const auto& [term, count] : doc)
    if (auto idx = vocab.find(term))
      words.insert(words.end(), static_cast<std::size_t>(count), *idx);
  return words;
}

}  // namespace

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (cur.size() >= 2 && !stop_words().contains(cur)) out.push_back(cur);
    cur.clear();
  };
  for (char ch : text) {
    auto uc = static_cast<unsigned char>(ch);
    if (std::isalnum(uc)) cur.push_back(static_cast<char>(std::tolower(uc)));
    else flush();
  }
  flush();
  return out;
}

TokenCounts count_tokens(std::string_view text) {
  TokenCounts counts;
  for (auto& t : tokenize(text)) ++counts[t];
  return counts;
}

Vocabulary::Vocabulary(std::vector<std::string> terms) : terms_(std::move(terms)) {
  for (std::size_t i = 0; i < terms_.size(); ++i) {
    auto [it, inserted] = index_.emplace(terms_[i], static_cast<int>(i));
    if (!inserted) throw ValidationError("duplicate vocabulary term '" + terms_[i] + "'");
  }
}

std::optional<int> Vocabulary::find(std::string_view term) const {
  auto it = index_.find(std::string(term));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::uint64_t Vocabulary::hash() const {
  Fnv1a h;
  for (const auto& t : terms_) h.str(t);
  return h.digest();
}

Vocabulary build_vocabulary(const std::vector<TokenCounts>& corpus, int min_doc_freq) {
  std::map<std::string, int> doc_freq;
  for (const auto& doc : corpus)
    for (const auto& [term, count] : doc)
      if (count > 0) ++doc_freq[term];
  std::vector<std::string> terms;
  for (const auto& [term, df] : doc_freq)
    if (df >= min_doc_freq) terms.push_back(term);
  return Vocabulary(std::move(terms));
}

std::uint64_t document_hash(const TokenCounts& doc) {
  Fnv1a h;
  for (const auto& [term, count] : doc) h.str(term).i64(count);
  return h.digest();
}

TopicModel fit_lda(const std::vector<TokenCounts>& corpus, const LdaConfig& config) {
  if (corpus.empty()) throw ValidationError("LDA corpus is empty");
  if (config.topics < 1) throw ValidationError("LDA needs at least one topic");
  if (config.iterations < 0) throw ValidationError("negative Gibbs sweep count");
  for (std::size_t d = 0; d < corpus.size(); ++d) {
    int total = 0;
    for (const auto& [term, count] : corpus[d]) total += count;
    if (total < 1) throw ValidationError("LDA document " + std::to_string(d) + " is empty");
  }
  const double alpha = config.resolved_alpha();
  const double beta = config.beta;
  if (!(alpha > 0.0) || !(beta > 0.0)) throw ValidationError("LDA priors must be positive");

  TopicModel model;
  model.vocab = build_vocabulary(corpus, config.min_doc_freq);
  model.alpha = alpha;
  model.beta = beta;
  const int K = config.topics;
  const int W = model.vocab.size();
  if (W == 0) throw ValidationError("LDA vocabulary is empty after pruning");

  // Sampling visits documents in content-hash order so the fit does not
  // depend on the order documents were supplied in.
  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<std::uint64_t> hashes(corpus.size());
  for (std::size_t d = 0; d < corpus.size(); ++d) hashes[d] = document_hash(corpus[d]);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (hashes[a] != hashes[b]) return hashes[a] < hashes[b];
    return corpus[a] < corpus[b];
  });

  std::vector<std::vector<int>> words;
  for (std::size_t d : order) {
    auto w = expand(corpus[d], model.vocab);
    if (!w.empty()) words.push_back(std::move(w));
  }
  const std::size_t D = words.size();

  Sampler sampler(config.seed);
  std::vector<std::vector<int>> assign(D);
  Eigen::MatrixXi doc_topic = Eigen::MatrixXi::Zero(static_cast<Eigen::Index>(D), K);
  Eigen::MatrixXi topic_word = Eigen::MatrixXi::Zero(K, W);
  Eigen::VectorXi topic_total = Eigen::VectorXi::Zero(K);
  std::uniform_int_distribution<int> pick(0, K - 1);
  for (std::size_t d = 0; d < D; ++d) {
    assign[d].resize(words[d].size());
    for (std::size_t n = 0; n < words[d].size(); ++n) {
      int k = pick(sampler.rng);
      assign[d][n] = k;
      ++doc_topic(static_cast<Eigen::Index>(d), k);
      ++topic_word(k, words[d][n]);
      ++topic_total(k);
    }
  }

  std::vector<double> weights(static_cast<std::size_t>(K));
  const double w_beta = W * beta;
  for (int sweep = 0; sweep < config.iterations; ++sweep) {
    for (std::size_t d = 0; d < D; ++d) {
      const auto di = static_cast<Eigen::Index>(d);
      for (std::size_t n = 0; n < words[d].size(); ++n) {
        const int w = words[d][n];
        int k = assign[d][n];
        --doc_topic(di, k);
        --topic_word(k, w);
        --topic_total(k);
        double total = 0.0;
        for (int t = 0; t < K; ++t) {
          double p = (doc_topic(di, t) + alpha) * (topic_word(t, w) + beta) /
                     (topic_total(t) + w_beta);
          weights[static_cast<std::size_t>(t)] = p;
          total += p;
        }
        k = sampler.draw(weights, total);
        assign[d][n] = k;
        ++doc_topic(di, k);
        ++topic_word(k, w);
        ++topic_total(k);
      }
    }
  }

  model.phi.resize(K, W);
  for (int k = 0; k < K; ++k)
    for (int w = 0; w < W; ++w)
      model.phi(k, w) = (topic_word(k, w) + beta) / (topic_total(k) + w_beta);
  return model;
}

DocTopicDist infer_topics(const TopicModel& model, const TokenCounts& note,
                          int fold_in_iterations, std::uint64_t seed) {
  const int K = model.topics();
  const double alpha = model.alpha;
  auto words = expand(note, model.vocab);
  if (words.empty() || K == 1) return DocTopicDist::Constant(K, 1.0 / K);

  Sampler sampler(derive_seed(seed, document_hash(note)));
  std::uniform_int_distribution<int> pick(0, K - 1);
  std::vector<int> assign(words.size());
  Eigen::VectorXd counts = Eigen::VectorXd::Zero(K);
  for (std::size_t n = 0; n < words.size(); ++n) {
    assign[n] = pick(sampler.rng);
    counts(assign[n]) += 1.0;
  }

  // Average the smoothed proportions over the second half of the sweeps.
  const int sweeps = std::max(fold_in_iterations, 2);
  const int burn_in = sweeps / 2;
  const double denom = static_cast<double>(words.size()) + K * alpha;
  Eigen::VectorXd theta = Eigen::VectorXd::Zero(K);
  std::vector<double> weights(static_cast<std::size_t>(K));
  for (int sweep = 0; sweep < sweeps; ++sweep) {
    for (std::size_t n = 0; n < words.size(); ++n) {
      counts(assign[n]) -= 1.0;
      double total = 0.0;
      for (int t = 0; t < K; ++t) {
        double p = (counts(t) + alpha) * model.phi(t, words[n]);
        weights[static_cast<std::size_t>(t)] = p;
        total += p;
      }
      assign[n] = sampler.draw(weights, total);
      counts(assign[n]) += 1.0;
    }
    if (sweep >= burn_in) theta += (counts.array() + alpha).matrix() / denom;
  }
  theta /= theta.sum();
  return theta;
}

std::vector<std::string> top_words(const TopicModel& model, int topic, int n) {
  if (topic < 0 || topic >= model.topics())
    throw ValidationError("topic index " + std::to_string(topic) + " out of range");
  const int W = model.vocab.size();
  std::vector<int> idx(static_cast<std::size_t>(W));
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
    return model.phi(topic, a) > model.phi(topic, b);
  });
  idx.resize(static_cast<std::size_t>(std::clamp(n, 0, W)));
  std::vector<std::string> out;
  for (int i : idx) out.push_back(model.vocab.term(i));
  return out;
}

double perplexity(const TopicModel& model, const std::vector<TokenCounts>& held_out,
                  int fold_in_iterations, std::uint64_t seed) {
  double log_lik = 0.0;
  long long tokens = 0;
  for (const auto& doc : held_out) {
    DocTopicDist theta = infer_topics(model, doc, fold_in_iterations, seed);
    for (const auto& [term, count] : doc) {
      auto w = model.vocab.find(term);
      if (!w) continue;
      double p = theta.dot(model.phi.col(*w));
      log_lik += count * std::log(p);
      tokens += count;
    }
  }
  if (tokens == 0) throw ValidationError("held-out set has no in-vocabulary tokens");
  return std::exp(-log_lik / static_cast<double>(tokens));
}

void save_topic_model(const TopicModel& model, const std::filesystem::path& phi_csv,
                      const std::filesystem::path& vocab_txt, std::uint64_t run_hash) {
  std::ofstream os(phi_csv, std::ios::binary);
  if (!os) throw ValidationError("cannot write " + phi_csv.string());
  char buf[64];
  os << "# topics=" << model.topics() << ",terms=" << model.vocab.size()
     << ",vocab_hash=" << hex64(model.vocab.hash());
  std::snprintf(buf, sizeof buf, ",alpha=%.17g,beta=%.17g", model.alpha, model.beta);
  os << buf << ",run=" << hex64(run_hash) << '\n';
  for (int k = 0; k < model.topics(); ++k) {
    for (int w = 0; w < model.vocab.size(); ++w) {
      std::snprintf(buf, sizeof buf, "%.17g", model.phi(k, w));
      os << (w ? "," : "") << buf;
    }
    os << '\n';
  }
  std::ofstream vs(vocab_txt, std::ios::binary);
  if (!vs) throw ValidationError("cannot write " + vocab_txt.string());
  for (const auto& t : model.vocab.terms()) vs << t << '\n';
}

TopicModel load_topic_model(const std::filesystem::path& phi_csv,
                            const std::filesystem::path& vocab_txt) {
  std::ifstream vs(vocab_txt, std::ios::binary);
  if (!vs) throw ValidationError("cannot read " + vocab_txt.string());
  std::vector<std::string> terms;
  for (std::string line; std::getline(vs, line);)
    if (!line.empty()) terms.push_back(line);

  std::ifstream is(phi_csv, std::ios::binary);
  if (!is) throw ValidationError("cannot read " + phi_csv.string());
  std::string header;
  std::getline(is, header);
  int K = 0, W = 0;
  char hash_buf[17] = {0};
  double alpha = 0.0, beta = 0.0;
  if (std::sscanf(header.c_str(), "# topics=%d,terms=%d,vocab_hash=%16[0-9a-f],alpha=%lf,beta=%lf",
                  &K, &W, hash_buf, &alpha, &beta) != 5)
    throw ValidationError("malformed topic model header in " + phi_csv.string());

  TopicModel model;
  model.vocab = Vocabulary(std::move(terms));
  if (model.vocab.size() != W || model.vocab.hash() != parse_hex64(hash_buf))
    throw SchemaError("vocabulary file does not match topic model " + phi_csv.string());
  model.alpha = alpha;
  model.beta = beta;
  model.phi.resize(K, W);
  for (int k = 0; k < K; ++k) {
    std::string line;
    if (!std::getline(is, line)) throw ValidationError("truncated topic model");
    std::istringstream row(line);
    std::string cell;
    for (int w = 0; w < W; ++w) {
      if (!std::getline(row, cell, ',')) throw ValidationError("short topic row");
      model.phi(k, w) = std::strtod(cell.c_str(), nullptr);
    }
  }
  return model;
}

}  // namespace clinpred
