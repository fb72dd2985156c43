#pragma once

// Latent Dirichlet Allocation over clinical notes, fit by collapsed Gibbs
// sampling, with fold-in inference for per-note topic proportions.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <Eigen/Core>

#include "clinpred/core.hpp"

namespace clinpred {

// Lowercase, split on non-alphanumerics, drop tokens shorter than two
// characters and stop words.
std::vector<std::string> tokenize(std::string_view text);
TokenCounts count_tokens(std::string_view text);

class Vocabulary {
 public:
  Vocabulary() = default;
  explicit Vocabulary(std::vector<std::string> terms);

  int size() const { return static_cast<int>(terms_.size()); }
  const std::string& term(int index) const { return terms_.at(static_cast<std::size_t>(index)); }
  const std::vector<std::string>& terms() const { return terms_; }
  std::optional<int> find(std::string_view term) const;
  std::uint64_t hash() const;

 private:
  std::vector<std::string> terms_;
  std::unordered_map<std::string, int> index_;
};

// Terms appearing in at least `min_doc_freq` documents, sorted.
Vocabulary build_vocabulary(const std::vector<TokenCounts>& corpus, int min_doc_freq = 5);

struct LdaConfig {
  int topics = 50;
  std::optional<double> alpha;  // defaults to 50 / topics
  double beta = 0.01;
  int iterations = 200;
  std::uint64_t seed = 0;
  int min_doc_freq = 5;

  double resolved_alpha() const { return alpha.value_or(50.0 / topics); }
};

struct TopicModel {
  Vocabulary vocab;
  double alpha = 0.0;
  double beta = 0.0;
  Eigen::MatrixXd phi;  // topics x terms, rows sum to one

  int topics() const { return static_cast<int>(phi.rows()); }
};

using DocTopicDist = Eigen::VectorXd;

TopicModel fit_lda(const std::vector<TokenCounts>& corpus, const LdaConfig& config);

// Fold-in Gibbs with phi frozen. Out-of-vocabulary terms are skipped; a note
// with no known terms gets the uniform prior.
DocTopicDist infer_topics(const TopicModel& model, const TokenCounts& note,
                          int fold_in_iterations = 50, std::uint64_t seed = 0);

std::vector<std::string> top_words(const TopicModel& model, int topic, int n);

// exp(-mean log p(w)) over held-out tokens, p(w) = sum_k theta_k phi_kw with
// theta from fold-in inference.
double perplexity(const TopicModel& model, const std::vector<TokenCounts>& held_out,
                  int fold_in_iterations = 50, std::uint64_t seed = 0);

// Content hash of a token-count map, independent of map ordering details.
std::uint64_t document_hash(const TokenCounts& doc);

// Checkpoint: phi as CSV with a '#' header line (K, vocabulary hash,
// hyperparameters, run hash) plus a vocabulary file with one term per line.
void save_topic_model(const TopicModel& model, const std::filesystem::path& phi_csv,
                      const std::filesystem::path& vocab_txt, std::uint64_t run_hash = 0);
TopicModel load_topic_model(const std::filesystem::path& phi_csv,
                            const std::filesystem::path& vocab_txt);

}  // namespace clinpred
