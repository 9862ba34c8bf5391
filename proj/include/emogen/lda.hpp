#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "emogen/checkpoint.hpp"
#include "emogen/corpus.hpp"
#include "emogen/rng.hpp"
#include "emogen/tensor.hpp"

namespace emogen {

// Pipeline defaults. The textbook alpha = 50/K heuristic assumes documents
// hundreds of tokens long; at the ~12 tokens of this corpus it drowns the
// document-topic counts (coupling factor (n_dk+alpha+1)/(n_dk+alpha) ~ 1.04
// per token) and the sampler settles on arbitrary word partitions. A small
// alpha keeps per-document topic pressure alive; 50/K stays reachable
// through the lda.alpha config key.
constexpr double kLdaAlphaDefault = 0.5;
constexpr double kLdaBetaDefault = 0.01;
constexpr int kLdaItersDefault = 100;
constexpr int kLdaKDefault = 8;

struct LdaModel {
  int K = 0;
  double alpha = 0;
  double beta = 0;
  uint64_t seed = 0;
  Tensor phi;  // K x V topic-word probabilities, rows sum to 1

  // Learned topics come out in sampler order, not generator-label order.
  // topic_to_label[k] is the label topic k stands for (-1 for unmatched
  // topics when K exceeds the label count). Empty until align_lda runs;
  // an unaligned model can only serve labels that are topic ids themselves.
  std::vector<int> topic_to_label;

  int V() const { return phi.cols(); }

  void validate() const {
    for (int k = 0; k < K; ++k) {
      double s = 0;
      for (int w = 0; w < V(); ++w) {
        if (phi.at(k, w) <= 0) throw ContractError("lda: phi has a non-positive entry");
        s += phi.at(k, w);
      }
      if (std::fabs(s - 1.0) > 1e-9) throw ContractError("lda: phi row does not sum to 1");
    }
    if (!topic_to_label.empty() && static_cast<int>(topic_to_label.size()) != K)
      throw ContractError("lda: alignment size does not match the topic count");
  }
};

namespace detail {

// collapsed joint log p(w, z) under the Dirichlet priors
inline double lda_joint_loglik(const std::vector<std::vector<int>>& n_dk,
                               const std::vector<std::vector<int>>& n_kw,
                               const std::vector<int>& n_k, int K, int V, double alpha,
                               double beta) {
  double ll = 0;
  for (const auto& row : n_dk) {
    int nd = 0;
    for (int k = 0; k < K; ++k) nd += row[k];
    if (nd == 0) continue;
    ll += std::lgamma(K * alpha) - std::lgamma(K * alpha + nd);
    for (int k = 0; k < K; ++k) ll += std::lgamma(alpha + row[k]) - std::lgamma(alpha);
  }
  for (int k = 0; k < K; ++k) {
    ll += std::lgamma(V * beta) - std::lgamma(V * beta + n_k[k]);
    for (int w = 0; w < V; ++w) ll += std::lgamma(beta + n_kw[k][w]) - std::lgamma(beta);
  }
  return ll;
}

inline uint64_t fnv1a(const std::vector<int>& xs) {
  uint64_t h = 1469598103934665603ull;
  for (int x : xs) {
    for (int b = 0; b < 4; ++b) {
      h ^= static_cast<uint64_t>((x >> (8 * b)) & 0xff);
      h *= 1099511628211ull;
    }
  }
  return h;
}

}  // namespace detail

struct LdaTrainResult {
  LdaModel model;
  std::vector<double> loglik;  // initial state, every 10th sweep, final state
  int skipped_docs = 0;
};

// Collapsed Gibbs sampling over token-topic assignments. Documents are
// plain token id sequences; ids outside [0, V) never occur because V is
// taken from the vocabulary that produced them.
inline LdaTrainResult train_lda(const std::vector<std::vector<int>>& docs, int V, int K,
                                double alpha, double beta, int iters, uint64_t seed) {
  if (docs.empty()) throw DataError("train_lda: no documents");
  if (K < 1) throw UsageError("train_lda: K must be at least 1");
  if (iters < 1) throw UsageError("train_lda: iters must be at least 1");
  if (V < 1) throw DataError("train_lda: empty vocabulary");

  LdaTrainResult res;
  std::vector<std::vector<int>> kept;
  kept.reserve(docs.size());
  for (const auto& d : docs) {
    if (d.empty()) {
      ++res.skipped_docs;
      continue;
    }
    for (int w : d)
      if (w < 0 || w >= V) throw DataError("train_lda: token id out of vocabulary range");
    kept.push_back(d);
  }
  if (kept.empty()) throw DataError("train_lda: all documents empty");

  int D = static_cast<int>(kept.size());
  Rng rng(seed);
  std::vector<std::vector<int>> z(D);
  std::vector<std::vector<int>> n_dk(D, std::vector<int>(K, 0));
  std::vector<std::vector<int>> n_kw(K, std::vector<int>(V, 0));
  std::vector<int> n_k(K, 0);

  for (int d = 0; d < D; ++d) {
    z[d].resize(kept[d].size());
    for (size_t i = 0; i < kept[d].size(); ++i) {
      int k = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(K)));
      z[d][i] = k;
      ++n_dk[d][k];
      ++n_kw[k][kept[d][i]];
      ++n_k[k];
    }
  }

  auto record = [&]() {
    res.loglik.push_back(detail::lda_joint_loglik(n_dk, n_kw, n_k, K, V, alpha, beta));
  };
  record();

  std::vector<double> weights(K);
  for (int sweep = 1; sweep <= iters; ++sweep) {
    for (int d = 0; d < D; ++d) {
      for (size_t i = 0; i < kept[d].size(); ++i) {
        int w = kept[d][i];
        int old = z[d][i];
        --n_dk[d][old];
        --n_kw[old][w];
        --n_k[old];
        double total = 0;
        for (int k = 0; k < K; ++k) {
          weights[k] = (n_dk[d][k] + alpha) * (n_kw[k][w] + beta) / (n_k[k] + V * beta);
          total += weights[k];
        }
        double u = rng.uniform01() * total;
        int k = 0;
        for (; k < K - 1; ++k) {
          u -= weights[k];
          if (u < 0) break;
        }
        z[d][i] = k;
        ++n_dk[d][k];
        ++n_kw[k][w];
        ++n_k[k];
      }
    }
    if (sweep % 10 == 0 && sweep != iters) record();
  }
  record();

  res.model.K = K;
  res.model.alpha = alpha;
  res.model.beta = beta;
  res.model.seed = seed;
  res.model.phi = Tensor({K, V});
  for (int k = 0; k < K; ++k)
    for (int w = 0; w < V; ++w)
      res.model.phi.at(k, w) = (n_kw[k][w] + beta) / (n_k[k] + V * beta);
  res.model.validate();
  return res;
}

struct TopicInference {
  std::vector<double> theta;  // distribution over K, sums to 1
  bool all_oov = false;
};

// Fold-in Gibbs with phi frozen. The sampler seed mixes the model seed with
// a content hash of the document, so results do not depend on call order.
// Topic proportions are assignment fractions averaged over the last half of
// the sweeps, smoothed by a small constant. The training alpha still drives
// the Gibbs kernel but is far too heavy as an output smoother: at alpha=50/K
// a 20-token document could never concentrate past 0.64 on one topic.
inline TopicInference infer_topic(const LdaModel& model, const std::vector<int>& doc,
                                  int fold_in_iters = 30) {
  constexpr double kThetaSmooth = 0.01;
  if (fold_in_iters < 1) throw UsageError("infer_topic: fold_in_iters must be at least 1");
  int K = model.K, V = model.V();
  TopicInference out;
  out.theta.assign(K, 1.0 / K);

  std::vector<int> kept;
  for (int w : doc)
    if (w >= kNumReserved && w < V) kept.push_back(w);
  if (kept.empty()) {
    out.all_oov = true;
    return out;
  }

  Rng rng(model.seed ^ detail::fnv1a(kept));
  int n = static_cast<int>(kept.size());
  std::vector<int> z(n);
  std::vector<int> n_dk(K, 0);
  for (int i = 0; i < n; ++i) {
    z[i] = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(K)));
    ++n_dk[z[i]];
  }

  std::vector<double> weights(K);
  std::vector<double> acc(K, 0.0);
  int acc_from = fold_in_iters / 2 + 1;
  int acc_count = 0;
  for (int sweep = 1; sweep <= fold_in_iters; ++sweep) {
    for (int i = 0; i < n; ++i) {
      int w = kept[i];
      --n_dk[z[i]];
      double total = 0;
      for (int k = 0; k < K; ++k) {
        weights[k] = model.phi.at(k, w) * (n_dk[k] + model.alpha);
        total += weights[k];
      }
      double u = rng.uniform01() * total;
      int k = 0;
      for (; k < K - 1; ++k) {
        u -= weights[k];
        if (u < 0) break;
      }
      z[i] = k;
      ++n_dk[k];
    }
    if (sweep >= acc_from) {
      for (int k = 0; k < K; ++k) acc[k] += n_dk[k];
      ++acc_count;
    }
  }
  for (int k = 0; k < K; ++k)
    out.theta[k] = (acc[k] / acc_count + kThetaSmooth) / (n + K * kThetaSmooth);
  return out;
}

inline int predict_post_topic(const LdaModel& model, const std::vector<int>& post,
                              int fold_in_iters = 30) {
  TopicInference inf = infer_topic(model, post, fold_in_iters);
  int best = 0;
  for (int k = 1; k < model.K; ++k)
    if (inf.theta[k] > inf.theta[best]) best = k;
  return best;
}

// Greedy one-to-one matching between learned topics and generator labels
// from a K x L co-occurrence count matrix: repeatedly take the largest
// remaining cell. Returns topic -> label (-1 where K > L leaves leftovers).
inline std::vector<int> greedy_align(const std::vector<std::vector<int>>& counts) {
  int K = static_cast<int>(counts.size());
  if (K == 0) return {};
  int L = static_cast<int>(counts[0].size());
  std::vector<int> assign(K, -1);
  std::vector<char> topic_used(K, 0), label_used(L, 0);
  for (int round = 0; round < std::min(K, L); ++round) {
    int bk = -1, bl = -1;
    long best = -1;
    for (int k = 0; k < K; ++k) {
      if (topic_used[k]) continue;
      for (int l = 0; l < L; ++l) {
        if (label_used[l]) continue;
        if (counts[k][l] > best) {
          best = counts[k][l];
          bk = k;
          bl = l;
        }
      }
    }
    assign[bk] = bl;
    topic_used[bk] = 1;
    label_used[bl] = 1;
  }
  return assign;
}

// Fit the topic -> label map from labeled pairs by counting which label each
// post's hottest topic lands on. Counting over posts rather than joined
// documents matches how the planner infers topics at generation time.
inline void align_lda(LdaModel& model, const std::vector<Pair>& pairs, int n_labels,
                      int fold_in_iters = 30) {
  if (n_labels < 1) throw UsageError("align_lda: need at least one label");
  if (pairs.empty()) throw DataError("align_lda: no pairs to align on");
  std::vector<std::vector<int>> counts(model.K, std::vector<int>(n_labels, 0));
  for (const auto& p : pairs) {
    if (p.topic_label < 0 || p.topic_label >= n_labels)
      throw DataError("align_lda: topic label out of range");
    ++counts[predict_post_topic(model, p.post, fold_in_iters)][p.topic_label];
  }
  model.topic_to_label = greedy_align(counts);
}

// Mixture mass per generator label. Aligned models pool theta over the map;
// unaligned ones are accepted only when labels and topics coincide, so a
// model trained with the wrong K cannot silently misindex a label head.
inline std::vector<double> label_masses(const LdaModel& model,
                                        const std::vector<double>& theta, int n_labels) {
  if (n_labels < 1) throw UsageError("label_masses: need at least one label");
  if (static_cast<int>(theta.size()) != model.K)
    throw ContractError("label_masses: theta length does not match the topic count");
  if (model.topic_to_label.empty()) {
    if (n_labels != model.K)
      throw ContractError("label_masses: unaligned topic model, label count differs from K");
    return theta;
  }
  std::vector<double> mass(n_labels, 0.0);
  for (int k = 0; k < model.K; ++k) {
    int l = model.topic_to_label[k];
    if (l >= n_labels) throw ContractError("label_masses: aligned label out of range");
    if (l >= 0) mass[l] += theta[k];
  }
  return mass;
}

inline int predict_post_label(const LdaModel& model, const std::vector<int>& post,
                              int n_labels, int fold_in_iters = 30) {
  TopicInference inf = infer_topic(model, post, fold_in_iters);
  std::vector<double> mass = label_masses(model, inf.theta, n_labels);
  int best = 0;
  for (int l = 1; l < n_labels; ++l)
    if (mass[l] > mass[best]) best = l;
  return best;
}

// Documents for topic modeling: post and reply of a pair concatenated into
// one document, reserved ids dropped. Modeling them as separate documents
// lets the sampler split on post style versus reply style instead of topic;
// joining them leaves topic as the dominant between-document axis.
inline std::vector<std::vector<int>> lda_docs(const std::vector<Pair>& pairs) {
  std::vector<std::vector<int>> docs;
  docs.reserve(pairs.size());
  for (const auto& p : pairs) {
    std::vector<int> doc;
    for (int x : p.post)
      if (x >= kNumReserved) doc.push_back(x);
    for (int x : p.reply)
      if (x >= kNumReserved) doc.push_back(x);
    docs.push_back(std::move(doc));
  }
  return docs;
}

inline void save_lda(const std::string& prefix, const LdaModel& model) {
  ParamStore store(model.seed);
  store.add("phi", {model.K, model.V()}).v = model.phi.v;
  ordered_json meta;
  meta["kind"] = "lda";
  meta["K"] = model.K;
  meta["alpha"] = model.alpha;
  meta["beta"] = model.beta;
  if (!model.topic_to_label.empty()) meta["topic_to_label"] = model.topic_to_label;
  save_checkpoint(prefix, store, meta);
}

inline LdaModel load_lda(const std::string& prefix) {
  ordered_json meta;
  ParamStore store = load_checkpoint(prefix, &meta);
  if (meta.value("kind", "") != "lda") throw DataError("checkpoint is not a topic model");
  LdaModel m;
  m.K = meta.at("K").get<int>();
  m.alpha = meta.at("alpha").get<double>();
  m.beta = meta.at("beta").get<double>();
  if (meta.contains("topic_to_label"))
    m.topic_to_label = meta.at("topic_to_label").get<std::vector<int>>();
  m.seed = store.rng_seed();
  m.phi = store.value("phi");
  m.validate();
  return m;
}

}  // namespace emogen
