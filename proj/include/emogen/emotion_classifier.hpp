#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "emogen/checkpoint.hpp"
#include "emogen/corpus.hpp"
#include "emogen/graph.hpp"
#include "emogen/rng.hpp"

namespace emogen {

struct EmoClfDims {
  int d = 16;  // embedding width
  int c = 8;   // channels per filter width
};

// Convolutional sentence classifier over reply tokens: filter widths 1..3,
// tanh features, max-pool over positions, linear projection to the emotion
// labels. PAD tokens are stripped before convolution, so padding a reply
// never changes its distribution. The output layer starts at zero, which
// makes the untrained classifier exactly uniform.
class EmoClassifier {
 public:
  static constexpr int kMinWidth = 1;
  static constexpr int kMaxWidth = 3;

  EmoClassifier(int V, int n_labels, EmoClfDims dims, uint64_t seed)
      : V_(V), d_(dims.d), c_(dims.c), n_labels_(n_labels), store_(seed) {
    if (V < kNumReserved + 1) throw DataError("classifier: vocabulary too small");
    if (n_labels < 2) throw DataError("classifier: need at least two labels");
    Rng rng(seed);
    store_.add_uniform("emb", {V_, d_}, 0.1, rng);
    for (int w = kMinWidth; w <= kMaxWidth; ++w) {
      store_.add_uniform("conv" + std::to_string(w) + ".W", {c_, w * d_}, 0.2, rng);
      store_.add_uniform("conv" + std::to_string(w) + ".b", {c_}, 0.2, rng);
    }
    store_.add("out.W", {n_labels_, (kMaxWidth - kMinWidth + 1) * c_});
    store_.add("out.b", {n_labels_});
  }

  // for loading from a checkpoint
  EmoClassifier(ParamStore store, int n_labels)
      : V_(store.value("emb").rows()),
        d_(store.value("emb").cols()),
        c_(store.value("conv1.W").rows()),
        n_labels_(n_labels),
        store_(std::move(store)) {}

  int vocab_size() const { return V_; }
  int n_labels() const { return n_labels_; }
  ParamStore& store() { return store_; }
  const ParamStore& store() const { return store_; }

  // log-probability vector over labels for a reply, as a graph expression
  Expr log_probs_expr(Graph& g, const std::vector<int>& reply) const {
    std::vector<int> real;
    for (int t : reply) {
      if (t == kPad) continue;
      if (t < 0 || t >= V_) throw DataError("classifier: token id out of range");
      real.push_back(t);
    }
    if (real.empty()) throw DataError("classifier: reply is empty");

    Expr emb = g.param("emb");
    std::vector<Expr> pooled;
    for (int w = kMinWidth; w <= kMaxWidth; ++w) {
      Expr W = g.param("conv" + std::to_string(w) + ".W");
      Expr b = g.param("conv" + std::to_string(w) + ".b");
      int n = static_cast<int>(real.size());
      std::vector<Expr> feats;
      int windows = n - w + 1;
      if (windows < 1) windows = 1;  // single window padded with PAD embeddings
      for (int i = 0; i < windows; ++i) {
        std::vector<Expr> span;
        for (int j = 0; j < w; ++j) {
          int tok = (i + j < n) ? real[static_cast<size_t>(i + j)] : kPad;
          span.push_back(g.row(emb, tok));
        }
        Expr x = w == 1 ? span[0] : g.concat(span);
        feats.push_back(g.tanh(g.add(g.matmul(W, x), b)));
      }
      pooled.push_back(feats.size() == 1 ? feats[0] : g.max_n(feats));
    }
    Expr logits = g.add(g.matmul(g.param("out.W"), g.concat(pooled)), g.param("out.b"));
    return g.log_softmax(logits);
  }

  Expr nll_expr(Graph& g, const std::vector<int>& reply, int label) const {
    if (label < 0 || label >= n_labels_) throw DataError("classifier: label out of range");
    return g.neg(g.pick(log_probs_expr(g, reply), label));
  }

  std::vector<double> classify(const std::vector<int>& reply) const {
    Graph g(const_cast<ParamStore&>(store_));  // forward only, no gradients
    Expr lp = log_probs_expr(g, reply);
    std::vector<double> probs(g.value(lp).v.size());
    for (size_t i = 0; i < probs.size(); ++i) probs[i] = std::exp(g.value(lp).v[i]);
    return probs;
  }

  // log D_k(y), the score the emotion reward uses
  double log_prob_of(const std::vector<int>& reply, int label) const {
    Graph g(const_cast<ParamStore&>(store_));
    return g.value(log_probs_expr(g, reply)).v[static_cast<size_t>(label)];
  }

 private:
  int V_, d_, c_, n_labels_;
  ParamStore store_;
};

struct EmoTrainResult {
  EmoClassifier model;
  double heldout_accuracy = 0;
  std::vector<double> epoch_losses;
};

inline EmoTrainResult train_emoclf(const std::vector<Pair>& train,
                                   const std::vector<Pair>& heldout, int V, int n_labels,
                                   EmoClfDims dims, int epochs, double lr, uint64_t seed) {
  if (train.empty()) throw DataError("train_emoclf: no training pairs");
  if (epochs < 1) throw UsageError("train_emoclf: epochs must be at least 1");
  bool multi = false;
  for (const auto& p : train)
    if (p.emotion_label != train[0].emotion_label) {
      multi = true;
      break;
    }
  if (!multi) throw DataError("train_emoclf: corpus has a single emotion label");

  EmoTrainResult res{EmoClassifier(V, n_labels, dims, seed), 0, {}};
  EmoClassifier& clf = res.model;
  Rng order_rng(seed + 1);

  std::vector<int> idx(train.size());
  for (size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);

  for (int epoch = 0; epoch < epochs; ++epoch) {
    // Fisher-Yates with the deterministic stream
    for (int i = static_cast<int>(idx.size()) - 1; i > 0; --i) {
      int j = static_cast<int>(order_rng.uniform_int(static_cast<uint64_t>(i + 1)));
      std::swap(idx[i], idx[j]);
    }
    double total = 0;
    for (int i : idx) {
      const Pair& p = train[static_cast<size_t>(i)];
      clf.store().zero_grads();
      Graph g(clf.store());
      Expr loss = clf.nll_expr(g, p.reply, p.emotion_label);
      total += g.value_scalar(loss);
      g.backward(loss);
      if (!clf.store().grads_finite()) throw NumericError("train_emoclf: non-finite gradient");
      clf.store().sgd_step(lr);
    }
    res.epoch_losses.push_back(total / static_cast<double>(train.size()));
  }

  if (!heldout.empty()) {
    int hits = 0;
    for (const auto& p : heldout) {
      auto probs = clf.classify(p.reply);
      int best = 0;
      for (int k = 1; k < n_labels; ++k)
        if (probs[k] > probs[best]) best = k;
      if (best == p.emotion_label) ++hits;
    }
    res.heldout_accuracy = static_cast<double>(hits) / static_cast<double>(heldout.size());
  }
  return res;
}

inline void save_emoclf(const std::string& prefix, const EmoClassifier& clf) {
  ordered_json meta;
  meta["kind"] = "emoclf";
  meta["n_labels"] = clf.n_labels();
  save_checkpoint(prefix, clf.store(), meta);
}

inline EmoClassifier load_emoclf(const std::string& prefix) {
  ordered_json meta;
  ParamStore store = load_checkpoint(prefix, &meta);
  if (meta.value("kind", "") != "emoclf") throw DataError("checkpoint is not an emotion classifier");
  return EmoClassifier(std::move(store), meta.at("n_labels").get<int>());
}

}  // namespace emogen
