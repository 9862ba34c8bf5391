#pragma once

#include <array>
#include <string>
#include <vector>

#include <emogen/corpus.hpp>
#include <emogen/error.hpp>
#include <emogen/graph.hpp>
#include <emogen/lda.hpp>
#include <emogen/seq2seq.hpp>
#include <emogen/vocab.hpp>

// Reply planning: a 4-way structure head picks which keyword types appear
// and in what order, and two masked keyword heads pick the concrete words.
// Each keyword head scores the full vocabulary from [pooled encoder state;
// category embedding] but its softmax support is restricted to the word set
// of the requested label, so off-dictionary probability is exactly zero and
// the chosen keyword is a member of its label's dictionary by construction.
//
// Parameters (all in the shared store):
//   plan.emb_et [n_emotions, 8]   plan.emb_tp [n_topics, 8]
//   plan.struct.W [4, hidden] + plan.struct.b [4]   (zero-init: uniform)
//   plan.et.W [V, hidden+8]       plan.tp.W [V, hidden+8]   (zero-init)

namespace emogen {

constexpr int kCategoryEmbedDim = 8;
constexpr int kNumOrders = 4;

struct ReplyPlan {
  Order order = Order::ET;
  int kw_et = -1;  // -1 = absent
  int kw_tp = -1;
  int k_et = -1;  // emotion label index (caller-designated)
  int k_tp = -1;  // topic label index (from the topic model)

  bool wants_et() const { return order != Order::T_ONLY; }
  bool wants_tp() const { return order != Order::E_ONLY; }

  void validate(const Dictionaries& dict) const {
    if ((kw_et >= 0) != wants_et() || (kw_tp >= 0) != wants_tp())
      throw ContractError("ReplyPlan: keyword presence does not match order");
    if (wants_et()) {
      if (k_et < 0 || k_et >= dict.n_emotions())
        throw ContractError("ReplyPlan: emotion label out of range");
      if (dict.emotion_label_of_word(kw_et) != k_et)
        throw ContractError("ReplyPlan: kw_et outside its label dictionary");
    }
    if (wants_tp()) {
      if (k_tp < 0 || k_tp >= dict.n_topics())
        throw ContractError("ReplyPlan: topic label out of range");
      if (dict.topic_label_of_word(kw_tp) != k_tp)
        throw ContractError("ReplyPlan: kw_tp outside its label dictionary");
    }
  }
};

inline void add_planner_params(ParamStore& ps, int V, int n_emotions, int n_topics,
                               int hidden, Rng& rng) {
  ps.add_uniform("plan.emb_et", {n_emotions, kCategoryEmbedDim}, 0.1, rng);
  ps.add_uniform("plan.emb_tp", {n_topics, kCategoryEmbedDim}, 0.1, rng);
  ps.add("plan.struct.W", {kNumOrders, hidden});
  ps.add("plan.struct.b", {kNumOrders});
  ps.add("plan.et.W", {V, hidden + kCategoryEmbedDim});
  ps.add("plan.tp.W", {V, hidden + kCategoryEmbedDim});
}

inline Expr structure_logprobs_expr(Graph& g, Expr pooled) {
  return g.log_softmax(
      g.add(g.matmul(g.param("plan.struct.W"), pooled), g.param("plan.struct.b")));
}

namespace detail {

inline std::vector<char> dict_support(int V, const std::vector<int>& words) {
  std::vector<char> support(static_cast<size_t>(V), 0);
  for (int id : words) support[static_cast<size_t>(id)] = 1;
  return support;
}

inline Expr keyword_logprobs_expr(Graph& g, Expr pooled, const char* emb_name,
                                  const char* w_name, int label,
                                  const std::vector<int>& words, const char* what) {
  int V = g.store()->value("embed").rows();
  int n_labels = g.store()->value(emb_name).rows();
  if (label < 0 || label >= n_labels)
    throw DataError(std::string("keyword predictor: bad ") + what + " label index");
  if (words.empty())
    throw UsageError(std::string("keyword predictor: empty dictionary for ") + what +
                     " label " + std::to_string(label));
  Expr cat = g.row(g.param(emb_name), label);
  Expr scores = g.matmul(g.param(w_name), g.concat({pooled, cat}));
  return g.masked_log_softmax(scores, dict_support(V, words));
}

}  // namespace detail

// log-probabilities over the full vocab, supported only on the label's words
inline Expr emotion_kw_logprobs_expr(Graph& g, Expr pooled, int k_et,
                                     const Dictionaries& dict) {
  const std::vector<int>* words =
      (k_et >= 0 && k_et < dict.n_emotions()) ? &dict.emotion_words[static_cast<size_t>(k_et)]
                                              : nullptr;
  return detail::keyword_logprobs_expr(g, pooled, "plan.emb_et", "plan.et.W", k_et,
                                       words ? *words : std::vector<int>{}, "emotion");
}

inline Expr topic_kw_logprobs_expr(Graph& g, Expr pooled, int k_tp,
                                   const Dictionaries& dict) {
  const std::vector<int>* words =
      (k_tp >= 0 && k_tp < dict.n_topics()) ? &dict.topic_words[static_cast<size_t>(k_tp)]
                                            : nullptr;
  return detail::keyword_logprobs_expr(g, pooled, "plan.emb_tp", "plan.tp.W", k_tp,
                                       words ? *words : std::vector<int>{}, "topic");
}

namespace detail {

inline int argmax_lowest(const std::vector<double>& v) {
  int best = 0;
  for (int i = 1; i < static_cast<int>(v.size()); ++i)
    if (v[static_cast<size_t>(i)] > v[static_cast<size_t>(best)]) best = i;
  return best;
}

}  // namespace detail

struct StructurePrediction {
  Order order;
  std::array<double, kNumOrders> probs;
};

inline StructurePrediction predict_structure(const ParamStore& ps,
                                             const std::vector<int>& post) {
  Graph g(const_cast<ParamStore&>(ps));
  Expr lp = structure_logprobs_expr(g, encode(g, post).pooled);
  const Tensor& t = g.value(lp);
  StructurePrediction out{};
  std::vector<double> probs(t.v.size());
  for (size_t i = 0; i < t.v.size(); ++i) probs[i] = std::exp(t.v[i]);
  for (int i = 0; i < kNumOrders; ++i) out.probs[static_cast<size_t>(i)] = probs[static_cast<size_t>(i)];
  out.order = static_cast<Order>(detail::argmax_lowest(probs));
  return out;
}

struct KeywordPrediction {
  int token = -1;
  std::vector<double> probs;  // over the full vocab, zero off the label's words
};

inline KeywordPrediction predict_emotion_keyword(const ParamStore& ps,
                                                 const std::vector<int>& post, int k_et,
                                                 const Dictionaries& dict) {
  Graph g(const_cast<ParamStore&>(ps));
  Expr lp = emotion_kw_logprobs_expr(g, encode(g, post).pooled, k_et, dict);
  const Tensor& t = g.value(lp);
  KeywordPrediction out;
  out.probs.resize(t.v.size());
  for (size_t i = 0; i < t.v.size(); ++i)
    out.probs[i] = t.v[i] <= Graph::kMaskedLogProb ? 0.0 : std::exp(t.v[i]);
  out.token = detail::argmax_lowest(out.probs);
  return out;
}

inline KeywordPrediction predict_topic_keyword(const ParamStore& ps,
                                               const std::vector<int>& post, int k_tp,
                                               const Dictionaries& dict) {
  Graph g(const_cast<ParamStore&>(ps));
  Expr lp = topic_kw_logprobs_expr(g, encode(g, post).pooled, k_tp, dict);
  const Tensor& t = g.value(lp);
  KeywordPrediction out;
  out.probs.resize(t.v.size());
  for (size_t i = 0; i < t.v.size(); ++i)
    out.probs[i] = t.v[i] <= Graph::kMaskedLogProb ? 0.0 : std::exp(t.v[i]);
  out.token = detail::argmax_lowest(out.probs);
  return out;
}

// Full greedy plan: the emotion label is designated by the caller, the topic
// label comes from the topic model, structure and keywords from the trained
// heads. Keywords not required by the predicted order are dropped. The topic
// model speaks in its own topic indices, so its mixture is folded through the
// stored alignment into dictionary label space before the keyword head sees it.
inline ReplyPlan make_plan(const ParamStore& ps, const std::vector<int>& post, int k_et,
                           const LdaModel& lda, const Dictionaries& dict) {
  if (k_et < 0 || k_et >= dict.n_emotions())
    throw DataError("make_plan: emotion label index out of range");
  ReplyPlan plan;
  plan.order = predict_structure(ps, post).order;
  plan.k_et = k_et;  // label kept even without a keyword; reward scoring needs it
  plan.k_tp = predict_post_label(lda, post, dict.n_topics());
  if (plan.wants_et()) plan.kw_et = predict_emotion_keyword(ps, post, k_et, dict).token;
  if (plan.wants_tp()) plan.kw_tp = predict_topic_keyword(ps, post, plan.k_tp, dict).token;
  return plan;
}

}  // namespace emogen
