#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "emogen/async_decoder.hpp"
#include "emogen/config.hpp"
#include "emogen/emotion_classifier.hpp"
#include "emogen/lda.hpp"
#include "emogen/planner.hpp"
#include "emogen/seq2seq.hpp"

namespace emogen {

// Reward stack: coherence against forward and backward sequence scorers,
// topic relevance against the LDA, and emotion relevance against the
// classifier, mixed per clause with fixed weights and summed into R.
//
// Sign convention: r2 and r3 are log-probabilities of the target class
// (larger = better match), so all three rewards share the <= 0 scale that a
// maximizer drives toward 0. The positive cross-entropy readings some
// writeups print are simply the negations and are easy to recover for
// diagnostics.

struct RewardWeights {
  // rows: emotion clause, middle clause, topic clause, edited final;
  // columns: coherence, topic, emotion
  std::array<std::array<double, 3>, 4> rows{{{0.2, 0.2, 0.6},
                                             {0.2, 0.4, 0.4},
                                             {0.2, 0.6, 0.2},
                                             {0.5, 0.25, 0.25}}};

  static constexpr std::array<const char*, 4> kRowNames{"et", "md", "tp", "final"};

  void check() const {
    for (size_t i = 0; i < rows.size(); ++i) {
      double sum = rows[i][0] + rows[i][1] + rows[i][2];
      if (sum != 1.0)
        throw ContractError(std::string("reward weight row ") + kRowNames[i] +
                            " does not sum to 1");
    }
  }

  double mix(int row, double r1, double r2, double r3) const {
    if (row < 0 || row >= 4) throw ContractError("RewardWeights::mix: bad row");
    const auto& w = rows[static_cast<size_t>(row)];
    return w[0] * r1 + w[1] * r2 + w[2] * r3;
  }

  // Keys reward.<row>.<col> override single cells, e.g. reward.md.topic = 0.4.
  static RewardWeights from_config(const Config& cfg) {
    RewardWeights w;
    static constexpr std::array<const char*, 3> cols{"coherence", "topic", "emotion"};
    for (size_t i = 0; i < w.rows.size(); ++i)
      for (size_t j = 0; j < cols.size(); ++j) {
        std::string key = std::string("reward.") + kRowNames[i] + "." + cols[j];
        w.rows[i][j] = cfg.get_double(key, w.rows[i][j]);
      }
    w.check();
    return w;
  }
};

struct StageReward {
  std::string stage;     // et | md | tp | final
  bool present = true;
  double r1 = 0.0;
  double r2 = 0.0;
  double r3 = 0.0;
  double mixed = 0.0;
};

struct RewardBreakdown {
  std::vector<StageReward> stages;  // always the four rows, absent ones zeroed
  double total = 0.0;
};

// log of the target-class probability of a distribution
inline double class_logprob(const std::vector<double>& dist, int k) {
  if (k < 0 || k >= static_cast<int>(dist.size()))
    throw DataError("class_logprob: label out of range");
  double p = dist[static_cast<size_t>(k)];
  if (!(p > 0.0) || !std::isfinite(p))
    throw NumericError("class_logprob: target class has no probability mass");
  return std::log(p);
}

namespace detail {

inline std::vector<int> content_tokens(const std::vector<int>& tokens) {
  std::vector<int> out;
  for (int t : tokens)
    if (t >= kNumReserved) out.push_back(t);
  return out;
}

inline double store_seq_logprob(ParamStore& ps, const std::vector<int>& context,
                                const std::vector<int>& target) {
  Graph g(ps);
  return g.value_scalar(plain_logprob_expr(g, context, target));
}

}  // namespace detail

// r1: length-normalized two-way log-likelihood between post and reply part.
// Both stores carry the plain scorer layout (embed, enc.*, fwd.*); the
// backward one was trained on swapped pairs.
inline double coherence(ParamStore& fwd, ParamStore& bwd, const std::vector<int>& post,
                        const std::vector<int>& reply_part) {
  std::vector<int> x = detail::content_tokens(post);
  std::vector<int> y = detail::content_tokens(reply_part);
  if (y.empty()) throw DataError("coherence: empty reply part");
  if (x.empty()) throw DataError("coherence: empty post");
  double fwd_term = detail::store_seq_logprob(fwd, x, y) / static_cast<double>(y.size());
  double bwd_term = detail::store_seq_logprob(bwd, y, x) / static_cast<double>(x.size());
  return fwd_term + bwd_term;
}

// r2: log of the inferred topic mass pooled onto the planned label. The plan
// holds a dictionary label, not a raw topic id, so the mixture goes through
// the model's alignment first; an unaligned model serves labels only when
// they coincide with its own topics.
inline double topic_relevance(const LdaModel& lda, int k_tp, const std::vector<int>& reply) {
  int n_labels = lda.K;
  if (!lda.topic_to_label.empty()) {
    n_labels = 0;
    for (int l : lda.topic_to_label) n_labels = std::max(n_labels, l + 1);
  }
  if (k_tp < 0 || k_tp >= n_labels) throw DataError("topic_relevance: label out of range");
  return class_logprob(label_masses(lda, infer_topic(lda, reply).theta, n_labels), k_tp);
}

// r3: log of the classifier mass on the requested emotion
inline double emotion_relevance(const EmoClassifier& clf, int k_et,
                                const std::vector<int>& reply) {
  std::vector<int> y = detail::content_tokens(reply);
  if (y.empty()) throw DataError("emotion_relevance: empty reply");
  if (k_et < 0 || k_et >= clf.n_labels())
    throw DataError("emotion_relevance: label out of range");
  double lp = clf.log_prob_of(y, k_et);
  if (!std::isfinite(lp)) throw NumericError("emotion_relevance: non-finite score");
  return lp;
}

struct RewardScorers {
  ParamStore* fwd = nullptr;
  ParamStore* bwd = nullptr;
  const LdaModel* lda = nullptr;
  const EmoClassifier* clf = nullptr;

  void check() const {
    if (!fwd || !bwd || !lda || !clf) throw ContractError("RewardScorers: scorer not loaded");
  }
};

// Per-clause rewards over growing reply prefixes plus the edited final
// reply. Stages are semantic: for a topic-first reply the first clause feeds
// the tp row and the last one the et row. Orders with a single keyword have
// one clause stage; the other rows stay absent and contribute 0. With
// clause_only set, stages score their bare clause instead of the prefix.
inline RewardBreakdown stage_rewards(const std::vector<int>& post, const ReplyPlan& plan,
                                     const std::vector<ClauseTrace>& traces,
                                     const std::vector<int>& final_reply,
                                     const RewardScorers& sc, const RewardWeights& w,
                                     bool clause_only = false) {
  sc.check();
  w.check();
  if (plan.k_et < 0) throw DataError("stage_rewards: plan lacks an emotion label");
  if (plan.k_tp < 0) throw DataError("stage_rewards: plan lacks a topic label");
  assemble(plan, traces);  // validates trace shape against the plan

  // stage texts in semantic slots: 0 = et, 1 = md, 2 = tp
  auto body = [](const ClauseTrace& tr) {
    std::vector<int> t = tr.tokens;
    if (tr.right_to_left) std::reverse(t.begin(), t.end());
    return t;
  };
  std::array<std::vector<int>, 3> text;
  std::array<bool, 3> present{false, false, false};
  if (traces.size() == 3) {
    int kw1 = plan.order == Order::ET ? plan.kw_et : plan.kw_tp;
    int kw2 = plan.order == Order::ET ? plan.kw_tp : plan.kw_et;
    std::vector<int> c1 = body(traces[0]);
    c1.push_back(kw1);
    std::vector<int> c2 = body(traces[1]);
    c2.push_back(kw2);
    std::vector<int> c3 = body(traces[2]);
    std::vector<int> p1 = c1;
    std::vector<int> p2 = p1;
    p2.insert(p2.end(), c2.begin(), c2.end());
    std::vector<int> p3 = p2;
    p3.insert(p3.end(), c3.begin(), c3.end());
    int first = plan.order == Order::ET ? 0 : 2;
    int last = plan.order == Order::ET ? 2 : 0;
    text[static_cast<size_t>(first)] = clause_only ? c1 : p1;
    text[1] = clause_only ? c2 : p2;
    text[static_cast<size_t>(last)] = clause_only ? std::move(c3) : p3;
    present = {true, true, true};
    if (clause_only && text[static_cast<size_t>(last)].empty())
      present[static_cast<size_t>(last)] = false;
  } else {
    std::vector<int> whole = body(traces[0]);
    whole.push_back(plan.order == Order::E_ONLY ? plan.kw_et : plan.kw_tp);
    std::vector<int> right = body(traces[1]);
    whole.insert(whole.end(), right.begin(), right.end());
    int slot = plan.order == Order::E_ONLY ? 0 : 2;
    text[static_cast<size_t>(slot)] = std::move(whole);
    present[static_cast<size_t>(slot)] = true;
  }

  RewardBreakdown out;
  auto score = [&](int row, const std::vector<int>& part, bool is_present) {
    StageReward s;
    s.stage = RewardWeights::kRowNames[static_cast<size_t>(row)];
    s.present = is_present;
    if (is_present) {
      s.r1 = coherence(*sc.fwd, *sc.bwd, post, part);
      s.r2 = topic_relevance(*sc.lda, plan.k_tp, part);
      s.r3 = emotion_relevance(*sc.clf, plan.k_et, part);
      s.mixed = w.mix(row, s.r1, s.r2, s.r3);
    }
    out.stages.push_back(s);
    out.total += s.mixed;
  };
  for (int row = 0; row < 3; ++row)
    score(row, text[static_cast<size_t>(row)], present[static_cast<size_t>(row)]);
  score(3, final_reply, true);
  return out;
}

}  // namespace emogen
