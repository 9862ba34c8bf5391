#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "emogen/config.hpp"
#include "emogen/model.hpp"
#include "emogen/reward.hpp"

// Two training phases over one GenModel store: joint teacher-forced
// pretraining of every head, then policy-gradient fine-tuning where the
// sampled plan, clause tokens, and editor tokens form the action and the
// staged reward supplies the signal.

namespace emogen {

struct TrainConfig {
  int mle_epochs = 10;
  int rl_steps = 200;
  int batch_size = 8;
  double lr = 0.05;
  double baseline_decay = 0.95;
  double temperature = 1.0;
  uint64_t seed = 1;
  RewardWeights weights;
  double ppl_guard = 1.5;    // drift bound on perplexity relative to post-MLE
  int checkpoint_every = 0;  // RL steps between saves, 0 disables
  bool freeze_editor = false;

  void check() const {
    if (mle_epochs < 0 || rl_steps < 0) throw ContractError("TrainConfig: negative phase length");
    if (batch_size < 1) throw ContractError("TrainConfig: batch_size must be >= 1");
    if (!(lr > 0.0)) throw ContractError("TrainConfig: lr must be > 0");
    if (!(baseline_decay >= 0.0) || !(baseline_decay < 1.0))
      throw ContractError("TrainConfig: baseline_decay must lie in [0, 1)");
    if (!(temperature > 0.0)) throw ContractError("TrainConfig: temperature must be > 0");
    if (!(ppl_guard >= 1.0)) throw ContractError("TrainConfig: ppl_guard must be >= 1");
    if (checkpoint_every < 0) throw ContractError("TrainConfig: negative checkpoint interval");
    weights.check();
  }

  static TrainConfig from_config(const Config& cfg) {
    TrainConfig t;
    t.mle_epochs = cfg.get_int("train.mle_epochs", t.mle_epochs);
    t.rl_steps = cfg.get_int("train.rl_steps", t.rl_steps);
    t.batch_size = cfg.get_int("train.batch_size", t.batch_size);
    t.lr = cfg.get_double("train.lr", t.lr);
    t.baseline_decay = cfg.get_double("train.baseline_decay", t.baseline_decay);
    t.temperature = cfg.get_double("train.temperature", t.temperature);
    t.seed = static_cast<uint64_t>(cfg.get_int("train.seed", static_cast<int>(t.seed)));
    t.weights = RewardWeights::from_config(cfg);
    t.ppl_guard = cfg.get_double("train.ppl_guard", t.ppl_guard);
    t.checkpoint_every = cfg.get_int("train.checkpoint_every", t.checkpoint_every);
    t.freeze_editor = cfg.get_bool("train.freeze_editor", t.freeze_editor);
    t.check();
    return t;
  }
};

// Exponentially decayed running mean of batch rewards. The first observation
// initializes the mean outright; later ones use the incremental form
// b += (1-decay)(R-b), which leaves b bitwise fixed on a constant reward
// stream so zero advantages stay exactly zero.
struct Baseline {
  double decay = 0.95;
  double b = 0.0;
  bool initialized = false;

  void observe(double r) {
    if (!initialized) {
      b = r;
      initialized = true;
      return;
    }
    b += (1.0 - decay) * (r - b);
  }
};

// Teacher-forced joint log-likelihood of one gold pair through the shared
// encoder: the structure choice, both keyword picks, every clause decoder
// token, and the forward scorer. Keyword terms are dropped when the gold
// keyword does not belong to the pair's label dictionary, since the masked
// head assigns such picks no mass. The editor term lives apart because it
// needs a mined template.
inline Expr joint_mle_logprob_expr(Graph& g, const Pair& p, const ReplySkeleton& sk,
                                   const Dictionaries& dict, const AsyncDecConfig& dec) {
  Encoded enc = encode(g, p.post);
  std::vector<Expr> terms;
  terms.push_back(g.pick(structure_logprobs_expr(g, enc.pooled), static_cast<int>(sk.order)));
  if (sk.has_kw_et() && dict.emotion_label_of_word(sk.kw_et) == p.emotion_label)
    terms.push_back(
        g.pick(emotion_kw_logprobs_expr(g, enc.pooled, p.emotion_label, dict), sk.kw_et));
  if (sk.has_kw_tp() && dict.topic_label_of_word(sk.kw_tp) == p.topic_label)
    terms.push_back(g.pick(topic_kw_logprobs_expr(g, enc.pooled, p.topic_label, dict), sk.kw_tp));
  terms.push_back(clause_mle_logprob_expr(g, enc, sk, dec));
  terms.push_back(plain_logprob_expr(g, p.post, p.reply));
  return g.add_n(terms);
}

struct MleResult {
  GenModel model;
  std::vector<double> epoch_losses;  // joint NLL per gold reply token
  bool diverged = false;             // aborted; model is the last whole epoch
};

// Per-example SGD over the joint loss. Replies that cannot be skeletonized
// still train the forward scorer; replies with a mined template add the
// editor term under a fresh edit-vector draw each visit. A non-finite loss
// or gradient aborts the phase and rolls the store back one epoch.
// freeze_prefix exempts a parameter group from updates (a diagnostic seam).
inline MleResult pretrain_mle(const std::vector<Pair>& pairs, const Dictionaries& dict, int V,
                              const SeqDims& dims, DecoderMode mode, const TrainConfig& cfg,
                              const std::string& freeze_prefix = "") {
  cfg.check();
  if (pairs.empty()) throw DataError("pretrain_mle: no pairs");
  GenModel model(V, dict.n_emotions(), dict.n_topics(), dims, mode, cfg.seed);

  std::vector<std::optional<ReplySkeleton>> skels(pairs.size());
  for (size_t i = 0; i < pairs.size(); ++i) {
    try {
      skels[i] = skeletonize(pairs[i].reply, dict);
    } catch (const DataError&) {
    }
  }
  TemplateIndex index = build_template_index(pairs, dict);
  // pair position -> (gold body, template body) inside the index
  std::map<int, std::pair<const std::vector<int>*, const std::vector<int>*>> edits;
  for (const EditorExample& ex : mine_editor_pairs(index, dict))
    edits[index.source[static_cast<size_t>(ex.reply_index)]] = {
        &index.replies[static_cast<size_t>(ex.reply_index)],
        &index.replies[static_cast<size_t>(ex.template_index)]};

  std::vector<int> order(pairs.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  Rng order_rng(cfg.seed + 1);
  Rng zrng(cfg.seed + 2);

  std::vector<double> losses;
  bool diverged = false;
  ParamStore snapshot = model.ps;
  for (int epoch = 0; epoch < cfg.mle_epochs && !diverged; ++epoch) {
    snapshot = model.ps;
    for (size_t i = order.size(); i > 1; --i) {
      size_t j = order_rng.uniform_int(static_cast<int>(i));
      std::swap(order[i - 1], order[j]);
    }
    double loss_sum = 0.0;
    long token_sum = 0;
    for (int idx : order) {
      const Pair& p = pairs[static_cast<size_t>(idx)];
      // the tape guards every op, so a blown-up store surfaces as a throw
      try {
        Graph g(model.ps);
        Expr total;
        if (skels[static_cast<size_t>(idx)]) {
          total = joint_mle_logprob_expr(g, p, *skels[static_cast<size_t>(idx)], dict, model.dec);
        } else {
          total = plain_logprob_expr(g, p.post, p.reply);
        }
        auto it = edits.find(idx);
        if (it != edits.end()) {
          EditVector zv =
              edit_vector(model.ps, dict, *it->second.first, *it->second.second, model.edit, zrng);
          total = g.add(total, editor_mle_logprob_expr(g, *it->second.second, zv.z,
                                                       *it->second.first));
        }
        loss_sum += -g.value_scalar(total);
        token_sum += static_cast<long>(p.reply.size());
        model.ps.zero_grads();
        g.backward(total, -1.0 / static_cast<double>(p.reply.size()));
      } catch (const NumericError&) {
        diverged = true;
        break;
      }
      if (!model.ps.grads_finite()) {
        diverged = true;
        break;
      }
      model.ps.sgd_step(cfg.lr, freeze_prefix);
    }
    if (!diverged) losses.push_back(loss_sum / static_cast<double>(token_sum));
  }
  if (diverged) model.ps = snapshot;
  return {std::move(model), std::move(losses), diverged};
}

namespace detail {

// Redistributes a log-probability vector at a sampling temperature. The
// log-softmax is shift-invariant, so rescaling the logprobs matches
// rescaling the original logits; masked entries stay effectively masked.
inline Expr at_temperature(Graph& g, Expr logprobs, double temperature) {
  if (temperature == 1.0) return logprobs;
  return g.log_softmax(g.scale(logprobs, 1.0 / temperature));
}

// Draws an index from a log-probability vector. Zero-mass entries are
// skipped; rounding in the cumulative sum falls back to the last live one.
inline int sample_logprobs(const Tensor& lp, Rng& rng) {
  double u = rng.uniform01();
  double acc = 0.0;
  int pick = -1;
  for (size_t i = 0; i < lp.v.size(); ++i) {
    double p = std::exp(lp.v[i]);
    if (p <= 0.0) continue;
    acc += p;
    pick = static_cast<int>(i);
    if (u <= acc) break;
  }
  if (pick < 0) throw NumericError("sample_logprobs: no probability mass");
  return pick;
}

}  // namespace detail

// One sampled pass of the whole pipeline, kept alive inside a caller-owned
// graph so the sampled-choice log-probabilities stay differentiable.
struct RlRollout {
  ReplyPlan plan;
  std::vector<ClauseTrace> traces;
  std::vector<int> primary;
  std::vector<int> final_reply;
  bool edited = false;
  std::vector<Expr> action_terms;  // logprob of every sampled choice
  RewardBreakdown reward;
};

// Samples plan structure and keywords, clause tokens, and editor tokens at
// the configured temperature, collecting each choice's logprob expr. The
// topic label and the requested emotion are inputs, not actions, and the
// edit-vector draw is exploration noise outside the policy. With the editor
// frozen, editing runs greedily and contributes no action terms.
inline RlRollout sample_rollout(Graph& g, GenModel& m, const std::vector<int>& post, int k_et,
                                const LdaModel& lda, const Dictionaries& dict,
                                const TemplateIndex& index, const TrainConfig& cfg, Rng& rng) {
  RlRollout ro;
  ro.plan.k_et = k_et;
  ro.plan.k_tp = predict_post_label(lda, post, dict.n_topics());

  Encoded enc = encode(g, post);
  Expr slp = detail::at_temperature(g, structure_logprobs_expr(g, enc.pooled), cfg.temperature);
  int order_idx = detail::sample_logprobs(g.value(slp), rng);
  ro.plan.order = static_cast<Order>(order_idx);
  ro.action_terms.push_back(g.pick(slp, order_idx));
  if (ro.plan.wants_et()) {
    Expr lp = detail::at_temperature(g, emotion_kw_logprobs_expr(g, enc.pooled, k_et, dict),
                                     cfg.temperature);
    ro.plan.kw_et = detail::sample_logprobs(g.value(lp), rng);
    ro.action_terms.push_back(g.pick(lp, ro.plan.kw_et));
  }
  if (ro.plan.wants_tp()) {
    Expr lp = detail::at_temperature(g, topic_kw_logprobs_expr(g, enc.pooled, ro.plan.k_tp, dict),
                                     cfg.temperature);
    ro.plan.kw_tp = detail::sample_logprobs(g.value(lp), rng);
    ro.action_terms.push_back(g.pick(lp, ro.plan.kw_tp));
  }
  ro.plan.validate(dict);

  AsyncDecConfig dcfg = m.dec;
  dcfg.temperature = cfg.temperature;
  if (ro.plan.order == Order::ET || ro.plan.order == Order::TE) {
    ClauseTrace a = decode_clause_et(g, enc, ro.plan, dict, dcfg, &rng);
    ClauseTrace b = decode_clause_md(g, enc, ro.plan, a, dict, dcfg, &rng);
    ClauseTrace c = decode_clause_tp(g, enc, ro.plan, b, dict, dcfg, &rng);
    ro.traces = {std::move(a), std::move(b), std::move(c)};
  } else {
    SingleKeywordDecode sk = decode_single_keyword(g, enc, ro.plan, dict, dcfg, &rng);
    ro.traces = {std::move(sk.left), std::move(sk.right)};
  }
  for (const ClauseTrace& tr : ro.traces) {
    for (Expr e : tr.logprob_exprs) ro.action_terms.push_back(e);
    if (tr.end_logprob_expr.valid()) ro.action_terms.push_back(tr.end_logprob_expr);
  }
  ro.primary = assemble(ro.plan, ro.traces);
  ro.final_reply = ro.primary;

  if (index.size() > 0) {
    auto tmpl = pick_template(ro.primary, ro.plan, index);
    if (tmpl) {
      EditVector zv = edit_vector(m.ps, dict, ro.primary, tmpl->tokens, m.edit, rng);
      Rng* ed_rng = cfg.freeze_editor ? nullptr : &rng;
      EditTrace et = edit_decode(g, tmpl->tokens, zv.z, ro.plan, dict, m.edit, ed_rng,
                                 kMaxSeqLen, cfg.temperature);
      if (!cfg.freeze_editor)
        for (Expr e : et.logprob_exprs) ro.action_terms.push_back(e);
      ro.final_reply = et.tokens;
      ro.edited = true;
    }
  }
  return ro;
}

// Scores a finished rollout; the seam exists so invariance tests can swap in
// degenerate rewards.
using RewardFn = std::function<RewardBreakdown(const std::vector<int>& post, const RlRollout&)>;

inline RewardFn reward_from_scorers(const RewardScorers& sc, const RewardWeights& w) {
  return [sc, w](const std::vector<int>& post, const RlRollout& ro) {
    return stage_rewards(post, ro.plan, ro.traces, ro.final_reply, sc, w);
  };
}

struct RlStepStats {
  double mean_reward = 0.0;
  double r1 = 0.0, r2 = 0.0, r3 = 0.0;  // final-row components, batch mean
  bool skipped = false;                 // non-finite gradients, no update
};

// One REINFORCE step: sample a batch of rollouts on posts drawn from the
// pairs with uniformly random requested emotions, score them, and ascend
// sum logp(action) * (R - b) / batch. The baseline is initialized to the
// first batch mean, so a constant reward stream yields exactly zero
// advantages and bitwise-unchanged parameters from step one. Non-finite
// gradients skip the update and are flagged.
inline RlStepStats rl_step(GenModel& m, const std::vector<Pair>& pairs, const LdaModel& lda,
                           const Dictionaries& dict, const TemplateIndex& index,
                           const RewardFn& reward, const TrainConfig& cfg, Rng& rng,
                           Baseline& bl) {
  if (pairs.empty()) throw DataError("rl_step: no pairs");
  std::vector<std::unique_ptr<Graph>> graphs;
  std::vector<RlRollout> rollouts;
  RlStepStats stats;
  try {
    for (int b = 0; b < cfg.batch_size; ++b) {
      const Pair& p = pairs[rng.uniform_int(pairs.size())];
      int k_et = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(dict.n_emotions())));
      graphs.push_back(std::make_unique<Graph>(m.ps));
      rollouts.push_back(
          sample_rollout(*graphs.back(), m, p.post, k_et, lda, dict, index, cfg, rng));
      rollouts.back().reward = reward(p.post, rollouts.back());
      const StageReward& fin = rollouts.back().reward.stages.back();
      stats.r1 += fin.r1;
      stats.r2 += fin.r2;
      stats.r3 += fin.r3;
    }
  } catch (const NumericError&) {  // blown-up store or degenerate reward
    stats.skipped = true;
    m.ps.zero_grads();
    return stats;
  }
  double inv = 1.0 / static_cast<double>(cfg.batch_size);
  stats.r1 *= inv;
  stats.r2 *= inv;
  stats.r3 *= inv;
  // shifted mean: bitwise equal to the common value when rewards all agree,
  // which keeps constant-reward advantages exactly zero
  double dev = 0.0;
  for (const RlRollout& ro : rollouts) dev += ro.reward.total - rollouts[0].reward.total;
  stats.mean_reward = rollouts[0].reward.total + dev * inv;

  if (!bl.initialized) bl.observe(stats.mean_reward);
  double base = bl.b;
  m.ps.zero_grads();
  for (size_t i = 0; i < rollouts.size(); ++i) {
    double adv = rollouts[i].reward.total - base;
    if (adv == 0.0 || rollouts[i].action_terms.empty()) continue;
    graphs[i]->backward(graphs[i]->add_n(rollouts[i].action_terms), -adv * inv);
  }
  if (!m.ps.grads_finite()) {
    stats.skipped = true;
    m.ps.zero_grads();
  } else {
    m.ps.sgd_step(cfg.lr, cfg.freeze_editor ? "ed." : "");
  }
  bl.observe(stats.mean_reward);
  return stats;
}

struct RlCurveRow {
  int step = 0;
  double mean_reward = 0.0;
  double r1 = 0.0, r2 = 0.0, r3 = 0.0;
  double perplexity = 0.0;
};

struct RlResult {
  std::vector<RlCurveRow> curve;
  int steps_skipped = 0;
  double ppl_before = 0.0;
  double ppl_after = 0.0;
  bool ppl_guard_tripped = false;
  Baseline baseline;
};

// Policy-gradient loop against the full staged reward. The model's own
// store backs the forward coherence scorer (its head receives no policy
// gradient); the backward scorer, topic model, and classifier are frozen
// judges owned by the caller. Each step appends a CSV row and probes
// perplexity on a fixed slice of the pairs; the guard flag records drift
// past ppl_guard times the starting value.
inline RlResult train_rl(GenModel& m, const std::vector<Pair>& pairs, const LdaModel& lda,
                         const EmoClassifier& clf, ParamStore& bwd, const Dictionaries& dict,
                         const TrainConfig& cfg, const std::string& csv_path = "",
                         const std::string& ckpt_prefix = "") {
  cfg.check();
  if (pairs.empty()) throw DataError("train_rl: no pairs");
  TemplateIndex index = build_template_index(pairs, dict);
  std::vector<Pair> probe(pairs.begin(),
                          pairs.begin() + std::min<size_t>(pairs.size(), 30));
  RewardScorers sc{&m.ps, &bwd, &lda, &clf};
  RewardFn reward = reward_from_scorers(sc, cfg.weights);

  RlResult res;
  res.baseline.decay = cfg.baseline_decay;
  res.ppl_before = perplexity(forward_scorer(m), probe);

  std::ofstream csv;
  if (!csv_path.empty()) {
    csv.open(csv_path);
    if (!csv) throw DataError("train_rl: cannot write " + csv_path);
    csv << "step,mean_reward,r1,r2,r3,perplexity\n";
  }
  Rng rng(cfg.seed);
  for (int step = 0; step < cfg.rl_steps; ++step) {
    RlStepStats st = rl_step(m, pairs, lda, dict, index, reward, cfg, rng, res.baseline);
    if (st.skipped) ++res.steps_skipped;
    RlCurveRow row{step, st.mean_reward, st.r1, st.r2, st.r3,
                   perplexity(forward_scorer(m), probe)};
    res.curve.push_back(row);
    if (csv.is_open()) {
      char buf[160];
      std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g,%.17g,%.17g\n", row.step,
                    row.mean_reward, row.r1, row.r2, row.r3, row.perplexity);
      csv << buf;
    }
    if (!ckpt_prefix.empty() && cfg.checkpoint_every > 0 &&
        (step + 1) % cfg.checkpoint_every == 0)
      save_genmodel(ckpt_prefix + "-step" + std::to_string(step + 1), m);
  }
  res.ppl_after = res.curve.empty() ? res.ppl_before : res.curve.back().perplexity;
  res.ppl_guard_tripped = res.ppl_after > cfg.ppl_guard * res.ppl_before;
  return res;
}

}  // namespace emogen
