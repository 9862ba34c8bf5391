#pragma once

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <numbers>
#include <optional>
#include <set>
#include <vector>

#include "emogen/async_decoder.hpp"
#include "emogen/corpus.hpp"
#include "emogen/planner.hpp"
#include "emogen/rng.hpp"
#include "emogen/seq2seq.hpp"

namespace emogen {

// Step IV: retrieve a similar corpus reply, compute an edit vector from the
// word-level differences, perturb it, and re-decode the final reply
// conditioned on that template and the perturbed vector.

struct EditorConfig {
  double mu = 0.0;        // Gaussian center for the emotion coefficient
  double sigma = 2.0;
  double kappa = 20.0;    // vMF concentration for the direction noise
  double epsilon = 0.1;   // width of the norm interval
  double norm_cap = 10.0; // truncation of the edit vector norm

  void check() const {
    if (!(sigma > 0.0)) throw ContractError("EditorConfig: sigma must be > 0");
    if (!(epsilon > 0.0)) throw ContractError("EditorConfig: epsilon must be > 0");
    if (!(epsilon < norm_cap)) throw ContractError("EditorConfig: epsilon must be < norm_cap");
  }
};

namespace detail {

inline std::set<int> content_set(const std::vector<int>& tokens) {
  std::set<int> s;
  for (int t : tokens)
    if (t >= kNumReserved) s.insert(t);
  return s;
}

}  // namespace detail

// Jaccard distance over token sets, reserved ids excluded.
inline double jaccard(const std::vector<int>& a, const std::vector<int>& b) {
  std::set<int> sa = detail::content_set(a);
  std::set<int> sb = detail::content_set(b);
  if (sa.empty() || sb.empty()) throw DataError("jaccard: empty token set");
  int inter = 0;
  for (int t : sa) inter += sb.count(t) ? 1 : 0;
  int uni = static_cast<int>(sa.size() + sb.size()) - inter;
  return 1.0 - static_cast<double>(inter) / static_cast<double>(uni);
}

// Retrieval index over training replies. Replies without any dictionary
// keyword can never match a tier and are skipped at build time.
struct TemplateIndex {
  std::vector<std::vector<int>> replies;  // body tokens, no GO/EOS
  std::vector<ReplySkeleton> skeletons;
  std::vector<int> source;  // position in the originating pair list

  int size() const { return static_cast<int>(replies.size()); }
};

inline TemplateIndex build_template_index(const std::vector<Pair>& pairs,
                                          const Dictionaries& dict) {
  TemplateIndex idx;
  for (size_t i = 0; i < pairs.size(); ++i) {
    ReplySkeleton sk;
    try {
      sk = skeletonize(pairs[i].reply, dict);
    } catch (const DataError&) {
      continue;
    }
    idx.replies.push_back(pairs[i].reply);
    idx.skeletons.push_back(sk);
    idx.source.push_back(static_cast<int>(i));
  }
  return idx;
}

struct TemplateMatch {
  std::vector<int> tokens;  // the selected template reply body
  int index = -1;           // position inside the TemplateIndex
  int tier = 0;             // 1..4
  double d_j = 0.0;
};

// Four-level template priority: both keywords with the same order, both
// keywords with the other order, shared topic keyword, shared emotion
// keyword. Within the best non-empty tier the candidate with the smallest
// Jaccard distance to the primary reply wins; ties break toward the lowest
// index. No candidate in any tier means editing is skipped.
inline std::optional<TemplateMatch> pick_template(const std::vector<int>& primary_reply,
                                                  const ReplyPlan& plan,
                                                  const TemplateIndex& index,
                                                  int exclude = -1) {
  int best_tier = 5;
  double best_dj = 2.0;
  int best_i = -1;
  for (int i = 0; i < index.size(); ++i) {
    if (i == exclude) continue;
    const ReplySkeleton& sk = index.skeletons[static_cast<size_t>(i)];
    int tier;
    bool both = plan.wants_et() && plan.wants_tp() && sk.has_kw_et() && sk.has_kw_tp() &&
                sk.kw_et == plan.kw_et && sk.kw_tp == plan.kw_tp;
    if (both && sk.order == plan.order)
      tier = 1;
    else if (both)
      tier = 2;
    else if (plan.wants_tp() && sk.has_kw_tp() && sk.kw_tp == plan.kw_tp)
      tier = 3;
    else if (plan.wants_et() && sk.has_kw_et() && sk.kw_et == plan.kw_et)
      tier = 4;
    else
      continue;
    if (tier > best_tier) continue;
    double dj = jaccard(primary_reply, index.replies[static_cast<size_t>(i)]);
    if (tier < best_tier || dj < best_dj) {
      best_tier = tier;
      best_dj = dj;
      best_i = i;
    }
  }
  if (best_i < 0) return std::nullopt;
  TemplateMatch m;
  m.tokens = index.replies[static_cast<size_t>(best_i)];
  m.index = best_i;
  m.tier = best_tier;
  m.d_j = best_dj;
  return m;
}

// Gaussian weight by token distance from the emotion keyword.
inline double emotion_coefficient(int l_w, const EditorConfig& cfg) {
  if (l_w < 0) throw ContractError("emotion_coefficient: negative distance");
  double d = static_cast<double>(l_w) - cfg.mu;
  return std::exp(-d * d / (2.0 * cfg.sigma * cfg.sigma)) /
         (std::sqrt(2.0 * std::numbers::pi) * cfg.sigma);
}

struct EditVector {
  std::vector<double> f;      // insert half then delete half, 2 * embed dim
  double f_norm = 0.0;
  std::vector<double> f_dir;  // unit vector when f_norm > 0
  std::vector<double> z;      // perturbed vector fed to the editor decoder
};

namespace detail {

// Coefficient for each word of a sentence: Gaussian in the distance between
// the word's first occurrence and the sentence's first emotion keyword.
// Sentences lacking an emotion keyword weight every word by 1.
inline double word_coefficient(const std::vector<int>& sentence, int word,
                               const Dictionaries& dict, const EditorConfig& cfg) {
  int kw_pos = -1, w_pos = -1;
  for (int i = 0; i < static_cast<int>(sentence.size()); ++i) {
    if (kw_pos < 0 && dict.is_emotion_word(sentence[static_cast<size_t>(i)])) kw_pos = i;
    if (w_pos < 0 && sentence[static_cast<size_t>(i)] == word) w_pos = i;
  }
  if (w_pos < 0) throw ContractError("word_coefficient: word not in sentence");
  if (kw_pos < 0) return 1.0;
  return emotion_coefficient(std::abs(w_pos - kw_pos), cfg);
}

}  // namespace detail

// Difference between the primary reply y and the template y_prime, weighted
// by the emotion coefficient and perturbed for exploration. Insertions are
// words of y missing from y_prime and are weighted within y; deletions the
// reverse. Embeddings are read as plain values, so no gradient flows here.
inline EditVector edit_vector(const ParamStore& ps, const Dictionaries& dict,
                              const std::vector<int>& y, const std::vector<int>& y_prime,
                              const EditorConfig& cfg, Rng& rng) {
  cfg.check();
  const Tensor& emb = ps.value("embed");
  int d = emb.cols();
  EditVector out;
  out.f.assign(static_cast<size_t>(2 * d), 0.0);

  std::set<int> sy = detail::content_set(y);
  std::set<int> syp = detail::content_set(y_prime);
  auto accumulate = [&](const std::set<int>& from, const std::set<int>& minus,
                        const std::vector<int>& sentence, int offset) {
    for (int w : from) {
      if (minus.count(w)) continue;
      if (w >= emb.rows()) throw DataError("edit_vector: token outside the embedding table");
      double a = detail::word_coefficient(sentence, w, dict, cfg);
      for (int j = 0; j < d; ++j)
        out.f[static_cast<size_t>(offset + j)] += a * emb.at(w, j);
    }
  };
  accumulate(sy, syp, y, 0);        // inserted words, weighted within y
  accumulate(syp, sy, y_prime, d);  // deleted words, weighted within y_prime

  double sq = 0.0;
  for (double v : out.f) sq += v * v;
  out.f_norm = std::sqrt(sq);
  if (out.f_norm < 1e-12) {
    // nothing to edit: keep z at zero and skip the direction sample
    out.z.assign(out.f.size(), 0.0);
    return out;
  }
  out.f_dir.resize(out.f.size());
  for (size_t i = 0; i < out.f.size(); ++i) out.f_dir[i] = out.f[i] / out.f_norm;

  std::vector<double> z_dir = sample_vmf(out.f_dir, cfg.kappa, rng);
  double t = std::min(out.f_norm, cfg.norm_cap - cfg.epsilon);
  double z_norm = sample_uniform_interval(t, t + cfg.epsilon, rng);
  out.z.resize(out.f.size());
  for (size_t i = 0; i < out.f.size(); ++i) out.z[i] = z_dir[i] * z_norm;
  return out;
}

// Editor decoder parameters: one GRU fed with the previous token embedding,
// the edit vector, and the final encoder state of the template.
inline void add_editor_params(ParamStore& ps, int vocab_size, const SeqDims& d, Rng& rng) {
  int in = d.embed + 2 * d.embed + d.hidden;
  add_gru_params(ps, "ed", in, d.hidden, rng);
  ps.add("ed.out.W", {vocab_size, d.hidden});
  ps.add("ed.out.b", {vocab_size});
}

struct EditTrace {
  std::vector<int> tokens;  // full reply, GO .. EOS
  std::vector<double> logprobs;
  std::vector<Expr> logprob_exprs;
  bool truncated = false;  // budget ran out; missing anchors were forced
};

namespace detail {

inline Expr template_context(Graph& g, const std::vector<int>& tmpl) {
  return encode(g, tmpl).states.back();
}

}  // namespace detail

// Re-decodes the final reply from the template and the edit vector. Inputs
// at every step are concat(prev embedding, z, template context). Generation
// runs segment by segment with the same vocabulary discipline as the clause
// decoders, so the planned keywords always land in order; if the length
// budget runs out the missing anchors are appended outright and the trace is
// marked truncated (forced tokens carry no sampled logprob).
inline EditTrace edit_decode(Graph& g, const std::vector<int>& tmpl,
                             const std::vector<double>& z, const ReplyPlan& plan,
                             const Dictionaries& dict, const EditorConfig& cfg,
                             Rng* rng = nullptr, int max_len = kMaxSeqLen,
                             double temperature = 1.0) {
  cfg.check();
  plan.validate(dict);
  if (tmpl.empty()) throw DataError("edit_decode: empty template");
  ParamStore& ps = *g.store();
  int V = ps.value("ed.out.W").rows();
  int d_embed = ps.value("embed").cols();
  if (static_cast<int>(z.size()) != 2 * d_embed)
    throw ContractError("edit_decode: edit vector does not fit the conditioning slot");

  Expr ctx = detail::template_context(g, tmpl);
  Expr zin = g.input(Tensor({static_cast<int>(z.size())}, z));

  // anchors the final reply must visit, in reply order, EOS last
  std::vector<int> anchors;
  if (plan.order == Order::ET || plan.order == Order::E_ONLY) {
    if (plan.wants_et()) anchors.push_back(plan.kw_et);
    if (plan.wants_tp()) anchors.push_back(plan.kw_tp);
  } else {
    if (plan.wants_tp()) anchors.push_back(plan.kw_tp);
    if (plan.wants_et()) anchors.push_back(plan.kw_et);
  }
  anchors.push_back(kEos);

  EditTrace tr;
  tr.tokens.push_back(kGo);
  Expr h = zeros_vec(g, ps.value("ed.Uz").rows());
  int prev = kGo;
  size_t next_anchor = 0;
  for (int step = 0; step < max_len; ++step) {
    std::vector<Expr> in{g.row(g.param("embed"), prev), zin, ctx};
    h = gru_step(g, "ed", g.concat(in), h);
    Expr logits = out_logits(g, "ed", h);
    if (temperature != 1.0) logits = g.scale(logits, 1.0 / temperature);
    std::vector<char> support = detail::clause_support(V, dict, anchors[next_anchor]);
    Expr lp = g.masked_log_softmax(logits, support);
    const Tensor& p = g.value(lp);
    int tok;
    if (rng) {
      double u = rng->uniform01();
      double acc = 0.0;
      tok = -1;
      for (int v = 0; v < V; ++v) {
        if (!support[static_cast<size_t>(v)]) continue;
        acc += std::exp(p.v[static_cast<size_t>(v)]);
        tok = v;
        if (u <= acc) break;
      }
    } else {
      tok = -1;
      double best = -1e301;
      for (int v = 0; v < V; ++v)
        if (support[static_cast<size_t>(v)] && p.v[static_cast<size_t>(v)] > best) {
          best = p.v[static_cast<size_t>(v)];
          tok = v;
        }
    }
    tr.tokens.push_back(tok);
    tr.logprobs.push_back(p.v[static_cast<size_t>(tok)]);
    tr.logprob_exprs.push_back(g.pick(lp, tok));
    prev = tok;
    if (tok == anchors[next_anchor]) {
      ++next_anchor;
      if (next_anchor == anchors.size()) return tr;
    }
  }
  // out of budget: force the remaining anchors so the plan still holds
  tr.truncated = true;
  while (next_anchor < anchors.size()) tr.tokens.push_back(anchors[next_anchor++]);
  return tr;
}

// Teacher-forced log-likelihood of a gold reply body under the editor,
// conditioned on a template and a fixed edit vector. Full-vocabulary
// cross-entropy; the generation-time masks are a decoding constraint only.
inline Expr editor_mle_logprob_expr(Graph& g, const std::vector<int>& tmpl,
                                    const std::vector<double>& z,
                                    const std::vector<int>& gold_body) {
  if (tmpl.empty()) throw DataError("editor_mle_logprob_expr: empty template");
  if (gold_body.empty()) throw DataError("editor_mle_logprob_expr: empty target");
  ParamStore& ps = *g.store();
  int d_embed = ps.value("embed").cols();
  if (static_cast<int>(z.size()) != 2 * d_embed)
    throw ContractError("editor_mle_logprob_expr: edit vector does not fit the conditioning slot");
  Expr ctx = detail::template_context(g, tmpl);
  Expr zin = g.input(Tensor({static_cast<int>(z.size())}, z));
  Expr h = zeros_vec(g, ps.value("ed.Uz").rows());
  std::vector<Expr> terms;
  int prev = kGo;
  std::vector<int> seq = gold_body;
  seq.push_back(kEos);
  for (int tok : seq) {
    std::vector<Expr> in{g.row(g.param("embed"), prev), zin, ctx};
    h = gru_step(g, "ed", g.concat(in), h);
    terms.push_back(g.pick(g.log_softmax(out_logits(g, "ed", h)), tok));
    prev = tok;
  }
  return g.sum(g.concat(terms));
}

// Training examples for the editor: every indexed reply paired with its
// nearest corpus template under the retrieval priority.
struct EditorExample {
  int reply_index;     // into the TemplateIndex
  int template_index;  // into the TemplateIndex
};

inline std::vector<EditorExample> mine_editor_pairs(const TemplateIndex& index,
                                                    const Dictionaries& dict) {
  std::vector<EditorExample> out;
  for (int i = 0; i < index.size(); ++i) {
    const ReplySkeleton& sk = index.skeletons[static_cast<size_t>(i)];
    ReplyPlan plan;
    plan.order = sk.order;
    plan.kw_et = sk.kw_et;
    plan.kw_tp = sk.kw_tp;
    plan.k_et = sk.has_kw_et() ? dict.emotion_label_of_word(sk.kw_et) : -1;
    plan.k_tp = sk.has_kw_tp() ? dict.topic_label_of_word(sk.kw_tp) : -1;
    auto m = pick_template(index.replies[static_cast<size_t>(i)], plan, index, i);
    if (!m) continue;
    out.push_back({i, m->index});
  }
  return out;
}

}  // namespace emogen
