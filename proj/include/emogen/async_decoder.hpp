#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include <emogen/corpus.hpp>
#include <emogen/error.hpp>
#include <emogen/graph.hpp>
#include <emogen/planner.hpp>
#include <emogen/seq2seq.hpp>

// Asynchronous three-clause decoding. A reply with two keywords is produced
// as first-clause, boundary keyword, middle clause, boundary keyword, final
// clause; each clause decoder run ends when it emits its boundary token (the
// second keyword, or EOS for the final clause), and that token is not part
// of the clause body. Single-keyword replies run a right-to-left decoder
// from the keyword for the left segment and the final-clause decoder for
// the right segment.
//
// One clause decoder is shared across the three positions and told which
// position it is decoding through a 3-wide one-hot appended to its input
// (separate per-position decoders are available as an ablation). Decoding
// masks the specials and every dictionary word except the clause's own
// terminator, so a finished reply carries its planned keywords at the
// planned anchors and nowhere else.
//
// Parameters:
//   shared mode:   dec.* GRU (input d + hidden + 3), dec.out.W/b (zero-init)
//   separate mode: dec_et.* dec_md.* dec_tp.* (input d + hidden) + their
//                  own out heads (zero-init)
//   always:        bwd.* right-to-left GRU (input d + hidden), bwd.out.W/b

namespace emogen {

enum class ClauseId { Et, Md, Tp };
enum class DecoderMode { Shared, Separate };

inline const char* clause_name(ClauseId id) {
  switch (id) {
    case ClauseId::Et: return "et";
    case ClauseId::Md: return "md";
    case ClauseId::Tp: return "tp";
  }
  return "?";
}

struct AsyncDecConfig {
  DecoderMode mode = DecoderMode::Shared;
  int max_clause_len = 8;
  double temperature = 1.0;  // applied when sampling
};

inline void add_decoder_params(ParamStore& ps, int V, const SeqDims& d, DecoderMode mode,
                               Rng& rng) {
  if (mode == DecoderMode::Shared) {
    add_gru_params(ps, "dec", d.embed + d.hidden + 3, d.hidden, rng);
    ps.add("dec.out.W", {V, d.hidden});
    ps.add("dec.out.b", {V});
  } else {
    for (const char* pre : {"dec_et", "dec_md", "dec_tp"}) {
      add_gru_params(ps, pre, d.embed + d.hidden, d.hidden, rng);
      ps.add(std::string(pre) + ".out.W", {V, d.hidden});
      ps.add(std::string(pre) + ".out.b", {V});
    }
  }
  add_gru_params(ps, "bwd", d.embed + d.hidden, d.hidden, rng);
  ps.add("bwd.out.W", {V, d.hidden});
  ps.add("bwd.out.b", {V});
}

// One decoded clause. Tokens are the body only (terminator excluded) in
// generation order; right_to_left marks the single-keyword left segment,
// whose body must be reversed for assembly. logprobs[i] is the sampled (or
// greedy) log-probability of tokens[i] under the masked, temperature-scaled
// distribution the decoder actually drew from; end_logprob is the same for
// the terminator emission, zero when the clause was cut off by max_clause_len.
struct ClauseTrace {
  ClauseId id = ClauseId::Et;
  std::vector<int> tokens;
  std::vector<double> logprobs;
  std::vector<Expr> logprob_exprs;
  Expr final_state{};
  double end_logprob = 0.0;
  Expr end_logprob_expr{};
  bool truncated = false;
  bool right_to_left = false;

  void check() const {
    if (logprobs.size() != tokens.size())
      throw ContractError("ClauseTrace: logprobs out of step with tokens");
    for (double lp : logprobs)
      if (!(lp <= 0.0)) throw ContractError("ClauseTrace: positive logprob");
  }
};

namespace detail {

inline const char* stage_prefix(DecoderMode mode, ClauseId id) {
  if (mode == DecoderMode::Shared) return "dec";
  switch (id) {
    case ClauseId::Et: return "dec_et";
    case ClauseId::Md: return "dec_md";
    case ClauseId::Tp: return "dec_tp";
  }
  return "dec";
}

inline Expr stage_onehot(Graph& g, ClauseId id) {
  Tensor t({3});
  t.v[static_cast<size_t>(id)] = 1.0;
  return g.input(t);
}

// support for generation: no specials, no dictionary words, except the
// clause terminator (a keyword or EOS, or GO for the right-to-left decoder)
inline std::vector<char> clause_support(int V, const Dictionaries& dict, int terminator) {
  std::vector<char> s(static_cast<size_t>(V), 1);
  for (int v = 0; v < kNumReserved; ++v) s[static_cast<size_t>(v)] = 0;
  for (int v = kNumReserved; v < V; ++v)
    if (dict.is_emotion_word(v) || dict.is_topic_word(v)) s[static_cast<size_t>(v)] = 0;
  s[static_cast<size_t>(terminator)] = 1;
  return s;
}

struct SegmentSpec {
  ClauseId id;
  const char* gru;      // decoder prefix (clause decoder or bwd)
  bool with_stage;      // append the one-hot (shared clause decoder only)
  int start_prev;       // first input token
  int terminator;
  Expr h0;
};

inline ClauseTrace decode_segment(Graph& g, const Dictionaries& dict,
                                  const AsyncDecConfig& cfg, const SegmentSpec& spec,
                                  Expr pooled, Rng* rng) {
  int V = g.store()->value("embed").rows();
  std::vector<char> support = clause_support(V, dict, spec.terminator);
  ClauseTrace tr;
  tr.id = spec.id;
  tr.final_state = spec.h0;
  Expr h = spec.h0;
  int prev = spec.start_prev;
  for (int step = 0;; ++step) {
    if (step >= cfg.max_clause_len) {
      tr.truncated = true;
      break;
    }
    std::vector<Expr> in{g.row(g.param("embed"), prev), pooled};
    if (spec.with_stage) in.push_back(stage_onehot(g, spec.id));
    h = gru_step(g, spec.gru, g.concat(in), h);
    Expr logits = out_logits(g, spec.gru, h);
    if (cfg.temperature != 1.0) logits = g.scale(logits, 1.0 / cfg.temperature);
    Expr lp = g.masked_log_softmax(logits, support);
    const Tensor& t = g.value(lp);
    int w;
    if (rng) {
      double u = rng->uniform01();
      double acc = 0.0;
      w = -1;
      for (int v = 0; v < V; ++v) {
        if (!support[static_cast<size_t>(v)]) continue;
        acc += std::exp(t.v[static_cast<size_t>(v)]);
        if (u < acc) {
          w = v;
          break;
        }
      }
      if (w < 0) {  // numerical tail: fall back to the last supported token
        for (int v = V - 1; v >= 0; --v)
          if (support[static_cast<size_t>(v)]) {
            w = v;
            break;
          }
      }
    } else {
      w = -1;
      double best = -1e301;
      for (int v = 0; v < V; ++v)
        if (support[static_cast<size_t>(v)] && t.v[static_cast<size_t>(v)] > best) {
          best = t.v[static_cast<size_t>(v)];
          w = v;
        }
    }
    Expr pick = g.pick(lp, w);
    tr.final_state = h;
    if (w == spec.terminator) {
      tr.end_logprob = g.value_scalar(pick);
      tr.end_logprob_expr = pick;
      break;
    }
    tr.tokens.push_back(w);
    tr.logprobs.push_back(g.value_scalar(pick));
    tr.logprob_exprs.push_back(pick);
    prev = w;
  }
  tr.check();
  return tr;
}

inline int first_terminator(const ReplyPlan& plan) {
  return plan.order == Order::ET ? plan.kw_et : plan.kw_tp;
}

inline int second_terminator(const ReplyPlan& plan) {
  return plan.order == Order::ET ? plan.kw_tp : plan.kw_et;
}

}  // namespace detail

// First clause: GO up to (not including) the first planned keyword.
inline ClauseTrace decode_clause_et(Graph& g, const Encoded& enc, const ReplyPlan& plan,
                                    const Dictionaries& dict, const AsyncDecConfig& cfg,
                                    Rng* rng = nullptr) {
  if (plan.order != Order::ET && plan.order != Order::TE)
    throw ContractError("decode_clause_et: plan is not a two-keyword order");
  int hidden = g.store()->value("enc.Uz").rows();
  detail::SegmentSpec spec{ClauseId::Et, detail::stage_prefix(cfg.mode, ClauseId::Et),
                           cfg.mode == DecoderMode::Shared, kGo,
                           detail::first_terminator(plan), zeros_vec(g, hidden)};
  return detail::decode_segment(g, dict, cfg, spec, enc.pooled, rng);
}

// Middle clause: continues from the first clause's state, starting at the
// first keyword and ending at the second.
inline ClauseTrace decode_clause_md(Graph& g, const Encoded& enc, const ReplyPlan& plan,
                                    const ClauseTrace& prev, const Dictionaries& dict,
                                    const AsyncDecConfig& cfg, Rng* rng = nullptr) {
  if (plan.order != Order::ET && plan.order != Order::TE)
    throw ContractError("decode_clause_md: plan is not a two-keyword order");
  if (plan.kw_et < 0 || plan.kw_tp < 0)
    throw ContractError("decode_clause_md: plan lacks a keyword");
  detail::SegmentSpec spec{ClauseId::Md, detail::stage_prefix(cfg.mode, ClauseId::Md),
                           cfg.mode == DecoderMode::Shared, detail::first_terminator(plan),
                           detail::second_terminator(plan), prev.final_state};
  ClauseTrace tr = detail::decode_segment(g, dict, cfg, spec, enc.pooled, rng);
  tr.id = ClauseId::Md;
  return tr;
}

// Final clause: from the second keyword to EOS.
inline ClauseTrace decode_clause_tp(Graph& g, const Encoded& enc, const ReplyPlan& plan,
                                    const ClauseTrace& prev, const Dictionaries& dict,
                                    const AsyncDecConfig& cfg, Rng* rng = nullptr) {
  if (plan.order != Order::ET && plan.order != Order::TE)
    throw ContractError("decode_clause_tp: plan is not a two-keyword order");
  detail::SegmentSpec spec{ClauseId::Tp, detail::stage_prefix(cfg.mode, ClauseId::Tp),
                           cfg.mode == DecoderMode::Shared, detail::second_terminator(plan),
                           kEos, prev.final_state};
  return detail::decode_segment(g, dict, cfg, spec, enc.pooled, rng);
}

struct SingleKeywordDecode {
  std::vector<int> tokens;  // assembled reply, GO .. EOS
  ClauseTrace left;         // right-to-left segment, tokens in generation order
  ClauseTrace right;        // forward continuation
};

// Single-keyword orders: the right-to-left decoder grows the left segment
// from the keyword until it emits GO; the final-clause decoder is then run
// forced over the fixed prefix and continues to EOS.
inline SingleKeywordDecode decode_single_keyword(Graph& g, const Encoded& enc,
                                                 const ReplyPlan& plan,
                                                 const Dictionaries& dict,
                                                 const AsyncDecConfig& cfg,
                                                 Rng* rng = nullptr) {
  if (plan.order != Order::E_ONLY && plan.order != Order::T_ONLY)
    throw ContractError("decode_single_keyword: plan has two keywords");
  int kw = plan.order == Order::E_ONLY ? plan.kw_et : plan.kw_tp;
  if (kw < 0) throw ContractError("decode_single_keyword: plan lacks its keyword");
  int hidden = g.store()->value("enc.Uz").rows();

  SingleKeywordDecode out;
  detail::SegmentSpec back{ClauseId::Et, "bwd", false, kw, kGo, zeros_vec(g, hidden)};
  out.left = detail::decode_segment(g, dict, cfg, back, enc.pooled, rng);
  out.left.right_to_left = true;

  // fix the prefix, then let the final-clause decoder continue it
  std::vector<int> prefix{kGo};
  prefix.insert(prefix.end(), out.left.tokens.rbegin(), out.left.tokens.rend());
  Expr h = zeros_vec(g, hidden);
  const char* pre = detail::stage_prefix(cfg.mode, ClauseId::Tp);
  for (int tok : prefix) {
    std::vector<Expr> in{g.row(g.param("embed"), tok), enc.pooled};
    if (cfg.mode == DecoderMode::Shared) in.push_back(detail::stage_onehot(g, ClauseId::Tp));
    h = gru_step(g, pre, g.concat(in), h);
  }
  detail::SegmentSpec fwd{ClauseId::Tp, pre, cfg.mode == DecoderMode::Shared, kw, kEos, h};
  out.right = detail::decode_segment(g, dict, cfg, fwd, enc.pooled, rng);

  out.tokens = prefix;
  out.tokens.push_back(kw);
  out.tokens.insert(out.tokens.end(), out.right.tokens.begin(), out.right.tokens.end());
  out.tokens.push_back(kEos);
  return out;
}

// Combines clause bodies and keywords in plan order. Two-keyword orders
// expect traces [first, middle, final]; single-keyword orders expect
// [left (right-to-left), right].
inline std::vector<int> assemble(const ReplyPlan& plan,
                                 const std::vector<ClauseTrace>& traces) {
  auto body = [](const ClauseTrace& tr) {
    std::vector<int> t = tr.tokens;
    if (tr.right_to_left) std::reverse(t.begin(), t.end());
    return t;
  };
  std::vector<int> out{kGo};
  if (plan.order == Order::ET || plan.order == Order::TE) {
    if (traces.size() != 3 || traces[0].id != ClauseId::Et || traces[1].id != ClauseId::Md ||
        traces[2].id != ClauseId::Tp)
      throw ContractError("assemble: two-keyword plan needs et, md, tp traces");
    if (plan.kw_et < 0 || plan.kw_tp < 0)
      throw ContractError("assemble: plan lacks keywords for its order");
    auto a = body(traces[0]);
    auto b = body(traces[1]);
    auto c = body(traces[2]);
    out.insert(out.end(), a.begin(), a.end());
    out.push_back(detail::first_terminator(plan));
    out.insert(out.end(), b.begin(), b.end());
    out.push_back(detail::second_terminator(plan));
    out.insert(out.end(), c.begin(), c.end());
  } else {
    if (traces.size() != 2 || !traces[0].right_to_left)
      throw ContractError("assemble: single-keyword plan needs a left and a right trace");
    int kw = plan.order == Order::E_ONLY ? plan.kw_et : plan.kw_tp;
    if (kw < 0) throw ContractError("assemble: plan lacks its keyword");
    auto a = body(traces[0]);
    auto c = body(traces[1]);
    out.insert(out.end(), a.begin(), a.end());
    out.push_back(kw);
    out.insert(out.end(), c.begin(), c.end());
  }
  out.push_back(kEos);
  return out;
}

// Teacher-forced log-probability of a gold skeleton under the clause
// decoders (full-vocabulary softmax, no generation masks): every clause
// body token plus its terminator, and for single-keyword skeletons the
// reversed left segment under the right-to-left decoder plus the right
// segment under the final-clause decoder.
inline Expr clause_mle_logprob_expr(Graph& g, const Encoded& enc, const ReplySkeleton& sk,
                                    const AsyncDecConfig& cfg) {
  int hidden = g.store()->value("enc.Uz").rows();
  std::vector<Expr> terms;

  auto forced = [&](const char* gru, bool with_stage, ClauseId id, Expr h, int start,
                    const std::vector<int>& body, int terminator) {
    int prev = start;
    std::vector<int> seq = body;
    seq.push_back(terminator);
    for (int tok : seq) {
      std::vector<Expr> in{g.row(g.param("embed"), prev), enc.pooled};
      if (with_stage) in.push_back(detail::stage_onehot(g, id));
      h = gru_step(g, gru, g.concat(in), h);
      terms.push_back(g.pick(g.log_softmax(out_logits(g, gru, h)), tok));
      prev = tok;
    }
    return h;
  };
  bool shared = cfg.mode == DecoderMode::Shared;

  if (sk.order == Order::ET || sk.order == Order::TE) {
    const std::vector<int>& first = sk.order == Order::ET ? sk.y_et : sk.y_tp;
    const std::vector<int>& last = sk.order == Order::ET ? sk.y_tp : sk.y_et;
    int kw1 = sk.order == Order::ET ? sk.kw_et : sk.kw_tp;
    int kw2 = sk.order == Order::ET ? sk.kw_tp : sk.kw_et;
    Expr h = zeros_vec(g, hidden);
    h = forced(detail::stage_prefix(cfg.mode, ClauseId::Et), shared, ClauseId::Et, h, kGo,
               first, kw1);
    h = forced(detail::stage_prefix(cfg.mode, ClauseId::Md), shared, ClauseId::Md, h, kw1,
               sk.y_md, kw2);
    forced(detail::stage_prefix(cfg.mode, ClauseId::Tp), shared, ClauseId::Tp, h, kw2, last,
           kEos);
  } else {
    const std::vector<int>& left = sk.order == Order::E_ONLY ? sk.y_et : sk.y_tp;
    const std::vector<int>& right = sk.order == Order::E_ONLY ? sk.y_tp : sk.y_et;
    int kw = sk.order == Order::E_ONLY ? sk.kw_et : sk.kw_tp;
    std::vector<int> rev(left.rbegin(), left.rend());
    forced("bwd", false, ClauseId::Et, zeros_vec(g, hidden), kw, rev, kGo);

    // the final-clause decoder reads the fixed prefix, then is scored on
    // the right segment
    const char* pre = detail::stage_prefix(cfg.mode, ClauseId::Tp);
    Expr h = zeros_vec(g, hidden);
    std::vector<int> prefix{kGo};
    prefix.insert(prefix.end(), left.begin(), left.end());
    for (int tok : prefix) {
      std::vector<Expr> in{g.row(g.param("embed"), tok), enc.pooled};
      if (shared) in.push_back(detail::stage_onehot(g, ClauseId::Tp));
      h = gru_step(g, pre, g.concat(in), h);
    }
    forced(pre, shared, ClauseId::Tp, h, kw, right, kEos);
  }
  return g.add_n(terms);
}

}  // namespace emogen
