#pragma once

#include <cmath>
#include <string>
#include <vector>

#include <emogen/corpus.hpp>
#include <emogen/error.hpp>
#include <emogen/graph.hpp>
#include <emogen/rng.hpp>
#include <emogen/tensor.hpp>

// GRU sequence substrate: the shared encoder, conditioned decoder steps, and
// the plain encoder-decoder used for coherence scoring and perplexity.
//
// Naming convention inside a ParamStore:
//   embed        token embedding table [V, d]
//   enc.*        encoder GRU (input d)
//   fwd.*        plain decoder GRU (input d + hidden; conditioned on the
//                pooled encoder state by concatenation at every step)
//   fwd.out.W/b  vocab projection, zero-initialized so an untrained model
//                scores every token uniformly
// Other modules add their own prefixes (plan.*, dec.*, bwd.*, ed.*) against
// the same embed/enc entries; sharing is by name identity in one store.

namespace emogen {

struct SeqDims {
  int embed = 16;
  int hidden = 32;
};

inline void add_gru_params(ParamStore& ps, const std::string& prefix, int in,
                           int hidden, Rng& rng, double scale = 0.2) {
  ps.add_uniform(prefix + ".Wz", {hidden, in}, scale, rng);
  ps.add_uniform(prefix + ".Uz", {hidden, hidden}, scale, rng);
  ps.add(prefix + ".bz", {hidden});
  ps.add_uniform(prefix + ".Wr", {hidden, in}, scale, rng);
  ps.add_uniform(prefix + ".Ur", {hidden, hidden}, scale, rng);
  ps.add(prefix + ".br", {hidden});
  ps.add_uniform(prefix + ".Wn", {hidden, in}, scale, rng);
  ps.add_uniform(prefix + ".Un", {hidden, hidden}, scale, rng);
  ps.add(prefix + ".bn", {hidden});
}

// z = sigmoid(Wz x + Uz h + bz)
// r = sigmoid(Wr x + Ur h + br)
// n = tanh(Wn x + Un (r*h) + bn)
// h' = (1-z)*n + z*h
inline Expr gru_step(Graph& g, const std::string& prefix, Expr x, Expr h) {
  auto P = [&](const char* n) { return g.param(prefix + "." + n); };
  Expr z = g.sigmoid(g.add(g.add(g.matmul(P("Wz"), x), g.matmul(P("Uz"), h)), P("bz")));
  Expr r = g.sigmoid(g.add(g.add(g.matmul(P("Wr"), x), g.matmul(P("Ur"), h)), P("br")));
  Expr n = g.tanh(g.add(g.add(g.matmul(P("Wn"), x), g.matmul(P("Un"), g.mul(r, h))), P("bn")));
  return g.add(g.sub(n, g.mul(z, n)), g.mul(z, h));
}

inline Expr zeros_vec(Graph& g, int n) { return g.input(Tensor({n})); }

struct Encoded {
  std::vector<Expr> states;  // h_1..h_T
  Expr pooled;               // elementwise sum of the states
};

// Runs the shared encoder over a token sequence. The pooled vector is the
// exact sum of per-step hidden states, so a one-token input pools to its
// own state.
inline Encoded encode(Graph& g, const std::vector<int>& tokens) {
  if (tokens.empty()) throw DataError("encode: empty token sequence");
  const ParamStore& ps = *g.store();
  int V = ps.value("embed").rows();
  int hidden = ps.value("enc.Uz").rows();
  Expr E = g.param("embed");
  Expr h = zeros_vec(g, hidden);
  Encoded out;
  for (int id : tokens) {
    if (id < 0 || id >= V)
      throw DataError("encode: token id " + std::to_string(id) + " out of range");
    h = gru_step(g, "enc", g.row(E, id), h);
    out.states.push_back(h);
  }
  out.pooled = g.add_n(out.states);
  return out;
}

// One decoder step: the embedded previous token is concatenated with the
// conditioning vectors and fed through the GRU under `prefix`.
inline Expr dec_step(Graph& g, const std::string& prefix, int prev_token,
                     const std::vector<Expr>& cond, Expr h) {
  std::vector<Expr> parts{g.row(g.param("embed"), prev_token)};
  parts.insert(parts.end(), cond.begin(), cond.end());
  return gru_step(g, prefix, g.concat(parts), h);
}

inline Expr out_logits(Graph& g, const std::string& prefix, Expr state) {
  return g.add(g.matmul(g.param(prefix + ".out.W"), state), g.param(prefix + ".out.b"));
}

// Teacher-forced log p(target | context) under the plain decoder: the sum of
// stepwise log-softmax picks over exactly the target tokens (first step is
// fed the GO marker; no terminator term). Always <= 0.
inline Expr plain_logprob_expr(Graph& g, const std::vector<int>& context,
                               const std::vector<int>& target) {
  if (target.empty()) throw DataError("plain_logprob_expr: empty target");
  int V = g.store()->value("embed").rows();
  int hidden = g.store()->value("enc.Uz").rows();
  Encoded enc = encode(g, context);
  Expr h = zeros_vec(g, hidden);
  std::vector<Expr> terms;
  int prev = kGo;
  for (int id : target) {
    if (id < 0 || id >= V)
      throw DataError("plain_logprob_expr: token id out of range");
    h = dec_step(g, "fwd", prev, {enc.pooled}, h);
    terms.push_back(g.pick(g.log_softmax(out_logits(g, "fwd", h)), id));
    prev = id;
  }
  return g.add_n(terms);
}

// Plain encoder-decoder over post->reply (or any context->target pairs).
// Used directly as the forward coherence scorer and, trained with sources
// and targets swapped, as the backward scorer.
struct PlainSeq2Seq {
  ParamStore params;
  int vocab_size = 0;
  SeqDims dims;

  PlainSeq2Seq(int V, const SeqDims& d, uint64_t seed) : vocab_size(V), dims(d) {
    Rng rng(seed);
    params.set_rng_seed(seed);
    params.add_uniform("embed", {V, d.embed}, 0.1, rng);
    add_gru_params(params, "enc", d.embed, d.hidden, rng);
    add_gru_params(params, "fwd", d.embed + d.hidden, d.hidden, rng);
    params.add("fwd.out.W", {V, d.hidden});
    params.add("fwd.out.b", {V});
  }

  explicit PlainSeq2Seq(ParamStore ps) : params(std::move(ps)) {
    const Tensor& emb = params.value("embed");
    vocab_size = emb.rows();
    dims.embed = emb.cols();
    dims.hidden = params.value("enc.Uz").rows();
  }
};

inline double seq_logprob(const PlainSeq2Seq& m, const std::vector<int>& context,
                          const std::vector<int>& seq) {
  Graph g(const_cast<ParamStore&>(m.params));
  return g.value_scalar(plain_logprob_expr(g, context, seq));
}

inline std::vector<Pair> swapped_pairs(const std::vector<Pair>& pairs) {
  std::vector<Pair> out = pairs;
  for (Pair& p : out) std::swap(p.post, p.reply);
  return out;
}

// exp(- total logprob / total token count) over post->reply pairs.
inline double perplexity(const PlainSeq2Seq& m, const std::vector<Pair>& pairs) {
  if (pairs.empty()) throw DataError("perplexity: empty eval set");
  double total_lp = 0.0;
  long total_tokens = 0;
  for (const Pair& p : pairs) {
    total_lp += seq_logprob(m, p.post, p.reply);
    total_tokens += static_cast<long>(p.reply.size());
  }
  return std::exp(-total_lp / static_cast<double>(total_tokens));
}

struct Seq2SeqTrainResult {
  PlainSeq2Seq model;
  std::vector<double> epoch_losses;  // mean per-token negative logprob
};

// Per-example SGD on teacher-forced cross-entropy. swap_direction trains
// reply->post with the same architecture.
inline Seq2SeqTrainResult train_plain_seq2seq(const std::vector<Pair>& pairs, int V,
                                              const SeqDims& dims, int epochs, double lr,
                                              uint64_t seed, bool swap_direction = false) {
  if (pairs.empty()) throw DataError("train_plain_seq2seq: no pairs");
  Seq2SeqTrainResult res{PlainSeq2Seq(V, dims, seed), {}};
  std::vector<int> order(pairs.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  Rng order_rng(seed + 1);
  for (int epoch = 0; epoch < epochs; ++epoch) {
    for (size_t i = order.size(); i > 1; --i) {
      size_t j = order_rng.uniform_int(static_cast<int>(i));
      std::swap(order[i - 1], order[j]);
    }
    double loss_sum = 0.0;
    long token_sum = 0;
    for (int idx : order) {
      const Pair& p = pairs[static_cast<size_t>(idx)];
      const std::vector<int>& ctx = swap_direction ? p.reply : p.post;
      const std::vector<int>& tgt = swap_direction ? p.post : p.reply;
      Graph g(res.model.params);
      Expr lp = plain_logprob_expr(g, ctx, tgt);
      loss_sum += -g.value_scalar(lp);
      token_sum += static_cast<long>(tgt.size());
      res.model.params.zero_grads();
      g.backward(lp, -1.0 / static_cast<double>(tgt.size()));
      if (!res.model.params.grads_finite())
        throw NumericError("train_plain_seq2seq: non-finite gradient");
      res.model.params.sgd_step(lr);
    }
    res.epoch_losses.push_back(loss_sum / static_cast<double>(token_sum));
  }
  return res;
}

inline Seq2SeqTrainResult train_backward_model(const std::vector<Pair>& pairs, int V,
                                               const SeqDims& dims, int epochs, double lr,
                                               uint64_t seed) {
  return train_plain_seq2seq(pairs, V, dims, epochs, lr, seed, /*swap_direction=*/true);
}

}  // namespace emogen
