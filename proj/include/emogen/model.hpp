#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "emogen/async_decoder.hpp"
#include "emogen/checkpoint.hpp"
#include "emogen/editor.hpp"
#include "emogen/planner.hpp"

namespace emogen {

// The whole generator lives in one parameter store so the encoder is shared
// by every head that reads it:
//   embed, enc.*          token embedding and encoder
//   plan.*                structure and keyword heads
//   dec.* / dec_*.*       clause decoders (mode-dependent), bwd.* the
//   bwd.*                 right-to-left half of single-keyword replies
//   ed.*                  editing decoder
//   fwd.*                 forward coherence scorer, also the perplexity model
// The backward coherence scorer is a separately trained checkpoint: it reads
// replies as context, so sharing this encoder would fight the generator.
struct GenModel {
  ParamStore ps;
  SeqDims dims;
  int vocab_size = 0;
  int n_emotions = 0;
  int n_topics = 0;
  AsyncDecConfig dec;
  EditorConfig edit;

  GenModel(int V, int emotions, int topics, const SeqDims& d, DecoderMode mode,
           uint64_t seed)
      : dims(d), vocab_size(V), n_emotions(emotions), n_topics(topics) {
    if (V <= kNumReserved) throw DataError("GenModel: vocabulary too small");
    dec.mode = mode;
    ps.set_rng_seed(seed);
    Rng rng(seed);
    ps.add_uniform("embed", {V, d.embed}, 0.1, rng);
    add_gru_params(ps, "enc", d.embed, d.hidden, rng);
    add_planner_params(ps, V, emotions, topics, d.hidden, rng);
    add_decoder_params(ps, V, d, mode, rng);
    add_editor_params(ps, V, d, rng);
    add_gru_params(ps, "fwd", d.embed + d.hidden, d.hidden, rng);
    ps.add("fwd.out.W", {V, d.hidden});
    ps.add("fwd.out.b", {V});
  }

  // Adopts a loaded store; shape metadata is re-read from the tensors.
  explicit GenModel(ParamStore store) : ps(std::move(store)) {
    if (!ps.has("embed") || !ps.has("enc.Uz") || !ps.has("plan.emb_et") ||
        !ps.has("plan.emb_tp") || !ps.has("ed.Wz") || !ps.has("fwd.out.W"))
      throw DataError("GenModel: store lacks generator parameters");
    const Tensor& emb = ps.value("embed");
    vocab_size = emb.rows();
    dims.embed = emb.cols();
    dims.hidden = ps.value("enc.Uz").rows();
    n_emotions = ps.value("plan.emb_et").rows();
    n_topics = ps.value("plan.emb_tp").rows();
    if (ps.has("dec.Wz"))
      dec.mode = DecoderMode::Shared;
    else if (ps.has("dec_et.Wz"))
      dec.mode = DecoderMode::Separate;
    else
      throw DataError("GenModel: store has no clause decoder");
  }
};

inline void save_genmodel(const std::string& prefix, const GenModel& m) {
  ordered_json meta;
  meta["kind"] = "genmodel";
  meta["mode"] = m.dec.mode == DecoderMode::Shared ? "shared" : "separate";
  meta["n_emotions"] = m.n_emotions;
  meta["n_topics"] = m.n_topics;
  save_checkpoint(prefix, m.ps, meta);
}

inline GenModel load_genmodel(const std::string& prefix) {
  ordered_json meta;
  ParamStore store = load_checkpoint(prefix, &meta);
  if (meta.value("kind", "") != "genmodel") throw DataError("checkpoint is not a generator");
  GenModel m(std::move(store));
  if (meta.value("n_emotions", m.n_emotions) != m.n_emotions ||
      meta.value("n_topics", m.n_topics) != m.n_topics)
    throw DataError("genmodel: label counts disagree with the stored tensors");
  return m;
}

// The in-store forward scorer as a standalone sequence model (copies params;
// extra entries ride along unused).
inline PlainSeq2Seq forward_scorer(const GenModel& m) { return PlainSeq2Seq(m.ps); }

struct GenerationResult {
  ReplyPlan plan;
  std::vector<ClauseTrace> traces;  // et/md/tp, or left/right for one keyword
  std::vector<int> primary;         // assembled reply, GO .. EOS
  std::optional<TemplateMatch> tmpl;
  EditVector zvec;
  EditTrace edit;
  std::vector<int> final_reply;  // primary when editing was off or found nothing
  bool edited = false;
};

// One pass through the pipeline: plan, decode clauses, assemble, then edit
// against the closest template. rng always feeds the edit-vector draw; token
// choices are greedy unless sample is set, in which case they are drawn at
// the decoder config's temperature from the same rng.
inline GenerationResult generate_reply(GenModel& m, const std::vector<int>& post, int k_et,
                                       const LdaModel& lda, const Dictionaries& dict,
                                       const TemplateIndex& index, Rng& rng,
                                       bool no_edit = false, bool sample = false) {
  GenerationResult out;
  out.plan = make_plan(m.ps, post, k_et, lda, dict);
  Graph g(m.ps);
  Encoded enc = encode(g, post);
  Rng* trng = sample ? &rng : nullptr;
  if (out.plan.order == Order::ET || out.plan.order == Order::TE) {
    ClauseTrace a = decode_clause_et(g, enc, out.plan, dict, m.dec, trng);
    ClauseTrace b = decode_clause_md(g, enc, out.plan, a, dict, m.dec, trng);
    ClauseTrace c = decode_clause_tp(g, enc, out.plan, b, dict, m.dec, trng);
    out.traces = {std::move(a), std::move(b), std::move(c)};
    out.primary = assemble(out.plan, out.traces);
  } else {
    SingleKeywordDecode sk = decode_single_keyword(g, enc, out.plan, dict, m.dec, trng);
    out.primary = std::move(sk.tokens);
    out.traces = {std::move(sk.left), std::move(sk.right)};
  }

  out.final_reply = out.primary;
  if (!no_edit && index.size() > 0) {
    out.tmpl = pick_template(out.primary, out.plan, index);
    if (out.tmpl) {
      out.zvec = edit_vector(m.ps, dict, out.primary, out.tmpl->tokens, m.edit, rng);
      out.edit = edit_decode(g, out.tmpl->tokens, out.zvec.z, out.plan, dict, m.edit, trng,
                             kMaxSeqLen, m.dec.temperature);
      out.final_reply = out.edit.tokens;
      out.edited = true;
    }
  }
  return out;
}

}  // namespace emogen
