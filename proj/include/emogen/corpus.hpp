#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "emogen/rng.hpp"
#include "emogen/vocab.hpp"

namespace emogen {

constexpr int kMaxSeqLen = 20;

struct Pair {
  std::vector<int> post;
  std::vector<int> reply;
  int emotion_label = -1;
  int topic_label = -1;
};

// Reply structure around its keyword anchors. ET carries both keywords,
// emotion first; TE is the mirror image. Single-keyword forms keep the
// segment before the keyword in the slot named after it and put the tail
// in the opposite slot, with y_md unused:
//   ET:     GO y_et kw_et y_md kw_tp y_tp EOS
//   TE:     GO y_tp kw_tp y_md kw_et y_et EOS
//   E_ONLY: GO y_et kw_et y_tp EOS
//   T_ONLY: GO y_tp kw_tp y_et EOS
enum class Order { ET, TE, E_ONLY, T_ONLY };

inline const char* order_name(Order o) {
  switch (o) {
    case Order::ET: return "ET";
    case Order::TE: return "TE";
    case Order::E_ONLY: return "E_ONLY";
    case Order::T_ONLY: return "T_ONLY";
  }
  return "?";
}

struct ReplySkeleton {
  Order order = Order::ET;
  int kw_et = -1;
  int kw_tp = -1;
  std::vector<int> y_et, y_md, y_tp;

  bool has_kw_et() const { return order != Order::T_ONLY; }
  bool has_kw_tp() const { return order != Order::E_ONLY; }

  void validate() const {
    if (has_kw_et() != (kw_et >= 0)) throw ContractError("skeleton: emotion keyword mismatch");
    if (has_kw_tp() != (kw_tp >= 0)) throw ContractError("skeleton: topic keyword mismatch");
    if ((order == Order::E_ONLY || order == Order::T_ONLY) && !y_md.empty())
      throw ContractError("skeleton: single-keyword order cannot carry a middle clause");
  }
};

// Full token sequence GO ... EOS for a skeleton.
inline std::vector<int> assemble(const ReplySkeleton& s) {
  s.validate();
  std::vector<int> out{kGo};
  auto app = [&](const std::vector<int>& seg) { out.insert(out.end(), seg.begin(), seg.end()); };
  switch (s.order) {
    case Order::ET:
      app(s.y_et);
      out.push_back(s.kw_et);
      app(s.y_md);
      out.push_back(s.kw_tp);
      app(s.y_tp);
      break;
    case Order::TE:
      app(s.y_tp);
      out.push_back(s.kw_tp);
      app(s.y_md);
      out.push_back(s.kw_et);
      app(s.y_et);
      break;
    case Order::E_ONLY:
      app(s.y_et);
      out.push_back(s.kw_et);
      app(s.y_tp);
      break;
    case Order::T_ONLY:
      app(s.y_tp);
      out.push_back(s.kw_tp);
      app(s.y_et);
      break;
  }
  out.push_back(kEos);
  return out;
}

// Body of the reply without GO/EOS framing.
inline std::vector<int> assemble_body(const ReplySkeleton& s) {
  std::vector<int> full = assemble(s);
  return std::vector<int>(full.begin() + 1, full.end() - 1);
}

// Splits a reply at its first emotion-dictionary word and first
// topic-dictionary word. Throws when the reply anchors on neither.
inline ReplySkeleton skeletonize(const std::vector<int>& reply, const Dictionaries& dict) {
  int ei = -1, ti = -1;
  for (int i = 0; i < static_cast<int>(reply.size()); ++i) {
    if (ei < 0 && dict.is_emotion_word(reply[i])) ei = i;
    if (ti < 0 && dict.is_topic_word(reply[i])) ti = i;
  }
  if (ei < 0 && ti < 0) throw DataError("reply contains no dictionary keyword");
  ReplySkeleton s;
  auto seg = [&](int b, int e) { return std::vector<int>(reply.begin() + b, reply.begin() + e); };
  int n = static_cast<int>(reply.size());
  if (ei >= 0 && ti >= 0) {
    s.kw_et = reply[ei];
    s.kw_tp = reply[ti];
    if (ei < ti) {
      s.order = Order::ET;
      s.y_et = seg(0, ei);
      s.y_md = seg(ei + 1, ti);
      s.y_tp = seg(ti + 1, n);
    } else {
      s.order = Order::TE;
      s.y_tp = seg(0, ti);
      s.y_md = seg(ti + 1, ei);
      s.y_et = seg(ei + 1, n);
    }
  } else if (ei >= 0) {
    s.order = Order::E_ONLY;
    s.kw_et = reply[ei];
    s.y_et = seg(0, ei);
    s.y_tp = seg(ei + 1, n);
  } else {
    s.order = Order::T_ONLY;
    s.kw_tp = reply[ti];
    s.y_tp = seg(0, ti);
    s.y_et = seg(ti + 1, n);
  }
  s.validate();
  return s;
}

// ---- JSONL corpus ----

struct RawPair {
  std::string post, reply, emotion, topic;
};

inline std::vector<RawPair> load_jsonl_raw(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open corpus file " + path);
  std::vector<RawPair> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const std::exception& e) {
      throw DataError(path + ":" + std::to_string(lineno) + ": bad JSON: " + e.what());
    }
    RawPair p;
    try {
      p.post = j.at("post").get<std::string>();
      p.reply = j.at("reply").get<std::string>();
      p.emotion = j.at("emotion").get<std::string>();
      p.topic = j.at("topic").get<std::string>();
    } catch (const std::exception& e) {
      throw DataError(path + ":" + std::to_string(lineno) + ": missing field: " + e.what());
    }
    out.push_back(std::move(p));
  }
  return out;
}

inline std::vector<Pair> load_jsonl(const std::string& path, const Vocab& vocab,
                                    const Dictionaries& dict) {
  std::vector<Pair> pairs;
  int lineno = 0;
  for (const auto& raw : load_jsonl_raw(path)) {
    ++lineno;
    Pair p;
    if (raw.post.empty() || raw.reply.empty())
      throw DataError(path + ": record " + std::to_string(lineno) + ": empty post or reply");
    p.post = tokenize(raw.post, vocab);
    p.reply = tokenize(raw.reply, vocab);
    if (static_cast<int>(p.post.size()) > kMaxSeqLen ||
        static_cast<int>(p.reply.size()) > kMaxSeqLen)
      throw DataError(path + ": record " + std::to_string(lineno) + ": sequence over " +
                      std::to_string(kMaxSeqLen) + " tokens");
    p.emotion_label = dict.emotion_index(raw.emotion);
    if (p.emotion_label < 0)
      throw DataError(path + ": record " + std::to_string(lineno) + ": unknown emotion label " +
                      raw.emotion);
    p.topic_label = dict.topic_index(raw.topic);
    if (p.topic_label < 0)
      throw DataError(path + ": record " + std::to_string(lineno) + ": unknown topic label " +
                      raw.topic);
    pairs.push_back(std::move(p));
  }
  return pairs;
}

inline void write_jsonl(const std::string& path, const std::vector<RawPair>& pairs) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write corpus file " + path);
  for (const auto& p : pairs) {
    nlohmann::ordered_json j;
    j["post"] = p.post;
    j["reply"] = p.reply;
    j["emotion"] = p.emotion;
    j["topic"] = p.topic;
    out << j.dump() << "\n";
  }
  out.close();
  if (!out) throw DataError("write failed for corpus file " + path);
}

// ---- synthetic corpus ----

// Word tables for the generator. Topic and emotion keyword dictionaries are
// 4 words per label; filler pools are 8 words per label and never overlap a
// dictionary, so keyword anchors always land where the grammar put them.
namespace synth {

inline const std::vector<std::string> kTopicLabels{"food",   "garden", "movies", "music",
                                                   "sports", "travel", "weather", "work"};

inline const std::vector<std::vector<std::string>> kTopicDict{
    {"pizza", "noodles", "curry", "bread"},
    {"roses", "tomatoes", "lawn", "seeds"},
    {"film", "cinema", "trailer", "sequel"},
    {"guitar", "piano", "concert", "melody"},
    {"soccer", "tennis", "marathon", "match"},
    {"journey", "flight", "beach", "mountains"},
    {"rain", "snow", "storm", "sunshine"},
    {"office", "meeting", "deadline", "project"},
};

inline const std::vector<std::vector<std::string>> kTopicFill{
    {"tasty", "kitchen", "dinner", "spicy", "warm", "plate", "oven", "sauce"},
    {"green", "soil", "watering", "weeds", "blooming", "shade", "petals", "compost"},
    {"screen", "popcorn", "actors", "plot", "scenes", "credits", "director", "subtitles"},
    {"loud", "tune", "rhythm", "band", "stage", "chords", "drums", "lyrics"},
    {"fast", "team", "coach", "score", "sweaty", "drill", "training", "stadium"},
    {"faraway", "packed", "tickets", "maps", "roads", "luggage", "hotels", "passport"},
    {"cloudy", "grey", "chilly", "damp", "skies", "forecast", "breeze", "puddles"},
    {"busy", "desk", "emails", "boss", "schedule", "reports", "coffee", "printer"},
};

inline const std::vector<std::string> kEmotionLabels{"happy", "sad",  "surprise", "angry",
                                                     "disgust", "like", "fear"};

inline const std::vector<std::vector<std::string>> kEmotionDict{
    {"glad", "joyful", "cheerful", "delighted"},
    {"gloomy", "heartbroken", "miserable", "sorrowful"},
    {"astonished", "stunned", "amazed", "startled"},
    {"furious", "outraged", "irritated", "livid"},
    {"gross", "revolting", "nasty", "sickening"},
    {"lovely", "charming", "admirable", "pleasing"},
    {"terrified", "anxious", "dreadful", "frightened"},
};

inline const std::vector<std::vector<std::string>> kEmotionFill{
    {"smiling", "laughing", "sunny", "bright", "upbeat", "grinning", "festive", "beaming"},
    {"crying", "sighing", "heavy", "blue", "tearful", "mourning", "weeping", "longing"},
    {"suddenly", "unexpected", "wow", "blinking", "gasping", "speechless", "jolted", "marveling"},
    {"fuming", "shouting", "gritted", "boiling", "snapping", "storming", "seething", "scowling"},
    {"cringing", "gagging", "yuck", "recoiling", "wrinkled", "avoiding", "repelled", "squirming"},
    {"fond", "drawn", "appreciating", "warmly", "keen", "attached", "cherishing", "smitten"},
    {"trembling", "shaking", "worried", "nervous", "haunted", "uneasy", "panicking", "wary"},
};

inline const std::vector<std::string> kNeutralFill{
    "honestly", "overall", "somehow", "mostly", "certainly", "frankly", "basically", "clearly",
    "perhaps", "truly", "slightly", "indeed", "rather", "almost", "usually", "simply"};

// Post templates; {tw} marks the topic keyword slot and {tf} a topic filler
// word. All templates share the same function-word skeleton and differ in a
// single leading marker, so the marker signals the reply structure to the
// planner while the corpus-wide co-occurrence structure stays topical
// (distinctive per-template word clusters would hand the topic model a
// spurious axis to split on).
inline const std::vector<std::string> kPostTemplates{
    "tell me about the {tw} {tf}",    "what about the {tw} {tf}",
    "lets chat about the {tw} {tf}",  "thinking about the {tw} {tf}",
    "ask me about the {tw} {tf}",     "wondering about the {tw} {tf}",
    "talking about the {tw} {tf}",    "curious about the {tw} {tf}",
};

inline Order template_order(int tmpl) {
  if (tmpl < 2) return Order::ET;
  if (tmpl < 4) return Order::TE;
  return Order::E_ONLY;
}

}  // namespace synth

struct SynthSpec {
  int n_pairs = 800;
  int n_topics = 8;
  int n_emotions = 7;
  uint64_t seed = 1;
};

struct SynthCorpus {
  std::vector<std::string> emotion_labels, topic_labels;
  std::vector<std::vector<std::string>> emotion_dict, topic_dict;
  std::vector<RawPair> pairs;
};

inline SynthCorpus gen_synthetic(const SynthSpec& spec) {
  using namespace synth;
  if (spec.n_pairs < 1) throw UsageError("gen_synthetic: n_pairs must be positive");
  if (spec.n_topics < 2 || spec.n_topics > static_cast<int>(kTopicLabels.size()))
    throw UsageError("gen_synthetic: n_topics must be in [2, " +
                     std::to_string(kTopicLabels.size()) + "]");
  if (spec.n_emotions < 2 || spec.n_emotions > static_cast<int>(kEmotionLabels.size()))
    throw UsageError("gen_synthetic: n_emotions must be in [2, " +
                     std::to_string(kEmotionLabels.size()) + "]");

  SynthCorpus out;
  out.topic_labels.assign(kTopicLabels.begin(), kTopicLabels.begin() + spec.n_topics);
  out.topic_dict.assign(kTopicDict.begin(), kTopicDict.begin() + spec.n_topics);
  out.emotion_labels.assign(kEmotionLabels.begin(), kEmotionLabels.begin() + spec.n_emotions);
  out.emotion_dict.assign(kEmotionDict.begin(), kEmotionDict.begin() + spec.n_emotions);

  Rng rng(spec.seed);
  auto pick = [&](const std::vector<std::string>& pool) {
    return pool[rng.uniform_int(pool.size())];
  };
  auto phrase = [&](const std::vector<std::string>& pool) {
    std::string s = pick(pool);
    if (rng.uniform01() < 0.5) s += " " + pick(pool);
    return s;
  };

  for (int i = 0; i < spec.n_pairs; ++i) {
    int t = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(spec.n_topics)));
    int e = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(spec.n_emotions)));
    int w = static_cast<int>(rng.uniform_int(4));
    int tmpl = static_cast<int>(rng.uniform_int(kPostTemplates.size()));

    const std::string& tw = kTopicDict[t][w];
    std::string post = kPostTemplates[tmpl];
    post.replace(post.find("{tw}"), 4, tw);
    post.replace(post.find("{tf}"), 4, pick(kTopicFill[t]));

    // the emotion keyword is a fixed function of (emotion, topic word slot)
    const std::string& ew = kEmotionDict[e][w];
    std::string reply;
    switch (template_order(tmpl)) {
      case Order::ET:
        reply = phrase(kEmotionFill[e]) + " " + ew + " " + phrase(kNeutralFill) + " " + tw + " " +
                phrase(kTopicFill[t]);
        break;
      case Order::TE:
        reply = phrase(kTopicFill[t]) + " " + tw + " " + phrase(kNeutralFill) + " " + ew + " " +
                phrase(kEmotionFill[e]);
        break;
      default:
        reply = phrase(kEmotionFill[e]) + " " + ew + " " + phrase(kTopicFill[t]);
        break;
    }
    out.pairs.push_back(RawPair{post, reply, kEmotionLabels[e], kTopicLabels[t]});
  }
  return out;
}

// Writes train/valid/test JSONL (interleaved 80/10/10 split) plus the
// dictionary directory under out_dir.
inline void write_synthetic(const SynthCorpus& c, const std::string& out_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  std::vector<RawPair> train, valid, test;
  for (size_t i = 0; i < c.pairs.size(); ++i) {
    int slot = static_cast<int>(i % 10);
    (slot == 8 ? valid : slot == 9 ? test : train).push_back(c.pairs[i]);
  }
  write_jsonl(out_dir + "/train.jsonl", train);
  write_jsonl(out_dir + "/valid.jsonl", valid);
  write_jsonl(out_dir + "/test.jsonl", test);

  auto dump = [&](const std::string& sub, const std::vector<std::string>& labels,
                  const std::vector<std::vector<std::string>>& sets) {
    fs::create_directories(out_dir + "/dict/" + sub);
    for (size_t i = 0; i < labels.size(); ++i) {
      std::ofstream f(out_dir + "/dict/" + sub + "/" + labels[i] + ".txt", std::ios::binary);
      for (const auto& w : sets[i]) f << w << "\n";
    }
  };
  dump("emotion", c.emotion_labels, c.emotion_dict);
  dump("topic", c.topic_labels, c.topic_dict);
}

// Vocabulary over corpus files and dictionary words: reserved ids first,
// then all distinct tokens in lexicographic order.
inline Vocab build_vocab(const std::vector<std::string>& jsonl_paths,
                         const std::string& dict_dir) {
  std::set<std::string> words;
  for (const auto& path : jsonl_paths)
    for (const auto& raw : load_jsonl_raw(path)) {
      for (const auto& w : split_ws(raw.post)) words.insert(w);
      for (const auto& w : split_ws(raw.reply)) words.insert(w);
    }
  namespace fs = std::filesystem;
  for (const char* sub : {"emotion", "topic"}) {
    std::string dir = dict_dir + "/" + sub;
    if (!fs::is_directory(dir)) throw DataError("dictionary directory missing: " + dir);
    for (const auto& e : fs::directory_iterator(dir))
      if (e.path().extension() == ".txt")
        for (const auto& w : detail::read_word_file(e.path().string())) words.insert(w);
  }
  Vocab v;
  for (const auto& w : words) v.add(w);
  return v;
}

}  // namespace emogen
