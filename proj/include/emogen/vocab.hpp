#pragma once

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "emogen/error.hpp"

namespace emogen {

// Reserved token ids. Every vocabulary starts with these four.
constexpr int kPad = 0;
constexpr int kGo = 1;
constexpr int kEos = 2;
constexpr int kUnk = 3;
constexpr int kNumReserved = 4;

inline const char* kReservedNames[kNumReserved] = {"<pad>", "<go>", "<eos>", "<unk>"};

class Vocab {
 public:
  Vocab() {
    for (int i = 0; i < kNumReserved; ++i) add(kReservedNames[i]);
  }

  int add(const std::string& token) {
    auto it = ids_.find(token);
    if (it != ids_.end()) return it->second;
    int id = static_cast<int>(tokens_.size());
    ids_[token] = id;
    tokens_.push_back(token);
    return id;
  }

  // UNK fallback; reserved names resolve to their reserved ids
  int id_of(const std::string& token) const {
    auto it = ids_.find(token);
    return it == ids_.end() ? kUnk : it->second;
  }

  bool has(const std::string& token) const { return ids_.count(token) != 0; }

  const std::string& token_of(int id) const {
    if (id < 0 || id >= static_cast<int>(tokens_.size()))
      throw DataError("token id out of range: " + std::to_string(id));
    return tokens_[static_cast<size_t>(id)];
  }

  int size() const { return static_cast<int>(tokens_.size()); }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write vocab file " + path);
    for (const auto& t : tokens_) out << t << "\n";
    out.close();
    if (!out) throw DataError("write failed for vocab file " + path);
  }

  static Vocab load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open vocab file " + path);
    Vocab v;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty()) continue;
      if (lineno <= kNumReserved) {
        if (line != kReservedNames[lineno - 1])
          throw DataError(path + ": line " + std::to_string(lineno) +
                          " must be the reserved token " + kReservedNames[lineno - 1]);
        continue;
      }
      if (v.has(line)) throw DataError(path + ": duplicate token " + line);
      v.add(line);
    }
    if (v.size() < kNumReserved + 1) throw DataError(path + ": vocab has no regular tokens");
    return v;
  }

 private:
  std::unordered_map<std::string, int> ids_;
  std::vector<std::string> tokens_;
};

inline std::string lowercase(std::string s) {
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

inline std::vector<std::string> split_ws(const std::string& text) {
  std::istringstream ss(text);
  std::vector<std::string> out;
  std::string w;
  while (ss >> w) out.push_back(lowercase(w));
  return out;
}

inline std::vector<int> tokenize(const std::string& text, const Vocab& vocab) {
  if (text.empty()) throw DataError("tokenize: empty input");
  std::vector<std::string> words = split_ws(text);
  if (words.empty()) throw DataError("tokenize: no tokens in input");
  std::vector<int> ids;
  ids.reserve(words.size());
  for (const auto& w : words) ids.push_back(vocab.id_of(w));
  return ids;
}

inline std::string detokenize(const std::vector<int>& ids, const Vocab& vocab) {
  std::string out;
  for (size_t i = 0; i < ids.size(); ++i) {
    if (i) out += ' ';
    out += vocab.token_of(ids[i]);
  }
  return out;
}

// Ordered emotion and topic label sets plus their keyword dictionaries.
// Word ids come from the shared Vocab; the emotion and topic word sets
// must not overlap.
class Dictionaries {
 public:
  std::vector<std::string> emotion_labels;
  std::vector<std::string> topic_labels;
  std::vector<std::vector<int>> emotion_words;  // per label, sorted ids
  std::vector<std::vector<int>> topic_words;

  int n_emotions() const { return static_cast<int>(emotion_labels.size()); }
  int n_topics() const { return static_cast<int>(topic_labels.size()); }

  int emotion_label_of_word(int id) const {
    auto it = emo_of_.find(id);
    return it == emo_of_.end() ? -1 : it->second;
  }
  int topic_label_of_word(int id) const {
    auto it = tp_of_.find(id);
    return it == tp_of_.end() ? -1 : it->second;
  }
  bool is_emotion_word(int id) const { return emo_of_.count(id) != 0; }
  bool is_topic_word(int id) const { return tp_of_.count(id) != 0; }

  int emotion_index(const std::string& label) const {
    for (int i = 0; i < n_emotions(); ++i)
      if (emotion_labels[i] == label) return i;
    return -1;
  }
  int topic_index(const std::string& label) const {
    for (int i = 0; i < n_topics(); ++i)
      if (topic_labels[i] == label) return i;
    return -1;
  }

  // rebuilds the reverse word -> label maps and checks the invariants
  void finalize(const Vocab& vocab) {
    if (n_emotions() < 2 || n_topics() < 2)
      throw DataError("dictionaries need at least two emotion and two topic labels");
    emo_of_.clear();
    tp_of_.clear();
    index_words(emotion_words, emo_of_, "emotion", vocab);
    index_words(topic_words, tp_of_, "topic", vocab);
    for (const auto& kv : emo_of_)
      if (tp_of_.count(kv.first))
        throw DataError("emotion and topic dictionaries share the word " +
                        vocab.token_of(kv.first));
  }

  static Dictionaries load(const std::string& dir, const Vocab& vocab);
  void save(const std::string& dir, const Vocab& vocab) const;

 private:
  void index_words(const std::vector<std::vector<int>>& sets,
                   std::unordered_map<int, int>& out, const char* kind, const Vocab& vocab) {
    if (sets.size() != (kind[0] == 'e' ? emotion_labels.size() : topic_labels.size()))
      throw DataError(std::string(kind) + " word sets do not match the label list");
    for (size_t li = 0; li < sets.size(); ++li) {
      if (sets[li].empty()) throw DataError(std::string(kind) + " label has an empty dictionary");
      for (int id : sets[li]) {
        if (id < kNumReserved || id >= vocab.size())
          throw DataError(std::string(kind) + " dictionary word not in vocab");
        if (!out.emplace(id, static_cast<int>(li)).second)
          throw DataError("word " + vocab.token_of(id) + " appears under two " + kind + " labels");
      }
    }
  }

  std::unordered_map<int, int> emo_of_;
  std::unordered_map<int, int> tp_of_;
};

namespace detail {

inline std::vector<std::string> read_word_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open dictionary file " + path);
  std::vector<std::string> words;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) words.push_back(lowercase(line));
  }
  return words;
}

// label files under dir, one word per line, filename (minus .txt) = label;
// labels ordered lexicographically for determinism
inline void load_label_dir(const std::string& dir, const Vocab& vocab,
                           std::vector<std::string>& labels,
                           std::vector<std::vector<int>>& word_sets) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw DataError("dictionary directory missing: " + dir);
  std::vector<std::string> names;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.path().extension() == ".txt") names.push_back(e.path().stem().string());
  }
  std::sort(names.begin(), names.end());
  for (const auto& label : names) {
    std::vector<int> ids;
    for (const auto& w : read_word_file(dir + "/" + label + ".txt")) ids.push_back(vocab.id_of(w));
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    labels.push_back(label);
    word_sets.push_back(std::move(ids));
  }
}

}  // namespace detail

inline Dictionaries Dictionaries::load(const std::string& dir, const Vocab& vocab) {
  Dictionaries d;
  detail::load_label_dir(dir + "/emotion", vocab, d.emotion_labels, d.emotion_words);
  detail::load_label_dir(dir + "/topic", vocab, d.topic_labels, d.topic_words);
  d.finalize(vocab);
  return d;
}

inline void Dictionaries::save(const std::string& dir, const Vocab& vocab) const {
  namespace fs = std::filesystem;
  fs::create_directories(dir + "/emotion");
  fs::create_directories(dir + "/topic");
  auto dump = [&](const std::string& sub, const std::vector<std::string>& labels,
                  const std::vector<std::vector<int>>& sets) {
    for (size_t i = 0; i < labels.size(); ++i) {
      std::ofstream out(dir + "/" + sub + "/" + labels[i] + ".txt", std::ios::binary);
      if (!out) throw DataError("cannot write dictionary file for label " + labels[i]);
      for (int id : sets[i]) out << vocab.token_of(id) << "\n";
    }
  };
  dump("emotion", emotion_labels, emotion_words);
  dump("topic", topic_labels, topic_words);
}

}  // namespace emogen
