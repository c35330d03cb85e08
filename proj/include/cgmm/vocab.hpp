#pragma once

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "cgmm/common.hpp"

namespace cgmm {

/// Closed vocabulary with reserved pad/unk slots. The dataset ships its
/// vocabulary, so model and generator always agree on ids.
struct Vocabulary {
  std::vector<std::string> id_to_word;
  std::unordered_map<std::string, int> word_to_id;
  int pad_id = 0;
  int unk_id = 1;

  int size() const { return static_cast<int>(id_to_word.size()); }

  static Vocabulary from_words(std::vector<std::string> words) {
    Vocabulary v;
    v.id_to_word = std::move(words);
    for (int i = 0; i < v.size(); ++i) {
      if (!v.word_to_id.emplace(v.id_to_word[static_cast<std::size_t>(i)], i).second) {
        throw validation_error("duplicate vocabulary word: " + v.id_to_word[static_cast<std::size_t>(i)]);
      }
    }
    if (v.size() < 2) throw validation_error("vocabulary must at least hold pad and unk");
    return v;
  }

  nlohmann::json to_json() const {
    return {{"pad_id", pad_id}, {"unk_id", unk_id}, {"id_to_word", id_to_word}};
  }

  static Vocabulary from_json(const nlohmann::json& j) {
    Vocabulary v = from_words(j.at("id_to_word").get<std::vector<std::string>>());
    v.pad_id = j.at("pad_id").get<int>();
    v.unk_id = j.at("unk_id").get<int>();
    if (v.pad_id < 0 || v.pad_id >= v.size() || v.unk_id < 0 || v.unk_id >= v.size()) {
      throw data_error("vocabulary pad/unk id out of range");
    }
    return v;
  }
};

/// Whitespace tokenizer over the closed vocabulary: per-word lookup with
/// unknown words mapping to unk, truncated or padded to exactly max_tokens.
inline std::vector<int> tokenize(const std::string& raw_text, const Vocabulary& vocab,
                                 int max_tokens) {
  if (max_tokens < 1) throw validation_error("max_tokens must be >= 1");
  std::vector<int> ids;
  ids.reserve(static_cast<std::size_t>(max_tokens));
  std::size_t i = 0;
  while (i < raw_text.size() && static_cast<int>(ids.size()) < max_tokens) {
    while (i < raw_text.size() && std::isspace(static_cast<unsigned char>(raw_text[i]))) ++i;
    std::size_t start = i;
    while (i < raw_text.size() && !std::isspace(static_cast<unsigned char>(raw_text[i]))) ++i;
    if (i > start) {
      auto it = vocab.word_to_id.find(raw_text.substr(start, i - start));
      ids.push_back(it == vocab.word_to_id.end() ? vocab.unk_id : it->second);
    }
  }
  ids.resize(static_cast<std::size_t>(max_tokens), vocab.pad_id);
  return ids;
}

/// Disjoint groups of interchangeable token ids.
struct SynonymTable {
  std::vector<std::vector<int>> groups;
  std::unordered_map<int, int> token_to_group;

  void rebuild_index() {
    token_to_group.clear();
    for (std::size_t g = 0; g < groups.size(); ++g) {
      if (groups[g].size() < 2) {
        throw validation_error("synonym group " + std::to_string(g) + " has fewer than 2 members");
      }
      for (int id : groups[g]) {
        if (!token_to_group.emplace(id, static_cast<int>(g)).second) {
          throw validation_error("token " + std::to_string(id) + " appears in two synonym groups");
        }
      }
    }
  }

  /// -1 when the token has no group.
  int group_of(int token) const {
    auto it = token_to_group.find(token);
    return it == token_to_group.end() ? -1 : it->second;
  }

  nlohmann::json to_json() const { return {{"groups", groups}}; }

  static SynonymTable from_json(const nlohmann::json& j) {
    SynonymTable t;
    t.groups = j.at("groups").get<std::vector<std::vector<int>>>();
    t.rebuild_index();
    return t;
  }
};

inline nlohmann::json load_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw io_error("cannot open " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw data_error("malformed JSON in " + path.string() + ": " + e.what());
  }
  return j;
}

inline void write_json_file(const std::filesystem::path& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw io_error("cannot open " + path.string() + " for writing");
  out << j.dump(2) << "\n";
  if (!out) throw io_error("short write to " + path.string());
}

}  // namespace cgmm
