#pragma once

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "cgmm/common.hpp"
#include "cgmm/image.hpp"
#include "cgmm/tensor.hpp"
#include "cgmm/vocab.hpp"

namespace cgmm {

enum class TextClass : int { caption = 0, subtitle = 1, person_info = 2, others = 3 };
constexpr int kNumClasses = 4;

inline const char* label_to_string(TextClass c) {
  switch (c) {
    case TextClass::caption: return "caption";
    case TextClass::subtitle: return "subtitle";
    case TextClass::person_info: return "person_info";
    case TextClass::others: return "others";
  }
  throw validation_error("invalid class value");
}

inline TextClass label_from_string(const std::string& s) {
  if (s == "caption") return TextClass::caption;
  if (s == "subtitle") return TextClass::subtitle;
  if (s == "person_info") return TextClass::person_info;
  if (s == "others") return TextClass::others;
  throw data_error("unknown label string: \"" + s + "\"");
}

enum class Split { standard, generalization };

inline const char* split_to_string(Split s) {
  return s == Split::standard ? "standard" : "generalization";
}

inline Split split_from_string(const std::string& s) {
  if (s == "standard") return Split::standard;
  if (s == "generalization") return Split::generalization;
  throw data_error("unknown split tag: \"" + s + "\"");
}

/// One OCR detection: corner coordinates normalized to [0,1] as fractions of
/// frame width/height, its text, and the ground-truth class.
struct TextBox {
  double x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  std::vector<int> tokens;  // filled by the loader (tokenize of raw_text)
  std::string raw_text;
  TextClass label = TextClass::others;

  void validate() const {
    if (!(0.0 <= x0 && x0 < x1 && x1 <= 1.0) || !(0.0 <= y0 && y0 < y1 && y1 <= 1.0)) {
      throw data_error("box coordinates violate 0 <= c0 < c1 <= 1: [" + std::to_string(x0) +
                       ", " + std::to_string(y0) + ", " + std::to_string(x1) + ", " +
                       std::to_string(y1) + "]");
    }
    if (tokens.empty()) throw data_error("box token sequence is empty");
  }

  double center_x() const { return 0.5 * (x0 + x1); }
  double center_y() const { return 0.5 * (y0 + y1); }
};

constexpr int kMaxBoxesPerFrame = 16;

/// One video frame plus its text boxes.
struct FrameSample {
  Tensor frame;  // [3,H,W], values in [0,1]
  std::vector<TextBox> boxes;
  Split split = Split::standard;
  int program_id = 0;
  std::string frame_path;

  void validate() const {
    if (boxes.empty() || static_cast<int>(boxes.size()) > kMaxBoxesPerFrame) {
      throw data_error("frame must hold 1.." + std::to_string(kMaxBoxesPerFrame) +
                       " boxes, got " + std::to_string(boxes.size()));
    }
    for (const TextBox& b : boxes) b.validate();
  }
};

struct LoadedDataset {
  std::vector<FrameSample> frames;
  Vocabulary vocab;
  SynonymTable synonyms;
  nlohmann::json manifest;
  int frame_h = 0, frame_w = 0;

  std::size_t total_boxes() const {
    std::size_t n = 0;
    for (const auto& f : frames) n += f.boxes.size();
    return n;
  }
};

namespace detail {

inline void check_record_keys(const nlohmann::json& rec, int line) {
  static const char* expected[] = {"frame", "box", "text", "label", "split", "program_id"};
  for (const auto& [key, value] : rec.items()) {
    bool known = false;
    for (const char* e : expected) {
      if (key == e) { known = true; break; }
    }
    if (!known) {
      throw data_error("annotations.jsonl line " + std::to_string(line) +
                       ": unknown key \"" + key + "\"");
    }
  }
  for (const char* e : expected) {
    if (!rec.contains(e)) {
      throw data_error("annotations.jsonl line " + std::to_string(line) +
                       ": missing key \"" + e + "\"");
    }
  }
}

}  // namespace detail

/// Loads a generated dataset directory: manifest, vocabulary, synonyms, and
/// annotations.jsonl (one record per box, boxes of a frame contiguous).
/// Frames are decoded once per frame path. Every TextBox invariant is
/// enforced here; violations name the annotations line.
inline LoadedDataset load_dataset(const std::filesystem::path& dir, int max_tokens) {
  LoadedDataset ds;
  ds.manifest = load_json_file(dir / "manifest.json");
  ds.vocab = Vocabulary::from_json(load_json_file(dir / "vocab.json"));
  ds.synonyms = SynonymTable::from_json(load_json_file(dir / "synonyms.json"));

  std::ifstream in(dir / "annotations.jsonl");
  if (!in) throw io_error("cannot open " + (dir / "annotations.jsonl").string());

  std::string line;
  int line_no = 0;
  FrameSample current;
  bool have_current = false;
  std::unordered_set<std::string> finished_paths;

  auto flush = [&] {
    if (!have_current) return;
    current.validate();
    if (!finished_paths.insert(current.frame_path).second) {
      throw data_error("frame " + current.frame_path + " appears in non-contiguous blocks");
    }
    ds.frames.push_back(std::move(current));
    current = FrameSample{};
    have_current = false;
  };

  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json rec;
    try {
      rec = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw data_error("annotations.jsonl line " + std::to_string(line_no) +
                       ": malformed JSON (" + e.what() + ")");
    }
    detail::check_record_keys(rec, line_no);

    TextBox box;
    try {
      const auto& c = rec.at("box");
      if (!c.is_array() || c.size() != 4) throw data_error("box must be [x0,y0,x1,y1]");
      box.x0 = c[0].get<double>();
      box.y0 = c[1].get<double>();
      box.x1 = c[2].get<double>();
      box.y1 = c[3].get<double>();
      box.raw_text = rec.at("text").get<std::string>();
      box.label = label_from_string(rec.at("label").get<std::string>());
      box.tokens = tokenize(box.raw_text, ds.vocab, max_tokens);
      box.validate();
    } catch (const data_error& e) {
      throw data_error("annotations.jsonl line " + std::to_string(line_no) + ": " + e.what());
    }

    const std::string frame_path = rec.at("frame").get<std::string>();
    const Split split = split_from_string(rec.at("split").get<std::string>());
    const int program_id = rec.at("program_id").get<int>();

    if (have_current && frame_path != current.frame_path) flush();
    if (!have_current) {
      current.frame_path = frame_path;
      current.split = split;
      current.program_id = program_id;
      const auto full = dir / frame_path;
      if (!std::filesystem::exists(full)) {
        throw data_error("annotations.jsonl line " + std::to_string(line_no) +
                         ": missing frame file " + full.string());
      }
      current.frame = read_ppm(full);
      have_current = true;
    } else if (split != current.split || program_id != current.program_id) {
      throw data_error("annotations.jsonl line " + std::to_string(line_no) +
                       ": split/program_id disagrees with earlier records of " + frame_path);
    }
    current.boxes.push_back(std::move(box));
  }
  flush();

  if (!ds.frames.empty()) {
    ds.frame_h = ds.frames[0].frame.dim(1);
    ds.frame_w = ds.frames[0].frame.dim(2);
    for (const auto& f : ds.frames) {
      if (f.frame.dim(1) != ds.frame_h || f.frame.dim(2) != ds.frame_w) {
        throw data_error("frame " + f.frame_path + " extents disagree with dataset");
      }
    }
  }
  return ds;
}

}  // namespace cgmm
