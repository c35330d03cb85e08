#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <map>
#include <string>

#include "cgmm/data.hpp"
#include "cgmm/generator.hpp"
#include "cgmm/image.hpp"
#include "cgmm/vocab.hpp"

using namespace cgmm;
using Catch::Approx;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& tag) {
  auto p = fs::temp_directory_path() / ("cgmm_test_" + tag);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in);
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

std::map<std::string, std::string> dir_contents(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) {
      out[fs::relative(e.path(), root).string()] = read_bytes(e.path());
    }
  }
  return out;
}

}  // namespace

TEST_CASE("ppm: black frame payload and range endpoints", "[image]") {
  auto dir = temp_dir("ppm");
  Tensor black = Tensor::zeros({3, 2, 2});
  write_ppm(dir / "black.ppm", black);
  const std::string bytes = read_bytes(dir / "black.ppm");
  const std::string header = "P6\n2 2\n255\n";
  REQUIRE(bytes.size() == header.size() + 12);
  CHECK(bytes.substr(0, header.size()) == header);
  for (std::size_t i = header.size(); i < bytes.size(); ++i) CHECK(bytes[i] == '\0');

  Tensor white = Tensor::full({3, 1, 1}, 1.0);
  write_ppm(dir / "white.ppm", white);
  const std::string wb = read_bytes(dir / "white.ppm");
  for (int i = 0; i < 3; ++i) {
    CHECK(static_cast<unsigned char>(wb[wb.size() - 1 - static_cast<std::size_t>(i)]) == 255);
  }
}

TEST_CASE("ppm: round trip lands on the 1/255 grid", "[image]") {
  auto dir = temp_dir("ppm_rt");
  RngStream rng(5, "ppm");
  Tensor frame = Tensor::zeros({3, 9, 7});
  for (double& v : frame.data()) v = rng.uniform();
  write_ppm(dir / "f.ppm", frame);
  Tensor back = read_ppm(dir / "f.ppm");
  REQUIRE(back.shape() == frame.shape());
  double worst = 0.0;
  for (std::size_t i = 0; i < frame.numel(); ++i) {
    worst = std::max(worst, std::abs(frame.data()[i] - back.data()[i]));
  }
  CHECK(worst <= 1.0 / 510.0 + 1e-12);
}

TEST_CASE("ppm: malformed inputs fail with byte offsets", "[image]") {
  auto dir = temp_dir("ppm_bad");
  {
    std::ofstream out(dir / "magic.ppm", std::ios::binary);
    out << "P5\n2 2\n255\n" << std::string(12, '\0');
  }
  CHECK_THROWS_WITH(read_ppm(dir / "magic.ppm"),
                    Catch::Matchers::ContainsSubstring("byte offset 0"));
  {
    std::ofstream out(dir / "trunc.ppm", std::ios::binary);
    out << "P6\n4 4\n255\n" << std::string(5, '\0');
  }
  CHECK_THROWS_WITH(read_ppm(dir / "trunc.ppm"),
                    Catch::Matchers::ContainsSubstring("byte offset"));
  {
    std::ofstream out(dir / "extent.ppm", std::ios::binary);
    out << "P6\nx 2\n255\n";
  }
  CHECK_THROWS_AS(read_ppm(dir / "extent.ppm"), data_error);
}

TEST_CASE("tokenize: padding, lookup, truncation", "[vocab]") {
  Vocabulary v = Vocabulary::from_words({"<pad>", "<unk>", "hello", "world"});
  const int max_tokens = 6;

  auto empty = tokenize("", v, max_tokens);
  REQUIRE(static_cast<int>(empty.size()) == max_tokens);
  for (int id : empty) CHECK(id == v.pad_id);

  auto one = tokenize("hello", v, max_tokens);
  CHECK(one[0] == 2);
  for (std::size_t i = 1; i < one.size(); ++i) CHECK(one[i] == v.pad_id);

  auto unk = tokenize("zebra world", v, max_tokens);
  CHECK(unk[0] == v.unk_id);
  CHECK(unk[1] == 3);

  auto longer = tokenize("hello world hello world hello world hello world", v, max_tokens);
  CHECK(static_cast<int>(longer.size()) == max_tokens);
  CHECK(longer[5] == 3);
}

TEST_CASE("vocabulary and synonym table validation", "[vocab]") {
  CHECK_THROWS_AS(Vocabulary::from_words({"<pad>", "<pad>"}), validation_error);
  SynonymTable bad;
  bad.groups = {{2, 3}, {3, 4}};
  CHECK_THROWS_AS(bad.rebuild_index(), validation_error);
  SynonymTable tiny;
  tiny.groups = {{5}};
  CHECK_THROWS_AS(tiny.rebuild_index(), validation_error);

  const SynonymTable builtin = builtin_synonyms();
  for (const auto& g : builtin.groups) CHECK(g.size() >= 2);
  CHECK(builtin.group_of(kSharedPoolBegin) == 0);
  CHECK(builtin.group_of(0) == -1);
}

TEST_CASE("layout template ordering is validated", "[generator]") {
  LayoutTemplate t = make_template(0, 99);
  CHECK(t.caption_y < t.person_info_y);
  CHECK(t.person_info_y < t.subtitle_y);
  t.person_info_y = t.caption_y - 0.05;
  CHECK_THROWS_AS(t.validate(), validation_error);
}

TEST_CASE("generator determinism: same config and seed, identical bytes", "[generator]") {
  GenConfig cfg;
  cfg.standard_boxes = 10;
  cfg.generalization_boxes = 0;
  cfg.templates = 1;
  cfg.holdout_templates = 0;
  auto d1 = temp_dir("gen_det1");
  auto d2 = temp_dir("gen_det2");
  generate_dataset(cfg, 7, d1);
  generate_dataset(cfg, 7, d2);
  const auto c1 = dir_contents(d1), c2 = dir_contents(d2);
  REQUIRE(c1.size() == c2.size());
  for (const auto& [rel, bytes] : c1) {
    REQUIRE(c2.count(rel) == 1);
    CHECK(bytes == c2.at(rel));
  }
  // a different seed must not reproduce the same annotation stream
  auto d3 = temp_dir("gen_det3");
  generate_dataset(cfg, 8, d3);
  CHECK(read_bytes(d1 / "annotations.jsonl") != read_bytes(d3 / "annotations.jsonl"));
}

TEST_CASE("generator: band ordering holds on every frame", "[generator]") {
  GenConfig cfg;
  cfg.standard_boxes = 400;
  cfg.generalization_boxes = 120;
  auto dir = temp_dir("gen_bands");
  generate_dataset(cfg, 21, dir);
  LoadedDataset ds = load_dataset(dir, 12);
  int checked = 0;
  for (const auto& f : ds.frames) {
    double cap = -1, pi = -1, sub = -1;
    for (const auto& b : f.boxes) {
      if (b.label == TextClass::caption) cap = b.center_y();
      if (b.label == TextClass::person_info) pi = b.center_y();
      if (b.label == TextClass::subtitle) sub = b.center_y();
    }
    if (cap >= 0 && pi >= 0) { REQUIRE(cap < pi); ++checked; }
    if (pi >= 0 && sub >= 0) { REQUIRE(pi < sub); ++checked; }
    if (cap >= 0 && sub >= 0) REQUIRE(cap < sub);
  }
  CHECK(checked > 50);  // the composition plan must actually co-locate classes
}

TEST_CASE("generator: class histogram matches requested proportions", "[generator]") {
  GenConfig cfg;
  cfg.standard_boxes = 1000;
  cfg.generalization_boxes = 0;
  cfg.holdout_templates = 0;
  auto dir = temp_dir("gen_hist");
  auto summary = generate_dataset(cfg, 33, dir);

  // counting oracle over the written annotations, independent of the summary
  std::ifstream ann(dir / "annotations.jsonl");
  std::map<std::string, int> counts;
  std::string line;
  int total = 0;
  while (std::getline(ann, line)) {
    if (line.empty()) continue;
    auto rec = nlohmann::json::parse(line);
    counts[rec.at("label").get<std::string>()] += 1;
    ++total;
  }
  REQUIRE(total == 1000);
  CHECK(counts["caption"] == Approx(300).margin(0.05 * 300));
  CHECK(counts["subtitle"] == Approx(300).margin(0.05 * 300));
  CHECK(counts["person_info"] == Approx(200).margin(0.05 * 200));
  CHECK(counts["others"] == Approx(200).margin(0.05 * 200));
  CHECK(summary.standard_class_counts[0] == counts["caption"]);
}

TEST_CASE("generator: caption/subtitle token distributions overlap >= 50%", "[generator]") {
  GenConfig cfg;
  cfg.standard_boxes = 1200;
  cfg.generalization_boxes = 0;
  cfg.holdout_templates = 0;
  auto dir = temp_dir("gen_overlap");
  generate_dataset(cfg, 11, dir);
  LoadedDataset ds = load_dataset(dir, 12);

  std::map<int, double> cap_hist, sub_hist;
  double cap_n = 0, sub_n = 0;
  for (const auto& f : ds.frames) {
    for (const auto& b : f.boxes) {
      for (int id : b.tokens) {
        if (id == ds.vocab.pad_id) continue;
        if (b.label == TextClass::caption) { cap_hist[id] += 1; cap_n += 1; }
        if (b.label == TextClass::subtitle) { sub_hist[id] += 1; sub_n += 1; }
      }
    }
  }
  REQUIRE(cap_n > 0);
  REQUIRE(sub_n > 0);
  double overlap = 0.0;
  for (const auto& [id, c] : cap_hist) {
    auto it = sub_hist.find(id);
    if (it != sub_hist.end()) overlap += std::min(c / cap_n, it->second / sub_n);
  }
  CHECK(overlap >= 0.5);
}

TEST_CASE("generator: splits never share a program id", "[generator]") {
  GenConfig cfg;
  cfg.standard_boxes = 200;
  cfg.generalization_boxes = 100;
  auto dir = temp_dir("gen_split");
  generate_dataset(cfg, 3, dir);
  LoadedDataset ds = load_dataset(dir, 12);
  std::set<int> std_ids, gen_ids;
  for (const auto& f : ds.frames) {
    (f.split == Split::standard ? std_ids : gen_ids).insert(f.program_id);
  }
  CHECK_FALSE(std_ids.empty());
  CHECK_FALSE(gen_ids.empty());
  for (int id : gen_ids) CHECK(std_ids.count(id) == 0);
}

TEST_CASE("generator config validation", "[generator]") {
  GenConfig cfg;
  cfg.standard_boxes = 0;
  CHECK_THROWS_AS(cfg.validate(), validation_error);
  cfg = GenConfig{};
  cfg.generalization_boxes = 10;
  cfg.holdout_templates = 0;
  CHECK_THROWS_AS(cfg.validate(), validation_error);
  cfg = GenConfig{};
  cfg.proportions.caption = 0.9;
  CHECK_THROWS_AS(cfg.validate(), validation_error);
}

TEST_CASE("load_dataset: empty annotations yield an empty list", "[data]") {
  auto dir = temp_dir("load_empty");
  write_json_file(dir / "manifest.json", nlohmann::json{{"format_version", 1}});
  write_json_file(dir / "vocab.json", builtin_vocab().to_json());
  write_json_file(dir / "synonyms.json", builtin_synonyms().to_json());
  std::ofstream(dir / "annotations.jsonl").close();
  LoadedDataset ds = load_dataset(dir, 12);
  CHECK(ds.frames.empty());
}

TEST_CASE("load_dataset: invariant violations name the line", "[data]") {
  auto dir = temp_dir("load_bad");
  fs::create_directories(dir / "frames");
  write_json_file(dir / "manifest.json", nlohmann::json{{"format_version", 1}});
  write_json_file(dir / "vocab.json", builtin_vocab().to_json());
  write_json_file(dir / "synonyms.json", builtin_synonyms().to_json());
  write_ppm(dir / "frames/f0.ppm", Tensor::zeros({3, 4, 4}));

  auto write_ann = [&](const std::string& body) {
    std::ofstream out(dir / "annotations.jsonl");
    out << body;
  };
  const std::string good =
      R"({"frame":"frames/f0.ppm","box":[0.1,0.1,0.5,0.2],"text":"w000","label":"caption","split":"standard","program_id":0})";

  // x1 < x0 on line 2
  write_ann(good + "\n" +
            R"({"frame":"frames/f0.ppm","box":[0.5,0.1,0.1,0.2],"text":"w000","label":"others","split":"standard","program_id":0})" +
            "\n");
  CHECK_THROWS_WITH(load_dataset(dir, 12), Catch::Matchers::ContainsSubstring("line 2"));

  // unknown label
  write_ann(R"({"frame":"frames/f0.ppm","box":[0.1,0.1,0.5,0.2],"text":"w000","label":"banner","split":"standard","program_id":0})" "\n");
  CHECK_THROWS_WITH(load_dataset(dir, 12), Catch::Matchers::ContainsSubstring("unknown label"));

  // unknown key
  write_ann(R"({"frame":"frames/f0.ppm","box":[0.1,0.1,0.5,0.2],"text":"w000","label":"others","split":"standard","program_id":0,"extra":1})" "\n");
  CHECK_THROWS_WITH(load_dataset(dir, 12), Catch::Matchers::ContainsSubstring("unknown key"));

  // missing frame file
  write_ann(R"({"frame":"frames/nope.ppm","box":[0.1,0.1,0.5,0.2],"text":"w000","label":"others","split":"standard","program_id":0})" "\n");
  CHECK_THROWS_WITH(load_dataset(dir, 12), Catch::Matchers::ContainsSubstring("missing frame file"));
}

TEST_CASE("load_dataset: generated set loads with manifest-consistent counts", "[data]") {
  GenConfig cfg;
  cfg.standard_boxes = 10;
  cfg.generalization_boxes = 0;
  cfg.templates = 1;
  cfg.holdout_templates = 0;
  auto dir = temp_dir("load_gen");
  generate_dataset(cfg, 7, dir);
  LoadedDataset ds = load_dataset(dir, 12);

  // manifest is the oracle for what the loader must see
  const auto& counts = ds.manifest.at("counts").at("standard");
  CHECK(static_cast<int>(ds.total_boxes()) == counts.at("boxes").get<int>());
  CHECK(static_cast<int>(ds.frames.size()) == counts.at("frames").get<int>());
  CHECK(ds.frame_h == 64);
  CHECK(ds.frame_w == 80);
  for (const auto& f : ds.frames) f.validate();
}
