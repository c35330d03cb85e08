#pragma once

#include <json.hpp>

#include <algorithm>
#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "cgmm/common.hpp"
#include "cgmm/data.hpp"
#include "cgmm/image.hpp"
#include "cgmm/rng.hpp"
#include "cgmm/vocab.hpp"

// Synthetic news-frame generator. It reproduces the *structure* of a news
// video-text corpus -- caption / subtitle / person-info / others boxes with
// program-specific layouts, tints and word preferences -- with none of the
// original content. Design choices that carry the learning signal:
//
//   * caption and subtitle draw most tokens from one shared pool, so text
//     alone cannot reliably separate them; person-info uses name tokens and
//     others uses uniform-random tokens, so text is decisive there.
//   * each program template fixes vertical bands ordered caption above
//     person-info above subtitle, class tints, and word emphasis; held-out
//     templates form the generalization split.
//   * frames carry a vertical background gradient, so a box's ROI patch
//     implicitly encodes its height in the frame.
//
// Every random decision comes from a stream keyed by (seed, role, index),
// which makes output byte-deterministic and per-sample parallelizable.

namespace cgmm {

// vocabulary pool layout (closed, 256 ids)
constexpr int kSharedPoolBegin = 2, kSharedPoolEnd = 102;
constexpr int kCaptionPoolBegin = 102, kCaptionPoolEnd = 112;
constexpr int kSubtitlePoolBegin = 112, kSubtitlePoolEnd = 122;
constexpr int kNamePoolBegin = 122, kNamePoolEnd = 172;
constexpr int kJunkPoolBegin = 172, kJunkPoolEnd = 256;

inline Vocabulary builtin_vocab() {
  std::vector<std::string> words;
  words.reserve(256);
  words.push_back("<pad>");
  words.push_back("<unk>");
  char buf[16];
  for (int i = kSharedPoolBegin; i < kSharedPoolEnd; ++i) {
    std::snprintf(buf, sizeof(buf), "w%03d", i - kSharedPoolBegin);
    words.emplace_back(buf);
  }
  for (int i = kCaptionPoolBegin; i < kCaptionPoolEnd; ++i) {
    std::snprintf(buf, sizeof(buf), "cap%02d", i - kCaptionPoolBegin);
    words.emplace_back(buf);
  }
  for (int i = kSubtitlePoolBegin; i < kSubtitlePoolEnd; ++i) {
    std::snprintf(buf, sizeof(buf), "sub%02d", i - kSubtitlePoolBegin);
    words.emplace_back(buf);
  }
  for (int i = kNamePoolBegin; i < kNamePoolEnd; ++i) {
    std::snprintf(buf, sizeof(buf), "name%02d", i - kNamePoolBegin);
    words.emplace_back(buf);
  }
  for (int i = kJunkPoolBegin; i < kJunkPoolEnd; ++i) {
    std::snprintf(buf, sizeof(buf), "tk%03d", i - kJunkPoolBegin);
    words.emplace_back(buf);
  }
  return Vocabulary::from_words(std::move(words));
}

/// Groups of interchangeable ids, kept within one pool so replacement never
/// crosses a class signal boundary.
inline SynonymTable builtin_synonyms() {
  SynonymTable t;
  auto add_groups = [&t](int begin, int end, int group_size) {
    for (int g = begin; g + group_size <= end; g += group_size) {
      std::vector<int> group;
      for (int i = 0; i < group_size; ++i) group.push_back(g + i);
      t.groups.push_back(std::move(group));
    }
  };
  add_groups(kSharedPoolBegin, kSharedPoolEnd, 4);
  add_groups(kCaptionPoolBegin, kCaptionPoolEnd, 5);
  add_groups(kSubtitlePoolBegin, kSubtitlePoolEnd, 5);
  add_groups(kNamePoolBegin, kNamePoolEnd, 5);
  t.rebuild_index();
  return t;
}

struct ClassProportions {
  double caption = 0.3;
  double subtitle = 0.3;
  double person_info = 0.2;
  double others = 0.2;

  void validate() const {
    const double sum = caption + subtitle + person_info + others;
    if (caption <= 0 || subtitle <= 0 || person_info <= 0 || others <= 0 ||
        std::abs(sum - 1.0) > 1e-9) {
      throw validation_error("class proportions must be positive and sum to 1");
    }
  }
};

struct GenConfig {
  int frame_h = 64;
  int frame_w = 80;
  int standard_boxes = 2000;
  int generalization_boxes = 600;
  int templates = 6;          // training programs
  int holdout_templates = 3;  // held-out programs (generalization split)
  double band_sigma = 0.05;   // per-frame jitter of class y-centers
  ClassProportions proportions;

  void validate() const {
    if (frame_h < 32 || frame_w < 32) throw validation_error("frame extents must be >= 32");
    if (standard_boxes <= 0) throw validation_error("standard_boxes must be > 0");
    if (generalization_boxes < 0) throw validation_error("generalization_boxes must be >= 0");
    if (templates < 1) throw validation_error("need at least one training template");
    if (generalization_boxes > 0 && holdout_templates < 1) {
      throw validation_error("generalization split requires at least 2 templates "
                             "(one training + one held out)");
    }
    if (holdout_templates < 0) throw validation_error("holdout_templates must be >= 0");
    if (band_sigma < 0.0 || band_sigma > 0.15) {
      throw validation_error("band_sigma must lie in [0, 0.15]");
    }
    proportions.validate();
  }
};

/// Per-program layout: ordered vertical bands, class tints, background
/// gradient, and shared-pool word emphasis.
struct LayoutTemplate {
  int program_id = 0;
  double caption_y = 0.16, person_info_y = 0.5, subtitle_y = 0.82;
  std::array<std::array<double, 3>, 3> class_tint{};  // caption, subtitle, person_info
  std::array<double, 3> bg_top{}, bg_bottom{};
  std::vector<double> shared_cdf;  // cumulative word weights over the shared pool

  void validate() const {
    if (!(caption_y < person_info_y && person_info_y < subtitle_y)) {
      throw validation_error("template bands out of order: caption must sit above "
                             "person_info above subtitle");
    }
  }
};

inline LayoutTemplate make_template(int program_id, std::uint64_t seed) {
  RngStream rng(seed, "template/" + std::to_string(program_id));
  LayoutTemplate t;
  t.program_id = program_id;
  t.caption_y = rng.uniform(0.10, 0.22);
  t.person_info_y = rng.uniform(0.42, 0.58);
  t.subtitle_y = rng.uniform(0.76, 0.88);

  const std::array<std::array<double, 3>, 3> base = {{
      {0.20, 0.35, 0.75},  // caption: blue-ish
      {0.75, 0.70, 0.20},  // subtitle: yellow-ish
      {0.20, 0.65, 0.35},  // person_info: green-ish
  }};
  for (int c = 0; c < 3; ++c) {
    for (int ch = 0; ch < 3; ++ch) {
      t.class_tint[static_cast<std::size_t>(c)][static_cast<std::size_t>(ch)] =
          std::clamp(base[static_cast<std::size_t>(c)][static_cast<std::size_t>(ch)] +
                         rng.uniform(-0.12, 0.12),
                     0.05, 0.95);
    }
  }
  const double top_gray = rng.uniform(0.08, 0.25);
  const double span = rng.uniform(0.2, 0.4);
  for (int ch = 0; ch < 3; ++ch) {
    t.bg_top[static_cast<std::size_t>(ch)] = std::clamp(top_gray + rng.uniform(-0.04, 0.04), 0.0, 1.0);
    t.bg_bottom[static_cast<std::size_t>(ch)] =
        std::clamp(top_gray + span + rng.uniform(-0.04, 0.04), 0.0, 1.0);
  }

  // emphasize 30 "hot" shared words per program
  const int pool = kSharedPoolEnd - kSharedPoolBegin;
  std::vector<double> weights(static_cast<std::size_t>(pool), 1.0);
  for (int k = 0; k < 30; ++k) weights[static_cast<std::size_t>(rng.below(pool))] = 3.0;
  t.shared_cdf.resize(weights.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    acc += weights[i];
    t.shared_cdf[i] = acc;
  }
  for (double& w : t.shared_cdf) w /= acc;
  t.validate();
  return t;
}

namespace detail {

inline int sample_shared_word(const LayoutTemplate& t, RngStream& rng) {
  const double u = rng.uniform();
  const auto it = std::lower_bound(t.shared_cdf.begin(), t.shared_cdf.end(), u);
  const int idx = static_cast<int>(it - t.shared_cdf.begin());
  return kSharedPoolBegin + std::min(idx, kSharedPoolEnd - kSharedPoolBegin - 1);
}

inline std::vector<int> sample_tokens(TextClass cls, const LayoutTemplate& t, RngStream& rng) {
  std::vector<int> ids;
  switch (cls) {
    case TextClass::caption: {
      const int len = 4 + rng.below(5);
      for (int i = 0; i < len; ++i) {
        if (rng.bernoulli(0.12)) {
          ids.push_back(kCaptionPoolBegin + rng.below(kCaptionPoolEnd - kCaptionPoolBegin));
        } else {
          ids.push_back(sample_shared_word(t, rng));
        }
      }
      break;
    }
    case TextClass::subtitle: {
      const int len = 5 + rng.below(6);
      for (int i = 0; i < len; ++i) {
        if (rng.bernoulli(0.12)) {
          ids.push_back(kSubtitlePoolBegin + rng.below(kSubtitlePoolEnd - kSubtitlePoolBegin));
        } else {
          ids.push_back(sample_shared_word(t, rng));
        }
      }
      break;
    }
    case TextClass::person_info: {
      const int len = 2 + rng.below(2);
      for (int i = 0; i < len; ++i) {
        ids.push_back(kNamePoolBegin + rng.below(kNamePoolEnd - kNamePoolBegin));
      }
      break;
    }
    case TextClass::others: {
      const int len = 3 + rng.below(6);
      for (int i = 0; i < len; ++i) ids.push_back(2 + rng.below(254));
      break;
    }
  }
  return ids;
}

struct BoxGeometry {
  double cx = 0.5, cy = 0.5, w = 0.3, h = 0.1;
};

inline BoxGeometry sample_geometry(TextClass cls, const LayoutTemplate& t, RngStream& rng) {
  BoxGeometry g;
  switch (cls) {
    case TextClass::caption:
      g.w = rng.uniform(0.5, 0.8);
      g.h = rng.uniform(0.10, 0.16);
      g.cx = 0.45 + rng.normal(0.0, 0.05);
      g.cy = t.caption_y;
      break;
    case TextClass::subtitle:
      g.w = rng.uniform(0.55, 0.85);
      g.h = rng.uniform(0.08, 0.14);
      g.cx = 0.5 + rng.normal(0.0, 0.04);
      g.cy = t.subtitle_y;
      break;
    case TextClass::person_info:
      g.w = rng.uniform(0.2, 0.35);
      g.h = rng.uniform(0.08, 0.12);
      g.cx = 0.3 + rng.normal(0.0, 0.07);
      g.cy = t.person_info_y;
      break;
    case TextClass::others:
      g.w = rng.uniform(0.15, 0.5);
      g.h = rng.uniform(0.05, 0.12);
      g.cx = rng.uniform(0.1, 0.9);
      g.cy = rng.uniform(0.05, 0.95);
      break;
  }
  return g;
}

inline void fill_rect(Tensor& frame, double x0, double y0, double x1, double y1,
                      const std::array<double, 3>& color) {
  const int h = frame.dim(1), w = frame.dim(2);
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  const int px0 = std::clamp(static_cast<int>(std::lround(x0 * w)), 0, w);
  const int px1 = std::clamp(static_cast<int>(std::lround(x1 * w)), 0, w);
  const int py0 = std::clamp(static_cast<int>(std::lround(y0 * h)), 0, h);
  const int py1 = std::clamp(static_cast<int>(std::lround(y1 * h)), 0, h);
  for (int c = 0; c < 3; ++c) {
    for (int y = py0; y < py1; ++y) {
      for (int x = px0; x < px1; ++x) {
        frame.data()[static_cast<std::size_t>(c) * plane + static_cast<std::size_t>(y) * w + x] =
            color[static_cast<std::size_t>(c)];
      }
    }
  }
}

/// Tiny 3x4 "glyph" per token, pixels keyed by bits of a token hash. Gives
/// the CNN per-token texture without a font renderer.
inline void draw_glyphs(Tensor& frame, const TextBox& box, const std::vector<int>& ids,
                        const std::array<double, 3>& tint) {
  const int h = frame.dim(1), w = frame.dim(2);
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  const int px0 = std::clamp(static_cast<int>(std::lround(box.x0 * w)), 0, w);
  const int px1 = std::clamp(static_cast<int>(std::lround(box.x1 * w)), 0, w);
  const int py0 = std::clamp(static_cast<int>(std::lround(box.y0 * h)), 0, h);
  const int py1 = std::clamp(static_cast<int>(std::lround(box.y1 * h)), 0, h);
  const int gy = (py0 + py1) / 2 - 2;
  if (gy < py0 || gy + 4 > py1) return;
  std::array<double, 3> ink;
  for (int c = 0; c < 3; ++c) ink[static_cast<std::size_t>(c)] = tint[static_cast<std::size_t>(c)] * 0.35;
  int gx = px0 + 1;
  for (int id : ids) {
    if (gx + 3 > px1 - 1) break;
    std::uint64_t bits = static_cast<std::uint64_t>(id) * 0x9e3779b97f4a7c15ULL;
    bits ^= bits >> 29;
    for (int r = 0; r < 4; ++r) {
      for (int cc = 0; cc < 3; ++cc) {
        if ((bits >> (r * 3 + cc)) & 1ULL) {
          for (int c = 0; c < 3; ++c) {
            frame.data()[static_cast<std::size_t>(c) * plane +
                         static_cast<std::size_t>(gy + r) * w + (gx + cc)] =
                ink[static_cast<std::size_t>(c)];
          }
        }
      }
    }
    gx += 4;
  }
}

struct FramePlan {
  bool caption = false, subtitle = false, person_info = false;
  int others = 0;
  int template_index = 0;  // within the split's template range
  int boxes() const { return (caption ? 1 : 0) + (subtitle ? 1 : 0) + (person_info ? 1 : 0) + others; }
};

/// Consumes exact per-class quotas into per-frame compositions. Greedy and
/// fully driven by the plan stream, so the composition of frame i never
/// depends on how later frames are rendered.
inline std::vector<FramePlan> plan_frames(std::array<int, 4> quotas, int template_count,
                                          RngStream& rng) {
  std::vector<FramePlan> plans;
  auto remaining = [&quotas] { return quotas[0] + quotas[1] + quotas[2] + quotas[3]; };
  while (remaining() > 0) {
    FramePlan p;
    p.template_index = rng.below(template_count);
    if (quotas[0] > 0 && rng.bernoulli(0.85)) { p.caption = true; }
    if (quotas[1] > 0 && rng.bernoulli(0.9)) { p.subtitle = true; }
    if (quotas[2] > 0 && rng.bernoulli(0.6)) { p.person_info = true; }
    const double u = rng.uniform();
    int want_others = u < 0.3 ? 0 : (u < 0.75 ? 1 : (u < 0.95 ? 2 : 3));
    p.others = std::min(want_others, quotas[3]);
    if (p.boxes() == 0) {
      // every class either exhausted or skipped; force one box to progress
      if (quotas[0] > 0) p.caption = true;
      else if (quotas[1] > 0) p.subtitle = true;
      else if (quotas[2] > 0) p.person_info = true;
      else p.others = 1;
    }
    quotas[0] -= p.caption ? 1 : 0;
    quotas[1] -= p.subtitle ? 1 : 0;
    quotas[2] -= p.person_info ? 1 : 0;
    quotas[3] -= p.others;
    plans.push_back(p);
  }
  return plans;
}

inline std::array<int, 4> class_quotas(int total, const ClassProportions& prop) {
  std::array<int, 4> q{};
  q[0] = static_cast<int>(std::lround(prop.caption * total));
  q[1] = static_cast<int>(std::lround(prop.subtitle * total));
  q[2] = static_cast<int>(std::lround(prop.person_info * total));
  q[3] = total - q[0] - q[1] - q[2];
  if (q[3] < 0) {  // rounding pushed us over; take the excess back from the largest quota
    const auto it = std::max_element(q.begin(), q.end() - 1);
    *it += q[3];
    q[3] = 0;
  }
  return q;
}

}  // namespace detail

/// Renders one frame from its plan. Pure function of (seed, split, index,
/// plan, templates) -- callers may fan samples out across threads without
/// changing a single byte of output.
inline FrameSample render_sample(const GenConfig& cfg, std::uint64_t seed, Split split,
                                 int index, const detail::FramePlan& plan,
                                 const LayoutTemplate& tmpl, const Vocabulary& vocab) {
  RngStream rng(seed, std::string("sample/") + split_to_string(split) + "/" + std::to_string(index));
  const int h = cfg.frame_h, w = cfg.frame_w;
  FrameSample sample;
  sample.split = split;
  sample.program_id = tmpl.program_id;
  sample.frame = Tensor::zeros({3, h, w});

  // background gradient + noise
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  for (int y = 0; y < h; ++y) {
    const double fy = h > 1 ? static_cast<double>(y) / (h - 1) : 0.0;
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) {
        const double base = tmpl.bg_top[static_cast<std::size_t>(c)] +
                            fy * (tmpl.bg_bottom[static_cast<std::size_t>(c)] -
                                  tmpl.bg_top[static_cast<std::size_t>(c)]);
        sample.frame.data()[static_cast<std::size_t>(c) * plane + static_cast<std::size_t>(y) * w + x] =
            std::clamp(base + rng.uniform(-0.02, 0.02), 0.0, 1.0);
      }
    }
  }

  // clutter rectangles under the text boxes
  const int clutter = 2 + rng.below(3);
  for (int i = 0; i < clutter; ++i) {
    const double cx = rng.uniform(0.05, 0.95), cy = rng.uniform(0.05, 0.95);
    const double cw = rng.uniform(0.1, 0.3), ch = rng.uniform(0.05, 0.2);
    std::array<double, 3> tint;
    for (double& t : tint) t = rng.uniform(0.1, 0.6);
    detail::fill_rect(sample.frame, std::max(0.0, cx - cw / 2), std::max(0.0, cy - ch / 2),
                      std::min(1.0, cx + cw / 2), std::min(1.0, cy + ch / 2), tint);
  }

  // banded y-centers, redrawn until the ordering invariant holds
  double cap_cy = tmpl.caption_y, pi_cy = tmpl.person_info_y, sub_cy = tmpl.subtitle_y;
  for (int attempt = 0; attempt < 100; ++attempt) {
    cap_cy = tmpl.caption_y + rng.normal(0.0, cfg.band_sigma);
    pi_cy = tmpl.person_info_y + rng.normal(0.0, cfg.band_sigma);
    sub_cy = tmpl.subtitle_y + rng.normal(0.0, cfg.band_sigma);
    const double margin = 0.02;
    if (cap_cy + margin < pi_cy && pi_cy + margin < sub_cy) break;
    if (attempt == 99) {  // fall back to the template means, which are ordered
      cap_cy = tmpl.caption_y;
      pi_cy = tmpl.person_info_y;
      sub_cy = tmpl.subtitle_y;
    }
  }

  struct Planned {
    TextClass cls;
    double cy_override = -1.0;
  };
  std::vector<Planned> order;
  if (plan.caption) order.push_back({TextClass::caption, cap_cy});
  if (plan.person_info) order.push_back({TextClass::person_info, pi_cy});
  if (plan.subtitle) order.push_back({TextClass::subtitle, sub_cy});
  for (int i = 0; i < plan.others; ++i) order.push_back({TextClass::others, -1.0});

  for (const Planned& pl : order) {
    detail::BoxGeometry g = detail::sample_geometry(pl.cls, tmpl, rng);
    if (pl.cy_override >= 0.0) g.cy = pl.cy_override;
    g.cx = std::clamp(g.cx, g.w / 2, 1.0 - g.w / 2);
    g.cy = std::clamp(g.cy, g.h / 2, 1.0 - g.h / 2);

    TextBox box;
    box.x0 = g.cx - g.w / 2;
    box.x1 = g.cx + g.w / 2;
    box.y0 = g.cy - g.h / 2;
    box.y1 = g.cy + g.h / 2;
    box.label = pl.cls;

    std::vector<int> ids = detail::sample_tokens(pl.cls, tmpl, rng);
    std::string text;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (i) text += ' ';
      text += vocab.id_to_word[static_cast<std::size_t>(ids[i])];
    }
    box.raw_text = std::move(text);
    box.tokens = ids;

    std::array<double, 3> tint;
    if (pl.cls == TextClass::others) {
      for (double& t : tint) t = rng.uniform(0.15, 0.85);
    } else {
      const int ti = pl.cls == TextClass::caption ? 0 : (pl.cls == TextClass::subtitle ? 1 : 2);
      for (int c = 0; c < 3; ++c) {
        tint[static_cast<std::size_t>(c)] =
            std::clamp(tmpl.class_tint[static_cast<std::size_t>(ti)][static_cast<std::size_t>(c)] +
                           rng.uniform(-0.06, 0.06),
                       0.0, 1.0);
      }
    }
    detail::fill_rect(sample.frame, box.x0, box.y0, box.x1, box.y1, tint);
    detail::draw_glyphs(sample.frame, box, ids, tint);
    sample.boxes.push_back(std::move(box));
  }

  // record order must not leak the class
  for (int i = static_cast<int>(sample.boxes.size()) - 1; i > 0; --i) {
    std::swap(sample.boxes[static_cast<std::size_t>(i)],
              sample.boxes[static_cast<std::size_t>(rng.below(i + 1))]);
  }
  return sample;
}

struct GenerationSummary {
  int standard_frames = 0, generalization_frames = 0;
  std::array<int, 4> standard_class_counts{};
  std::array<int, 4> generalization_class_counts{};
};

inline GenerationSummary generate_dataset(const GenConfig& cfg, std::uint64_t seed,
                                          const std::filesystem::path& out_dir) {
  cfg.validate();
  std::error_code ec;
  std::filesystem::create_directories(out_dir / "frames", ec);
  if (ec) throw io_error("cannot create output directory " + out_dir.string() + ": " + ec.message());

  const Vocabulary vocab = builtin_vocab();
  const SynonymTable synonyms = builtin_synonyms();

  std::vector<LayoutTemplate> train_templates, holdout;
  for (int i = 0; i < cfg.templates; ++i) train_templates.push_back(make_template(i, seed));
  for (int i = 0; i < cfg.holdout_templates; ++i) {
    holdout.push_back(make_template(cfg.templates + i, seed));
  }

  GenerationSummary summary;
  std::ofstream ann(out_dir / "annotations.jsonl");
  if (!ann) throw io_error("cannot open annotations.jsonl for writing under " + out_dir.string());

  auto emit_split = [&](Split split, int total_boxes, const std::vector<LayoutTemplate>& templates,
                        std::array<int, 4>& class_counts) -> int {
    if (total_boxes == 0) return 0;
    RngStream plan_rng(seed, std::string("plan/") + split_to_string(split));
    const auto quotas = detail::class_quotas(total_boxes, cfg.proportions);
    const auto plans = detail::plan_frames(quotas, static_cast<int>(templates.size()), plan_rng);
    const char* prefix = split == Split::standard ? "std" : "gen";
    for (std::size_t i = 0; i < plans.size(); ++i) {
      const auto& tmpl = plans[i].template_index < static_cast<int>(templates.size())
                             ? templates[static_cast<std::size_t>(plans[i].template_index)]
                             : templates[0];
      FrameSample sample = render_sample(cfg, seed, split, static_cast<int>(i), plans[i], tmpl, vocab);
      char name[64];
      std::snprintf(name, sizeof(name), "frames/%s_%05zu.ppm", prefix, i);
      sample.frame_path = name;
      write_ppm(out_dir / sample.frame_path, sample.frame);
      for (const TextBox& b : sample.boxes) {
        nlohmann::json rec = {
            {"frame", sample.frame_path},
            {"box", {b.x0, b.y0, b.x1, b.y1}},
            {"text", b.raw_text},
            {"label", label_to_string(b.label)},
            {"split", split_to_string(split)},
            {"program_id", sample.program_id},
        };
        ann << rec.dump() << "\n";
        class_counts[static_cast<std::size_t>(b.label)] += 1;
      }
    }
    return static_cast<int>(plans.size());
  };

  summary.standard_frames =
      emit_split(Split::standard, cfg.standard_boxes, train_templates, summary.standard_class_counts);
  summary.generalization_frames = emit_split(Split::generalization, cfg.generalization_boxes,
                                             holdout, summary.generalization_class_counts);
  if (!ann) throw io_error("short write to annotations.jsonl");
  ann.close();

  write_json_file(out_dir / "vocab.json", vocab.to_json());
  write_json_file(out_dir / "synonyms.json", synonyms.to_json());

  auto counts_json = [](int frames, const std::array<int, 4>& c) {
    return nlohmann::json{{"frames", frames},
                          {"boxes", c[0] + c[1] + c[2] + c[3]},
                          {"per_class",
                           {{"caption", c[0]}, {"subtitle", c[1]}, {"person_info", c[2]}, {"others", c[3]}}}};
  };
  nlohmann::json manifest = {
      {"format_version", 1},
      {"seed", seed},
      {"config",
       {{"frame_h", cfg.frame_h},
        {"frame_w", cfg.frame_w},
        {"standard_boxes", cfg.standard_boxes},
        {"generalization_boxes", cfg.generalization_boxes},
        {"templates", cfg.templates},
        {"holdout_templates", cfg.holdout_templates},
        {"band_sigma", cfg.band_sigma},
        {"proportions",
         {{"caption", cfg.proportions.caption},
          {"subtitle", cfg.proportions.subtitle},
          {"person_info", cfg.proportions.person_info},
          {"others", cfg.proportions.others}}}}},
      {"counts",
       {{"standard", counts_json(summary.standard_frames, summary.standard_class_counts)},
        {"generalization",
         counts_json(summary.generalization_frames, summary.generalization_class_counts)}}},
  };
  write_json_file(out_dir / "manifest.json", manifest);
  return summary;
}

}  // namespace cgmm
