#pragma once

#include <string>
#include <utility>
#include <vector>

#include "cgmm/common.hpp"
#include "cgmm/correlation.hpp"
#include "cgmm/data.hpp"
#include "cgmm/encoders.hpp"
#include "cgmm/fusion.hpp"
#include "cgmm/tensor.hpp"

namespace cgmm {

struct ModelConfig {
  VisualEncoderConfig visual;
  TextEncoderConfig text;
  FusionConfig fusion;
  int d_corr = 32;
  int n_max = 4;
  int max_tokens = 12;

  int d_fused() const { return fusion.d_vis + text.d_text; }

  void validate() const {
    visual.validate();
    text.validate();
    fusion.validate();
    if (d_corr < 1 || n_max < 0 || max_tokens < 1) {
      throw validation_error("model dims out of range");
    }
  }
};

/// Which signal paths are masked out. Drops keep all dimensions intact
/// (zero-masking at the fusion boundary, full-frame ROI for the position
/// drop), so every ablation shares one architecture.
struct AblationMask {
  bool drop_cv = false;
  bool drop_nlp = false;
  bool drop_pos = false;
  bool drop_correlation = false;
  bool drop_contrastive = false;
};

class CgmmModel {
 public:
  explicit CgmmModel(ModelConfig cfg, std::uint64_t init_seed) : cfg_(std::move(cfg)) {
    cfg_.validate();
    visual_ = VisualEncoder(params_, "visual", cfg_.visual, init_seed);
    text_ = TextEncoder(params_, "text", cfg_.text, init_seed);
    cross_ = CrossAttendBlock(params_, "fusion", cfg_.fusion, visual_.out_channels(), init_seed);
    corr_ = CorrelationNet(params_, "correlation", cfg_.d_fused(), cfg_.d_corr, init_seed);
    head_w_ = init_weight(params_, "head/w", 2 * cfg_.d_fused(), kNumClasses, init_seed);
    head_b_ = params_.add("head/b", Tensor::zeros({kNumClasses}));
  }

  struct BoxOutputs {
    Tensor f_vis;   // [d_vis], zeroed under drop_cv
    Tensor f_text;  // [d_text], zeroed under drop_nlp
    Tensor f1;      // [d_fused]
  };

  struct FrameOutputs {
    std::vector<BoxOutputs> boxes;
    std::vector<Tensor> finals;  // per box, [2 * d_fused]
    Tensor logits;               // [N x 4] when computed with the head
  };

  /// Full per-frame pipeline: shared feature map, per-box fusion, layout
  /// aggregation, classification head.
  FrameOutputs forward(const FrameSample& frame, const AblationMask& mask,
                       bool with_head = true) const {
    FrameOutputs out;
    out.boxes = encode_boxes(frame, mask);

    std::vector<Tensor> fused;
    fused.reserve(out.boxes.size());
    for (const auto& b : out.boxes) fused.push_back(b.f1);

    NeighborGraph graph = build_neighbor_graph(box_centers(frame, mask), cfg_.n_max);
    out.finals.reserve(fused.size());
    for (std::size_t j = 0; j < fused.size(); ++j) {
      Tensor f_b = mask.drop_correlation ? Tensor::zeros({cfg_.d_fused()})
                                         : corr_.aggregate(fused, graph, static_cast<int>(j));
      out.finals.push_back(final_feature(f_b, fused[j]));
    }
    if (with_head) out.logits = linear(stack_rows(out.finals), head_w_, head_b_);
    return out;
  }

  /// Encoder + fusion stage only (what contrastive pretraining optimizes).
  std::vector<BoxOutputs> encode_boxes(const FrameSample& frame, const AblationMask& mask) const {
    VisualFeatureMap map = visual_.forward(frame.frame);
    if (map.h_f < cfg_.fusion.roi_h || map.w_f < cfg_.fusion.roi_w) {
      throw validation_error("frame produces a " + std::to_string(map.h_f) + "x" +
                             std::to_string(map.w_f) + " feature map, smaller than the " +
                             std::to_string(cfg_.fusion.roi_h) + "x" +
                             std::to_string(cfg_.fusion.roi_w) + " ROI output");
    }
    static const Tensor full_frame({4}, {0.0, 0.0, 1.0, 1.0});
    std::vector<BoxOutputs> outs;
    outs.reserve(frame.boxes.size());
    for (const TextBox& box : frame.boxes) {
      BoxOutputs b;
      Tensor pos = mask.drop_pos ? full_frame : encode_position(box);
      Tensor patch = roi_align(map, pos, cfg_.fusion.roi_h, cfg_.fusion.roi_w,
                               cfg_.fusion.samples_per_bin);
      b.f_vis = cross_.forward(patch, map);
      if (mask.drop_cv) b.f_vis = scale(b.f_vis, 0.0);
      b.f_text = text_.forward(box.tokens);
      if (mask.drop_nlp) b.f_text = scale(b.f_text, 0.0);
      b.f1 = fuse(b.f_vis, b.f_text, cfg_.fusion.d_vis, cfg_.text.d_text);
      outs.push_back(std::move(b));
    }
    return outs;
  }

  std::vector<std::pair<double, double>> box_centers(const FrameSample& frame,
                                                     const AblationMask& mask) const {
    std::vector<std::pair<double, double>> centers;
    centers.reserve(frame.boxes.size());
    for (const TextBox& b : frame.boxes) {
      if (mask.drop_pos) {
        centers.emplace_back(0.5, 0.5);  // degenerate geometry, ties resolve by index
      } else {
        centers.emplace_back(b.center_x(), b.center_y());
      }
    }
    return centers;
  }

  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  const ModelConfig& config() const { return cfg_; }
  const VisualEncoder& visual() const { return visual_; }
  const TextEncoder& text() const { return text_; }
  const CrossAttendBlock& cross_attend() const { return cross_; }
  const CorrelationNet& correlation() const { return corr_; }

  /// Names of parameters the contrastive phase optimizes: encoders and
  /// fusion, excluding the correlation net and the classification head.
  bool is_backbone_param(const std::string& name) const {
    return name.rfind("visual", 0) == 0 || name.rfind("text", 0) == 0 ||
           name.rfind("fusion", 0) == 0;
  }

 private:
  ModelConfig cfg_;
  ParamStore params_;
  VisualEncoder visual_;
  TextEncoder text_;
  CrossAttendBlock cross_;
  CorrelationNet corr_;
  Tensor head_w_, head_b_;
};

}  // namespace cgmm
