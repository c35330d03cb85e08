#pragma once

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "cgmm/common.hpp"
#include "cgmm/encoders.hpp"
#include "cgmm/ops.hpp"
#include "cgmm/tensor.hpp"
#include "cgmm/transformer.hpp"

namespace cgmm {

// ---------------------------------------------------------------------------
// ROIAlign
// ---------------------------------------------------------------------------

namespace detail {

struct BilinearTaps {
  // up to four (flat index, weight) pairs into one feature plane
  std::array<int, 4> idx{-1, -1, -1, -1};
  std::array<double, 4> w{0, 0, 0, 0};
};

/// Bilinear taps at continuous position (y, x) on an h x w grid. Positions
/// more than one cell outside the grid contribute nothing; positions in the
/// half-cell border band clamp to the edge row/column.
inline BilinearTaps bilinear_taps(double y, double x, int h, int w) {
  BilinearTaps taps;
  if (y < -1.0 || y > static_cast<double>(h) || x < -1.0 || x > static_cast<double>(w)) {
    return taps;
  }
  y = std::min(std::max(y, 0.0), static_cast<double>(h - 1));
  x = std::min(std::max(x, 0.0), static_cast<double>(w - 1));
  const int y0 = static_cast<int>(y);
  const int x0 = static_cast<int>(x);
  const int y1 = std::min(y0 + 1, h - 1);
  const int x1 = std::min(x0 + 1, w - 1);
  const double ly = y - y0, lx = x - x0;
  taps.idx = {y0 * w + x0, y0 * w + x1, y1 * w + x0, y1 * w + x1};
  taps.w = {(1 - ly) * (1 - lx), (1 - ly) * lx, ly * (1 - lx), ly * lx};
  return taps;
}

}  // namespace detail

/// Fixed-size patch extraction from a feature map for one normalized box.
///
/// The box maps onto continuous feature coordinates through the uniform cell
/// grid (u = x * w_f - 0.5), with no rounding anywhere. Each output bin
/// averages samples_per_bin^2 bilinear samples placed at regular sub-bin
/// offsets. Differentiable with respect to the feature map values.
inline Tensor roi_align(const VisualFeatureMap& map, const Tensor& box_pos, int out_h, int out_w,
                        int samples_per_bin) {
  if (box_pos.ndim() != 1 || box_pos.dim(0) != 4) {
    throw validation_error("roi_align expects a 4-vector box, got " + shape_str(box_pos.shape()));
  }
  if (out_h < 1 || out_w < 1 || samples_per_bin < 1) {
    throw validation_error("roi_align output size and sampling rate must be >= 1");
  }
  const Tensor& fmap = map.values;
  const int c = fmap.dim(0), h = map.h_f, w = map.w_f;
  const double x0 = box_pos.data()[0], y0 = box_pos.data()[1];
  const double x1 = box_pos.data()[2], y1 = box_pos.data()[3];

  const double u0 = x0 * w - 0.5, u1 = x1 * w - 0.5;
  const double v0 = y0 * h - 0.5, v1 = y1 * h - 0.5;
  if (!(u1 > u0) || !(v1 > v0)) {
    throw data_error("roi_align: box maps to zero area on the feature grid");
  }
  const double bin_w = (u1 - u0) / out_w;
  const double bin_h = (v1 - v0) / out_h;

  const int spb = samples_per_bin;
  const int bins = out_h * out_w;
  std::vector<detail::BilinearTaps> taps(static_cast<std::size_t>(bins) * spb * spb);
  for (int by = 0; by < out_h; ++by) {
    for (int bx = 0; bx < out_w; ++bx) {
      for (int sy = 0; sy < spb; ++sy) {
        for (int sx = 0; sx < spb; ++sx) {
          const double yy = v0 + (by + (sy + 0.5) / spb) * bin_h;
          const double xx = u0 + (bx + (sx + 0.5) / spb) * bin_w;
          taps[((static_cast<std::size_t>(by) * out_w + bx) * spb + sy) * spb + sx] =
              detail::bilinear_taps(yy, xx, h, w);
        }
      }
    }
  }

  Tensor out = detail::op({c, out_h, out_w}, {fmap});
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  const double inv_samples = 1.0 / (spb * spb);
  for (int ch = 0; ch < c; ++ch) {
    const double* src = fmap.data().data() + static_cast<std::size_t>(ch) * plane;
    for (int bin = 0; bin < bins; ++bin) {
      double acc = 0.0;
      for (int s = 0; s < spb * spb; ++s) {
        const auto& t = taps[static_cast<std::size_t>(bin) * spb * spb + s];
        for (int k = 0; k < 4; ++k) {
          if (t.idx[static_cast<std::size_t>(k)] >= 0) {
            acc += t.w[static_cast<std::size_t>(k)] * src[t.idx[static_cast<std::size_t>(k)]];
          }
        }
      }
      out.data()[static_cast<std::size_t>(ch) * bins + bin] = acc * inv_samples;
    }
  }

  auto fn = fmap.node, on = out.node;
  out.node->backward = [fn, on, taps, c, bins, spb, plane, inv_samples] {
    if (!fn->requires_grad) return;
    fn->ensure_grad();
    for (int ch = 0; ch < c; ++ch) {
      double* dst = fn->grad.data() + static_cast<std::size_t>(ch) * plane;
      for (int bin = 0; bin < bins; ++bin) {
        const double g = on->grad[static_cast<std::size_t>(ch) * bins + bin] * inv_samples;
        for (int s = 0; s < spb * spb; ++s) {
          const auto& t = taps[static_cast<std::size_t>(bin) * spb * spb + s];
          for (int k = 0; k < 4; ++k) {
            if (t.idx[static_cast<std::size_t>(k)] >= 0) {
              dst[t.idx[static_cast<std::size_t>(k)]] += g * t.w[static_cast<std::size_t>(k)];
            }
          }
        }
      }
    }
  };
  return out;
}

// ---------------------------------------------------------------------------
// patch-frame cross attention
// ---------------------------------------------------------------------------

struct FusionConfig {
  int d_model = 64;
  int heads = 4;
  int ff = 64;
  int layers = 2;
  int d_vis = 32;
  int roi_h = 3, roi_w = 3;
  int samples_per_bin = 2;

  void validate() const {
    TransformerConfig tc{d_model, heads, ff, layers};
    tc.validate();
    if (d_vis < 1 || roi_h < 1 || roi_w < 1 || samples_per_bin < 1) {
      throw validation_error("fusion dims must be positive");
    }
  }
};

/// The visual half of the per-box feature: ROI patch cells and full-frame
/// cells enter one token sequence (a shared cell projection plus a learned
/// segment embedding telling patch from frame), run through a stacked
/// encoder, and the patch-token outputs are pooled and projected to d_vis.
class CrossAttendBlock {
 public:
  CrossAttendBlock() = default;

  CrossAttendBlock(ParamStore& params, const std::string& prefix, FusionConfig cfg,
                   int cell_channels, std::uint64_t seed)
      : cfg_(cfg) {
    cfg.validate();
    cell_w_ = init_weight(params, prefix + "/cell_proj_w", cell_channels, cfg.d_model, seed);
    cell_b_ = params.add(prefix + "/cell_proj_b", Tensor::zeros({cfg.d_model}));
    segment_ = params.add(prefix + "/segment_emb",
                          Tensor::randn({2, cfg.d_model}, 0.1, seed, "init/" + prefix + "/segment"));
    encoder_ = TransformerEncoder(params, prefix + "/encoder",
                                  TransformerConfig{cfg.d_model, cfg.heads, cfg.ff, cfg.layers}, seed);
    out_w_ = init_weight(params, prefix + "/out_w", cfg.d_model, cfg.d_vis, seed);
    out_b_ = params.add(prefix + "/out_b", Tensor::zeros({cfg.d_vis}));
  }

  /// patch: [C x ph x pw] from roi_align; map: the same frame's feature map.
  Tensor forward(const Tensor& patch, const VisualFeatureMap& map) const {
    const int c = patch.dim(0);
    const int patch_tokens = patch.dim(1) * patch.dim(2);
    const int frame_tokens = map.h_f * map.w_f;

    Tensor patch_cells = transpose(reshape(patch, {c, patch_tokens}));
    Tensor frame_cells = transpose(reshape(map.values, {c, frame_tokens}));
    Tensor pt = add_rowvec(linear(patch_cells, cell_w_, cell_b_), take_row(segment_, 0));
    Tensor ft = add_rowvec(linear(frame_cells, cell_w_, cell_b_), take_row(segment_, 1));
    Tensor x = encoder_.forward(concat_rows({pt, ft}));
    Tensor pooled = masked_mean_rows(slice_rows(x, 0, patch_tokens),
                                     std::vector<double>(static_cast<std::size_t>(patch_tokens), 1.0));
    return linear(pooled, out_w_, out_b_);
  }

  const FusionConfig& config() const { return cfg_; }

 private:
  FusionConfig cfg_;
  Tensor cell_w_, cell_b_, segment_;
  TransformerEncoder encoder_;
  Tensor out_w_, out_b_;
};

// ---------------------------------------------------------------------------
// concatenation
// ---------------------------------------------------------------------------

/// f1 = [f_vis || f_text], the per-box multimodal feature. Order is fixed
/// vis-then-text.
inline Tensor fuse(const Tensor& f_vis, const Tensor& f_text, int d_vis, int d_text) {
  if (f_vis.ndim() != 1 || f_vis.dim(0) != d_vis || f_text.ndim() != 1 || f_text.dim(0) != d_text) {
    throw validation_error("fuse: got " + shape_str(f_vis.shape()) + " and " +
                           shape_str(f_text.shape()) + ", expected [" + std::to_string(d_vis) +
                           "] and [" + std::to_string(d_text) + "]");
  }
  return concat_vec({f_vis, f_text});
}

}  // namespace cgmm
