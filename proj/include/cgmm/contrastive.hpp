#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "cgmm/common.hpp"
#include "cgmm/data.hpp"
#include "cgmm/model.hpp"
#include "cgmm/ops.hpp"
#include "cgmm/rng.hpp"
#include "cgmm/tensor.hpp"
#include "cgmm/vocab.hpp"

namespace cgmm {

// ---------------------------------------------------------------------------
// positive-pair construction
// ---------------------------------------------------------------------------

struct AugmentModes {
  bool pos = true;  // coordinate jitter
  bool cv = true;   // color jitter
  bool nlp = true;  // synonym replacement

  bool any() const { return pos || cv || nlp; }
};

struct AugmentConfig {
  double pos_delta = 0.02;
  double cv_scale_lo = 0.8, cv_scale_hi = 1.25;
  double cv_shift_lo = -0.1, cv_shift_hi = 0.1;
  double nlp_prob = 0.3;
};

/// Builds the positive view of a frame: one per-channel affine color map for
/// the whole frame (CV), independent corner jitter per box (POS), and
/// per-token synonym replacement (NLP). Modes compose; a disabled mode draws
/// nothing from the stream, so single modes stay exactly isolated.
inline FrameSample augment_frame(const FrameSample& sample, const AugmentModes& modes,
                                 const AugmentConfig& cfg, const SynonymTable& synonyms,
                                 int pad_id, RngStream& rng) {
  if (!modes.any()) throw validation_error("augment requires at least one mode");
  FrameSample out = sample;

  if (modes.cv) {
    double scale[3], shift[3];
    for (int c = 0; c < 3; ++c) {
      scale[c] = rng.uniform(cfg.cv_scale_lo, cfg.cv_scale_hi);
      shift[c] = rng.uniform(cfg.cv_shift_lo, cfg.cv_shift_hi);
    }
    out.frame = Tensor::zeros(sample.frame.shape());
    const std::size_t plane = static_cast<std::size_t>(sample.frame.dim(1)) * sample.frame.dim(2);
    for (int c = 0; c < 3; ++c) {
      for (std::size_t i = 0; i < plane; ++i) {
        out.frame.data()[static_cast<std::size_t>(c) * plane + i] = std::clamp(
            scale[c] * sample.frame.data()[static_cast<std::size_t>(c) * plane + i] + shift[c], 0.0, 1.0);
      }
    }
  }

  for (TextBox& box : out.boxes) {
    if (modes.pos) {
      bool ok = false;
      for (int attempt = 0; attempt < 2 && !ok; ++attempt) {
        const double x0 = std::clamp(box.x0 + rng.uniform(-cfg.pos_delta, cfg.pos_delta), 0.0, 1.0);
        const double y0 = std::clamp(box.y0 + rng.uniform(-cfg.pos_delta, cfg.pos_delta), 0.0, 1.0);
        const double x1 = std::clamp(box.x1 + rng.uniform(-cfg.pos_delta, cfg.pos_delta), 0.0, 1.0);
        const double y1 = std::clamp(box.y1 + rng.uniform(-cfg.pos_delta, cfg.pos_delta), 0.0, 1.0);
        if (x0 < x1 && y0 < y1) {
          box.x0 = x0;
          box.y0 = y0;
          box.x1 = x1;
          box.y1 = y1;
          ok = true;
        }
      }
      if (!ok) {
        throw data_error("coordinate jitter left a degenerate box after one retry");
      }
    }
    if (modes.nlp) {
      for (int& token : box.tokens) {
        if (token == pad_id) continue;
        const int g = synonyms.group_of(token);
        if (g < 0) continue;
        if (rng.bernoulli(cfg.nlp_prob)) {
          const auto& group = synonyms.groups[static_cast<std::size_t>(g)];
          std::size_t self = 0;
          while (group[self] != token) ++self;
          // uniform over the group excluding the token itself
          std::size_t pick = static_cast<std::size_t>(rng.below(static_cast<int>(group.size()) - 1));
          if (pick >= self) ++pick;
          token = group[pick];
        }
      }
      // keep raw_text in sync is not needed: tokens are what the model reads
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// losses
// ---------------------------------------------------------------------------

/// Normalized-temperature cross entropy over a batch of 2N interleaved
/// embeddings [a0, p0, a1, p1, ...]. Embeddings are L2-normalized, pairwise
/// dot products are scaled by 1/tau, the self-similarity is masked out of
/// each row, and the loss averages -log softmax(positive) over all 2N items.
inline Tensor contrastive_loss(const std::vector<Tensor>& interleaved, double tau) {
  const int m = static_cast<int>(interleaved.size());
  if (m < 4 || m % 2 != 0) {
    throw validation_error("contrastive batch needs 2N >= 4 embeddings, got " + std::to_string(m));
  }
  if (!(tau > 0.0)) throw validation_error("temperature must be positive");

  Tensor e = rows_l2_normalize(stack_rows(interleaved));
  Tensor sims = scale(matmul(e, transpose(e)), 1.0 / tau);
  std::vector<double> diag_mask(static_cast<std::size_t>(m) * m, 0.0);
  for (int i = 0; i < m; ++i) diag_mask[static_cast<std::size_t>(i) * m + i] = -1e30;
  Tensor masked = add_const(sims, diag_mask);

  std::vector<int> positive(static_cast<std::size_t>(m));
  for (int i = 0; i < m; ++i) positive[static_cast<std::size_t>(i)] = i ^ 1;
  Tensor per_item = sub(logsumexp_rows(masked), gather_per_row(masked, positive));
  return scale(sum_all(per_item), 1.0 / m);
}

/// Convex combination of the two losses. The end points return the inputs
/// themselves so the boundary cases are bit-exact.
inline Tensor joint_loss(const Tensor& l_cont, const Tensor& l_sup, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) {
    throw validation_error("joint loss weight must lie in [0, 1], got " + std::to_string(alpha));
  }
  if (alpha == 0.0) return l_sup;
  if (alpha == 1.0) return l_cont;
  return add(scale(l_cont, alpha), scale(l_sup, 1.0 - alpha));
}

// ---------------------------------------------------------------------------
// embedding construction
// ---------------------------------------------------------------------------

/// The embedding fed to the contrastive loss: each modality is normalized on
/// its own before concatenation, so neither modality's magnitude can
/// dominate the similarity, and a masked (all-zero) modality contributes a
/// zero block. A side effect worth knowing: when every batch item carries
/// the same text activation, the normalization geometry cancels the text
/// gradient exactly, so color-only positive pairs cannot move the token
/// embeddings.
inline Tensor contrastive_embedding(const CgmmModel::BoxOutputs& box) {
  return concat_vec({l2_normalize_or_zero(box.f_vis), l2_normalize_or_zero(box.f_text)});
}

}  // namespace cgmm
