#pragma once

#include <string>
#include <vector>

#include "cgmm/common.hpp"
#include "cgmm/data.hpp"
#include "cgmm/ops.hpp"
#include "cgmm/tensor.hpp"
#include "cgmm/transformer.hpp"

namespace cgmm {

// ---------------------------------------------------------------------------
// visual stream: a deliberately shallow CNN. Depth stays at three stages by
// default; low-level color and layout cues are the signal, not semantics.
// ---------------------------------------------------------------------------

struct VisualEncoderConfig {
  std::vector<int> channels = {8, 16, 32};
  int kernel = 3;
  int stride = 2;
  int padding = 1;
  bool use_bias = true;

  void validate() const {
    if (channels.empty()) throw validation_error("visual encoder needs at least one stage");
    if (kernel < 1 || stride < 1 || padding < 0) {
      throw validation_error("visual encoder kernel/stride/padding out of range");
    }
  }
};

/// Feature map plus the grid geometry needed to place boxes on it. Cells
/// tile the frame uniformly: cell (i, j) is centered at normalized
/// ((j + 0.5) / w_f, (i + 0.5) / h_f), so a normalized coordinate maps to
/// the continuous feature position u = x * w_f - 0.5 with no rounding.
struct VisualFeatureMap {
  Tensor values;  // [C_v x H_f x W_f]
  int h_f = 0, w_f = 0;
};

class VisualEncoder {
 public:
  VisualEncoder() = default;

  VisualEncoder(ParamStore& params, const std::string& prefix, VisualEncoderConfig cfg,
                std::uint64_t seed)
      : cfg_(std::move(cfg)) {
    cfg_.validate();
    int in_ch = 3;
    for (std::size_t s = 0; s < cfg_.channels.size(); ++s) {
      const std::string p = prefix + "/conv" + std::to_string(s);
      const int out_ch = cfg_.channels[s];
      const double fan_in = static_cast<double>(in_ch * cfg_.kernel * cfg_.kernel);
      kernels_.push_back(params.add(
          p + "_kernels", Tensor::randn({out_ch, in_ch, cfg_.kernel, cfg_.kernel},
                                        1.0 / std::sqrt(fan_in), seed, "init/" + p)));
      if (cfg_.use_bias) {
        biases_.push_back(params.add(p + "_bias", Tensor::zeros({out_ch})));
      }
      in_ch = out_ch;
    }
  }

  VisualFeatureMap forward(const Tensor& frame) const {
    Tensor x = frame;
    try {
      for (std::size_t s = 0; s < kernels_.size(); ++s) {
        x = conv2d(x, kernels_[s], cfg_.stride, cfg_.padding);
        if (cfg_.use_bias) x = add_chan(x, biases_[s]);
        x = relu(x);
      }
    } catch (const validation_error& e) {
      throw validation_error(std::string("visual encoder: frame too small for the configured "
                                         "stages (") + e.what() + ")");
    }
    VisualFeatureMap map;
    map.values = x;
    map.h_f = x.dim(1);
    map.w_f = x.dim(2);
    return map;
  }

  int out_channels() const { return cfg_.channels.back(); }
  const VisualEncoderConfig& config() const { return cfg_; }

 private:
  VisualEncoderConfig cfg_;
  std::vector<Tensor> kernels_;
  std::vector<Tensor> biases_;
};

// ---------------------------------------------------------------------------
// text stream: embeddings + sinusoidal positions into a small encoder stack,
// mean-pooled over non-pad positions. Stands in for the paper-scale BERT.
// ---------------------------------------------------------------------------

struct TextEncoderConfig {
  int vocab_size = 256;
  int d_text = 32;
  int heads = 4;
  int ff = 64;
  int layers = 2;
  int pad_id = 0;

  void validate() const {
    if (vocab_size < 2) throw validation_error("vocab_size must be >= 2");
    TransformerConfig tc{d_text, heads, ff, layers};
    tc.validate();
  }
};

class TextEncoder {
 public:
  TextEncoder() = default;

  TextEncoder(ParamStore& params, const std::string& prefix, TextEncoderConfig cfg,
              std::uint64_t seed)
      : cfg_(cfg) {
    cfg.validate();
    embedding_ = params.add(prefix + "/embedding",
                            Tensor::randn({cfg.vocab_size, cfg.d_text}, 0.5, seed,
                                          "init/" + prefix + "/embedding"));
    encoder_ = TransformerEncoder(params, prefix + "/encoder",
                                  TransformerConfig{cfg.d_text, cfg.heads, cfg.ff, cfg.layers}, seed);
  }

  /// Pooled text feature; all-pad input pools to the zero vector.
  Tensor forward(const std::vector<int>& tokens) const {
    if (tokens.empty()) throw validation_error("text encoder got an empty token sequence");
    const int t = static_cast<int>(tokens.size());
    std::vector<double> live(static_cast<std::size_t>(t));
    std::vector<double> key_mask(static_cast<std::size_t>(t));
    bool any_live = false;
    for (int i = 0; i < t; ++i) {
      const bool pad = tokens[static_cast<std::size_t>(i)] == cfg_.pad_id;
      live[static_cast<std::size_t>(i)] = pad ? 0.0 : 1.0;
      key_mask[static_cast<std::size_t>(i)] = pad ? -1e30 : 0.0;
      any_live |= !pad;
    }
    if (!any_live) return Tensor::zeros({cfg_.d_text});

    Tensor x = embedding_lookup(embedding_, tokens);
    x = add_const(x, sinusoidal_positions(t, cfg_.d_text));
    x = encoder_.forward(x, key_mask);
    return masked_mean_rows(x, live);
  }

  const TextEncoderConfig& config() const { return cfg_; }
  Tensor embedding_table() const { return embedding_; }

 private:
  TextEncoderConfig cfg_;
  Tensor embedding_;
  TransformerEncoder encoder_;
};

// ---------------------------------------------------------------------------
// position stream
// ---------------------------------------------------------------------------

/// f_pos is literally the normalized corner coordinates.
inline Tensor encode_position(const TextBox& box) {
  box.validate();
  return Tensor({4}, {box.x0, box.y0, box.x1, box.y1});
}

}  // namespace cgmm
