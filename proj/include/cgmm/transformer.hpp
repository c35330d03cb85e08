#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "cgmm/common.hpp"
#include "cgmm/ops.hpp"
#include "cgmm/tensor.hpp"

namespace cgmm {

struct TransformerConfig {
  int d_model = 32;
  int heads = 4;
  int ff = 64;
  int layers = 2;

  void validate() const {
    if (d_model < 1 || heads < 1 || ff < 1 || layers < 1) {
      throw validation_error("transformer dims must be positive");
    }
    if (d_model % heads != 0) {
      throw validation_error("d_model " + std::to_string(d_model) +
                             " must be divisible by heads " + std::to_string(heads));
    }
  }
};

inline Tensor init_weight(ParamStore& params, const std::string& name, int fan_in, int fan_out,
                          std::uint64_t seed) {
  return params.add(name, Tensor::randn({fan_in, fan_out}, 1.0 / std::sqrt(static_cast<double>(fan_in)),
                                        seed, "init/" + name));
}

/// Post-LN transformer encoder stack (the torch TransformerEncoderLayer
/// arrangement): x = LN(x + attention(x)); x = LN(x + ffn(x)).
/// An optional additive key mask (0 keep, -1e30 drop) removes positions from
/// every attention row, which is how pad tokens stay invisible.
class TransformerEncoder {
 public:
  TransformerEncoder() = default;

  TransformerEncoder(ParamStore& params, const std::string& prefix, TransformerConfig cfg,
                     std::uint64_t seed)
      : cfg_(cfg) {
    cfg.validate();
    for (int l = 0; l < cfg.layers; ++l) {
      const std::string p = prefix + "/layer" + std::to_string(l) + "/";
      Layer layer;
      layer.wq = init_weight(params, p + "wq", cfg.d_model, cfg.d_model, seed);
      layer.bq = params.add(p + "bq", Tensor::zeros({cfg.d_model}));
      layer.wk = init_weight(params, p + "wk", cfg.d_model, cfg.d_model, seed);
      layer.bk = params.add(p + "bk", Tensor::zeros({cfg.d_model}));
      layer.wv = init_weight(params, p + "wv", cfg.d_model, cfg.d_model, seed);
      layer.bv = params.add(p + "bv", Tensor::zeros({cfg.d_model}));
      layer.wo = init_weight(params, p + "wo", cfg.d_model, cfg.d_model, seed);
      layer.bo = params.add(p + "bo", Tensor::zeros({cfg.d_model}));
      layer.ln1_g = params.add(p + "ln1_gain", Tensor::full({cfg.d_model}, 1.0));
      layer.ln1_b = params.add(p + "ln1_bias", Tensor::zeros({cfg.d_model}));
      layer.w1 = init_weight(params, p + "ffn_w1", cfg.d_model, cfg.ff, seed);
      layer.b1 = params.add(p + "ffn_b1", Tensor::zeros({cfg.ff}));
      layer.w2 = init_weight(params, p + "ffn_w2", cfg.ff, cfg.d_model, seed);
      layer.b2 = params.add(p + "ffn_b2", Tensor::zeros({cfg.d_model}));
      layer.ln2_g = params.add(p + "ln2_gain", Tensor::full({cfg.d_model}, 1.0));
      layer.ln2_b = params.add(p + "ln2_bias", Tensor::zeros({cfg.d_model}));
      layers_.push_back(std::move(layer));
    }
  }

  /// x: [T x d_model]; key_mask: empty or T additive values (0 or -1e30).
  Tensor forward(Tensor x, const std::vector<double>& key_mask = {}) const {
    const int t = x.dim(0);
    if (!key_mask.empty() && static_cast<int>(key_mask.size()) != t) {
      throw validation_error("key mask length must match sequence length");
    }
    for (const Layer& l : layers_) {
      Tensor attn = self_attention(x, l, key_mask);
      x = layer_norm(add(x, attn), l.ln1_g, l.ln1_b);
      Tensor h = linear(relu(linear(x, l.w1, l.b1)), l.w2, l.b2);
      x = layer_norm(add(x, h), l.ln2_g, l.ln2_b);
    }
    return x;
  }

  const TransformerConfig& config() const { return cfg_; }

 private:
  struct Layer {
    Tensor wq, bq, wk, bk, wv, bv, wo, bo;
    Tensor ln1_g, ln1_b, w1, b1, w2, b2, ln2_g, ln2_b;
  };

  Tensor self_attention(const Tensor& x, const Layer& l, const std::vector<double>& key_mask) const {
    const int t = x.dim(0);
    const int dh = cfg_.d_model / cfg_.heads;
    const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
    Tensor q = linear(x, l.wq, l.bq);
    Tensor k = linear(x, l.wk, l.bk);
    Tensor v = linear(x, l.wv, l.bv);
    std::vector<double> mask_matrix;
    if (!key_mask.empty()) {
      mask_matrix.resize(static_cast<std::size_t>(t) * t);
      for (int i = 0; i < t; ++i) {
        for (int j = 0; j < t; ++j) {
          mask_matrix[static_cast<std::size_t>(i) * t + j] = key_mask[static_cast<std::size_t>(j)];
        }
      }
    }
    std::vector<Tensor> heads;
    heads.reserve(static_cast<std::size_t>(cfg_.heads));
    for (int h = 0; h < cfg_.heads; ++h) {
      Tensor qh = slice_cols(q, h * dh, dh);
      Tensor kh = slice_cols(k, h * dh, dh);
      Tensor vh = slice_cols(v, h * dh, dh);
      Tensor scores = scale(matmul(qh, transpose(kh)), inv_sqrt_dh);
      if (!mask_matrix.empty()) scores = add_const(scores, mask_matrix);
      heads.push_back(matmul(softmax(scores), vh));
    }
    return linear(concat_cols(heads), l.wo, l.bo);
  }

  TransformerConfig cfg_;
  std::vector<Layer> layers_;
};

/// Fixed sinusoidal position table with the usual sin/cos interleave.
inline std::vector<double> sinusoidal_positions(int t, int d) {
  std::vector<double> pe(static_cast<std::size_t>(t) * d);
  for (int pos = 0; pos < t; ++pos) {
    for (int i = 0; i < d; ++i) {
      const double angle = pos / std::pow(10000.0, 2.0 * (i / 2) / d);
      pe[static_cast<std::size_t>(pos) * d + i] = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  }
  return pe;
}

}  // namespace cgmm
