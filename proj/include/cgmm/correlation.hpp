#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "cgmm/common.hpp"
#include "cgmm/ops.hpp"
#include "cgmm/tensor.hpp"
#include "cgmm/transformer.hpp"

// Layout-graph aggregation over a frame's text boxes: each box attends over
// its nearest neighbors, neighbor features are combined with learned
// attention weights, and the aggregate is concatenated onto the box's own
// feature.

namespace cgmm {

struct NeighborGraph {
  std::vector<std::vector<int>> neighbors;  // per box, sorted by (distance, index)
  int n_max = 4;
};

/// k nearest neighbors by Euclidean distance between box centers, ties
/// broken by ascending box index. A single box gets an empty list.
inline NeighborGraph build_neighbor_graph(const std::vector<std::pair<double, double>>& centers,
                                          int n_max) {
  if (centers.empty()) throw validation_error("neighbor graph needs at least one box");
  if (n_max < 0) throw validation_error("n_max must be >= 0");
  NeighborGraph g;
  g.n_max = n_max;
  const int n = static_cast<int>(centers.size());
  g.neighbors.resize(static_cast<std::size_t>(n));
  for (int j = 0; j < n; ++j) {
    std::vector<std::pair<double, int>> by_dist;
    by_dist.reserve(static_cast<std::size_t>(n) - 1);
    for (int k = 0; k < n; ++k) {
      if (k == j) continue;
      const double dx = centers[static_cast<std::size_t>(j)].first - centers[static_cast<std::size_t>(k)].first;
      const double dy = centers[static_cast<std::size_t>(j)].second - centers[static_cast<std::size_t>(k)].second;
      by_dist.emplace_back(dx * dx + dy * dy, k);
    }
    std::sort(by_dist.begin(), by_dist.end());
    const int take = std::min(n_max, static_cast<int>(by_dist.size()));
    for (int i = 0; i < take; ++i) {
      g.neighbors[static_cast<std::size_t>(j)].push_back(by_dist[static_cast<std::size_t>(i)].second);
    }
  }
  return g;
}

/// Pairwise scores and Eq.-style aggregation. The pair score is
/// mlp(fc(f_j) - fc(f_k)): a shared linear map into the correlation space,
/// a subtraction, then a two-layer perceptron down to one scalar.
class CorrelationNet {
 public:
  CorrelationNet() = default;

  CorrelationNet(ParamStore& params, const std::string& prefix, int d_fused, int d_corr,
                 std::uint64_t seed)
      : d_fused_(d_fused), d_corr_(d_corr) {
    if (d_fused < 1 || d_corr < 1) throw validation_error("correlation dims must be positive");
    fc_w_ = init_weight(params, prefix + "/fc_w", d_fused, d_corr, seed);
    fc_b_ = params.add(prefix + "/fc_b", Tensor::zeros({d_corr}));
    mlp_w1_ = init_weight(params, prefix + "/mlp_w1", d_corr, d_corr, seed);
    mlp_b1_ = params.add(prefix + "/mlp_b1", Tensor::zeros({d_corr}));
    mlp_w2_ = init_weight(params, prefix + "/mlp_w2", d_corr, 1, seed);
    mlp_b2_ = params.add(prefix + "/mlp_b2", Tensor::zeros({1}));
  }

  /// Unnormalized score for one ordered pair.
  Tensor pair_score(const Tensor& f_j, const Tensor& f_k) const {
    Tensor diff = sub(linear(f_j, fc_w_, fc_b_), linear(f_k, fc_w_, fc_b_));
    return score_from_diff(reshape(diff, {1, d_corr_}));
  }

  /// Softmax-normalized weights of box j over its neighbors.
  Tensor neighbor_weights(const std::vector<Tensor>& fused, const NeighborGraph& graph,
                          int j) const {
    const auto& nbrs = graph.neighbors[static_cast<std::size_t>(j)];
    if (nbrs.empty()) throw validation_error("no neighbors to weight");
    Tensor fj = linear(fused[static_cast<std::size_t>(j)], fc_w_, fc_b_);
    std::vector<Tensor> diffs;
    diffs.reserve(nbrs.size());
    for (int k : nbrs) {
      diffs.push_back(sub(fj, linear(fused[static_cast<std::size_t>(k)], fc_w_, fc_b_)));
    }
    Tensor scores = score_from_diff(stack_rows(diffs));  // [k x 1]
    return softmax(reshape(scores, {static_cast<int>(nbrs.size())}));
  }

  /// Eq.-style aggregation: sum of weight * neighbor feature. Isolated boxes
  /// aggregate to the zero vector (the neighbor set excludes the box itself).
  Tensor aggregate(const std::vector<Tensor>& fused, const NeighborGraph& graph, int j) const {
    const auto& nbrs = graph.neighbors[static_cast<std::size_t>(j)];
    if (nbrs.empty()) return Tensor::zeros({d_fused_});
    Tensor w = neighbor_weights(fused, graph, j);
    double sum = 0.0;
    for (double v : w.data()) sum += v;
    if (std::abs(sum - 1.0) > 1e-9) {
      throw numeric_error("neighbor weights of box " + std::to_string(j) + " are not normalized");
    }
    std::vector<Tensor> rows;
    rows.reserve(nbrs.size());
    for (int k : nbrs) rows.push_back(fused[static_cast<std::size_t>(k)]);
    return weighted_sum_rows(stack_rows(rows), w);
  }

  int d_fused() const { return d_fused_; }

 private:
  Tensor score_from_diff(const Tensor& diffs) const {
    return linear(relu(linear(diffs, mlp_w1_, mlp_b1_)), mlp_w2_, mlp_b2_);
  }

  int d_fused_ = 0, d_corr_ = 0;
  Tensor fc_w_, fc_b_, mlp_w1_, mlp_b1_, mlp_w2_, mlp_b2_;
};

/// f_final = [f_aggregated || f_own], always 2 * d_fused long.
inline Tensor final_feature(const Tensor& f_b, const Tensor& f_1) {
  if (f_b.ndim() != 1 || f_1.ndim() != 1 || f_b.dim(0) != f_1.dim(0)) {
    throw validation_error("final_feature: " + shape_str(f_b.shape()) + " vs " +
                           shape_str(f_1.shape()));
  }
  return concat_vec({f_b, f_1});
}

}  // namespace cgmm
