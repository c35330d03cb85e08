#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "cgmm/adam.hpp"
#include "cgmm/contrastive.hpp"
#include "cgmm/data.hpp"
#include "cgmm/metrics.hpp"
#include "cgmm/model.hpp"
#include "cgmm/ops.hpp"

namespace cgmm {

enum class Strategy { supervised_only, finetune, joint };

inline const char* strategy_to_string(Strategy s) {
  switch (s) {
    case Strategy::supervised_only: return "supervised_only";
    case Strategy::finetune: return "finetune";
    case Strategy::joint: return "joint";
  }
  throw validation_error("invalid strategy value");
}

inline Strategy strategy_from_string(const std::string& s) {
  if (s == "supervised_only") return Strategy::supervised_only;
  if (s == "finetune") return Strategy::finetune;
  if (s == "joint") return Strategy::joint;
  throw validation_error("unknown strategy: \"" + s + "\" (expected supervised_only, finetune, or joint)");
}

struct TrainHyper {
  int epochs = 30;
  int batch_frames = 8;
  double lr = 1e-3;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  double alpha = 0.5;       // joint loss weight on the contrastive term
  double tau = 0.2;         // contrastive temperature
  int pretrain_epochs = 6;  // contrastive warmup epochs for the pretrain command
  double train_fraction = 0.75;
  AugmentModes modes;
  AugmentConfig augment;

  void validate() const {
    if (epochs < 0 || batch_frames < 1) throw validation_error("train schedule out of range");
    if (!(lr >= 0.0)) throw validation_error("learning rate must be non-negative");
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw validation_error("alpha must lie in [0, 1]");
    if (!(tau > 0.0)) throw validation_error("tau must be positive");
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
      throw validation_error("train_fraction must lie in (0, 1)");
    }
  }
};

/// Frame-pointer views of the three roles. Standard-split frames divide
/// deterministically by file order: the leading train_fraction of them
/// train, the rest form the standard evaluation set; generalization frames
/// are evaluation-only.
struct SplitView {
  std::vector<const FrameSample*> train;
  std::vector<const FrameSample*> eval_standard;
  std::vector<const FrameSample*> eval_generalization;
};

inline SplitView make_split(const LoadedDataset& ds, double train_fraction) {
  SplitView view;
  std::vector<const FrameSample*> standard;
  for (const auto& f : ds.frames) {
    if (f.split == Split::standard) standard.push_back(&f);
    else view.eval_generalization.push_back(&f);
  }
  const std::size_t n_train =
      static_cast<std::size_t>(std::floor(train_fraction * static_cast<double>(standard.size())));
  for (std::size_t i = 0; i < standard.size(); ++i) {
    (i < n_train ? view.train : view.eval_standard).push_back(standard[i]);
  }
  return view;
}

struct CsvLog {
  std::vector<std::string> rows;  // epoch,step,loss,lr

  void add(int epoch, int step, double loss, double lr) {
    char buf[128];
    std::snprintf(buf, sizeof(buf), "%d,%d,%.9f,%.6g", epoch, step, loss, lr);
    rows.emplace_back(buf);
  }
};

// ---------------------------------------------------------------------------
// evaluation
// ---------------------------------------------------------------------------

inline MetricsReport evaluate_frames(const CgmmModel& model,
                                     const std::vector<const FrameSample*>& frames,
                                     const AblationMask& mask, const std::string& split_name) {
  std::vector<int> truth, pred;
  for (const FrameSample* f : frames) {
    auto out = model.forward(*f, mask);
    const int n = static_cast<int>(f->boxes.size());
    for (int i = 0; i < n; ++i) {
      truth.push_back(static_cast<int>(f->boxes[static_cast<std::size_t>(i)].label));
      int best = 0;
      for (int k = 1; k < kNumClasses; ++k) {
        if (out.logits.at(i, k) > out.logits.at(i, best)) best = k;
      }
      pred.push_back(best);
    }
  }
  return compute_metrics(truth, pred, split_name);
}

// ---------------------------------------------------------------------------
// training loops
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<const FrameSample*> shuffled_epoch(const std::vector<const FrameSample*>& frames,
                                                      std::uint64_t seed, int epoch) {
  std::vector<const FrameSample*> order = frames;
  RngStream rng(seed, "shuffle/" + std::to_string(epoch));
  for (int i = static_cast<int>(order.size()) - 1; i > 0; --i) {
    std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(rng.below(i + 1))]);
  }
  return order;
}

inline void check_loss(double value, int epoch, int step) {
  if (!std::isfinite(value)) {
    throw numeric_error("training diverged: non-finite loss at epoch " + std::to_string(epoch) +
                        " step " + std::to_string(step));
  }
}

}  // namespace detail

struct PretrainResult {
  std::vector<double> epoch_losses;
  CsvLog log;
};

/// Contrastive-only warmup over unlabeled frames. Labels are never read;
/// only encoder and fusion parameters move.
inline PretrainResult pretrain_model(CgmmModel& model, const LoadedDataset& ds,
                                     const std::vector<const FrameSample*>& frames,
                                     const TrainHyper& hp, int epochs, std::uint64_t seed) {
  hp.validate();
  if (!hp.modes.any()) throw validation_error("pretraining needs at least one augmentation mode");
  AdamState adam;
  adam.lr = hp.lr;
  adam.beta1 = hp.beta1;
  adam.beta2 = hp.beta2;
  adam.eps = hp.eps;

  PretrainResult result;
  const AblationMask mask;  // pretraining never masks modalities
  for (int epoch = 0; epoch < epochs; ++epoch) {
    auto order = detail::shuffled_epoch(frames, seed, epoch);
    double epoch_loss = 0.0;
    int batches = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(hp.batch_frames)) {
      const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(hp.batch_frames));
      std::vector<Tensor> embeddings;
      for (std::size_t fi = start; fi < stop; ++fi) {
        const FrameSample& frame = *order[fi];
        RngStream aug_rng(seed, "pretrain_aug/" + std::to_string(epoch) + "/" + frame.frame_path);
        FrameSample positive = augment_frame(frame, hp.modes, hp.augment, ds.synonyms,
                                             ds.vocab.pad_id, aug_rng);
        auto anchors = model.encode_boxes(frame, mask);
        auto positives = model.encode_boxes(positive, mask);
        for (std::size_t b = 0; b < anchors.size(); ++b) {
          embeddings.push_back(contrastive_embedding(anchors[b]));
          embeddings.push_back(contrastive_embedding(positives[b]));
        }
      }
      if (embeddings.size() < 4) continue;  // a lone box cannot form a batch
      model.params().zero_grad();
      Tensor loss = contrastive_loss(embeddings, hp.tau);
      detail::check_loss(loss.item(), epoch, batches);
      loss.backward();
      adam.step_count += 1;
      for (auto& [name, t] : model.params().map()) {
        if (!model.is_backbone_param(name)) continue;
        auto& m = adam.first_moment[name];
        auto& v = adam.second_moment[name];
        if (m.size() != t.numel()) m.assign(t.numel(), 0.0);
        if (v.size() != t.numel()) v.assign(t.numel(), 0.0);
        if (t.node->grad.size() != t.numel()) t.node->grad.assign(t.numel(), 0.0);
        adam_update(t.data(), t.node->grad, m, v, adam.step_count, adam);
      }
      result.log.add(epoch, batches, loss.item(), hp.lr);
      epoch_loss += loss.item();
      ++batches;
    }
    result.epoch_losses.push_back(batches > 0 ? epoch_loss / batches : 0.0);
  }
  return result;
}

struct TrainResult {
  std::vector<double> epoch_losses;
  std::vector<MetricsReport> epoch_standard_metrics;
  CsvLog log;
  AdamState adam;
};

/// Supervised or joint training over the train portion of the standard
/// split. The batch unit is a frame: all boxes of a frame enter together so
/// the correlation stage always sees its full neighbor context.
inline TrainResult train_model(CgmmModel& model, const LoadedDataset& ds, const SplitView& split,
                               Strategy strategy, const AblationMask& mask, const TrainHyper& hp,
                               std::uint64_t seed, bool eval_each_epoch = true) {
  hp.validate();
  if (split.train.empty()) throw validation_error("training split is empty");
  {
    std::array<bool, kNumClasses> seen{};
    for (const FrameSample* f : split.train) {
      for (const auto& b : f->boxes) seen[static_cast<std::size_t>(b.label)] = true;
    }
    for (int c = 0; c < kNumClasses; ++c) {
      if (!seen[static_cast<std::size_t>(c)]) {
        throw validation_error(std::string("training split has no samples of class ") +
                               label_to_string(static_cast<TextClass>(c)));
      }
    }
  }
  const bool use_joint = strategy == Strategy::joint;

  AdamState adam;
  adam.lr = hp.lr;
  adam.beta1 = hp.beta1;
  adam.beta2 = hp.beta2;
  adam.eps = hp.eps;

  TrainResult result;
  for (int epoch = 0; epoch < hp.epochs; ++epoch) {
    auto order = detail::shuffled_epoch(split.train, seed, epoch);
    double epoch_loss = 0.0;
    int batches = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(hp.batch_frames)) {
      const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(hp.batch_frames));
      std::vector<Tensor> logit_blocks;
      std::vector<int> labels;
      std::vector<Tensor> embeddings;
      for (std::size_t fi = start; fi < stop; ++fi) {
        const FrameSample& frame = *order[fi];
        auto out = model.forward(frame, mask);
        logit_blocks.push_back(out.logits);
        for (const auto& b : frame.boxes) labels.push_back(static_cast<int>(b.label));
        if (use_joint) {
          RngStream aug_rng(seed, "joint_aug/" + std::to_string(epoch) + "/" + frame.frame_path);
          FrameSample positive = augment_frame(frame, hp.modes, hp.augment, ds.synonyms,
                                               ds.vocab.pad_id, aug_rng);
          auto positives = model.encode_boxes(positive, mask);
          for (std::size_t b = 0; b < out.boxes.size(); ++b) {
            embeddings.push_back(contrastive_embedding(out.boxes[b]));
            embeddings.push_back(contrastive_embedding(positives[b]));
          }
        }
      }
      model.params().zero_grad();
      Tensor l_sup = cross_entropy_mean(concat_rows(logit_blocks), labels);
      Tensor loss = l_sup;
      if (use_joint && embeddings.size() >= 4) {
        loss = joint_loss(contrastive_loss(embeddings, hp.tau), l_sup, hp.alpha);
      }
      detail::check_loss(loss.item(), epoch, batches);
      loss.backward();
      adam_step(model.params(), adam);
      result.log.add(epoch, batches, loss.item(), hp.lr);
      epoch_loss += loss.item();
      ++batches;
    }
    result.epoch_losses.push_back(batches > 0 ? epoch_loss / batches : 0.0);
    if (eval_each_epoch && !split.eval_standard.empty()) {
      result.epoch_standard_metrics.push_back(
          evaluate_frames(model, split.eval_standard, mask, "standard"));
    }
  }
  result.adam = std::move(adam);
  return result;
}

// ---------------------------------------------------------------------------
// ablation grid
// ---------------------------------------------------------------------------

/// Which paths a grid row drops, plus its training strategy. Dropping
/// Contrastive forces plain supervised training (no warmup, no joint term).
struct AblationSpec {
  std::string name;
  std::set<std::string> drops;  // subset of {CV, NLP, POS, CorrelationNet, Contrastive}
  Strategy strategy = Strategy::joint;

  AblationMask mask() const {
    AblationMask m;
    for (const auto& d : drops) {
      if (d == "CV") m.drop_cv = true;
      else if (d == "NLP") m.drop_nlp = true;
      else if (d == "POS") m.drop_pos = true;
      else if (d == "CorrelationNet") m.drop_correlation = true;
      else if (d == "Contrastive") m.drop_contrastive = true;
      else throw validation_error("unknown ablation drop: \"" + d + "\"");
    }
    return m;
  }

  Strategy effective_strategy() const {
    return mask().drop_contrastive ? Strategy::supervised_only : strategy;
  }
};

struct AblationRow {
  AblationSpec spec;
  std::uint64_t seed = 0;
  bool failed = false;
  std::string error;
  MetricsReport standard;
  MetricsReport generalization;
};

/// Trains and evaluates one model per (spec, seed) with identical data
/// order. A failing run marks its row and the grid continues.
inline std::vector<AblationRow> run_ablation_grid(
    const LoadedDataset& ds, const std::vector<AblationSpec>& grid,
    const std::vector<std::uint64_t>& seeds, const ModelConfig& model_cfg, const TrainHyper& hp,
    const std::function<void(const AblationRow&)>& on_row = {}) {
  if (grid.empty()) throw validation_error("ablation grid is empty");
  if (seeds.empty()) throw validation_error("ablation needs at least one seed");
  std::vector<AblationRow> rows;
  for (const auto& spec : grid) {
    for (std::uint64_t seed : seeds) {
      AblationRow row;
      row.spec = spec;
      row.seed = seed;
      try {
        const AblationMask mask = spec.mask();
        const Strategy strategy = spec.effective_strategy();
        CgmmModel model(model_cfg, seed);
        SplitView split = make_split(ds, hp.train_fraction);
        if (strategy != Strategy::supervised_only && hp.pretrain_epochs > 0) {
          pretrain_model(model, ds, split.train, hp, hp.pretrain_epochs, seed);
        }
        train_model(model, ds, split, strategy, mask, hp, seed, /*eval_each_epoch=*/false);
        row.standard = evaluate_frames(model, split.eval_standard, mask, "standard");
        row.generalization =
            evaluate_frames(model, split.eval_generalization, mask, "generalization");
      } catch (const std::exception& e) {
        row.failed = true;
        row.error = e.what();
      }
      if (on_row) on_row(row);
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

}  // namespace cgmm
