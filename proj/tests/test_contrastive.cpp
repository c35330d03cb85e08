#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstring>

#include "cgmm/contrastive.hpp"
#include "cgmm/gradcheck.hpp"
#include "cgmm/model.hpp"
#include "support/checks.hpp"

using namespace cgmm;
using testsupport::random_tensor;
using Catch::Approx;

namespace {

FrameSample make_frame(int n_boxes, std::uint64_t seed, bool same_tokens = false) {
  RngStream rng(seed, "contrastive_frame");
  FrameSample f;
  f.frame = Tensor::zeros({3, 16, 16});
  for (double& v : f.frame.data()) v = rng.uniform(0.1, 0.9);
  for (int i = 0; i < n_boxes; ++i) {
    TextBox b;
    b.x0 = 0.1 + 0.2 * i;
    b.x1 = b.x0 + 0.15;
    b.y0 = 0.2 + 0.15 * i;
    b.y1 = b.y0 + 0.12;
    b.label = TextClass::caption;
    if (same_tokens) {
      b.tokens = {5, 9, 3, 0, 0, 0};
    } else {
      for (int t = 0; t < 6; ++t) b.tokens.push_back(t < 3 ? 2 + rng.below(30) : 0);
    }
    f.boxes.push_back(std::move(b));
  }
  return f;
}

SynonymTable full_coverage_table() {
  SynonymTable t;
  for (int id = 2; id < 62; id += 3) t.groups.push_back({id, id + 1, id + 2});
  t.rebuild_index();
  return t;
}

double scalar_oracle_nt_xent(const std::vector<std::vector<double>>& embs, double tau) {
  const int m = static_cast<int>(embs.size());
  const int d = static_cast<int>(embs[0].size());
  std::vector<std::vector<double>> e = embs;
  for (auto& row : e) {
    double n = 0.0;
    for (double v : row) n += v * v;
    n = std::sqrt(n);
    for (double& v : row) v /= n;
  }
  double total = 0.0;
  for (int i = 0; i < m; ++i) {
    auto sim = [&](int a, int b) {
      double s = 0.0;
      for (int k = 0; k < d; ++k) s += e[static_cast<std::size_t>(a)][static_cast<std::size_t>(k)] * e[static_cast<std::size_t>(b)][static_cast<std::size_t>(k)];
      return s / tau;
    };
    double denom = 0.0;
    for (int k = 0; k < m; ++k) {
      if (k != i) denom += std::exp(sim(i, k));
    }
    total += std::log(denom) - sim(i, i ^ 1);
  }
  return total / m;
}

}  // namespace

TEST_CASE("augment: null parameters reproduce the anchor exactly", "[contrastive]") {
  FrameSample f = make_frame(2, 1);
  AugmentConfig cfg;
  cfg.pos_delta = 0.0;
  cfg.cv_scale_lo = cfg.cv_scale_hi = 1.0;
  cfg.cv_shift_lo = cfg.cv_shift_hi = 0.0;
  cfg.nlp_prob = 0.0;
  RngStream rng(2, "aug");
  FrameSample pos = augment_frame(f, AugmentModes{}, cfg, full_coverage_table(), 0, rng);
  CHECK(std::memcmp(pos.frame.data().data(), f.frame.data().data(),
                    f.frame.numel() * sizeof(double)) == 0);
  for (std::size_t i = 0; i < f.boxes.size(); ++i) {
    CHECK(pos.boxes[i].x0 == f.boxes[i].x0);
    CHECK(pos.boxes[i].tokens == f.boxes[i].tokens);
  }
}

TEST_CASE("augment: mode isolation", "[contrastive]") {
  FrameSample f = make_frame(2, 3);
  AugmentConfig cfg;
  RngStream rng(4, "aug_pos");

  AugmentModes pos_only;
  pos_only.cv = pos_only.nlp = false;
  FrameSample pos = augment_frame(f, pos_only, cfg, full_coverage_table(), 0, rng);
  CHECK(std::memcmp(pos.frame.data().data(), f.frame.data().data(),
                    f.frame.numel() * sizeof(double)) == 0);
  bool coords_moved = false;
  for (std::size_t i = 0; i < f.boxes.size(); ++i) {
    CHECK(pos.boxes[i].tokens == f.boxes[i].tokens);
    coords_moved |= pos.boxes[i].x0 != f.boxes[i].x0 || pos.boxes[i].y1 != f.boxes[i].y1;
  }
  CHECK(coords_moved);

  AugmentModes cv_only;
  cv_only.pos = cv_only.nlp = false;
  RngStream rng2(4, "aug_cv");
  FrameSample cv = augment_frame(f, cv_only, cfg, full_coverage_table(), 0, rng2);
  CHECK(cv.boxes[0].x0 == f.boxes[0].x0);
  CHECK(cv.boxes[0].tokens == f.boxes[0].tokens);
  bool pixels_moved = false;
  for (std::size_t i = 0; i < f.frame.numel(); ++i) {
    pixels_moved |= cv.frame.data()[i] != f.frame.data()[i];
  }
  CHECK(pixels_moved);

  CHECK_THROWS_AS(augment_frame(f, AugmentModes{false, false, false}, cfg,
                                full_coverage_table(), 0, rng2),
                  validation_error);
}

TEST_CASE("augment: synonym replacement rate matches the counting oracle", "[contrastive][oracle]") {
  SynonymTable table = full_coverage_table();
  FrameSample f;
  f.frame = Tensor::zeros({3, 8, 8});
  TextBox b;
  b.x0 = 0.1; b.y0 = 0.1; b.x1 = 0.9; b.y1 = 0.5;
  b.tokens = {2, 5, 8, 11, 14, 17, 20, 23, 26, 29};  // all covered by groups
  b.label = TextClass::caption;
  f.boxes.push_back(b);

  AugmentModes nlp_only;
  nlp_only.pos = nlp_only.cv = false;
  AugmentConfig cfg;
  RngStream rng(6, "aug_nlp");
  long long replaced = 0, total = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    FrameSample pos = augment_frame(f, nlp_only, cfg, table, 0, rng);
    for (std::size_t i = 0; i < b.tokens.size(); ++i) {
      total += 1;
      if (pos.boxes[0].tokens[i] != b.tokens[i]) replaced += 1;
      if (pos.boxes[0].tokens[i] != b.tokens[i]) {
        // replacement stays inside the token's synonym group
        CHECK(table.group_of(pos.boxes[0].tokens[i]) == table.group_of(b.tokens[i]));
      }
    }
  }
  const double fraction = static_cast<double>(replaced) / static_cast<double>(total);
  CHECK(fraction == Approx(0.3).margin(0.05));
}

TEST_CASE("augment: unrecoverable jitter degenerates with an error", "[contrastive]") {
  FrameSample f;
  f.frame = Tensor::zeros({3, 8, 8});
  TextBox b;
  b.x0 = 0.5 - 1e-12;
  b.x1 = 0.5 + 1e-12;
  b.y0 = 0.4;
  b.y1 = 0.6;
  b.tokens = {2};
  f.boxes.push_back(b);
  AugmentModes pos_only;
  pos_only.cv = pos_only.nlp = false;
  AugmentConfig cfg;
  cfg.pos_delta = 0.3;
  bool threw = false;
  for (std::uint64_t seed = 0; seed < 64 && !threw; ++seed) {
    RngStream rng(seed, "degenerate");
    try {
      augment_frame(f, pos_only, cfg, full_coverage_table(), 0, rng);
    } catch (const data_error&) {
      threw = true;
    }
  }
  CHECK(threw);  // a width-epsilon box cannot survive every jitter draw
}

TEST_CASE("contrastive_loss: frozen values and error surface", "[contrastive]") {
  // all-identical embeddings: loss = ln(2N - 1); N = 2 gives ln 3
  std::vector<Tensor> same(4, Tensor({3}, {0.3, -0.2, 0.9}));
  CHECK(contrastive_loss(same, 0.2).item() == Approx(std::log(3.0)).margin(1e-9));
  CHECK(contrastive_loss(same, 3.7).item() == Approx(std::log(3.0)).margin(1e-9));

  // perfectly separated pairs at low temperature: loss -> 0
  std::vector<Tensor> separated = {
      Tensor({2}, {1, 0}), Tensor({2}, {1, 0}), Tensor({2}, {-1, 0}), Tensor({2}, {-1, 0})};
  CHECK(contrastive_loss(separated, 0.05).item() == Approx(0.0).margin(1e-9));

  CHECK_THROWS_AS(contrastive_loss({same[0], same[1]}, 0.2), validation_error);
  CHECK_THROWS_AS(contrastive_loss(same, 0.0), validation_error);
  std::vector<Tensor> with_zero = {Tensor({2}, {1, 0}), Tensor({2}, {0, 0}),
                                   Tensor({2}, {0, 1}), Tensor({2}, {1, 1})};
  CHECK_THROWS_WITH(contrastive_loss(with_zero, 0.2),
                    Catch::Matchers::ContainsSubstring("embedding 1"));
}

TEST_CASE("contrastive_loss matches the scalar oracle and its gradient checks", "[contrastive][oracle]") {
  RngStream rng(8, "nt_xent");
  for (int trial = 0; trial < 10; ++trial) {
    const int d = 3 + rng.below(4);
    std::vector<Tensor> embs;
    std::vector<std::vector<double>> raw;
    for (int i = 0; i < 4; ++i) {
      Tensor e = random_tensor({d}, rng, -1.0, 1.0);
      // keep norms healthy
      e.data()[0] += e.data()[0] >= 0 ? 0.5 : -0.5;
      embs.push_back(e);
      raw.push_back(e.data());
    }
    const double tau = 0.2 + 0.3 * rng.uniform();
    CHECK(contrastive_loss(embs, tau).item() == Approx(scalar_oracle_nt_xent(raw, tau)).margin(1e-9));

    auto fwd = [embs, tau] { return contrastive_loss(embs, tau); };
    std::vector<std::pair<std::string, Tensor>> params;
    for (int i = 0; i < 4; ++i) params.emplace_back("e" + std::to_string(i), embs[static_cast<std::size_t>(i)]);
    auto report = grad_check(fwd, params, 1e-5, 1e-4);
    INFO(report.summary());
    CHECK(report.pass);
  }
}

TEST_CASE("contrastive_loss is invariant to a global orthogonal rotation", "[contrastive][property]") {
  RngStream rng(9, "rotation");
  const int d = 4;
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<Tensor> embs;
    for (int i = 0; i < 6; ++i) {
      Tensor e = random_tensor({d}, rng, -1.0, 1.0);
      e.data()[1] += e.data()[1] >= 0 ? 0.5 : -0.5;
      embs.push_back(e);
    }
    // random orthogonal matrix via Gram-Schmidt on a random basis
    std::vector<std::vector<double>> q(d, std::vector<double>(d));
    for (auto& row : q) {
      for (double& v : row) v = rng.normal();
    }
    for (int i = 0; i < d; ++i) {
      for (int j = 0; j < i; ++j) {
        double dot = 0.0;
        for (int k = 0; k < d; ++k) dot += q[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)] * q[static_cast<std::size_t>(j)][static_cast<std::size_t>(k)];
        for (int k = 0; k < d; ++k) q[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)] -= dot * q[static_cast<std::size_t>(j)][static_cast<std::size_t>(k)];
      }
      double n = 0.0;
      for (int k = 0; k < d; ++k) n += q[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)] * q[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)];
      n = std::sqrt(n);
      for (int k = 0; k < d; ++k) q[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)] /= n;
    }
    std::vector<Tensor> rotated;
    for (const Tensor& e : embs) {
      Tensor r = Tensor::zeros({d});
      for (int i = 0; i < d; ++i) {
        for (int k = 0; k < d; ++k) {
          r.data()[static_cast<std::size_t>(i)] += q[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)] * e.data()[static_cast<std::size_t>(k)];
        }
      }
      rotated.push_back(r);
    }
    CHECK(contrastive_loss(rotated, 0.25).item() ==
          Approx(contrastive_loss(embs, 0.25).item()).margin(1e-9));
  }
}

TEST_CASE("contrastive_loss decreases as a positive moves toward its anchor", "[contrastive][property]") {
  RngStream rng(10, "toward");
  int checked = 0;
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<Tensor> embs;
    for (int i = 0; i < 6; ++i) {
      Tensor e = random_tensor({5}, rng, -1.0, 1.0);
      e.data()[2] += e.data()[2] >= 0 ? 0.5 : -0.5;
      embs.push_back(e);
    }
    const double before = contrastive_loss(embs, 0.2).item();
    // move p0 (index 1) strictly toward a0 (index 0)
    std::vector<Tensor> moved = embs;
    Tensor p = Tensor::zeros({5});
    for (int k = 0; k < 5; ++k) {
      p.data()[static_cast<std::size_t>(k)] = embs[1].data()[static_cast<std::size_t>(k)] +
          0.2 * (embs[0].data()[static_cast<std::size_t>(k)] - embs[1].data()[static_cast<std::size_t>(k)]);
    }
    moved[1] = p;
    const double after = contrastive_loss(moved, 0.2).item();
    CHECK(after < before);
    ++checked;
  }
  REQUIRE(checked == 30);
}

TEST_CASE("joint_loss: bit-exact boundaries and the convex midpoint", "[contrastive]") {
  Tensor c = Tensor::scalar(2.0);
  Tensor s = Tensor::scalar(1.0);
  CHECK(joint_loss(c, s, 0.0).node.get() == s.node.get());
  CHECK(joint_loss(c, s, 1.0).node.get() == c.node.get());
  CHECK(joint_loss(c, s, 0.5).item() == Approx(1.5).margin(1e-15));
  CHECK_THROWS_AS(joint_loss(c, s, -0.01), validation_error);
  CHECK_THROWS_AS(joint_loss(c, s, 1.01), validation_error);
}

TEST_CASE("color-only positives cannot move the token embeddings", "[contrastive][oracle]") {
  // crafted batch: every box carries the same token sequence, so the text
  // activation is one shared value across all 2N items and only pixels
  // differ. The per-modality normalization then cancels the text gradient.
  ModelConfig cfg;
  cfg.visual.channels = {4, 8};
  cfg.text.vocab_size = 32;
  cfg.text.d_text = 8;
  cfg.text.heads = 2;
  cfg.text.ff = 16;
  cfg.text.layers = 1;
  cfg.fusion.d_model = 16;
  cfg.fusion.heads = 2;
  cfg.fusion.ff = 16;
  cfg.fusion.layers = 1;
  cfg.fusion.d_vis = 8;
  cfg.fusion.roi_h = 2;
  cfg.fusion.roi_w = 2;
  cfg.d_corr = 8;
  cfg.max_tokens = 6;
  CgmmModel model(cfg, 55);

  FrameSample frame = make_frame(2, 56, /*same_tokens=*/true);
  AugmentModes cv_only;
  cv_only.pos = cv_only.nlp = false;
  AugmentConfig acfg;
  RngStream rng(57, "cv_only");
  FrameSample positive = augment_frame(frame, cv_only, acfg, full_coverage_table(), 0, rng);

  auto anchors = model.encode_boxes(frame, AblationMask{});
  auto positives = model.encode_boxes(positive, AblationMask{});
  std::vector<Tensor> embeddings;
  for (std::size_t b = 0; b < anchors.size(); ++b) {
    embeddings.push_back(contrastive_embedding(anchors[b]));
    embeddings.push_back(contrastive_embedding(positives[b]));
  }
  model.params().zero_grad();
  Tensor loss = contrastive_loss(embeddings, 0.2);
  loss.backward();

  double max_text_grad = 0.0;
  for (double g : model.params().get("text/embedding").grad()) {
    max_text_grad = std::max(max_text_grad, std::abs(g));
  }
  CHECK(max_text_grad < 1e-12);

  double max_vis_grad = 0.0;
  for (double g : model.params().get("visual/conv0_kernels").grad()) {
    max_vis_grad = std::max(max_vis_grad, std::abs(g));
  }
  CHECK(max_vis_grad > 1e-12);
}
