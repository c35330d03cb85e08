#include "support/checks.hpp"

#include <cmath>

namespace testsupport {

using cgmm::RngStream;
using cgmm::Tensor;

namespace {

// Values bounded away from zero, for ops with kinks at the origin.
Tensor random_tensor_offzero(std::vector<int> shape, RngStream& rng, double margin = 0.05) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (double& x : t.data()) {
    const double u = rng.uniform(-1.0, 1.0);
    x = (u < 0 ? -1.0 : 1.0) * (margin + std::abs(u));
  }
  return t;
}

using Made = std::pair<std::function<Tensor()>, std::vector<std::pair<std::string, Tensor>>>;

Made unary_case(Tensor x, const std::function<Tensor(const Tensor&)>& op, RngStream& rng) {
  Tensor probe = x;  // shared handle: forward sees perturbed data
  Tensor y0 = op(probe);
  Tensor w = random_tensor(y0.shape(), rng);
  auto forward = [probe, op, w] { return weighted_scalar(op(probe), w); };
  return {forward, {{"x", probe}}};
}

}  // namespace

std::vector<OpCase> numeric_op_cases() {
  std::vector<OpCase> cases;

  cases.push_back({"matmul", [](RngStream& rng) -> Made {
    const int m = 1 + rng.below(5), k = 1 + rng.below(5), n = 1 + rng.below(5);
    Tensor a = random_tensor({m, k}, rng);
    Tensor b = random_tensor({k, n}, rng);
    Tensor w = random_tensor({m, n}, rng);
    auto fwd = [a, b, w] { return weighted_scalar(cgmm::matmul(a, b), w); };
    return {fwd, {{"a", a}, {"b", b}}};
  }});

  cases.push_back({"transpose", [](RngStream& rng) -> Made {
    Tensor x = random_tensor({1 + rng.below(4), 1 + rng.below(4)}, rng);
    return unary_case(x, [](const Tensor& t) { return cgmm::transpose(t); }, rng);
  }});

  cases.push_back({"add", [](RngStream& rng) -> Made {
    const int m = 1 + rng.below(4), n = 1 + rng.below(4);
    Tensor a = random_tensor({m, n}, rng), b = random_tensor({m, n}, rng);
    Tensor w = random_tensor({m, n}, rng);
    auto fwd = [a, b, w] { return weighted_scalar(cgmm::add(a, b), w); };
    return {fwd, {{"a", a}, {"b", b}}};
  }});

  cases.push_back({"sub", [](RngStream& rng) -> Made {
    const int m = 1 + rng.below(4), n = 1 + rng.below(4);
    Tensor a = random_tensor({m, n}, rng), b = random_tensor({m, n}, rng);
    Tensor w = random_tensor({m, n}, rng);
    auto fwd = [a, b, w] { return weighted_scalar(cgmm::sub(a, b), w); };
    return {fwd, {{"a", a}, {"b", b}}};
  }});

  cases.push_back({"mul", [](RngStream& rng) -> Made {
    const int m = 1 + rng.below(4), n = 1 + rng.below(4);
    Tensor a = random_tensor({m, n}, rng), b = random_tensor({m, n}, rng);
    Tensor w = random_tensor({m, n}, rng);
    auto fwd = [a, b, w] { return weighted_scalar(cgmm::mul(a, b), w); };
    return {fwd, {{"a", a}, {"b", b}}};
  }});

  cases.push_back({"scale", [](RngStream& rng) -> Made {
    Tensor x = random_tensor({1 + rng.below(4), 1 + rng.below(4)}, rng);
    const double c = rng.uniform(-2.0, 2.0);
    return unary_case(x, [c](const Tensor& t) { return cgmm::scale(t, c); }, rng);
  }});

  cases.push_back({"add_const", [](RngStream& rng) -> Made {
    Tensor x = random_tensor({2, 3}, rng);
    std::vector<double> c(6);
    for (double& v : c) v = rng.uniform(-1.0, 1.0);
    return unary_case(x, [c](const Tensor& t) { return cgmm::add_const(t, c); }, rng);
  }});

  cases.push_back({"relu", [](RngStream& rng) -> Made {
    Tensor x = random_tensor_offzero({1 + rng.below(4), 1 + rng.below(4)}, rng);
    return unary_case(x, [](const Tensor& t) { return cgmm::relu(t); }, rng);
  }});

  cases.push_back({"add_rowvec", [](RngStream& rng) -> Made {
    const int r = 1 + rng.below(4), c = 1 + rng.below(4);
    Tensor x = random_tensor({r, c}, rng);
    Tensor v = random_tensor({c}, rng);
    Tensor w = random_tensor({r, c}, rng);
    auto fwd = [x, v, w] { return weighted_scalar(cgmm::add_rowvec(x, v), w); };
    return {fwd, {{"x", x}, {"v", v}}};
  }});

  cases.push_back({"add_chan", [](RngStream& rng) -> Made {
    const int c = 1 + rng.below(3), h = 1 + rng.below(4), wdt = 1 + rng.below(4);
    Tensor x = random_tensor({c, h, wdt}, rng);
    Tensor b = random_tensor({c}, rng);
    Tensor w = random_tensor({c, h, wdt}, rng);
    auto fwd = [x, b, w] { return weighted_scalar(cgmm::add_chan(x, b), w); };
    return {fwd, {{"x", x}, {"b", b}}};
  }});

  cases.push_back({"reshape", [](RngStream& rng) -> Made {
    Tensor x = random_tensor({2, 6}, rng);
    (void)rng;
    return unary_case(x, [](const Tensor& t) { return cgmm::reshape(t, {3, 4}); }, rng);
  }});

  cases.push_back({"slice_cols", [](RngStream& rng) -> Made {
    const int r = 1 + rng.below(4);
    Tensor x = random_tensor({r, 6}, rng);
    const int off = rng.below(3), len = 1 + rng.below(3);
    return unary_case(x, [off, len](const Tensor& t) { return cgmm::slice_cols(t, off, len); }, rng);
  }});

  cases.push_back({"concat_cols", [](RngStream& rng) -> Made {
    const int r = 1 + rng.below(4);
    Tensor a = random_tensor({r, 1 + rng.below(3)}, rng);
    Tensor b = random_tensor({r, 1 + rng.below(3)}, rng);
    Tensor y0 = cgmm::concat_cols({a, b});
    Tensor w = random_tensor(y0.shape(), rng);
    auto fwd = [a, b, w] { return weighted_scalar(cgmm::concat_cols({a, b}), w); };
    return {fwd, {{"a", a}, {"b", b}}};
  }});

  cases.push_back({"concat_vec", [](RngStream& rng) -> Made {
    Tensor a = random_tensor({1 + rng.below(4)}, rng);
    Tensor b = random_tensor({1 + rng.below(4)}, rng);
    Tensor w = random_tensor({a.dim(0) + b.dim(0)}, rng);
    auto fwd = [a, b, w] { return weighted_scalar(cgmm::concat_vec({a, b}), w); };
    return {fwd, {{"a", a}, {"b", b}}};
  }});

  cases.push_back({"stack_rows", [](RngStream& rng) -> Made {
    const int d = 1 + rng.below(4);
    Tensor a = random_tensor({d}, rng), b = random_tensor({d}, rng), c = random_tensor({d}, rng);
    Tensor w = random_tensor({3, d}, rng);
    auto fwd = [a, b, c, w] { return weighted_scalar(cgmm::stack_rows({a, b, c}), w); };
    return {fwd, {{"a", a}, {"b", b}, {"c", c}}};
  }});

  cases.push_back({"take_row", [](RngStream& rng) -> Made {
    const int r = 2 + rng.below(3), c = 1 + rng.below(4);
    Tensor x = random_tensor({r, c}, rng);
    const int i = rng.below(r);
    return unary_case(x, [i](const Tensor& t) { return cgmm::take_row(t, i); }, rng);
  }});

  cases.push_back({"softmax", [](RngStream& rng) -> Made {
    Tensor x = random_tensor({1 + rng.below(3), 2 + rng.below(4)}, rng, -3.0, 3.0);
    return unary_case(x, [](const Tensor& t) { return cgmm::softmax(t); }, rng);
  }});

  cases.push_back({"layer_norm", [](RngStream& rng) -> Made {
    const int r = 1 + rng.below(3), c = 2 + rng.below(5);
    Tensor x = random_tensor({r, c}, rng);
    Tensor g = random_tensor({c}, rng, 0.5, 1.5);
    Tensor b = random_tensor({c}, rng);
    Tensor w = random_tensor({r, c}, rng);
    auto fwd = [x, g, b, w] { return weighted_scalar(cgmm::layer_norm(x, g, b, 1e-5), w); };
    return {fwd, {{"x", x}, {"gain", g}, {"bias", b}}};
  }});

  cases.push_back({"rows_l2_normalize", [](RngStream& rng) -> Made {
    Tensor x = random_tensor_offzero({2 + rng.below(3), 2 + rng.below(4)}, rng, 0.3);
    return unary_case(x, [](const Tensor& t) { return cgmm::rows_l2_normalize(t); }, rng);
  }});

  cases.push_back({"l2_normalize_or_zero", [](RngStream& rng) -> Made {
    Tensor x = random_tensor_offzero({2 + rng.below(5)}, rng, 0.3);
    return unary_case(x, [](const Tensor& t) { return cgmm::l2_normalize_or_zero(t); }, rng);
  }});

  cases.push_back({"logsumexp_rows", [](RngStream& rng) -> Made {
    Tensor x = random_tensor({1 + rng.below(3), 2 + rng.below(4)}, rng, -3.0, 3.0);
    return unary_case(x, [](const Tensor& t) { return cgmm::logsumexp_rows(t); }, rng);
  }});

  cases.push_back({"gather_per_row", [](RngStream& rng) -> Made {
    const int r = 1 + rng.below(3), c = 2 + rng.below(4);
    Tensor x = random_tensor({r, c}, rng);
    std::vector<int> idx(static_cast<std::size_t>(r));
    for (int& i : idx) i = rng.below(c);
    return unary_case(x, [idx](const Tensor& t) { return cgmm::gather_per_row(t, idx); }, rng);
  }});

  cases.push_back({"mean_all", [](RngStream& rng) -> Made {
    Tensor x = random_tensor({1 + rng.below(4), 1 + rng.below(4)}, rng);
    auto fwd = [x] { return cgmm::mean_all(x); };
    return {fwd, {{"x", x}}};
  }});

  cases.push_back({"masked_mean_rows", [](RngStream& rng) -> Made {
    const int t = 2 + rng.below(4), d = 1 + rng.below(4);
    Tensor x = random_tensor({t, d}, rng);
    std::vector<double> mask(static_cast<std::size_t>(t), 0.0);
    mask[0] = 1.0;  // at least one live row
    for (int i = 1; i < t; ++i) mask[static_cast<std::size_t>(i)] = rng.bernoulli(0.6) ? 1.0 : 0.0;
    Tensor w = random_tensor({d}, rng);
    auto fwd = [x, mask, w] { return weighted_scalar(cgmm::masked_mean_rows(x, mask), w); };
    return {fwd, {{"x", x}}};
  }});

  cases.push_back({"weighted_sum_rows", [](RngStream& rng) -> Made {
    const int n = 1 + rng.below(4), d = 1 + rng.below(4);
    Tensor x = random_tensor({n, d}, rng);
    Tensor wv = random_tensor({n}, rng);
    Tensor w = random_tensor({d}, rng);
    auto fwd = [x, wv, w] { return weighted_scalar(cgmm::weighted_sum_rows(x, wv), w); };
    return {fwd, {{"rows", x}, {"weights", wv}}};
  }});

  cases.push_back({"embedding_lookup", [](RngStream& rng) -> Made {
    const int v = 3 + rng.below(5), d = 1 + rng.below(4), t = 1 + rng.below(5);
    Tensor table = random_tensor({v, d}, rng);
    std::vector<int> ids(static_cast<std::size_t>(t));
    for (int& i : ids) i = rng.below(v);
    Tensor w = random_tensor({t, d}, rng);
    auto fwd = [table, ids, w] { return weighted_scalar(cgmm::embedding_lookup(table, ids), w); };
    return {fwd, {{"table", table}}};
  }});

  cases.push_back({"cross_entropy_mean", [](RngStream& rng) -> Made {
    const int b = 1 + rng.below(4), k = 2 + rng.below(4);
    Tensor logits = random_tensor({b, k}, rng, -2.0, 2.0);
    std::vector<int> labels(static_cast<std::size_t>(b));
    for (int& l : labels) l = rng.below(k);
    auto fwd = [logits, labels] { return cgmm::cross_entropy_mean(logits, labels); };
    return {fwd, {{"logits", logits}}};
  }});

  cases.push_back({"conv2d", [](RngStream& rng) -> Made {
    const int c = 1 + rng.below(2), h = 3 + rng.below(4), wdt = 3 + rng.below(4);
    const int f = 1 + rng.below(3), k = 1 + rng.below(2) * 2;  // 1 or 3
    const int stride = 1 + rng.below(2), pad = rng.below(2);
    Tensor x = random_tensor({c, h, wdt}, rng);
    Tensor kern = random_tensor({f, c, k, k}, rng);
    Tensor y0 = cgmm::conv2d(x, kern, stride, pad);
    Tensor w = random_tensor(y0.shape(), rng);
    auto fwd = [x, kern, w, stride, pad] {
      return weighted_scalar(cgmm::conv2d(x, kern, stride, pad), w);
    };
    return {fwd, {{"input", x}, {"kernels", kern}}};
  }});

  cases.push_back({"linear", [](RngStream& rng) -> Made {
    const int in = 1 + rng.below(4), out = 1 + rng.below(4), t = 1 + rng.below(3);
    Tensor x = random_tensor({t, in}, rng);
    Tensor wt = random_tensor({in, out}, rng);
    Tensor b = random_tensor({out}, rng);
    Tensor w = random_tensor({t, out}, rng);
    auto fwd = [x, wt, b, w] { return weighted_scalar(cgmm::linear(x, wt, b), w); };
    return {fwd, {{"x", x}, {"weight", wt}, {"bias", b}}};
  }});

  return cases;
}

}  // namespace testsupport
