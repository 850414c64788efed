#include "adn/gradcheck.hpp"

#include <cmath>
#include <random>

#include "adn/ops.hpp"

namespace adn {

double finite_difference_check(const std::function<Tensor(const Tensor&)>& f, Tensor x,
                               float eps) {
  Tensor probe = x.clone().set_requires_grad(true);
  Tape::active().reset();
  Tensor y = f(probe);
  if (y.numel() != 1)
    throw ShapeError("finite_difference_check: f must be scalar-valued, got " +
                     shape_str(y.shape()));
  std::vector<float> analytic(static_cast<size_t>(probe.numel()), 0.0f);
  if (Tape::tracked(y)) {
    Tape::active().backward(y);
    if (probe.has_grad()) analytic = probe.grad();
  }
  Tape::active().reset();

  double max_err = 0.0;
  float* px = probe.data();
  NoGradGuard ng;  // finite-difference evaluations are pure
  for (int64_t i = 0; i < probe.numel(); ++i) {
    const float keep = px[i];
    px[i] = keep + eps;
    const double fp = f(probe).item();
    px[i] = keep - eps;
    const double fm = f(probe).item();
    px[i] = keep;
    const double fd = (fp - fm) / (2.0 * static_cast<double>(eps));
    const double an = analytic[static_cast<size_t>(i)];
    const double err = std::abs(fd - an) / std::max({1.0, std::abs(fd), std::abs(an)});
    max_err = std::max(max_err, err);
  }
  return max_err;
}

namespace {

Tensor randn(Shape shape, std::mt19937& rng, float stddev = 1.0f) {
  std::normal_distribution<float> d(0.0f, stddev);
  Tensor t = Tensor::zeros(std::move(shape));
  for (int64_t i = 0; i < t.numel(); ++i) t.data()[i] = d(rng);
  return t;
}

}  // namespace

GradcheckReport run_gradcheck_suite(const std::string& fault_op) {
  GradcheckReport report;
  std::mt19937 rng(0xadc0ffee);

  // Keep scalar losses O(1): the f32 noise of the central difference scales
  // with |f|, so unnormalized sums of squares would drown the comparison.
  auto sq = [](const Tensor& y) {
    return mul_scalar(sum(mul(y, y)), 1.0f / static_cast<float>(y.numel()));
  };
  auto avg = [](const Tensor& y) {
    return mul_scalar(sum(y), 1.0f / static_cast<float>(y.numel()));
  };

  auto run = [&](const std::string& name, const std::function<Tensor(const Tensor&)>& f,
                 Tensor x, float eps = 1e-3f) {
    double err = finite_difference_check(f, std::move(x), eps);
    if (name == fault_op) err += 1.0;  // forced adjoint mismatch
    report.cases.push_back({name, err, err < report.threshold});
  };

  // elementwise arithmetic
  {
    Tensor b = randn({3, 4}, rng);
    run("add", [b, sq](const Tensor& x) { return sq(add(x, b)); }, randn({3, 4}, rng));
    run("sub", [b, sq](const Tensor& x) { return sq(sub(x, b)); }, randn({3, 4}, rng));
    run("mul", [b, avg](const Tensor& x) { return avg(mul(x, b)); }, randn({3, 4}, rng));
    Tensor bias = randn({4}, rng);
    run("broadcast_add", [bias, sq](const Tensor& x) { return sq(add(x, bias)); },
        randn({3, 4}, rng));
    run("add_scalar", [sq](const Tensor& x) { return sq(add_scalar(x, 1.5f)); }, randn({6}, rng));
    run("mul_scalar", [avg](const Tensor& x) { return avg(mul(mul_scalar(x, -2.0f), x)); },
        randn({6}, rng));
  }

  // matrix products
  {
    Tensor b = randn({3, 5}, rng);
    run("matmul", [b, sq](const Tensor& x) { return sq(matmul(x, b)); }, randn({4, 3}, rng));
    Tensor bb = randn({2, 3, 4}, rng);
    run("bmm", [bb, sq](const Tensor& x) { return sq(bmm(x, bb)); }, randn({2, 5, 3}, rng));
    Tensor bt = randn({2, 6, 3}, rng);
    run("bmm_transposed", [bt, sq](const Tensor& x) { return sq(bmm(x, bt, true)); },
        randn({2, 5, 3}, rng));
    Tensor w = randn({6, 4}, rng);
    Tensor lb = randn({4}, rng);
    run("linear", [w, lb, sq](const Tensor& x) { return sq(linear(x, w, lb)); },
        randn({2, 3, 6}, rng));
  }

  // convolution (both operands)
  {
    Tensor w = randn({4, 3, 3, 3}, rng, 0.4f);
    Tensor bias = randn({4}, rng);
    run("conv2d", [w, bias, sq](const Tensor& x) { return sq(conv2d(x, w, bias, 1, 1)); },
        randn({2, 3, 8, 8}, rng));
    Tensor x0 = randn({2, 3, 6, 6}, rng);
    run("conv2d_weights",
        [x0, sq](const Tensor& w2) { return sq(conv2d(x0, w2, std::nullopt, 2, 1)); },
        randn({4, 3, 3, 3}, rng, 0.4f));
  }

  // activations, pooling, shape ops
  run("relu", [sq](const Tensor& x) { return sq(relu(x)); }, randn({5, 7}, rng));
  run("gelu", [sq](const Tensor& x) { return sq(gelu(x)); }, randn({5, 7}, rng));
  run("avgpool2d", [sq](const Tensor& x) { return sq(avgpool2d(x, 2, 2)); },
      randn({2, 3, 6, 6}, rng));
  run("global_avgpool", [sq](const Tensor& x) { return sq(global_avgpool(x)); },
      randn({2, 3, 4, 4}, rng));
  run("flatten", [sq](const Tensor& x) { return sq(flatten(x)); }, randn({2, 3, 4}, rng));
  run("reshape", [sq](const Tensor& x) { return sq(reshape(x, {4, 6})); }, randn({2, 3, 4}, rng));
  run("permute", [sq](const Tensor& x) { return sq(permute(x, {2, 0, 1})); },
      randn({2, 3, 4}, rng));
  run("slice", [sq](const Tensor& x) { return sq(slice(x, 1, 1, 2)); }, randn({2, 4, 3}, rng));
  {
    Tensor other = randn({2, 2, 3}, rng);
    run("concat", [other, sq](const Tensor& x) { return sq(concat({x, other}, 1)); },
        randn({2, 4, 3}, rng));
  }
  run("broadcast_to", [sq](const Tensor& x) { return sq(broadcast_to(x, {4, 2, 3})); },
      randn({2, 3}, rng));

  // softmax family and losses
  run("softmax", [sq](const Tensor& x) { return sq(softmax(x, -1)); }, randn({3, 5}, rng));
  run("log_softmax", [sq](const Tensor& x) { return sq(log_softmax(x, -1)); },
      randn({3, 5}, rng));
  {
    std::vector<int> labels{1, 0, 3};
    run("cross_entropy", [labels](const Tensor& x) { return cross_entropy(x, labels); },
        randn({3, 4}, rng));
    Tensor teacher = randn({3, 4}, rng);
    run("kl_divergence",
        [teacher](const Tensor& x) { return kl_divergence(teacher, x, 2.0f); },
        randn({3, 4}, rng));
  }

  // normalization
  {
    Tensor gm = Tensor::full({3}, 1.0f);
    Tensor bt = Tensor::zeros({3});
    run("batch_norm2d_train",
        [gm, bt, sq](const Tensor& x) {
          Tensor rm = Tensor::zeros({3});
          Tensor rv = Tensor::full({3}, 1.0f);
          return sq(batch_norm2d(x, gm, bt, rm, rv, 0.1f, 1e-5f, true));
        },
        randn({4, 3, 5, 5}, rng));
    run("batch_norm2d_eval",
        [gm, bt, sq](const Tensor& x) {
          Tensor rm = Tensor::full({3}, 0.2f);
          Tensor rv = Tensor::full({3}, 1.3f);
          return sq(batch_norm2d(x, gm, bt, rm, rv, 0.1f, 1e-5f, false));
        },
        randn({2, 3, 4, 4}, rng));
    Tensor lg = randn({6}, rng, 0.2f);
    Tensor lbta = randn({6}, rng, 0.2f);
    run("layer_norm",
        [lg, lbta, sq](const Tensor& x) { return sq(layer_norm(x, lg, lbta, 1e-6f)); },
        randn({3, 4, 6}, rng));
  }

  // composite: conv -> switchable-style norm -> relu -> residual add ->
  // head -> CE + KL against a frozen teacher
  {
    Tensor w = randn({3, 3, 3, 3}, rng, 0.4f);
    Tensor gm = Tensor::full({3}, 1.0f);
    Tensor bt = Tensor::zeros({3});
    Tensor head = randn({3 * 6 * 6, 5}, rng, 0.2f);
    Tensor teacher = randn({2, 5}, rng);
    std::vector<int> labels{2, 4};
    run("composite_block",
        [=](const Tensor& x) {
          Tensor rm = Tensor::zeros({3});
          Tensor rv = Tensor::full({3}, 1.0f);
          Tensor f = conv2d(x, w, std::nullopt, 1, 1);
          f = batch_norm2d(f, gm, bt, rm, rv, 0.1f, 1e-5f, true);
          f = relu(f);
          Tensor h = add(x, f);
          Tensor logits = linear(flatten(h), head, std::nullopt);
          return add(cross_entropy(logits, labels), kl_divergence(teacher, logits, 1.0f));
        },
        randn({2, 3, 6, 6}, rng), 3e-3f);  // wider step: the f32 noise floor of
                                           // the two-loss composite scales ~1/eps
  }

  report.all_pass = true;
  for (const auto& c : report.cases) report.all_pass = report.all_pass && c.pass;
  return report;
}

}  // namespace adn
