#pragma once

// Central finite-difference verification of every layer kind's backward
// pass, run at 64-bit precision. Each kind gets a tiny net ending in a fixed
// random linear functional of the output, so the analytic gradient of every
// parameter can be compared against (f(x+h) - f(x-h)) / 2h.

#include <functional>
#include <string>
#include <vector>

#include "terracover/network.hpp"

namespace terra {

struct GradCheckResult {
  std::string kind;
  double max_rel_error = 0.0;
  Eigen::Index params_checked = 0;
  bool passed = false;
};

namespace gradcheck_detail {

inline double relative_error(double analytic, double numeric) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
  return std::abs(analytic - numeric) / scale;
}

// ReLU and maxpool derivatives are checked away from their kinks: a finite
// difference step across a kink measures a one-sided slope. The margin test
// rejects inputs whose preactivations sit within `margin` of a kink;
// check_kind retries with a shifted seed until the net is well conditioned.
template <typename Scalar>
double kink_margin(Network<Scalar>& net) {
  double margin = std::numeric_limits<double>::max();
  const auto& nodes = net.nodes();
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    if (nodes[i].layer->kind() == "relu") {
      const int input = nodes[i].inputs[0];
      if (input < 0) continue;  // raw graph inputs are generated away from 0
      const Tensor<Scalar>& pre = nodes[static_cast<std::size_t>(input)].out;
      margin = std::min(margin,
                        static_cast<double>(pre.values().abs().minCoeff()));
    } else if (auto* pool = dynamic_cast<MaxPool2<Scalar>*>(nodes[i].layer.get())) {
      margin = std::min(margin, static_cast<double>(pool->tie_margin()));
    }
  }
  return margin;
}

}  // namespace gradcheck_detail

// Checks every parameter of `net` against central finite differences of the
// loss  L(x) = sum(direction .* forward(x)).
inline GradCheckResult check_network(Network<double>& net, const Tensor<double>& input,
                                     const std::string& kind, double step = 1e-5,
                                     double tolerance = 1e-4) {
  GradCheckResult result;
  result.kind = kind;

  const Tensor<double>& probe = net.forward(input);
  Rng direction_rng(0xd1a3c7 + probe.size());
  Eigen::ArrayXd direction(probe.size());
  for (Eigen::Index i = 0; i < direction.size(); ++i) {
    direction[i] = direction_rng.uniform(-1.0, 1.0);
  }

  net.zero_param_grads();
  net.forward(input);
  net.backward(direction);

  const auto loss_at = [&]() {
    return (net.forward(input).values() * direction).sum();
  };

  for (Param<double>* param : net.parameters()) {
    for (Eigen::Index i = 0; i < param->value.size(); ++i) {
      double& theta = param->value.values()[i];
      const double saved = theta;
      theta = saved + step;
      const double plus = loss_at();
      theta = saved - step;
      const double minus = loss_at();
      theta = saved;

      const double numeric = (plus - minus) / (2 * step);
      const double analytic = param->value.grad()[i];
      result.max_rel_error = std::max(
          result.max_rel_error, gradcheck_detail::relative_error(analytic, numeric));
      ++result.params_checked;
    }
  }
  net.forward(input);  // restore activations for the untouched parameters
  result.passed = result.max_rel_error < tolerance;
  return result;
}

// Builds the dedicated tiny net for one layer kind. Inputs are uniform in
// [0.2, 1.2] so convolution outputs are generically away from zero.
inline GradCheckResult check_kind(const std::string& kind, std::uint64_t seed,
                                  double step = 1e-5, double tolerance = 1e-4) {
  const auto build = [&](std::uint64_t s) {
    auto net = std::make_unique<Network<double>>();
    int tail = -1;
    if (kind == "conv2d") {
      tail = net->add("t.conv", std::make_unique<Conv2d<double>>(2, 3, 3), {-1});
      tail = net->add("t.conv_s2", std::make_unique<Conv2d<double>>(3, 2, 3, 2),
                      std::vector<int>{tail});
    } else if (kind == "relu") {
      tail = net->add("t.conv", std::make_unique<Conv2d<double>>(2, 3, 3), {-1});
      tail = net->add("t.relu", std::make_unique<ReLU<double>>(),
                      std::vector<int>{tail});
    } else if (kind == "maxpool2") {
      tail = net->add("t.conv", std::make_unique<Conv2d<double>>(2, 3, 3), {-1});
      tail = net->add("t.pool", std::make_unique<MaxPool2<double>>(),
                      std::vector<int>{tail});
    } else if (kind == "upsample2_nearest") {
      tail = net->add("t.conv", std::make_unique<Conv2d<double>>(2, 3, 3), {-1});
      tail = net->add("t.up", std::make_unique<Upsample2Nearest<double>>(),
                      std::vector<int>{tail});
    } else if (kind == "concat_skip") {
      int a = net->add("t.a", std::make_unique<Conv2d<double>>(2, 2, 3), {-1});
      int b = net->add("t.b", std::make_unique<Conv2d<double>>(2, 3, 1), {-1});
      tail = net->add("t.cat", std::make_unique<ConcatSkip<double>>(),
                      std::vector<int>{a, b});
      tail = net->add("t.mix", std::make_unique<Conv2d<double>>(5, 2, 1),
                      std::vector<int>{tail});
    } else if (kind == "residual_block") {
      tail = detail::append_residual_block(*net, "t.res", -1, 2, 4);
    } else if (kind == "global_avg_pool") {
      tail = net->add("t.conv", std::make_unique<Conv2d<double>>(2, 3, 3), {-1});
      tail = net->add("t.gap", std::make_unique<GlobalAvgPool<double>>(),
                      std::vector<int>{tail});
    } else if (kind == "dense") {
      tail = net->add("t.gap", std::make_unique<GlobalAvgPool<double>>(), {-1});
      tail = net->add("t.fc", std::make_unique<Dense<double>>(2, 5),
                      std::vector<int>{tail});
      tail = net->add("t.fc2", std::make_unique<Dense<double>>(5, 3),
                      std::vector<int>{tail});
    } else if (kind == "sigmoid") {
      tail = net->add("t.gap", std::make_unique<GlobalAvgPool<double>>(), {-1});
      tail = net->add("t.fc", std::make_unique<Dense<double>>(2, 4),
                      std::vector<int>{tail});
      tail = net->add("t.sig", std::make_unique<Sigmoid<double>>(),
                      std::vector<int>{tail});
    } else if (kind == "softmax_pixelwise") {
      tail = net->add("t.conv", std::make_unique<Conv2d<double>>(2, 4, 3), {-1});
      tail = net->add("t.softmax", std::make_unique<SoftmaxPixelwise<double>>(),
                      std::vector<int>{tail});
    } else {
      throw DataError("unknown layer kind '" + kind + "'");
    }
    (void)tail;
    net->init_params(s);
    return net;
  };

  // Retry with shifted seeds until kinked layers are well conditioned.
  for (int attempt = 0; attempt < 32; ++attempt) {
    const std::uint64_t s = seed + 1000003ULL * static_cast<std::uint64_t>(attempt);
    auto net = build(s);

    Tensor<double> input({2, 2, 6, 6});
    Rng input_rng(s ^ 0xabcdef);
    for (Eigen::Index i = 0; i < input.size(); ++i) {
      input.values()[i] = input_rng.uniform(0.2, 1.2);
    }

    net->forward(input);
    if (gradcheck_detail::kink_margin(*net) < 1e-3) continue;
    return check_network(*net, input, kind, step, tolerance);
  }
  throw DataError("could not condition a '" + kind + "' net away from kinks");
}

inline const std::vector<std::string>& gradcheck_kinds() {
  static const std::vector<std::string> kinds = {
      "conv2d",        "relu",   "maxpool2", "upsample2_nearest",
      "concat_skip",   "residual_block",     "global_avg_pool",
      "dense",         "sigmoid",            "softmax_pixelwise"};
  return kinds;
}

// One result per kind; max_rel_error is the worst over `seeds` runs.
inline std::vector<GradCheckResult> run_gradcheck(int seeds = 10, double step = 1e-5,
                                                  double tolerance = 1e-4) {
  std::vector<GradCheckResult> results;
  for (const std::string& kind : gradcheck_kinds()) {
    GradCheckResult worst;
    worst.kind = kind;
    worst.passed = true;
    for (int s = 0; s < seeds; ++s) {
      const auto r = check_kind(kind, 1000 + static_cast<std::uint64_t>(s) * 7919,
                                step, tolerance);
      worst.max_rel_error = std::max(worst.max_rel_error, r.max_rel_error);
      worst.params_checked += r.params_checked;
      worst.passed = worst.passed && r.passed;
    }
    results.push_back(worst);
  }
  return results;
}

}  // namespace terra
