#pragma once

#include <functional>
#include <string>
#include <vector>

#include "adn/tensor.hpp"

namespace adn {

/// Compares the tape gradient of a scalar-valued function against central
/// finite differences, element by element. Differences are accumulated in
/// f64; the relative error of element i is
///   |fd_i - tape_i| / max(1, |fd_i|, |tape_i|).
/// Returns the maximum over all elements. f must be deterministic.
double finite_difference_check(const std::function<Tensor(const Tensor&)>& f, Tensor x,
                               float eps = 1e-3f);

struct GradcheckCase {
  std::string name;
  double max_rel_err = 0.0;
  bool pass = false;
};

struct GradcheckReport {
  std::vector<GradcheckCase> cases;
  double threshold = 1e-3;
  bool all_pass = false;
};

/// Runs the finite-difference suite over every differentiable primitive plus
/// one end-to-end composite (conv -> switchable norm -> relu -> residual add
/// -> head -> CE + KL). `fault_op`, when non-empty, deliberately corrupts the
/// tape gradient of the named case so the suite's failure path can be
/// exercised; production callers leave it empty.
GradcheckReport run_gradcheck_suite(const std::string& fault_op = "");

}  // namespace adn
