#pragma once

#include <functional>
#include <string>
#include <vector>

#include "kog/nn.hpp"
#include "kog/tensor.hpp"

// Central finite-difference validation of reverse-mode gradients. The checker
// never looks inside the adjoints it is checking: it only re-evaluates the
// forward function under elementwise perturbations.

namespace kog {

struct FdResult {
  std::string name;
  double max_rel_err = 0.0;
  std::size_t checked = 0;
  bool pass = true;
};

// scalar_fn must rebuild the computation from the current leaf values and
// return a scalar tensor. Analytic gradients come from one taped pass;
// finite differences re-run scalar_fn untaped with perturbed leaves.
template <typename T>
FdResult fd_check(const std::string& name, std::vector<Tensor<T>> leaves,
                  const std::function<Tensor<T>()>& scalar_fn,
                  double step = 1e-5, double tol = 1e-4) {
  for (auto& leaf : leaves) {
    leaf.set_requires_grad(true);
    leaf.ensure_grad();
    leaf.zero_grad();
  }

  Tape<T> tape;
  {
    TapeScope<T> scope(tape);
    Tensor<T> loss = scalar_fn();
    tape.backward(loss);
  }

  FdResult res;
  res.name = name;
  for (auto& leaf : leaves) {
    for (std::size_t i = 0; i < leaf.size(); ++i) {
      const T saved = leaf.data()[i];
      leaf.data()[i] = saved + static_cast<T>(step);
      const double up = static_cast<double>(scalar_fn().item());
      leaf.data()[i] = saved - static_cast<T>(step);
      const double down = static_cast<double>(scalar_fn().item());
      leaf.data()[i] = saved;
      const double fd = (up - down) / (2.0 * step);
      const double an = static_cast<double>(leaf.grad()[i]);
      const double rel =
          std::abs(fd - an) / std::max({1.0, std::abs(fd), std::abs(an)});
      res.max_rel_err = std::max(res.max_rel_err, rel);
      ++res.checked;
    }
  }
  res.pass = res.max_rel_err <= tol;
  return res;
}

}  // namespace kog
