#pragma once

// Central-difference gradient oracle for the unit tests. The derivative
// estimate uses forward evaluations only, so it stays independent of the tape
// backward pass it is checking.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <vector>

#include "lvat/tensor.hpp"

namespace fd {

// Builds a scalar cost from recorded copies of the given inputs.
using ScalarGraph =
    std::function<lvat::Tensor(lvat::Tape&, const std::vector<lvat::Tensor>&)>;

inline double eval_forward(const ScalarGraph& graph, const std::vector<lvat::Tensor>& inputs) {
  lvat::Tape tape;
  std::vector<lvat::Tensor> rec;
  rec.reserve(inputs.size());
  for (const lvat::Tensor& t : inputs) rec.push_back(tape.input(t));
  return graph(tape, rec).item();
}

struct Report {
  double max_rel_err = 0.0;
  std::size_t checked = 0;
};

// Compares tape gradients against central differences for every element of
// every input. Relative error is |analytic - numeric| / max(1, |numeric|).
inline Report check(const ScalarGraph& graph, std::vector<lvat::Tensor> inputs,
                    double step = 1e-6) {
  lvat::Tape tape;
  std::vector<lvat::Tensor> rec;
  rec.reserve(inputs.size());
  for (const lvat::Tensor& t : inputs) rec.push_back(tape.input(t));
  lvat::Tensor cost = graph(tape, rec);
  tape.backward(cost);
  std::vector<lvat::Tensor> grads;
  grads.reserve(rec.size());
  for (const lvat::Tensor& r : rec) grads.push_back(tape.grad(r));

  Report report;
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    for (std::size_t i = 0; i < inputs[t].size(); ++i) {
      const double keep = inputs[t].values[i];
      inputs[t].values[i] = keep + step;
      const double up = eval_forward(graph, inputs);
      inputs[t].values[i] = keep - step;
      const double down = eval_forward(graph, inputs);
      inputs[t].values[i] = keep;
      const double numeric = (up - down) / (2.0 * step);
      const double err =
          std::abs(grads[t].values[i] - numeric) / std::max(1.0, std::abs(numeric));
      report.max_rel_err = std::max(report.max_rel_err, err);
      ++report.checked;
    }
  }
  return report;
}

}  // namespace fd
