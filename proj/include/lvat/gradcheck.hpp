#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace lvat {

// One row of the gradient audit: a tensor op or an end-to-end training graph
// whose tape gradient was compared entry by entry against central finite
// differences.
struct GradCheck {
  std::string name;
  double max_rel_err = 0.0;
  std::size_t checked = 0;  // scalar entries probed
  bool passed = false;
};

struct GradCheckOptions {
  double tol = 1e-5;   // rel. err bound, |analytic - numeric| / max(1, |numeric|)
  double step = 1e-6;  // central difference half step
  // Negative control: biases one analytic gradient so the suite must report a
  // failure. Exists so the failure path of the audit itself stays testable.
  bool corrupt = false;
};

std::vector<GradCheck> run_gradchecks(const GradCheckOptions& opts);

bool all_passed(const std::vector<GradCheck>& results);

// Name of the entry with the largest rel. err; empty for an empty report.
std::string worst_offender(const std::vector<GradCheck>& results);

}  // namespace lvat
