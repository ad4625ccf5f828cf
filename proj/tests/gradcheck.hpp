#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "agra/core/param.hpp"
#include "agra/core/rng.hpp"

namespace testutil {

struct GradCheckSummary {
  int checked = 0;
  int passed = 0;
  double worst_rel = 0.0;
  std::string worst_coord;

  double pass_fraction() const { return checked == 0 ? 0.0 : static_cast<double>(passed) / checked; }
};

// Central-difference gradient check against analytic gradients already
// accumulated in Param::grad. `forward` must rebuild the loss from the
// current parameter values and return its scalar value. Coordinates are
// sampled without replacement up to `coords_per_param` per parameter.
//
// A coordinate passes when |fd - g| <= abs_floor (both gradients at the
// finite-difference noise floor) or the relative error against the larger
// magnitude is within tol.
inline GradCheckSummary finite_difference_check(const std::vector<agra::Param*>& params,
                                                const std::function<double()>& forward, int coords_per_param,
                                                agra::Rng& rng, double step = 1e-4, double tol = 1e-4,
                                                double abs_floor = 1e-7) {
  GradCheckSummary sum;
  for (agra::Param* p : params) {
    int64_t n = p->value.size();
    std::vector<int64_t> idx;
    if (n <= coords_per_param) {
      for (int64_t i = 0; i < n; ++i) idx.push_back(i);
    } else {
      // Sample distinct coordinates.
      std::vector<int64_t> all(static_cast<size_t>(n));
      for (int64_t i = 0; i < n; ++i) all[static_cast<size_t>(i)] = i;
      rng.shuffle(all);
      idx.assign(all.begin(), all.begin() + coords_per_param);
    }

    for (int64_t i : idx) {
      double saved = p->value[i];
      p->value[i] = saved + step;
      double lp = forward();
      p->value[i] = saved - step;
      double lm = forward();
      p->value[i] = saved;

      double fd = (lp - lm) / (2.0 * step);
      double g = p->grad.empty() ? 0.0 : p->grad[i];
      double diff = std::abs(fd - g);
      double denom = std::max(std::abs(fd), std::abs(g));
      double rel = denom > 0.0 ? diff / denom : 0.0;
      bool ok = diff <= abs_floor || rel <= tol;

      ++sum.checked;
      if (ok) {
        ++sum.passed;
      } else if (rel > sum.worst_rel) {
        sum.worst_rel = rel;
        sum.worst_coord = p->name + "[" + std::to_string(i) + "]";
      }
    }
  }
  return sum;
}

}  // namespace testutil
