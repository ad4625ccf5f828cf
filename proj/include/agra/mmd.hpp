#pragma once

#include <vector>

#include "agra/core/tensor.hpp"

namespace agra {

// Bandwidths sigma_b = scale_b * median, where median is the lower median
// of pairwise Euclidean distances over the pooled set X u Y. Falls back to
// 1.0 when the median is zero (all points identical).
std::vector<double> median_bandwidths(const std::vector<Tensor>& X, const std::vector<Tensor>& Y,
                                      const std::vector<double>& scales);

// Unbiased squared-MMD U-statistic with the multi-Gaussian kernel
// k(x,y) = sum_b exp(-||x-y||^2 / (2 sigma_b^2)). Needs |X|,|Y| >= 2; can
// come out slightly negative and is reported raw.
double compute_mmd(const std::vector<Tensor>& X, const std::vector<Tensor>& Y,
                   const std::vector<double>& bandwidths);

}  // namespace agra
