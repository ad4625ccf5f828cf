#include "agra/mmd.hpp"

#include <algorithm>
#include <cmath>

#include "agra/core/eigen.hpp"
#include "agra/core/error.hpp"

namespace agra {

namespace {

EMatrix as_rows(const std::vector<Tensor>& points, const char* which) {
  if (points.empty()) throw ValidationError(std::string("mmd: empty feature set ") + which);
  const int64_t d = points.front().size();
  if (d == 0) throw ValidationError(std::string("mmd: zero-dimensional features in ") + which);
  EMatrix m(points.size(), d);
  for (size_t i = 0; i < points.size(); ++i) {
    if (points[i].size() != d) throw ValidationError(std::string("mmd: inconsistent feature sizes in ") + which);
    for (int64_t j = 0; j < d; ++j) m(static_cast<Eigen::Index>(i), j) = points[i][j];
  }
  return m;
}

// Pairwise squared Euclidean distances, clamped at zero against rounding.
EMatrix sq_dists(const EMatrix& a, const EMatrix& b) {
  Eigen::VectorXd an = a.rowwise().squaredNorm();
  Eigen::VectorXd bn = b.rowwise().squaredNorm();
  EMatrix d = (-2.0 * a * b.transpose());
  d.colwise() += an;
  d.rowwise() += bn.transpose();
  return d.cwiseMax(0.0);
}

double kernel_from_dist2(double d2, const std::vector<double>& bandwidths) {
  double k = 0.0;
  for (double s : bandwidths) k += std::exp(-d2 / (2.0 * s * s));
  return k;
}

}  // namespace

std::vector<double> median_bandwidths(const std::vector<Tensor>& X, const std::vector<Tensor>& Y,
                                      const std::vector<double>& scales) {
  if (scales.empty()) throw ValidationError("mmd: no bandwidth scales given");
  EMatrix x = as_rows(X, "X");
  EMatrix y = as_rows(Y, "Y");
  if (x.cols() != y.cols()) throw ValidationError("mmd: X and Y have different feature dimensions");

  EMatrix z(x.rows() + y.rows(), x.cols());
  z << x, y;
  EMatrix d2 = sq_dists(z, z);
  std::vector<double> pairs;
  pairs.reserve(static_cast<size_t>(z.rows()) * (static_cast<size_t>(z.rows()) - 1) / 2);
  for (Eigen::Index i = 0; i < z.rows(); ++i)
    for (Eigen::Index j = i + 1; j < z.rows(); ++j) pairs.push_back(d2(i, j));
  if (pairs.empty()) throw ValidationError("mmd: need at least two pooled points for the median heuristic");

  size_t mid = (pairs.size() - 1) / 2;
  std::nth_element(pairs.begin(), pairs.begin() + static_cast<std::ptrdiff_t>(mid), pairs.end());
  double median = std::sqrt(pairs[mid]);
  if (median <= 0.0) median = 1.0;

  std::vector<double> bandwidths;
  bandwidths.reserve(scales.size());
  for (double s : scales) {
    if (s <= 0.0) throw ValidationError("mmd: bandwidth scales must be positive");
    bandwidths.push_back(s * median);
  }
  return bandwidths;
}

double compute_mmd(const std::vector<Tensor>& X, const std::vector<Tensor>& Y,
                   const std::vector<double>& bandwidths) {
  if (X.size() < 2 || Y.size() < 2) throw ValidationError("mmd: both feature sets need at least two samples");
  if (bandwidths.empty()) throw ValidationError("mmd: no bandwidths given");
  for (double s : bandwidths)
    if (!(s > 0.0)) throw ValidationError("mmd: bandwidths must be positive");

  EMatrix x = as_rows(X, "X");
  EMatrix y = as_rows(Y, "Y");
  if (x.cols() != y.cols()) throw ValidationError("mmd: X and Y have different feature dimensions");

  const auto m = x.rows(), n = y.rows();
  EMatrix dxx = sq_dists(x, x);
  EMatrix dyy = sq_dists(y, y);
  EMatrix dxy = sq_dists(x, y);

  double kxx = 0.0, kyy = 0.0, kxy = 0.0;
  for (Eigen::Index i = 0; i < m; ++i)
    for (Eigen::Index j = 0; j < m; ++j)
      if (i != j) kxx += kernel_from_dist2(dxx(i, j), bandwidths);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j)
      if (i != j) kyy += kernel_from_dist2(dyy(i, j), bandwidths);
  for (Eigen::Index i = 0; i < m; ++i)
    for (Eigen::Index j = 0; j < n; ++j) kxy += kernel_from_dist2(dxy(i, j), bandwidths);

  const double dm = static_cast<double>(m), dn = static_cast<double>(n);
  return kxx / (dm * (dm - 1.0)) + kyy / (dn * (dn - 1.0)) - 2.0 * kxy / (dm * dn);
}

}  // namespace agra
