#include "agra/bank.hpp"

#include <cmath>
#include <limits>

#include "agra/core/error.hpp"
#include "agra/core/rng.hpp"

namespace agra {

namespace {

double sq_dist(const double* a, const double* b, int64_t d) {
  double s = 0.0;
  for (int64_t i = 0; i < d; ++i) {
    double diff = a[i] - b[i];
    s += diff * diff;
  }
  return s;
}

KMeansResult kmeans_single(const std::vector<Tensor>& points, int C, uint64_t seed, int max_iters) {
  int n = static_cast<int>(points.size());
  int64_t d = points[0].size();
  Rng rng(seed);

  // k-means++ seeding.
  Tensor means({C, static_cast<int>(d)});
  std::vector<double> dist2(static_cast<size_t>(n), std::numeric_limits<double>::max());
  int first = rng.uniform_int(n);
  for (int64_t j = 0; j < d; ++j) means[j] = points[static_cast<size_t>(first)][j];
  for (int c = 1; c < C; ++c) {
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
      double dd = sq_dist(points[static_cast<size_t>(i)].data(), means.data() + static_cast<int64_t>(c - 1) * d, d);
      if (dd < dist2[static_cast<size_t>(i)]) dist2[static_cast<size_t>(i)] = dd;
      total += dist2[static_cast<size_t>(i)];
    }
    int pick = 0;
    if (total > 0.0) {
      double r = rng.uniform() * total;
      double acc = 0.0;
      pick = n - 1;
      for (int i = 0; i < n; ++i) {
        acc += dist2[static_cast<size_t>(i)];
        if (acc >= r) {
          pick = i;
          break;
        }
      }
    } else {
      pick = rng.uniform_int(n);
    }
    for (int64_t j = 0; j < d; ++j) means[static_cast<int64_t>(c) * d + j] = points[static_cast<size_t>(pick)][j];
  }

  std::vector<int> assign(static_cast<size_t>(n), -1);
  std::vector<double> best(static_cast<size_t>(n), 0.0);
  for (int iter = 0; iter < max_iters; ++iter) {
    bool changed = false;
    for (int i = 0; i < n; ++i) {
      int arg = 0;
      double bd = std::numeric_limits<double>::max();
      for (int c = 0; c < C; ++c) {
        double dd = sq_dist(points[static_cast<size_t>(i)].data(), means.data() + static_cast<int64_t>(c) * d, d);
        if (dd < bd) {
          bd = dd;
          arg = c;
        }
      }
      if (arg != assign[static_cast<size_t>(i)]) changed = true;
      assign[static_cast<size_t>(i)] = arg;
      best[static_cast<size_t>(i)] = bd;
    }

    // Re-seed empty clusters to the point farthest from its own center.
    std::vector<int> counts(static_cast<size_t>(C), 0);
    for (int a : assign) ++counts[static_cast<size_t>(a)];
    bool reseeded = false;
    for (int c = 0; c < C; ++c) {
      if (counts[static_cast<size_t>(c)] != 0) continue;
      int far = 0;
      double fd = -1.0;
      for (int i = 0; i < n; ++i)
        if (best[static_cast<size_t>(i)] > fd && counts[static_cast<size_t>(assign[static_cast<size_t>(i)])] > 1) {
          fd = best[static_cast<size_t>(i)];
          far = i;
        }
      --counts[static_cast<size_t>(assign[static_cast<size_t>(far)])];
      assign[static_cast<size_t>(far)] = c;
      counts[static_cast<size_t>(c)] = 1;
      best[static_cast<size_t>(far)] = 0.0;
      reseeded = true;
    }

    // Update step.
    Tensor next({C, static_cast<int>(d)});
    std::vector<int> cnt(static_cast<size_t>(C), 0);
    for (int i = 0; i < n; ++i) {
      int c = assign[static_cast<size_t>(i)];
      ++cnt[static_cast<size_t>(c)];
      for (int64_t j = 0; j < d; ++j) next[static_cast<int64_t>(c) * d + j] += points[static_cast<size_t>(i)][j];
    }
    for (int c = 0; c < C; ++c) {
      if (cnt[static_cast<size_t>(c)] == 0) {
        for (int64_t j = 0; j < d; ++j) next[static_cast<int64_t>(c) * d + j] = means[static_cast<int64_t>(c) * d + j];
      } else {
        for (int64_t j = 0; j < d; ++j) next[static_cast<int64_t>(c) * d + j] /= cnt[static_cast<size_t>(c)];
      }
    }
    means = std::move(next);
    if (!changed && !reseeded) break;
  }

  // Hartigan refinement: move one point at a time while the exact SSE delta
  //   n_b/(n_b+1) * |x - mu_b|^2 - n_a/(n_a-1) * |x - mu_a|^2
  // is negative. Lloyd fixed points are not always Hartigan-optimal, so this
  // escapes the shallow local minima restarts tend to share on small inputs.
  {
    std::vector<int> cnt(static_cast<size_t>(C), 0);
    for (int a : assign) ++cnt[static_cast<size_t>(a)];
    bool moved = true;
    for (int pass = 0; moved && pass < 16 * std::max(n, 1); ++pass) {
      moved = false;
      for (int i = 0; i < n; ++i) {
        int a = assign[static_cast<size_t>(i)];
        if (cnt[static_cast<size_t>(a)] <= 1) continue;
        const double* x = points[static_cast<size_t>(i)].data();
        double na = static_cast<double>(cnt[static_cast<size_t>(a)]);
        double loss_a = na / (na - 1.0) * sq_dist(x, means.data() + static_cast<int64_t>(a) * d, d);
        int to = -1;
        double best_gain = -1e-12;
        for (int c = 0; c < C; ++c) {
          if (c == a) continue;
          double nc = static_cast<double>(cnt[static_cast<size_t>(c)]);
          double gain = nc / (nc + 1.0) * sq_dist(x, means.data() + static_cast<int64_t>(c) * d, d) - loss_a;
          if (gain < best_gain) {
            best_gain = gain;
            to = c;
          }
        }
        if (to < 0) continue;
        double* ma = means.data() + static_cast<int64_t>(a) * d;
        double* mb = means.data() + static_cast<int64_t>(to) * d;
        double nb = static_cast<double>(cnt[static_cast<size_t>(to)]);
        for (int64_t j = 0; j < d; ++j) {
          ma[j] = (na * ma[j] - x[j]) / (na - 1.0);
          mb[j] = (nb * mb[j] + x[j]) / (nb + 1.0);
        }
        --cnt[static_cast<size_t>(a)];
        ++cnt[static_cast<size_t>(to)];
        assign[static_cast<size_t>(i)] = to;
        moved = true;
      }
    }

    // Re-derive the means exactly to shed incremental-update drift.
    Tensor exact({C, static_cast<int>(d)});
    for (int i = 0; i < n; ++i) {
      int c = assign[static_cast<size_t>(i)];
      for (int64_t j = 0; j < d; ++j) exact[static_cast<int64_t>(c) * d + j] += points[static_cast<size_t>(i)][j];
    }
    for (int c = 0; c < C; ++c) {
      if (cnt[static_cast<size_t>(c)] == 0) {
        for (int64_t j = 0; j < d; ++j) exact[static_cast<int64_t>(c) * d + j] = means[static_cast<int64_t>(c) * d + j];
      } else {
        for (int64_t j = 0; j < d; ++j) exact[static_cast<int64_t>(c) * d + j] /= cnt[static_cast<size_t>(c)];
      }
    }
    means = std::move(exact);
  }

  KMeansResult res;
  res.assignments.resize(static_cast<size_t>(n));
  double sse = 0.0;
  for (int i = 0; i < n; ++i) {
    int arg = 0;
    double bd = std::numeric_limits<double>::max();
    for (int c = 0; c < C; ++c) {
      double dd = sq_dist(points[static_cast<size_t>(i)].data(), means.data() + static_cast<int64_t>(c) * d, d);
      if (dd < bd) {
        bd = dd;
        arg = c;
      }
    }
    res.assignments[static_cast<size_t>(i)] = arg;
    sse += bd;
  }
  res.means = std::move(means);
  res.sse = sse;
  return res;
}

}  // namespace

KMeansResult kmeans(const std::vector<Tensor>& points, int C, uint64_t seed, int max_iters, int restarts) {
  if (C < 1) throw ValidationError("kmeans: C must be positive");
  if (static_cast<int>(points.size()) < C)
    throw ValidationError("kmeans: " + std::to_string(points.size()) + " points for " + std::to_string(C) +
                          " clusters");
  int64_t d = points[0].size();
  for (const auto& p : points)
    if (p.size() != d) throw ValidationError("kmeans: inconsistent point dimensions");

  KMeansResult best;
  for (int r = 0; r < std::max(1, restarts); ++r) {
    KMeansResult run = kmeans_single(points, C, derive_seed(seed, "kmeans-restart-" + std::to_string(r)), max_iters);
    if (r == 0 || run.sse < best.sse) best = std::move(run);
  }
  return best;
}

void ClassDistributionBank::allocate() { means = Tensor({2, num_clusters, kNumRegions, kRegionDim}); }

Tensor ClassDistributionBank::region_mean(Domain d, int c, Region r) const {
  if (!populated) throw StateError("bank: not populated");
  if (c < 0 || c >= num_clusters) throw ValidationError("bank: cluster index out of range");
  Tensor out({kRegionDim});
  const double* src = means.data() + (((static_cast<int64_t>(d) * num_clusters + c) * kNumRegions) +
                                      static_cast<int>(r)) * kRegionDim;
  for (int j = 0; j < kRegionDim; ++j) out[j] = src[j];
  return out;
}

Tensor ClassDistributionBank::class_concat(Domain d, int c) const {
  if (!populated) throw StateError("bank: not populated");
  Tensor out({kFeatureDim});
  const double* src = means.data() + (static_cast<int64_t>(d) * num_clusters + c) * kNumRegions * kRegionDim;
  for (int j = 0; j < kFeatureDim; ++j) out[j] = src[j];
  return out;
}

int assign_cluster(const RegionFeatureStack& stack, const ClassDistributionBank& bank, Domain domain) {
  if (!bank.populated) throw StateError("assign_cluster: bank not populated");
  Tensor x = stack.concatenated();
  int arg = 0;
  double bd = std::numeric_limits<double>::max();
  for (int c = 0; c < bank.num_clusters; ++c) {
    const double* m =
        bank.means.data() + (static_cast<int64_t>(domain) * bank.num_clusters + c) * kNumRegions * kRegionDim;
    double s = 0.0;
    for (int j = 0; j < kFeatureDim; ++j) {
      double diff = x[j] - m[j];
      s += diff * diff;
    }
    if (s < bd) {  // strict: ties keep the smaller index
      bd = s;
      arg = c;
    }
  }
  return arg;
}

namespace {

// Eq.-4 style member means per cluster and region, written into one
// domain's slice of the bank. Clusters with no members fall back to the
// k-means centroid slice.
void fill_domain_means(ClassDistributionBank& bank, Domain domain, const std::vector<RegionFeatureStack>& stacks,
                       const std::vector<int>& assignments, const Tensor* centroids) {
  int C = bank.num_clusters;
  std::vector<int> counts(static_cast<size_t>(C), 0);
  double* base = bank.means.data() + static_cast<int64_t>(domain) * C * kNumRegions * kRegionDim;
  std::fill(base, base + static_cast<int64_t>(C) * kNumRegions * kRegionDim, 0.0);
  for (size_t i = 0; i < stacks.size(); ++i) {
    int c = assignments[i];
    ++counts[static_cast<size_t>(c)];
    for (int r = 0; r < kNumRegions; ++r) {
      double* dst = base + (static_cast<int64_t>(c) * kNumRegions + r) * kRegionDim;
      const Tensor& f = stacks[i].f[static_cast<size_t>(r)];
      for (int j = 0; j < kRegionDim; ++j) dst[j] += f[j];
    }
  }
  for (int c = 0; c < C; ++c) {
    if (counts[static_cast<size_t>(c)] == 0) {
      if (centroids == nullptr)
        throw ValidationError("bank: cluster " + std::to_string(c) + " has no " +
                              std::string(domain_name(domain)) + " samples");
      const double* m = centroids->data() + static_cast<int64_t>(c) * kFeatureDim;
      double* dst = base + static_cast<int64_t>(c) * kNumRegions * kRegionDim;
      for (int j = 0; j < kFeatureDim; ++j) dst[j] = m[j];
      continue;
    }
    double inv = 1.0 / counts[static_cast<size_t>(c)];
    double* dst = base + static_cast<int64_t>(c) * kNumRegions * kRegionDim;
    for (int j = 0; j < kFeatureDim; ++j) dst[j] *= inv;
  }
}

std::vector<Tensor> concat_all(const std::vector<RegionFeatureStack>& stacks) {
  std::vector<Tensor> pts;
  pts.reserve(stacks.size());
  for (const auto& s : stacks) pts.push_back(s.concatenated());
  return pts;
}

}  // namespace

ClassDistributionBank initialize_bank(const std::vector<RegionFeatureStack>& source_stacks,
                                      const std::vector<RegionFeatureStack>& target_stacks, int num_clusters,
                                      uint64_t seed, int restarts, const std::vector<int>* source_labels) {
  if (num_clusters < 1) throw ValidationError("initialize_bank: num_clusters must be positive");
  if (source_stacks.empty() || target_stacks.empty()) throw ValidationError("initialize_bank: empty stack list");
  if (static_cast<int>(source_stacks.size()) < num_clusters || static_cast<int>(target_stacks.size()) < num_clusters)
    throw ValidationError("initialize_bank: fewer samples than clusters");

  ClassDistributionBank bank;
  bank.num_clusters = num_clusters;
  bank.allocate();

  if (source_labels != nullptr) {
    if (source_labels->size() != source_stacks.size())
      throw ValidationError("initialize_bank: label list does not match source stacks");
    for (int lab : *source_labels)
      if (lab < 0 || lab >= num_clusters) throw ValidationError("initialize_bank: source label out of cluster range");
    fill_domain_means(bank, Domain::source, source_stacks, *source_labels, nullptr);
  } else {
    KMeansResult km = kmeans(concat_all(source_stacks), num_clusters, derive_seed(seed, "bank-source"), 100, restarts);
    fill_domain_means(bank, Domain::source, source_stacks, km.assignments, &km.means);
  }

  KMeansResult km = kmeans(concat_all(target_stacks), num_clusters, derive_seed(seed, "bank-target"), 100, restarts);
  fill_domain_means(bank, Domain::target, target_stacks, km.assignments, &km.means);

  bank.populated = true;
  if (!bank.means.all_finite()) throw ValidationError("initialize_bank: non-finite means");
  return bank;
}

void update_iteration(ClassDistributionBank& bank, const std::vector<const RegionFeatureStack*>& batch, double alpha) {
  if (!bank.populated) throw StateError("update_iteration: bank not populated");
  int C = bank.num_clusters;

  for (int d = 0; d < 2; ++d) {
    Domain domain = static_cast<Domain>(d);
    // Per-cluster batch sums for this domain.
    Tensor sums({C, kNumRegions, kRegionDim});
    std::vector<int> counts(static_cast<size_t>(C), 0);
    bool any = false;
    for (const RegionFeatureStack* s : batch) {
      if (s->domain != domain) continue;
      any = true;
      int c = assign_cluster(*s, bank, domain);
      ++counts[static_cast<size_t>(c)];
      for (int r = 0; r < kNumRegions; ++r) {
        double* dst = sums.data() + (static_cast<int64_t>(c) * kNumRegions + r) * kRegionDim;
        const Tensor& f = s->f[static_cast<size_t>(r)];
        for (int j = 0; j < kRegionDim; ++j) dst[j] += f[j];
      }
    }
    if (!any) continue;
    for (int c = 0; c < C; ++c) {
      if (counts[static_cast<size_t>(c)] == 0) continue;
      double inv = 1.0 / counts[static_cast<size_t>(c)];
      double* mean = bank.means.data() + (static_cast<int64_t>(d) * C + c) * kNumRegions * kRegionDim;
      const double* batch_mean = sums.data() + static_cast<int64_t>(c) * kNumRegions * kRegionDim;
      for (int j = 0; j < kFeatureDim; ++j) mean[j] = (1.0 - alpha) * mean[j] + alpha * batch_mean[j] * inv;
    }
  }
}

void recluster(ClassDistributionBank& bank, const std::vector<RegionFeatureStack>& source_stacks,
               const std::vector<RegionFeatureStack>& target_stacks, uint64_t seed, int restarts,
               const std::vector<int>* source_labels) {
  if (!bank.populated) throw StateError("recluster: bank not populated");
  ClassDistributionBank fresh =
      initialize_bank(source_stacks, target_stacks, bank.num_clusters, seed, restarts, source_labels);
  bank.means = std::move(fresh.means);
}

ClassDistributionBank dataset_level_bank(const std::vector<RegionFeatureStack>& source_stacks,
                                         const std::vector<RegionFeatureStack>& target_stacks, uint64_t seed) {
  return initialize_bank(source_stacks, target_stacks, 1, seed, 1, nullptr);
}

}  // namespace agra
