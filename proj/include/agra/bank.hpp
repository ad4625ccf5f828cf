#pragma once

#include <cstdint>
#include <vector>

#include "agra/core/tensor.hpp"
#include "agra/data.hpp"
#include "agra/features.hpp"

namespace agra {

struct KMeansResult {
  Tensor means;                  // [C, D]
  std::vector<int> assignments;  // one cluster index per input point
  double sse = 0.0;              // within-cluster sum of squared distances
};

// Lloyd's algorithm with k-means++ seeding. Deterministic given the seed;
// empty clusters are re-seeded to the point farthest from its center.
// With restarts > 1 the lowest-SSE run wins (seeds derived from `seed`).
KMeansResult kmeans(const std::vector<Tensor>& points, int C, uint64_t seed, int max_iters = 100, int restarts = 1);

// Per-domain, per-class, per-region running means of region features.
struct ClassDistributionBank {
  int num_clusters = kNumClasses;
  double alpha = 0.1;
  int recluster_period = 10;
  bool populated = false;
  Tensor means;  // [2, C, 6, 64]

  void allocate();
  Tensor region_mean(Domain d, int c, Region r) const;  // [64]
  Tensor class_concat(Domain d, int c) const;           // [384] in region order
};

// Nearest bank class for a stack, by Euclidean distance between 384-dim
// concatenations; ties break toward the smaller index.
int assign_cluster(const RegionFeatureStack& stack, const ClassDistributionBank& bank, Domain domain);

// K-means over each domain's concatenated stacks, then per-cluster
// per-region member means. When source_labels is given, source clusters
// come from ground-truth labels instead of k-means.
ClassDistributionBank initialize_bank(const std::vector<RegionFeatureStack>& source_stacks,
                                      const std::vector<RegionFeatureStack>& target_stacks, int num_clusters,
                                      uint64_t seed, int restarts = 1,
                                      const std::vector<int>* source_labels = nullptr);

// Moving-average update: assign each batch stack to its nearest cluster in
// its own domain, then blend cluster means toward the batch means with
// rate alpha. Clusters without batch members are untouched.
void update_iteration(ClassDistributionBank& bank, const std::vector<const RegionFeatureStack*>& batch, double alpha);

// Full re-initialization from freshly extracted features (every E epochs).
void recluster(ClassDistributionBank& bank, const std::vector<RegionFeatureStack>& source_stacks,
               const std::vector<RegionFeatureStack>& target_stacks, uint64_t seed, int restarts = 1,
               const std::vector<int>* source_labels = nullptr);

// Dataset-level variant: a single cluster per domain (C=1).
ClassDistributionBank dataset_level_bank(const std::vector<RegionFeatureStack>& source_stacks,
                                         const std::vector<RegionFeatureStack>& target_stacks, uint64_t seed);

}  // namespace agra
