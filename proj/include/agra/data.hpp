#pragma once

#include <optional>
#include <string>
#include <vector>

#include "agra/core/tensor.hpp"

namespace agra {

constexpr int kImageSize = 112;
constexpr int kNumRegions = 6;
constexpr int kNumClasses = 7;
constexpr int kRegionDim = 64;
constexpr int kNumNodes = 12;
constexpr int kFeatureDim = kNumRegions * kRegionDim;  // 384

enum class Domain { source = 0, target = 1 };

// Region order fixes the node layout everywhere: holistic first, then the
// five landmark regions. Graph node i is region (i % 6) of domain (i / 6).
enum class Region { h = 0, le = 1, re = 2, no = 3, lm = 4, rm = 5 };

const char* region_name(Region r);
const char* domain_name(Domain d);

// Expression indices 0..6. The mapping is fixed:
// 0 surprise, 1 fear, 2 disgust, 3 happiness, 4 sadness, 5 anger, 6 neutral.
const char* expression_name(int label);

struct Point {
  double x = 0.0;  // column
  double y = 0.0;  // row
};

struct LandmarkSet {
  Point le, re, no, lm, rm;

  Point get(Region r) const;
  void validate() const;  // every coordinate within [0, 111]
};

struct FaceSample {
  std::string id;
  Tensor image;  // [3,112,112], values in [0,1]
  std::optional<int> label;
  LandmarkSet landmarks;
  Domain domain = Domain::source;
};

// PPM (P6, 8-bit) image I/O. Returns [3,112,112] scaled to [0,1].
Tensor load_image_ppm(const std::string& path);
void save_image_ppm(const std::string& path, const Tensor& image);

struct ManifestRecord {
  std::string path;  // resolved absolute path
  std::optional<int> label;
  LandmarkSet landmarks;
  std::string split;  // train | val | test
};

struct DatasetManifest {
  std::string name;
  std::vector<ManifestRecord> records;

  std::vector<int> split_indices(const std::string& split) const;
  bool split_fully_labeled(const std::string& split) const;
};

// Line-delimited JSON manifest: one {"path","label","landmarks","split"}
// object per line; an optional {"name": ...} line names the dataset.
// Relative image paths resolve against the manifest's directory.
DatasetManifest load_manifest(const std::string& path);

// Manifest-backed sample source with a byte-level image cache (images are
// stored as uint8 and converted per access, keeping 4k images ~150 MB).
class DataSet {
 public:
  DataSet() = default;
  DataSet(DatasetManifest manifest, Domain domain);

  const DatasetManifest& manifest() const { return manifest_; }
  Domain domain() const { return domain_; }
  int size() const { return static_cast<int>(manifest_.records.size()); }

  FaceSample sample(int record_index) const;

 private:
  DatasetManifest manifest_;
  Domain domain_ = Domain::source;
  mutable std::vector<std::vector<unsigned char>> cache_;
};

// Horizontal mirror: flips image columns, reflects landmark x coordinates,
// and swaps the left/right eye and mouth-corner roles.
FaceSample hflip(const FaceSample& s);

}  // namespace agra
