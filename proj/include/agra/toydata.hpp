#pragma once

#include <cstdint>
#include <string>

#include "agra/config.hpp"
#include "agra/data.hpp"

namespace agra {

struct ToySample {
  Tensor image;  // [3,112,112]
  LandmarkSet landmarks;
  int label = 0;
};

// One procedurally rendered blob face. The class controls mouth curvature
// (label % 3: frown / flat / smile) and eye aperture (label / 3); `shift`
// scales the target-domain appearance changes (color mix, brightness, face
// offset). Landmarks are the rendered positions.
ToySample render_toy_sample(int label, Domain domain, double shift, uint64_t seed);

struct ToyDataPaths {
  std::string source_manifest;
  std::string target_manifest;
};

// Writes the two-domain fixture under toy.dir: PPM images plus one JSONL
// manifest per domain with class-balanced train/val/test splits.
ToyDataPaths make_toy_data(const Config& cfg);

}  // namespace agra
