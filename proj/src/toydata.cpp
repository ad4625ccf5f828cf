#include "agra/toydata.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <json.hpp>

#include "agra/core/error.hpp"
#include "agra/core/rng.hpp"

namespace agra {

using nlohmann::json;

namespace fs = std::filesystem;

namespace {

using Color = std::array<double, 3>;

void put_pixel(Tensor& img, int row, int col, const Color& color, double opacity = 1.0) {
  if (row < 0 || row >= kImageSize || col < 0 || col >= kImageSize) return;
  for (int c = 0; c < 3; ++c) {
    double& v = img.at({c, row, col});
    v = (1.0 - opacity) * v + opacity * color[static_cast<size_t>(c)];
  }
}

void fill_ellipse(Tensor& img, double cx, double cy, double rx, double ry, const Color& color) {
  int r0 = std::max(0, static_cast<int>(std::floor(cy - ry)));
  int r1 = std::min(kImageSize - 1, static_cast<int>(std::ceil(cy + ry)));
  int c0 = std::max(0, static_cast<int>(std::floor(cx - rx)));
  int c1 = std::min(kImageSize - 1, static_cast<int>(std::ceil(cx + rx)));
  for (int r = r0; r <= r1; ++r)
    for (int c = c0; c <= c1; ++c) {
      double dx = (c - cx) / rx, dy = (r - cy) / ry;
      if (dx * dx + dy * dy <= 1.0) put_pixel(img, r, c, color);
    }
}

void fill_disc(Tensor& img, double cx, double cy, double radius, const Color& color) {
  fill_ellipse(img, cx, cy, radius, radius, color);
}

}  // namespace

ToySample render_toy_sample(int label, Domain domain, double shift, uint64_t seed) {
  if (label < 0 || label >= kNumClasses) throw ValidationError("toy label outside [0,6]");
  if (shift < 0.0) throw ValidationError("toy.shift must be non-negative");
  Rng rng(seed);
  const double s = domain == Domain::target ? shift : 0.0;

  // Geometry. The class controls mouth curvature and eye aperture; everything
  // else jitters per sample. The target face sits slightly offset.
  const int curvature = label % 3 - 1;           // -1 frown, 0 flat, +1 smile
  const double eye_hh = 2.0 + 3.0 * (label / 3); // half-height: 2, 5, 8

  double cx = 56.0 + rng.uniform(-4.0, 4.0) + 5.0 * s;
  double cy = 56.0 + rng.uniform(-4.0, 4.0) - 3.0 * s;
  double face_rx = 36.0 + rng.uniform(-3.0, 3.0);
  double face_ry = 42.0 + rng.uniform(-3.0, 3.0);
  double eye_dx = 16.0 + rng.uniform(-2.0, 2.0);
  double eye_y = cy - 12.0 + rng.uniform(-2.0, 2.0);
  double nose_x = cx + rng.uniform(-1.5, 1.5);
  double nose_y = cy + 5.0 + rng.uniform(-1.5, 1.5);
  double mouth_y = cy + 20.0 + rng.uniform(-2.0, 2.0);
  double mouth_hw = 13.0 + rng.uniform(-2.0, 2.0);

  Color face{0.55 + rng.uniform(-0.06, 0.06), 0.47 + rng.uniform(-0.06, 0.06), 0.40 + rng.uniform(-0.06, 0.06)};
  double bg = 0.12 + rng.uniform(-0.03, 0.03);

  Tensor img = Tensor::full({3, kImageSize, kImageSize}, bg);
  fill_ellipse(img, cx, cy, face_rx, face_ry, face);

  const Color dark{0.08, 0.08, 0.10};
  fill_ellipse(img, cx - eye_dx, eye_y, 6.0, eye_hh, dark);
  fill_ellipse(img, cx + eye_dx, eye_y, 6.0, eye_hh, dark);

  const Color nose_c{0.30, 0.22, 0.18};
  fill_ellipse(img, nose_x, nose_y, 2.5, 4.0, nose_c);

  const Color mouth_c{0.45, 0.10, 0.12};
  for (double t = -1.0; t <= 1.0; t += 0.05) {
    double mx = cx + t * mouth_hw;
    double my = mouth_y - curvature * 6.0 * (1.0 - t * t);
    fill_disc(img, mx, my, 1.8, mouth_c);
  }

  if (s > 0.0) {
    // Style-only domain shift: rotate color channels into each other, lift
    // brightness, compress contrast. Geometry stays class-identical.
    const double w = std::min(0.45, 0.40 * s);
    const double gain = std::max(0.4, 1.0 - 0.25 * s);
    const double lift = 0.28 * std::min(1.5, s);
    const int64_t plane = static_cast<int64_t>(kImageSize) * kImageSize;
    for (int64_t i = 0; i < plane; ++i) {
      double r = img[i], g = img[plane + i], b = img[2 * plane + i];
      double r2 = (1.0 - w) * r + w * g;
      double g2 = (1.0 - w) * g + w * b;
      double b2 = (1.0 - w) * b + w * r;
      img[i] = r2 * gain + lift;
      img[plane + i] = g2 * gain + lift;
      img[2 * plane + i] = b2 * gain + lift;
    }
  }

  for (int64_t i = 0; i < img.size(); ++i) {
    double v = img[i] + rng.normal(0.0, 0.02);
    img[i] = std::min(1.0, std::max(0.0, v));
  }

  ToySample out;
  out.image = std::move(img);
  out.label = label;
  out.landmarks.le = Point{cx - eye_dx, eye_y};
  out.landmarks.re = Point{cx + eye_dx, eye_y};
  out.landmarks.no = Point{nose_x, nose_y};
  out.landmarks.lm = Point{cx - mouth_hw, mouth_y};
  out.landmarks.rm = Point{cx + mouth_hw, mouth_y};
  out.landmarks.validate();
  return out;
}

namespace {

json landmarks_json(const LandmarkSet& l) {
  auto pt = [](const Point& p) { return json::array({p.x, p.y}); };
  return json::array({pt(l.le), pt(l.re), pt(l.no), pt(l.lm), pt(l.rm)});
}

}  // namespace

ToyDataPaths make_toy_data(const Config& cfg) {
  const std::string dir = resolve_output_dir(cfg.get_str("toy.dir"));
  const int classes = static_cast<int>(cfg.get_int("toy.classes"));
  if (classes < 2 || classes > kNumClasses) throw ConfigError("toy.classes must be in [2, 7]");
  const double shift = cfg.get_double("toy.shift");
  if (shift < 0.0) throw ConfigError("toy.shift must be non-negative");
  const uint64_t seed = static_cast<uint64_t>(cfg.get_int("seed"));
  const std::array<std::pair<const char*, int>, 3> splits = {
      std::make_pair("train", static_cast<int>(cfg.get_int("toy.train"))),
      std::make_pair("val", static_cast<int>(cfg.get_int("toy.val"))),
      std::make_pair("test", static_cast<int>(cfg.get_int("toy.test")))};
  if (splits[0].second < 1) throw ConfigError("toy.train must be at least 1");
  for (const auto& [name, count] : splits)
    if (count < 0) throw ConfigError(std::string("toy.") + name + " must be non-negative");

  ToyDataPaths paths;
  for (Domain domain : {Domain::source, Domain::target}) {
    const std::string dn = domain_name(domain);
    std::error_code ec;
    fs::create_directories(fs::path(dir) / dn, ec);
    const std::string manifest_path = (fs::path(dir) / (dn + ".jsonl")).string();
    std::ofstream mf(manifest_path, std::ios::trunc);
    if (!mf) throw IoError("cannot write manifest '" + manifest_path + "'");
    mf << json{{"name", "toy-" + dn}}.dump() << '\n';

    for (const auto& [split, count] : splits) {
      for (int i = 0; i < count; ++i) {
        const int label = i % classes;
        std::ostringstream name;
        name << split << "_" << std::setw(5) << std::setfill('0') << i << ".ppm";
        const std::string rel = dn + "/" + name.str();
        ToySample sample = render_toy_sample(
            label, domain, shift,
            derive_seed(seed, "toy-" + dn + "-" + std::string(split) + "-" + std::to_string(i)));
        save_image_ppm((fs::path(dir) / rel).string(), sample.image);
        json rec;
        rec["path"] = rel;
        rec["label"] = label;
        rec["landmarks"] = landmarks_json(sample.landmarks);
        rec["split"] = split;
        mf << rec.dump() << '\n';
      }
    }
    if (!mf) throw IoError("short write on manifest '" + manifest_path + "'");
    if (domain == Domain::source)
      paths.source_manifest = manifest_path;
    else
      paths.target_manifest = manifest_path;
  }
  return paths;
}

}  // namespace agra
