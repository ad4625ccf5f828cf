#include "agra/data.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>

#include <json.hpp>

#include "agra/core/error.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace agra {

const char* region_name(Region r) {
  static const char* names[] = {"h", "le", "re", "no", "lm", "rm"};
  return names[static_cast<int>(r)];
}

const char* domain_name(Domain d) { return d == Domain::source ? "source" : "target"; }

const char* expression_name(int label) {
  static const char* names[] = {"surprise", "fear", "disgust", "happiness", "sadness", "anger", "neutral"};
  if (label < 0 || label >= kNumClasses) throw ValidationError("expression label out of range: " + std::to_string(label));
  return names[label];
}

Point LandmarkSet::get(Region r) const {
  switch (r) {
    case Region::le:
      return le;
    case Region::re:
      return re;
    case Region::no:
      return no;
    case Region::lm:
      return lm;
    case Region::rm:
      return rm;
    default:
      throw ValidationError("landmark lookup for the holistic region");
  }
}

void LandmarkSet::validate() const {
  const Point pts[] = {le, re, no, lm, rm};
  for (const Point& p : pts) {
    if (!(p.x >= 0.0 && p.x <= kImageSize - 1 && p.y >= 0.0 && p.y <= kImageSize - 1))
      throw ValidationError("landmark outside image bounds");
  }
}

Tensor load_image_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open image '" + path + "'");
  std::string magic;
  in >> magic;
  if (magic != "P6") throw ParseError("'" + path + "': not a binary PPM (P6) file");
  auto next_int = [&in, &path]() {
    // Skip whitespace and '#' comments between header fields.
    for (;;) {
      int c = in.peek();
      if (c == '#') {
        std::string line;
        std::getline(in, line);
      } else if (std::isspace(c)) {
        in.get();
      } else {
        break;
      }
    }
    int v;
    if (!(in >> v)) throw ParseError("'" + path + "': malformed PPM header");
    return v;
  };
  int w = next_int(), h = next_int(), maxv = next_int();
  if (w != kImageSize || h != kImageSize)
    throw ValidationError("'" + path + "': expected 112x112 image, got " + std::to_string(w) + "x" + std::to_string(h));
  if (maxv != 255) throw ParseError("'" + path + "': expected 8-bit PPM");
  in.get();  // single whitespace after maxval
  std::vector<unsigned char> raw(static_cast<size_t>(w) * h * 3);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (in.gcount() != static_cast<std::streamsize>(raw.size())) throw ParseError("'" + path + "': truncated PPM data");

  Tensor img({3, kImageSize, kImageSize});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        img[(static_cast<int64_t>(c) * h + y) * w + x] = raw[(static_cast<size_t>(y) * w + x) * 3 + c] / 255.0;
  return img;
}

void save_image_ppm(const std::string& path, const Tensor& image) {
  if (image.rank() != 3 || image.dim(0) != 3 || image.dim(1) != kImageSize || image.dim(2) != kImageSize)
    throw ValidationError("save_image_ppm: expected [3,112,112], got " + image.shape_str());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write image '" + path + "'");
  out << "P6\n" << kImageSize << " " << kImageSize << "\n255\n";
  std::vector<unsigned char> raw(static_cast<size_t>(kImageSize) * kImageSize * 3);
  for (int y = 0; y < kImageSize; ++y)
    for (int x = 0; x < kImageSize; ++x)
      for (int c = 0; c < 3; ++c) {
        double v = image[(static_cast<int64_t>(c) * kImageSize + y) * kImageSize + x];
        v = std::min(1.0, std::max(0.0, v));
        raw[(static_cast<size_t>(y) * kImageSize + x) * 3 + c] = static_cast<unsigned char>(v * 255.0 + 0.5);
      }
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
}

namespace {

Point parse_point(const json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 2 || !j[0].is_number() || !j[1].is_number())
    throw ParseError(where + ": landmark must be a [x, y] number pair");
  return Point{j[0].get<double>(), j[1].get<double>()};
}

}  // namespace

DatasetManifest load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest '" + path + "'");
  DatasetManifest m;
  m.name = fs::path(path).stem().string();
  fs::path base = fs::path(path).parent_path();

  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string where = path + ":" + std::to_string(lineno);
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError(where + ": " + e.what());
    }
    if (!j.is_object()) throw ParseError(where + ": expected a JSON object");
    if (!j.contains("path")) {
      if (j.contains("name") && j["name"].is_string()) {
        m.name = j["name"].get<std::string>();
        continue;
      }
      throw ParseError(where + ": record has no 'path'");
    }

    ManifestRecord rec;
    if (!j["path"].is_string()) throw ParseError(where + ": 'path' must be a string");
    fs::path p = fs::path(j["path"].get<std::string>());
    if (p.is_relative()) p = base / p;
    rec.path = p.string();
    if (!fs::exists(p)) throw ValidationError(where + ": image path not resolvable: " + rec.path);

    if (j.contains("label") && !j["label"].is_null()) {
      if (!j["label"].is_number_integer()) throw ParseError(where + ": 'label' must be an integer");
      int lab = j["label"].get<int>();
      if (lab < 0 || lab >= kNumClasses)
        throw ValidationError(where + ": label " + std::to_string(lab) + " outside [0,6]");
      rec.label = lab;
    }

    if (!j.contains("landmarks") || !j["landmarks"].is_array() || j["landmarks"].size() != 5)
      throw ParseError(where + ": 'landmarks' must be an array of five [x,y] pairs (le,re,no,lm,rm)");
    rec.landmarks.le = parse_point(j["landmarks"][0], where);
    rec.landmarks.re = parse_point(j["landmarks"][1], where);
    rec.landmarks.no = parse_point(j["landmarks"][2], where);
    rec.landmarks.lm = parse_point(j["landmarks"][3], where);
    rec.landmarks.rm = parse_point(j["landmarks"][4], where);
    try {
      rec.landmarks.validate();
    } catch (const ValidationError&) {
      throw ValidationError(where + ": landmark outside the 112x112 image bounds");
    }

    if (!j.contains("split") || !j["split"].is_string()) throw ParseError(where + ": 'split' must be a string");
    rec.split = j["split"].get<std::string>();
    if (rec.split != "train" && rec.split != "val" && rec.split != "test")
      throw ValidationError(where + ": split '" + rec.split + "' not in {train,val,test}");

    m.records.push_back(std::move(rec));
  }
  if (m.records.empty()) std::cerr << "warning: manifest '" << path << "' contains no records\n";
  return m;
}

std::vector<int> DatasetManifest::split_indices(const std::string& split) const {
  std::vector<int> idx;
  for (size_t i = 0; i < records.size(); ++i)
    if (records[i].split == split) idx.push_back(static_cast<int>(i));
  return idx;
}

bool DatasetManifest::split_fully_labeled(const std::string& split) const {
  for (const auto& r : records)
    if (r.split == split && !r.label.has_value()) return false;
  return true;
}

DataSet::DataSet(DatasetManifest manifest, Domain domain) : manifest_(std::move(manifest)), domain_(domain) {
  cache_.resize(manifest_.records.size());
}

FaceSample DataSet::sample(int record_index) const {
  if (record_index < 0 || record_index >= size()) throw ValidationError("dataset: record index out of range");
  const ManifestRecord& rec = manifest_.records[static_cast<size_t>(record_index)];
  auto& bytes = cache_[static_cast<size_t>(record_index)];
  if (bytes.empty()) {
    Tensor img = load_image_ppm(rec.path);
    bytes.resize(static_cast<size_t>(img.size()));
    for (int64_t i = 0; i < img.size(); ++i) bytes[static_cast<size_t>(i)] = static_cast<unsigned char>(img[i] * 255.0 + 0.5);
  }
  FaceSample s;
  s.id = manifest_.name + "/" + std::to_string(record_index);
  s.image = Tensor({3, kImageSize, kImageSize});
  for (int64_t i = 0; i < s.image.size(); ++i) s.image[i] = bytes[static_cast<size_t>(i)] / 255.0;
  s.label = rec.label;
  s.landmarks = rec.landmarks;
  s.domain = domain_;
  return s;
}

FaceSample hflip(const FaceSample& s) {
  FaceSample out = s;
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < kImageSize; ++y)
      for (int x = 0; x < kImageSize; ++x)
        out.image[(static_cast<int64_t>(c) * kImageSize + y) * kImageSize + x] =
            s.image[(static_cast<int64_t>(c) * kImageSize + y) * kImageSize + (kImageSize - 1 - x)];
  auto mirror = [](Point p) { return Point{kImageSize - 1 - p.x, p.y}; };
  out.landmarks.le = mirror(s.landmarks.re);
  out.landmarks.re = mirror(s.landmarks.le);
  out.landmarks.no = mirror(s.landmarks.no);
  out.landmarks.lm = mirror(s.landmarks.rm);
  out.landmarks.rm = mirror(s.landmarks.lm);
  return out;
}

}  // namespace agra
