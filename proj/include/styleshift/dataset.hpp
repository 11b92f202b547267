#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "styleshift/errors.hpp"
#include "styleshift/hash.hpp"
#include "styleshift/image.hpp"
#include "styleshift/rng.hpp"
#include "styleshift/tensor.hpp"
#include "styleshift/version.hpp"

// Labeled image sets on disk: a directory of PNGs described by a JSON-lines
// manifest (one record per image), plus the procedural toy-face corpus and
// the synthetic target-domain transforms used by the experiment fixtures.
namespace styleshift {

struct ManifestEntry {
  std::string path;  // relative to the manifest file's directory
  std::string sha256;
  std::string label;
  std::uint64_t seed = 0;
  int k = 0;
  std::string source_model_version;
};

class DatasetManifest {
 public:
  DatasetManifest() = default;
  DatasetManifest(std::filesystem::path file, std::vector<ManifestEntry> entries)
      : file_(std::move(file)), entries_(std::move(entries)) {}

  const std::filesystem::path& file() const { return file_; }
  std::filesystem::path root() const { return file_.parent_path(); }
  const std::vector<ManifestEntry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }

  std::filesystem::path image_path(std::size_t i) const {
    return root() / entries_.at(i).path;
  }

  template <typename T>
  Tensor<T> load_image(std::size_t i) const {
    return load_image_png<T>(image_path(i));
  }

  void save() const {
    std::filesystem::create_directories(root());
    std::ofstream out(file_, std::ios::trunc);
    if (!out) throw PersistenceError("cannot write manifest " + file_.string());
    for (const auto& e : entries_) {
      nlohmann::json j = {{"path", e.path},
                          {"sha256", e.sha256},
                          {"label", e.label},
                          {"seed", e.seed},
                          {"k", e.k},
                          {"source_model_version", e.source_model_version}};
      out << j.dump() << "\n";
    }
    if (!out) throw PersistenceError("short write on manifest " + file_.string());
  }

  static DatasetManifest load(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) throw InputError("cannot open manifest " + file.string());
    std::vector<ManifestEntry> entries;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(line);
      } catch (const nlohmann::json::exception& e) {
        throw InputError("manifest " + file.string() + " line " + std::to_string(line_no) +
                         ": " + e.what());
      }
      ManifestEntry e;
      e.path = j.value("path", "");
      e.sha256 = j.value("sha256", "");
      e.label = j.value("label", "");
      e.seed = j.value("seed", std::uint64_t{0});
      e.k = j.value("k", 0);
      e.source_model_version = j.value("source_model_version", "");
      if (e.path.empty()) throw InputError("manifest entry without path in " + file.string());
      entries.push_back(std::move(e));
    }
    return DatasetManifest(file, std::move(entries));
  }

  // Every listed file exists and hashes match.
  void verify() const {
    for (const auto& e : entries_) {
      auto p = root() / e.path;
      if (!std::filesystem::exists(p)) throw PersistenceError("missing file " + p.string());
      if (sha256_file(p) != e.sha256)
        throw PersistenceError("hash mismatch for " + p.string());
    }
  }

  // No shared image hashes with another manifest (train/test hygiene).
  bool disjoint_from(const DatasetManifest& other) const {
    for (const auto& a : entries_)
      for (const auto& b : other.entries_)
        if (a.sha256 == b.sha256) return false;
    return true;
  }

 private:
  std::filesystem::path file_;
  std::vector<ManifestEntry> entries_;
};

// Writes images as PNG plus a manifest. Extra per-entry fields (seed, k) can
// be set by the caller afterwards via the returned entries before save().
template <typename T>
DatasetManifest write_dataset(const std::filesystem::path& dir,
                              const std::vector<Tensor<T>>& images, const std::string& label,
                              const std::string& source_version = kFormatVersion) {
  std::filesystem::create_directories(dir);
  std::vector<ManifestEntry> entries;
  char name[32];
  for (std::size_t i = 0; i < images.size(); ++i) {
    std::snprintf(name, sizeof name, "img_%06zu.png", i);
    save_image_png(dir / name, images[i]);
    ManifestEntry e;
    e.path = name;
    e.sha256 = sha256_file(dir / name);
    e.label = label;
    e.source_model_version = source_version;
    entries.push_back(std::move(e));
  }
  DatasetManifest m(dir / "manifest.jsonl", std::move(entries));
  m.save();
  return m;
}

// ---------------------------------------------------------------------------
// Procedural toy faces: colored ellipse compositions with known attributes.

struct ToyFaceAttributes {
  int skin_class = 0;        // 0..3, palette index of the face ellipse
  int background_class = 0;  // 0..3
};

namespace detail {

// Signed coverage of an axis-aligned ellipse with ~1px soft edge.
inline double ellipse_coverage(double px, double py, double cx, double cy, double rx,
                               double ry) {
  const double dx = (px - cx) / rx, dy = (py - cy) / ry;
  const double d = std::sqrt(dx * dx + dy * dy);
  const double edge = 1.0 / std::min(rx, ry);  // ~1 pixel in normalized units
  const double t = (1.0 - d) / edge + 0.5;
  return std::clamp(t, 0.0, 1.0);
}

inline void blend(double cov, const double rgb[3], double* px) {
  for (int c = 0; c < 3; ++c) px[c] = px[c] * (1.0 - cov) + rgb[c] * cov;
}

}  // namespace detail

// One toy face in [-1,1]. All geometry and palette choices come from rng.
template <typename T>
Tensor<T> render_toy_face(Rng& rng, int resolution, ToyFaceAttributes* attrs = nullptr) {
  static const double kBackgrounds[4][3] = {
      {0.25, 0.35, 0.55}, {0.30, 0.50, 0.35}, {0.55, 0.40, 0.30}, {0.35, 0.30, 0.50}};
  static const double kSkins[4][3] = {
      {0.95, 0.80, 0.65}, {0.80, 0.60, 0.45}, {0.60, 0.42, 0.30}, {0.95, 0.70, 0.75}};

  const int bg = static_cast<int>(rng.below(4));
  const int skin = static_cast<int>(rng.below(4));
  if (attrs) {
    attrs->background_class = bg;
    attrs->skin_class = skin;
  }

  const double R = resolution;
  std::vector<double> buf(static_cast<std::size_t>(resolution) * resolution * 3);
  double bgc[3];
  for (int c = 0; c < 3; ++c) bgc[c] = kBackgrounds[bg][c] + rng.uniform(-0.05, 0.05);
  for (int y = 0; y < resolution; ++y)
    for (int x = 0; x < resolution; ++x)
      for (int c = 0; c < 3; ++c)
        buf[(static_cast<std::size_t>(y) * resolution + x) * 3 + c] = bgc[c];

  // Face ellipse.
  const double cx = R * (0.5 + rng.uniform(-0.06, 0.06));
  const double cy = R * (0.52 + rng.uniform(-0.06, 0.06));
  const double rx = R * (0.30 + rng.uniform(-0.04, 0.06));
  const double ry = R * (0.36 + rng.uniform(-0.04, 0.06));
  double skin_rgb[3];
  for (int c = 0; c < 3; ++c) skin_rgb[c] = std::clamp(kSkins[skin][c] + rng.uniform(-0.04, 0.04), 0.0, 1.0);

  // Hair band above the face.
  double hair_rgb[3] = {rng.uniform(0.05, 0.35), rng.uniform(0.05, 0.3), rng.uniform(0.02, 0.25)};
  const double hair_ry = ry * rng.uniform(0.5, 0.75);

  // Eyes and mouth, placed relative to the face.
  const double eye_dx = rx * (0.38 + rng.uniform(-0.05, 0.05));
  const double eye_y = cy - ry * (0.15 + rng.uniform(-0.05, 0.05));
  const double eye_r = R * (0.045 + rng.uniform(-0.01, 0.015));
  double eye_rgb[3] = {0.08, 0.08, rng.uniform(0.08, 0.35)};
  const double mouth_y = cy + ry * (0.45 + rng.uniform(-0.06, 0.06));
  const double mouth_rx = rx * (0.42 + rng.uniform(-0.08, 0.08));
  const double mouth_ry = eye_r * rng.uniform(0.5, 0.9);
  double mouth_rgb[3] = {rng.uniform(0.55, 0.85), 0.2, 0.25};

  for (int y = 0; y < resolution; ++y)
    for (int x = 0; x < resolution; ++x) {
      double* px = &buf[(static_cast<std::size_t>(y) * resolution + x) * 3];
      const double pxx = x + 0.5, pyy = y + 0.5;
      detail::blend(detail::ellipse_coverage(pxx, pyy, cx, cy, rx, ry), skin_rgb, px);
      double hair = detail::ellipse_coverage(pxx, pyy, cx, cy - ry * 0.55, rx * 1.02, hair_ry);
      if (pyy < cy - ry * 0.35) detail::blend(hair, hair_rgb, px);
      detail::blend(detail::ellipse_coverage(pxx, pyy, cx - eye_dx, eye_y, eye_r, eye_r),
                    eye_rgb, px);
      detail::blend(detail::ellipse_coverage(pxx, pyy, cx + eye_dx, eye_y, eye_r, eye_r),
                    eye_rgb, px);
      detail::blend(detail::ellipse_coverage(pxx, pyy, cx, mouth_y, mouth_rx, mouth_ry),
                    mouth_rgb, px);
    }

  Tensor<T> img({3, resolution, resolution});
  for (int y = 0; y < resolution; ++y)
    for (int x = 0; x < resolution; ++x)
      for (int c = 0; c < 3; ++c)
        img.at(c, y, x) =
            static_cast<T>(buf[(static_cast<std::size_t>(y) * resolution + x) * 3 + c] * 2.0 - 1.0);
  return img;
}

template <typename T>
std::vector<std::pair<Tensor<T>, ToyFaceAttributes>> toy_corpus(int n, int resolution,
                                                                std::uint64_t seed) {
  std::vector<std::pair<Tensor<T>, ToyFaceAttributes>> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    Rng rng(derive_seed(seed, "toy-face", static_cast<std::uint64_t>(i)));
    ToyFaceAttributes attrs;
    auto img = render_toy_face<T>(rng, resolution, &attrs);
    out.emplace_back(std::move(img), attrs);
  }
  return out;
}

template <typename T>
DatasetManifest generate_toy_corpus(const std::filesystem::path& dir, int n, int resolution,
                                    std::uint64_t seed, const std::string& label = "real") {
  auto faces = toy_corpus<T>(n, resolution, seed);
  std::vector<Tensor<T>> images;
  images.reserve(faces.size());
  for (auto& [img, attrs] : faces) images.push_back(std::move(img));
  auto manifest = write_dataset(dir, images, label, "corpus");
  std::vector<ManifestEntry> entries = manifest.entries();
  for (std::size_t i = 0; i < entries.size(); ++i)
    entries[i].seed = derive_seed(seed, "toy-face", i);
  DatasetManifest m(manifest.file(), std::move(entries));
  m.save();
  return m;
}

// ---------------------------------------------------------------------------
// Synthetic target domains: deterministic transforms of corpus images.

enum class DomainTransform { ColorCast, Blur, Quantize, ChannelSwap };

inline const char* to_string(DomainTransform t) {
  switch (t) {
    case DomainTransform::ColorCast: return "colorcast";
    case DomainTransform::Blur: return "blur";
    case DomainTransform::Quantize: return "quantize";
    case DomainTransform::ChannelSwap: return "chanswap";
  }
  return "?";
}

template <typename T>
Tensor<T> apply_domain_transform(const Tensor<T>& img, DomainTransform t,
                                 double strength = 1.0) {
  const int H = img.dim(1), W = img.dim(2);
  Tensor<T> out = img;
  switch (t) {
    case DomainTransform::ColorCast: {
      // Warm cast: boost red, crush blue, slight brightness lift.
      const double gain[3] = {1.0 + 0.25 * strength, 1.0 - 0.05 * strength,
                              1.0 - 0.35 * strength};
      const double bias[3] = {0.20 * strength, 0.02 * strength, -0.15 * strength};
      for (int c = 0; c < 3; ++c)
        for (int y = 0; y < H; ++y)
          for (int x = 0; x < W; ++x)
            out.at(c, y, x) = static_cast<T>(std::clamp(
                static_cast<double>(img.at(c, y, x)) * gain[c] + bias[c], -1.0, 1.0));
      break;
    }
    case DomainTransform::Blur: {
      const int passes = std::max(1, static_cast<int>(std::lround(strength)));
      Tensor<T> cur = img;
      for (int p = 0; p < passes; ++p) {
        Tensor<T> next({3, H, W});
        static const double k[3] = {0.25, 0.5, 0.25};
        Tensor<T> tmp({3, H, W});
        for (int c = 0; c < 3; ++c)
          for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
              double acc = 0;
              for (int d = -1; d <= 1; ++d) {
                int xx = std::clamp(x + d, 0, W - 1);
                acc += k[d + 1] * static_cast<double>(cur.at(c, y, xx));
              }
              tmp.at(c, y, x) = static_cast<T>(acc);
            }
        for (int c = 0; c < 3; ++c)
          for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
              double acc = 0;
              for (int d = -1; d <= 1; ++d) {
                int yy = std::clamp(y + d, 0, H - 1);
                acc += k[d + 1] * static_cast<double>(tmp.at(c, yy, x));
              }
              next.at(c, y, x) = static_cast<T>(acc);
            }
        cur = std::move(next);
      }
      out = std::move(cur);
      break;
    }
    case DomainTransform::Quantize: {
      // Posterization standing in for compression artifacts.
      const int levels = std::max(2, static_cast<int>(std::lround(12 - 6 * strength)));
      for (long i = 0; i < out.numel(); ++i) {
        double v = (static_cast<double>(img[i]) + 1.0) / 2.0;
        v = std::round(v * (levels - 1)) / (levels - 1);
        out[i] = static_cast<T>(v * 2.0 - 1.0);
      }
      break;
    }
    case DomainTransform::ChannelSwap: {
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
          T r = img.at(0, y, x), g = img.at(1, y, x), b = img.at(2, y, x);
          out.at(0, y, x) = g;
          out.at(1, y, x) = b;
          out.at(2, y, x) = r;
        }
      break;
    }
  }
  return out;
}

// Named fixture domains used by the experiment harness and CLI.
struct FixtureDomain {
  std::string name;
  std::vector<std::pair<DomainTransform, double>> steps;

  template <typename T>
  Tensor<T> apply(const Tensor<T>& img) const {
    Tensor<T> out = img;
    for (const auto& [t, s] : steps) out = apply_domain_transform(out, t, s);
    return out;
  }

  static FixtureDomain named(const std::string& id) {
    if (id == "colorcast")
      return {"colorcast",
              {{DomainTransform::ColorCast, 1.0}, {DomainTransform::Blur, 1.0}}};
    if (id == "blur") return {"blur", {{DomainTransform::Blur, 3.0}}};
    if (id == "quantize") return {"quantize", {{DomainTransform::Quantize, 1.0}}};
    if (id == "chanswap") return {"chanswap", {{DomainTransform::ChannelSwap, 1.0}}};
    throw InputError("unknown fixture domain '" + id +
                     "' (expected colorcast|blur|quantize|chanswap)");
  }
};

}  // namespace styleshift
