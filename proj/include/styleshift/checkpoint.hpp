#pragma once

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "styleshift/errors.hpp"
#include "styleshift/tensor.hpp"
#include "styleshift/version.hpp"

// Checkpoint directory format: metadata.json plus one raw little-endian
// float32 file (row-major, ".f32" suffix) per named parameter. All model
// kinds (generator, feature extractor, detector) share this layout.
namespace styleshift {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

struct CheckpointMeta {
  std::string version = kFormatVersion;
  std::string kind;  // "generator" | "extractor" | "detector" | ...
  int resolution = 0;
  int num_style_layers = 0;
  int style_dim = 0;
  std::uint64_t creation_seed = 0;
  nlohmann::json extra;  // model-kind specific settings
};

namespace detail {

inline void write_f32_file(const std::filesystem::path& path, const float* data,
                           std::size_t count) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw PersistenceError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(data),
            static_cast<std::streamsize>(count * sizeof(float)));
  if (!out) throw PersistenceError("short write: " + path.string());
}

inline std::vector<float> read_f32_file(const std::filesystem::path& path,
                                        std::size_t count) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw PersistenceError("cannot read " + path.string());
  std::vector<float> data(count);
  in.read(reinterpret_cast<char*>(data.data()),
          static_cast<std::streamsize>(count * sizeof(float)));
  if (static_cast<std::size_t>(in.gcount()) != count * sizeof(float))
    throw PersistenceError("short read: " + path.string());
  return data;
}

}  // namespace detail

template <typename T>
void save_checkpoint(const std::filesystem::path& dir, const CheckpointMeta& meta,
                     const std::vector<std::pair<std::string, Tensor<T>>>& params) {
  std::filesystem::create_directories(dir);
  nlohmann::json shapes = nlohmann::json::object();
  for (const auto& [name, tensor] : params) {
    shapes[name] = tensor.shape();
    if constexpr (std::is_same_v<T, float>) {
      detail::write_f32_file(dir / (name + ".f32"), tensor.data(),
                             static_cast<std::size_t>(tensor.numel()));
    } else {
      Tensor<float> f = tensor.template cast<float>();
      detail::write_f32_file(dir / (name + ".f32"), f.data(),
                             static_cast<std::size_t>(f.numel()));
    }
  }
  nlohmann::json j = {
      {"version", meta.version},
      {"kind", meta.kind},
      {"resolution", meta.resolution},
      {"num_style_layers", meta.num_style_layers},
      {"style_dim", meta.style_dim},
      {"creation_seed", meta.creation_seed},
      {"layer_shapes", shapes},
  };
  if (!meta.extra.is_null()) j["extra"] = meta.extra;
  std::ofstream out(dir / "metadata.json", std::ios::trunc);
  if (!out) throw PersistenceError("cannot write metadata.json in " + dir.string());
  out << j.dump(2) << "\n";
}

template <typename T>
std::pair<CheckpointMeta, std::map<std::string, Tensor<T>>> load_checkpoint(
    const std::filesystem::path& dir) {
  std::ifstream in(dir / "metadata.json");
  if (!in) throw PersistenceError("missing metadata.json in " + dir.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw PersistenceError("malformed metadata.json in " + dir.string() + ": " + e.what());
  }
  CheckpointMeta meta;
  meta.version = j.value("version", "");
  if (meta.version != kFormatVersion)
    throw PersistenceError("unsupported checkpoint version '" + meta.version + "' in " +
                           dir.string());
  meta.kind = j.value("kind", "");
  meta.resolution = j.value("resolution", 0);
  meta.num_style_layers = j.value("num_style_layers", 0);
  meta.style_dim = j.value("style_dim", 0);
  meta.creation_seed = j.value("creation_seed", std::uint64_t{0});
  if (j.contains("extra")) meta.extra = j["extra"];

  std::map<std::string, Tensor<T>> params;
  for (const auto& [name, shape_json] : j.at("layer_shapes").items()) {
    std::vector<int> shape = shape_json.template get<std::vector<int>>();
    const std::size_t count = static_cast<std::size_t>(Tensor<T>::count(shape));
    std::vector<float> raw = detail::read_f32_file(dir / (name + ".f32"), count);
    Tensor<T> t(shape);
    for (std::size_t i = 0; i < count; ++i) t[static_cast<long>(i)] = static_cast<T>(raw[i]);
    params.emplace(name, std::move(t));
  }
  return {meta, std::move(params)};
}

}  // namespace styleshift
