#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "archrefine/matrix.hpp"

namespace archrefine {

class NetworkIR;

/// Rank-2 (N x C) or rank-4 (N x C x H x W) float32 tensor, row-major.
struct Tensor {
  std::vector<std::uint32_t> dims;
  std::vector<float> values;

  std::size_t rank() const noexcept { return dims.size(); }
  bool operator==(const Tensor&) const = default;
};

// ATNS: "ATNS", u16 version=1, u16 rank in {2,4}, rank x u32 dims,
// then prod(dims) float32. Little-endian throughout.
Tensor decode_tensor(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_tensor(const Tensor& t);
Tensor read_tensor_file(const std::filesystem::path& path);
void write_tensor_file(const std::filesystem::path& path, const Tensor& t);

// ATLB: "ATLB", u16 version=1, u32 N, then N x u32 class indices.
std::vector<std::uint32_t> decode_labels(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_labels(std::span<const std::uint32_t> labels);
std::vector<std::uint32_t> read_labels_file(const std::filesystem::path& path);
void write_labels_file(const std::filesystem::path& path, std::span<const std::uint32_t> labels);

/// Mean over H x W of each (n, c) plane, accumulated in double.
Matrix spatial_average_pool(const Tensor& t);

/// Rank-2 tensors are widened to double; rank-4 tensors are pooled.
Matrix pooled_features(const Tensor& t);

struct ActivationSet {
  std::string layer_name;
  Matrix features;  // N x h, one pooled feature vector per image
  std::vector<std::uint32_t> labels;
  std::uint32_t num_classes = 0;
};

struct ClassMeans {
  std::string layer_name;
  Matrix means;  // M x h, row m is the mean feature vector of class m
};

/// Throws ValidationError when a class has no images or a label is >= M.
ClassMeans class_means(const ActivationSet& a);

struct ManifestEntry {
  std::string layer_name;
  std::filesystem::path tensor_path;
};

struct Manifest {
  std::vector<ManifestEntry> layers;
  std::filesystem::path labels_path;
};

/// Lines `layer <name> <path>` and exactly one `labels <path>`; `#` comments.
/// Relative paths resolve against `base_dir`.
Manifest parse_manifest(std::string_view source, const std::filesystem::path& base_dir);
Manifest load_manifest(const std::filesystem::path& path);

/// Reads every listed dump; an empty layer list is an error. All layers must share N with the labels file.
/// M is one more than the largest label.
std::vector<ActivationSet> load_activations(const Manifest& manifest);

/// Every layer must name a block of `ir`, with feature width equal to the
/// block's out_channels.
void cross_validate(const std::vector<ActivationSet>& sets, const NetworkIR& ir);

}  // namespace archrefine
