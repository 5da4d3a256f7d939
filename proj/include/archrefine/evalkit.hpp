#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "archrefine/featio.hpp"
#include "archrefine/matrix.hpp"

namespace archrefine {

/// Binary ground truth: N x M entries in {0, 1}, row-major.
struct MultiHot {
  std::uint32_t rows = 0;
  std::uint32_t cols = 0;
  std::vector<std::uint8_t> values;

  std::uint8_t at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
  bool operator==(const MultiHot&) const = default;
};

// ATMH: "ATMH", u16 version=1, u32 N, u32 M, then N*M bytes in {0,1}.
MultiHot decode_multihot(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_multihot(const MultiHot& m);
MultiHot read_multihot_file(const std::filesystem::path& path);
void write_multihot_file(const std::filesystem::path& path, const MultiHot& m);

struct PredictionDump {
  Matrix scores;  // N x M
  MultiHot truth;
};

/// Loads an ATNS rank-2 score tensor and an ATMH truth file of equal shape.
PredictionDump load_prediction_dump(const std::filesystem::path& scores,
                                    const std::filesystem::path& truth);

struct PrecisionResult {
  double precision = 0.0;
  std::uint64_t true_positives = 0;
  std::uint64_t false_positives = 0;
  std::vector<std::uint32_t> skipped_images;  // no positive labels
};

/// For every image with p > 0 positive labels, the top min(p, k) classes by
/// score (ties broken by lower class index) are predictions. Returns
/// TP / (TP + FP) accumulated over the whole set.
PrecisionResult precision_at_k(const PredictionDump& dump, std::uint32_t k);

/// Target correlation structure for one synthetic layer.
struct SynthLayer {
  std::string name;
  std::uint32_t channels = 0;
  Matrix correlation;  // M x M target between class means
};

struct SynthSpec {
  std::uint32_t num_classes = 0;
  std::uint32_t images_per_class = 4;
  double noise = 0.1;     // per-image deviation around the class mean
  double offset = 1.0;    // added to every feature so dumps look post-ReLU
  std::vector<SynthLayer> layers;
};

struct SynthOutput {
  std::vector<ActivationSet> layers;
  std::vector<std::uint32_t> labels;
};

/// Matrix with unit diagonal and `rho` everywhere else.
Matrix uniform_correlation(std::uint32_t m, double rho);

/// Generates pooled activations whose class means have exactly the target
/// Pearson correlations (up to float32 storage). Targets must be symmetric,
/// unit-diagonal, within [-1, 1] and positive semidefinite, and each layer
/// needs channels > M. Same spec and seed give bit-identical output.
SynthOutput synth_activations(const SynthSpec& spec, std::uint64_t seed);

/// JSON profile: {"num_classes", "images_per_class", "noise", "offset",
/// "layers": [{"name", "channels", "correlation": [[...]] | "uniform": rho}]}.
SynthSpec parse_synth_profile(std::string_view json);

/// Writes `<layer>.atns` per layer, `labels.atlb` and `manifest.txt` into
/// `dir`, returning the manifest path.
std::filesystem::path write_synth_dumps(const SynthOutput& synth, const std::filesystem::path& dir);

}  // namespace archrefine
