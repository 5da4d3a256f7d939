#include "archrefine/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include "archrefine/error.hpp"
#include "bytes.hpp"
#include "json.hpp"

namespace archrefine {

MultiHot decode_multihot(std::span<const std::uint8_t> bytes) {
  constexpr std::string_view what = "multi-hot file";
  detail::ByteReader r(bytes, what);
  r.expect_magic("ATMH");
  detail::check_version(r.u16("version"), what);
  MultiHot m;
  m.rows = r.u32("N");
  m.cols = r.u32("M");
  std::uint32_t dims[] = {m.rows, m.cols};
  auto count = detail::element_count(dims, what);
  if (r.remaining() < count) throw FormatError("multi-hot file: truncated payload");
  m.values.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    auto v = r.u8("payload");
    if (v > 1) {
      throw FormatError("multi-hot file: entry " + std::to_string(i) + " is " +
                        std::to_string(v) + ", expected 0 or 1");
    }
    m.values[i] = v;
  }
  r.expect_end();
  return m;
}

std::vector<std::uint8_t> encode_multihot(const MultiHot& m) {
  if (std::size_t(m.rows) * m.cols != m.values.size()) {
    throw FormatError("multi-hot shape does not match value count");
  }
  detail::ByteWriter w;
  w.magic("ATMH");
  w.u16(detail::kVersion);
  w.u32(m.rows);
  w.u32(m.cols);
  for (auto v : m.values) {
    if (v > 1) throw FormatError("multi-hot entries must be 0 or 1");
    w.u8(v);
  }
  return w.take();
}

MultiHot read_multihot_file(const std::filesystem::path& path) {
  try {
    return decode_multihot(detail::slurp(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void write_multihot_file(const std::filesystem::path& path, const MultiHot& m) {
  detail::spit(path, encode_multihot(m));
}

PredictionDump load_prediction_dump(const std::filesystem::path& scores,
                                    const std::filesystem::path& truth) {
  auto t = read_tensor_file(scores);
  if (t.rank() != 2) throw ValidationError("prediction scores must be a rank-2 tensor");
  PredictionDump dump{pooled_features(t), read_multihot_file(truth)};
  if (dump.scores.rows() != dump.truth.rows || dump.scores.cols() != dump.truth.cols) {
    throw ValidationError("scores and truth shapes differ");
  }
  return dump;
}

PrecisionResult precision_at_k(const PredictionDump& dump, std::uint32_t k) {
  const std::size_t n = dump.scores.rows(), m = dump.scores.cols();
  if (dump.truth.rows != n || dump.truth.cols != m) {
    throw ValidationError("scores and truth shapes differ");
  }
  if (k == 0 || k > m) {
    throw ValidationError("k must lie in 1.." + std::to_string(m) + ", got " + std::to_string(k));
  }

  PrecisionResult r;
  std::vector<std::uint32_t> order(m);
  for (std::size_t i = 0; i < n; ++i) {
    std::uint32_t positives = 0;
    for (std::size_t c = 0; c < m; ++c) positives += dump.truth.at(i, c);
    if (positives == 0) {
      r.skipped_images.push_back(std::uint32_t(i));
      continue;
    }
    auto row = dump.scores.row(i);
    std::iota(order.begin(), order.end(), 0u);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::uint32_t a, std::uint32_t b) { return row[a] > row[b]; });
    auto take = std::min(positives, k);
    for (std::uint32_t j = 0; j < take; ++j) {
      if (dump.truth.at(i, order[j])) {
        ++r.true_positives;
      } else {
        ++r.false_positives;
      }
    }
  }
  auto predicted = r.true_positives + r.false_positives;
  if (predicted == 0) throw ValidationError("no test image has a positive label");
  r.precision = double(r.true_positives) / double(predicted);
  return r;
}

Matrix uniform_correlation(std::uint32_t m, double rho) {
  Matrix c(m, m, rho);
  for (std::uint32_t i = 0; i < m; ++i) c(i, i) = 1.0;
  return c;
}

namespace {

// Lower-triangular factor with target = L * L^T, tolerating zero pivots
// (rank-deficient but positive semidefinite targets).
Matrix psd_factor(const Matrix& target, const std::string& layer) {
  const std::size_t m = target.rows();
  Matrix l(m, m);
  for (std::size_t j = 0; j < m; ++j) {
    double d = target(j, j);
    for (std::size_t k = 0; k < j; ++k) d -= l(j, k) * l(j, k);
    if (d < -1e-9) {
      throw ValidationError("layer '" + layer + "': target correlation is not positive semidefinite");
    }
    const bool zero_pivot = d <= 1e-12;
    double pivot = zero_pivot ? 0.0 : std::sqrt(d);
    l(j, j) = pivot;
    for (std::size_t i = j + 1; i < m; ++i) {
      double s = target(i, j);
      for (std::size_t k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
      if (zero_pivot) {
        if (std::abs(s) > 1e-8) {
          throw ValidationError("layer '" + layer +
                                "': target correlation is not positive semidefinite");
        }
        l(i, j) = 0.0;
      } else {
        l(i, j) = s / pivot;
      }
    }
  }
  return l;
}

void check_target(const SynthLayer& layer, std::uint32_t m) {
  const auto& c = layer.correlation;
  if (c.rows() != m || c.cols() != m) {
    throw ValidationError("layer '" + layer.name + "': target must be " + std::to_string(m) + "x" +
                          std::to_string(m));
  }
  for (std::uint32_t i = 0; i < m; ++i) {
    if (c(i, i) != 1.0) throw ValidationError("layer '" + layer.name + "': diagonal must be 1");
    for (std::uint32_t j = 0; j < m; ++j) {
      if (!(c(i, j) >= -1.0 && c(i, j) <= 1.0)) {
        throw ValidationError("layer '" + layer.name + "': entries must lie in [-1, 1]");
      }
      if (std::abs(c(i, j) - c(j, i)) > 1e-12) {
        throw ValidationError("layer '" + layer.name + "': target must be symmetric");
      }
    }
  }
  if (layer.channels <= m) {
    throw ValidationError("layer '" + layer.name + "': needs more channels than classes");
  }
}

// `count` orthonormal vectors of length h, each orthogonal to the all-ones
// vector (so every one has zero mean).
std::vector<std::vector<double>> zero_mean_basis(std::size_t count, std::size_t h,
                                                 std::mt19937_64& rng) {
  std::normal_distribution<double> gauss;
  std::vector<std::vector<double>> basis;
  std::vector<double> ones(h, 1.0 / std::sqrt(double(h)));
  while (basis.size() < count) {
    std::vector<double> v(h);
    for (auto& x : v) x = gauss(rng);
    for (int pass = 0; pass < 2; ++pass) {
      auto remove = [&](const std::vector<double>& u) {
        double d = std::inner_product(v.begin(), v.end(), u.begin(), 0.0);
        for (std::size_t i = 0; i < h; ++i) v[i] -= d * u[i];
      };
      remove(ones);
      for (const auto& u : basis) remove(u);
    }
    double norm = std::sqrt(std::inner_product(v.begin(), v.end(), v.begin(), 0.0));
    if (norm < 1e-6) continue;
    for (auto& x : v) x /= norm;
    basis.push_back(std::move(v));
  }
  return basis;
}

}  // namespace

SynthOutput synth_activations(const SynthSpec& spec, std::uint64_t seed) {
  const std::uint32_t m = spec.num_classes;
  if (m == 0) throw ValidationError("synthetic profile needs at least one class");
  if (spec.images_per_class == 0) throw ValidationError("images_per_class must be positive");
  if (!(spec.noise >= 0.0)) throw ValidationError("noise must be non-negative");

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss;
  const std::size_t n = std::size_t(m) * spec.images_per_class;

  SynthOutput out;
  out.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) out.labels[i] = std::uint32_t(i % m);

  for (const auto& layer : spec.layers) {
    check_target(layer, m);
    auto factor = psd_factor(layer.correlation, layer.name);
    const std::size_t h = layer.channels;
    auto basis = zero_mean_basis(m, h, rng);

    Matrix means(m, h, spec.offset);
    for (std::size_t c = 0; c < m; ++c) {
      for (std::size_t k = 0; k <= c; ++k) {
        for (std::size_t d = 0; d < h; ++d) means(c, d) += factor(c, k) * basis[k][d];
      }
    }

    Matrix features(n, h);
    for (std::size_t c = 0; c < m; ++c) {
      // Noise is re-centred per class so each class mean hits its target.
      Matrix noise(spec.images_per_class, h);
      std::vector<double> avg(h, 0.0);
      for (std::size_t j = 0; j < spec.images_per_class; ++j) {
        for (std::size_t d = 0; d < h; ++d) {
          noise(j, d) = spec.noise * gauss(rng);
          avg[d] += noise(j, d);
        }
      }
      for (auto& a : avg) a /= double(spec.images_per_class);
      for (std::size_t j = 0; j < spec.images_per_class; ++j) {
        std::size_t image = j * m + c;
        for (std::size_t d = 0; d < h; ++d) {
          features(image, d) = double(float(means(c, d) + noise(j, d) - avg[d]));
        }
      }
    }
    out.layers.push_back({layer.name, std::move(features), out.labels, m});
  }
  return out;
}

SynthSpec parse_synth_profile(std::string_view source) {
  using nlohmann::json;
  SynthSpec spec;
  try {
    auto doc = json::parse(source);
    spec.num_classes = doc.at("num_classes").get<std::uint32_t>();
    spec.images_per_class = doc.value("images_per_class", spec.images_per_class);
    spec.noise = doc.value("noise", spec.noise);
    spec.offset = doc.value("offset", spec.offset);
    for (const auto& entry : doc.at("layers")) {
      SynthLayer layer;
      layer.name = entry.at("name").get<std::string>();
      layer.channels = entry.at("channels").get<std::uint32_t>();
      if (entry.contains("uniform")) {
        layer.correlation = uniform_correlation(spec.num_classes, entry.at("uniform").get<double>());
      } else {
        auto rows = entry.at("correlation").get<std::vector<std::vector<double>>>();
        layer.correlation = Matrix(rows.size(), rows.empty() ? 0 : rows.front().size());
        for (std::size_t i = 0; i < rows.size(); ++i) {
          if (rows[i].size() != layer.correlation.cols()) {
            throw ValidationError("layer '" + layer.name + "': ragged correlation matrix");
          }
          for (std::size_t j = 0; j < rows[i].size(); ++j) layer.correlation(i, j) = rows[i][j];
        }
      }
      spec.layers.push_back(std::move(layer));
    }
  } catch (const json::exception& e) {
    throw ValidationError(std::string("synthetic profile: ") + e.what());
  }
  return spec;
}

std::filesystem::path write_synth_dumps(const SynthOutput& synth, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream manifest(dir / "manifest.txt", std::ios::trunc);
  if (!manifest) throw Error("cannot write manifest in '" + dir.string() + "'");
  for (const auto& layer : synth.layers) {
    std::string file = layer.layer_name;
    std::replace(file.begin(), file.end(), '/', '_');
    file += ".atns";
    Tensor t;
    t.dims = {std::uint32_t(layer.features.rows()), std::uint32_t(layer.features.cols())};
    t.values.reserve(layer.features.values().size());
    for (double v : layer.features.values()) t.values.push_back(float(v));
    write_tensor_file(dir / file, t);
    manifest << "layer " << layer.layer_name << ' ' << file << '\n';
  }
  write_labels_file(dir / "labels.atlb", synth.labels);
  manifest << "labels labels.atlb\n";
  return dir / "manifest.txt";
}

}  // namespace archrefine
