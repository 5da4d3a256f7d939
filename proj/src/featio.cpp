#include "archrefine/featio.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "archrefine/error.hpp"
#include "archrefine/netir.hpp"
#include "archrefine/text.hpp"
#include "bytes.hpp"

namespace archrefine {

using detail::ByteReader;
using detail::ByteWriter;
using detail::check_version;
using detail::element_count;
using detail::kVersion;
using detail::slurp;
using detail::spit;

Tensor decode_tensor(std::span<const std::uint8_t> bytes) {
  constexpr std::string_view what = "tensor file";
  ByteReader r(bytes, what);
  r.expect_magic("ATNS");
  check_version(r.u16("version"), what);
  auto rank = r.u16("rank");
  if (rank != 2 && rank != 4) {
    throw FormatError("tensor file: rank must be 2 or 4, got " + std::to_string(rank));
  }
  Tensor t;
  for (std::uint16_t i = 0; i < rank; ++i) t.dims.push_back(r.u32("dims"));
  auto count = element_count(t.dims, what);
  if (r.remaining() / 4 < count) {
    throw FormatError("tensor file: truncated payload, expected " + std::to_string(count) +
                      " values but only " + std::to_string(r.remaining() / 4) + " present");
  }
  t.values.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    float v = r.f32("payload");
    if (!std::isfinite(v)) {
      throw FormatError("tensor file: non-finite value at flat index " + std::to_string(i));
    }
    t.values.push_back(v);
  }
  r.expect_end();
  return t;
}

std::vector<std::uint8_t> encode_tensor(const Tensor& t) {
  if (t.rank() != 2 && t.rank() != 4) throw FormatError("tensor rank must be 2 or 4");
  if (element_count(t.dims, "tensor") != t.values.size()) {
    throw FormatError("tensor dims do not match value count");
  }
  ByteWriter w;
  w.magic("ATNS");
  w.u16(kVersion);
  w.u16(std::uint16_t(t.rank()));
  for (auto d : t.dims) w.u32(d);
  for (auto v : t.values) w.f32(v);
  return w.take();
}

Tensor read_tensor_file(const std::filesystem::path& path) {
  try {
    return decode_tensor(slurp(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void write_tensor_file(const std::filesystem::path& path, const Tensor& t) {
  spit(path, encode_tensor(t));
}

std::vector<std::uint32_t> decode_labels(std::span<const std::uint8_t> bytes) {
  constexpr std::string_view what = "labels file";
  ByteReader r(bytes, what);
  r.expect_magic("ATLB");
  check_version(r.u16("version"), what);
  auto n = r.u32("count");
  if (r.remaining() / 4 < n) throw FormatError("labels file: truncated payload");
  std::vector<std::uint32_t> labels(n);
  for (auto& l : labels) l = r.u32("payload");
  r.expect_end();
  return labels;
}

std::vector<std::uint8_t> encode_labels(std::span<const std::uint32_t> labels) {
  ByteWriter w;
  w.magic("ATLB");
  w.u16(kVersion);
  w.u32(std::uint32_t(labels.size()));
  for (auto l : labels) w.u32(l);
  return w.take();
}

std::vector<std::uint32_t> read_labels_file(const std::filesystem::path& path) {
  try {
    return decode_labels(slurp(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void write_labels_file(const std::filesystem::path& path, std::span<const std::uint32_t> labels) {
  spit(path, encode_labels(labels));
}

Matrix spatial_average_pool(const Tensor& t) {
  if (t.rank() != 4) throw ValidationError("spatial pooling needs a rank-4 tensor");
  const std::size_t n = t.dims[0], c = t.dims[1], h = t.dims[2], w = t.dims[3];
  if (h == 0 || w == 0) throw ValidationError("spatial pooling needs H, W >= 1");
  if (t.values.size() != n * c * h * w) throw ValidationError("tensor dims do not match values");
  const std::size_t plane = h * w;
  Matrix out(n, c);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const float* p = t.values.data() + (i * c + ch) * plane;
      double sum = 0.0;
      for (std::size_t k = 0; k < plane; ++k) sum += p[k];
      out(i, ch) = sum / double(plane);
    }
  }
  return out;
}

Matrix pooled_features(const Tensor& t) {
  if (t.rank() == 4) return spatial_average_pool(t);
  if (t.rank() != 2) throw ValidationError("activation tensors must have rank 2 or 4");
  Matrix out(t.dims[0], t.dims[1]);
  for (std::size_t i = 0; i < out.rows(); ++i) {
    for (std::size_t c = 0; c < out.cols(); ++c) out(i, c) = t.values[i * out.cols() + c];
  }
  return out;
}

ClassMeans class_means(const ActivationSet& a) {
  if (a.labels.size() != a.features.rows()) {
    throw ValidationError("layer '" + a.layer_name + "': " + std::to_string(a.labels.size()) +
                          " labels for " + std::to_string(a.features.rows()) + " images");
  }
  const std::size_t m = a.num_classes, h = a.features.cols();
  Matrix sums(m, h);
  std::vector<std::size_t> counts(m, 0);
  for (std::size_t i = 0; i < a.labels.size(); ++i) {
    auto label = a.labels[i];
    if (label >= m) {
      throw ValidationError("layer '" + a.layer_name + "': label " + std::to_string(label) +
                            " at image " + std::to_string(i) + " is not below " +
                            std::to_string(m) + " classes");
    }
    ++counts[label];
    auto src = a.features.row(i);
    auto dst = sums.row(label);
    for (std::size_t c = 0; c < h; ++c) dst[c] += src[c];
  }
  for (std::size_t k = 0; k < m; ++k) {
    if (counts[k] == 0) {
      throw ValidationError("layer '" + a.layer_name + "': class " + std::to_string(k) +
                            " has no images");
    }
    for (auto& v : sums.row(k)) v /= double(counts[k]);
  }
  return {a.layer_name, std::move(sums)};
}

Manifest parse_manifest(std::string_view source, const std::filesystem::path& base_dir) {
  Manifest m;
  bool have_labels = false;
  std::set<std::string> names;
  std::size_t line_no = 0;
  auto resolve = [&](std::string_view p) {
    std::filesystem::path path{std::string(p)};
    return path.is_absolute() ? path : base_dir / path;
  };
  for (auto raw : text::split(source, '\n')) {
    ++line_no;
    auto line = text::trim(raw);
    if (line.empty() || line.front() == '#') continue;
    auto tokens = text::split_ws(line);
    if (tokens[0] == "layer") {
      if (tokens.size() != 3) throw ParseError(line_no, "expected 'layer <name> <tensor-path>'");
      std::string name(tokens[1]);
      if (!names.insert(name).second) {
        throw ParseError(line_no, "layer '" + name + "' listed twice");
      }
      m.layers.push_back({name, resolve(tokens[2])});
    } else if (tokens[0] == "labels") {
      if (tokens.size() != 2) throw ParseError(line_no, "expected 'labels <path>'");
      if (have_labels) throw ParseError(line_no, "more than one labels line");
      m.labels_path = resolve(tokens[1]);
      have_labels = true;
    } else {
      throw ParseError(line_no, "unknown directive '" + std::string(tokens[0]) + "'");
    }
  }
  if (!have_labels) throw ValidationError("manifest has no labels line");
  return m;
}

Manifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open manifest '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_manifest(ss.str(), path.parent_path());
}

std::vector<ActivationSet> load_activations(const Manifest& manifest) {
  if (manifest.layers.empty()) throw ValidationError("manifest lists no layers");
  auto labels = read_labels_file(manifest.labels_path);
  std::uint32_t num_classes = 0;
  for (auto l : labels) num_classes = std::max(num_classes, l + 1);

  std::vector<ActivationSet> sets;
  for (const auto& entry : manifest.layers) {
    auto features = pooled_features(read_tensor_file(entry.tensor_path));
    if (features.rows() != labels.size()) {
      throw ValidationError("layer '" + entry.layer_name + "': tensor has N=" +
                            std::to_string(features.rows()) + " but labels file has N=" +
                            std::to_string(labels.size()));
    }
    sets.push_back({entry.layer_name, std::move(features), labels, num_classes});
  }
  return sets;
}

void cross_validate(const std::vector<ActivationSet>& sets, const NetworkIR& ir) {
  for (const auto& s : sets) {
    const auto* block = ir.find(s.layer_name);
    if (!block) {
      throw ValidationError("manifest layer '" + s.layer_name + "' is not a block of the IR");
    }
    if (s.features.cols() != block->out_channels) {
      throw ValidationError("layer '" + s.layer_name + "': feature width " +
                            std::to_string(s.features.cols()) + " differs from out_channels " +
                            std::to_string(block->out_channels));
    }
  }
}

}  // namespace archrefine
