#include "archrefine/sepstats.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>

#include "archrefine/error.hpp"
#include "archrefine/netir.hpp"
#include "archrefine/text.hpp"

namespace archrefine {

namespace {

// Centered copy of each row plus its Euclidean norm; norm 0 marks a
// zero-variance row.
struct CenteredRows {
  Matrix centered;
  std::vector<double> norms;
};

CenteredRows center_rows(const Matrix& g) {
  CenteredRows out{Matrix(g.rows(), g.cols()), std::vector<double>(g.rows(), 0.0)};
  const double h = double(g.cols());
  for (std::size_t m = 0; m < g.rows(); ++m) {
    auto row = g.row(m);
    double mean = 0.0, scale = 0.0;
    for (double v : row) {
      mean += v;
      scale = std::max(scale, std::abs(v));
    }
    mean /= h;
    double ss = 0.0;
    auto dst = out.centered.row(m);
    for (std::size_t c = 0; c < row.size(); ++c) {
      dst[c] = row[c] - mean;
      ss += dst[c] * dst[c];
    }
    double norm = std::sqrt(ss);
    // Rounding in the mean leaves residue of order eps * scale on a
    // constant row.
    if (scale == 0.0 || norm <= 1e-12 * scale * std::sqrt(h)) norm = 0.0;
    out.norms[m] = norm;
  }
  return out;
}

}  // namespace

LayerCorrelation correlation_matrix(const ClassMeans& means, const CorrelationOptions& options,
                                    std::vector<std::string>* warnings) {
  const auto& g = means.means;
  if (g.cols() < 2) {
    throw ValidationError("layer '" + means.layer_name +
                          "': Pearson correlation needs at least 2 feature dimensions");
  }
  const std::size_t m = g.rows();
  auto [centered, norms] = center_rows(g);

  LayerCorrelation out{means.layer_name, Matrix(m, m), {}};
  for (std::size_t i = 0; i < m; ++i) {
    if (norms[i] == 0.0) {
      if (options.strict_degenerate) {
        throw ValidationError("layer '" + means.layer_name + "': class " + std::to_string(i) +
                              " has a constant mean feature vector");
      }
      out.degenerate_classes.push_back(std::uint32_t(i));
      if (warnings) {
        warnings->push_back("layer '" + means.layer_name + "': class " + std::to_string(i) +
                            " has a constant mean feature vector; its correlations are set to 0");
      }
    }
  }

  for (std::size_t i = 0; i < m; ++i) {
    out.matrix(i, i) = 1.0;
    for (std::size_t j = i + 1; j < m; ++j) {
      double r = 0.0;
      if (norms[i] != 0.0 && norms[j] != 0.0) {
        auto a = centered.row(i);
        auto b = centered.row(j);
        double dot = 0.0;
        for (std::size_t c = 0; c < a.size(); ++c) dot += a[c] * b[c];
        r = std::clamp(dot / (norms[i] * norms[j]), -1.0, 1.0);
      }
      out.matrix(i, j) = r;
      out.matrix(j, i) = r;
    }
  }
  return out;
}

CorrelationStack correlation_stack(std::span<const ClassMeans> layers,
                                   const CorrelationOptions& options,
                                   std::vector<std::string>* warnings) {
  CorrelationStack stack;
  if (layers.empty()) return stack;
  stack.num_classes = std::uint32_t(layers.front().means.rows());
  for (const auto& layer : layers) {
    if (layer.means.rows() != stack.num_classes) {
      throw ValidationError("layer '" + layer.layer_name + "' has " +
                            std::to_string(layer.means.rows()) + " classes, expected " +
                            std::to_string(stack.num_classes));
    }
    stack.per_layer.push_back(correlation_matrix(layer, options, warnings));
  }
  return stack;
}

SeparationTally separation_tally(const Matrix& prev, const Matrix& cur, double tie_tol,
                                 PairMode mode) {
  if (prev.rows() != prev.cols() || cur.rows() != cur.cols() || prev.rows() != cur.rows()) {
    throw ValidationError("separation tally needs two square matrices of equal size");
  }
  const std::size_t m = cur.rows();
  SeparationTally t;
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = mode == PairMode::ordered ? 0 : i + 1; j < m; ++j) {
      ++t.n_total;
      if (cur(i, j) < prev(i, j) - tie_tol) {
        ++t.n_plus;
      } else if (cur(i, j) > prev(i, j) + tie_tol) {
        ++t.n_minus;
      } else {
        ++t.n_ties;
      }
    }
  }
  return t;
}

ClassMeans concat_means(std::span<const ClassMeans* const> parts, std::string name) {
  if (parts.empty()) throw ValidationError("concat_means needs at least one input");
  const std::size_t m = parts.front()->means.rows();
  std::size_t width = 0;
  for (const auto* p : parts) {
    if (p->means.rows() != m) {
      throw ValidationError("cannot concatenate class means with different class counts");
    }
    width += p->means.cols();
  }
  ClassMeans out{std::move(name), Matrix(m, width)};
  for (std::size_t k = 0; k < m; ++k) {
    auto dst = out.means.row(k);
    std::size_t offset = 0;
    for (const auto* p : parts) {
      auto src = p->means.row(k);
      std::copy(src.begin(), src.end(), dst.begin() + std::ptrdiff_t(offset));
      offset += src.size();
    }
  }
  return out;
}

NetworkAnalysis analyze_network(const NetworkIR& ir, std::span<const ClassMeans> means,
                                const AnalysisOptions& options) {
  std::unordered_map<std::string, const ClassMeans*> by_name;
  for (const auto& m : means) {
    ir.block(m.layer_name);
    if (!by_name.emplace(m.layer_name, &m).second) {
      throw ValidationError("class means for '" + m.layer_name + "' given twice");
    }
  }

  NetworkAnalysis out;
  std::vector<ClassMeans> ordered;
  for (const auto& stage : analysis_sequence(ir)) {
    for (const auto& name : stage.blocks) {
      if (auto it = by_name.find(name); it != by_name.end()) ordered.push_back(*it->second);
    }
  }
  out.stack = correlation_stack(ordered, options.correlation, &out.warnings);

  std::unordered_map<std::string, const Matrix*> corr;
  for (const auto& layer : out.stack.per_layer) corr.emplace(layer.layer_name, &layer.matrix);

  for (const auto& block : ir.blocks()) {
    if (block.prev.empty()) continue;
    auto self = corr.find(block.name);
    bool complete = self != corr.end();
    std::vector<const ClassMeans*> inputs;
    for (const auto& p : block.prev) {
      auto it = by_name.find(p);
      if (it == by_name.end()) {
        complete = false;
        break;
      }
      inputs.push_back(it->second);
    }
    if (!complete) {
      if (!block.excluded) {
        out.warnings.push_back("block '" + block.name +
                               "': no tally, activations for it or a predecessor are missing");
      }
      continue;
    }

    SeparationTally tally;
    if (inputs.size() == 1) {
      tally = separation_tally(*corr.at(block.prev.front()), *self->second, options.tie_tol,
                               options.pair_mode);
    } else {
      auto joined = concat_means(inputs, block.name + "<-input");
      auto prev = correlation_matrix(joined, options.correlation, &out.warnings);
      tally = separation_tally(prev.matrix, *self->second, options.tie_tol, options.pair_mode);
    }
    tally.layer_name = block.name;
    out.tallies.emplace(block.name, tally);
  }
  return out;
}

void write_correlation_csv(std::ostream& out, const Matrix& c) {
  for (std::size_t i = 0; i < c.rows(); ++i) {
    for (std::size_t j = 0; j < c.cols(); ++j) {
      if (j) out << ',';
      out << text::format_real(c(i, j));
    }
    out << '\n';
  }
}

void write_correlation_pgm(std::ostream& out, const Matrix& c) {
  out << "P5\n" << c.cols() << ' ' << c.rows() << "\n255\n";
  for (double v : c.values()) {
    double level = std::round((std::clamp(v, -1.0, 1.0) + 1.0) * 127.5);
    out.put(static_cast<char>(static_cast<unsigned char>(level)));
  }
}

}  // namespace archrefine
