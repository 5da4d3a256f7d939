#pragma once

#include <cstdint>
#include <map>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "archrefine/featio.hpp"
#include "archrefine/matrix.hpp"

namespace archrefine {

class NetworkIR;

struct CorrelationOptions {
  /// Turn zero-variance class means into an error instead of a warning.
  bool strict_degenerate = false;
};

struct LayerCorrelation {
  std::string layer_name;
  Matrix matrix;  // M x M
  std::vector<std::uint32_t> degenerate_classes;
};

/// Pearson correlation between every ordered pair of class-mean rows, taken
/// across the h feature dimensions. The result is exactly symmetric with a
/// unit diagonal. A class whose mean vector is constant is flagged degenerate
/// and its off-diagonal entries are 0. Requires h >= 2.
LayerCorrelation correlation_matrix(const ClassMeans& means,
                                    const CorrelationOptions& options = {},
                                    std::vector<std::string>* warnings = nullptr);

struct CorrelationStack {
  std::vector<LayerCorrelation> per_layer;
  std::uint32_t num_classes = 0;
};

/// One matrix per input, in the given order. All inputs must share M.
CorrelationStack correlation_stack(std::span<const ClassMeans> layers,
                                   const CorrelationOptions& options = {},
                                   std::vector<std::string>* warnings = nullptr);

enum class PairMode {
  ordered,    // all M*M ordered pairs including the diagonal
  unordered,  // the M(M-1)/2 pairs i < j
};

struct SeparationTally {
  std::string layer_name;
  std::uint64_t n_plus = 0;   // correlation fell: separation improved
  std::uint64_t n_minus = 0;  // correlation rose: separation deteriorated
  std::uint64_t n_ties = 0;
  std::uint64_t n_total = 0;

  bool operator==(const SeparationTally&) const = default;
};

inline constexpr double kDefaultTieTolerance = 1e-6;

/// A pair counts toward n_plus when cur < prev - tie_tol, toward n_minus
/// when cur > prev + tie_tol, and is a tie otherwise.
SeparationTally separation_tally(const Matrix& prev, const Matrix& cur,
                                 double tie_tol = kDefaultTieTolerance,
                                 PairMode mode = PairMode::ordered);

/// Concatenates the feature dimensions of several class-mean tables, class
/// by class. Used for the input of a block with more than one producer.
ClassMeans concat_means(std::span<const ClassMeans* const> parts, std::string name);

struct AnalysisOptions {
  double tie_tol = kDefaultTieTolerance;
  PairMode pair_mode = PairMode::ordered;
  CorrelationOptions correlation;
};

struct NetworkAnalysis {
  /// Blocks with class means, in analysis order (stage, then block order).
  CorrelationStack stack;
  /// One tally per block that has a predecessor and whose own means and all
  /// predecessor means are available. The previous-layer matrix of a block
  /// with several producers is the correlation of their concatenated means.
  std::map<std::string, SeparationTally> tallies;
  std::vector<std::string> warnings;
};

NetworkAnalysis analyze_network(const NetworkIR& ir, std::span<const ClassMeans> means,
                                const AnalysisOptions& options = {});

void write_correlation_csv(std::ostream& out, const Matrix& c);

/// Binary PGM (P5), 8-bit, correlation -1 maps to 0 and +1 to 255.
void write_correlation_pgm(std::ostream& out, const Matrix& c);

}  // namespace archrefine
