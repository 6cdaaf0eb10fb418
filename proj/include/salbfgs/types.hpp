#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace salbfgs {

// Error taxonomy. Every throwing operation in the library uses one of these,
// so callers (and the CLI exit-code mapping) can dispatch on type.
struct dimension_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct parse_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct io_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct config_error : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};
struct numeric_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct line_search_error : numeric_error {
  using numeric_error::numeric_error;
};
struct singular_matrix_error : numeric_error {
  using numeric_error::numeric_error;
};
struct sequencing_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct undefined_metric_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

using ParameterVector = std::vector<double>;

// Sparse feature vector. Entries are (index, value) pairs with strictly
// increasing indices and finite nonzero values; parsers and hashers are
// responsible for establishing the invariant.
struct SparseVector {
  std::vector<std::pair<std::uint32_t, double>> entries;

  std::size_t size() const { return entries.size(); }
  bool empty() const { return entries.empty(); }
};

struct Example {
  SparseVector features;
  int label = 0;  // 0 or 1
  double weight = 1.0;
};

// A batch of examples observed at one time index.
struct Batch {
  std::size_t time_index = 0;
  std::vector<Example> examples;

  std::size_t size() const { return examples.size(); }
};

// An ordered sequence of batches with contiguous time indices 0..t_f.
struct Stream {
  std::vector<Batch> batches;

  std::size_t size() const { return batches.size(); }
  bool empty() const { return batches.empty(); }
};

inline void validate_stream(const Stream& stream) {
  for (std::size_t i = 0; i < stream.batches.size(); ++i) {
    if (stream.batches[i].time_index != i)
      throw sequencing_error("batch at position " + std::to_string(i) +
                             " has time index " +
                             std::to_string(stream.batches[i].time_index));
    if (stream.batches[i].examples.empty())
      throw config_error("batch " + std::to_string(i) + " is empty");
  }
}

// Largest feature index present, or -1 for an empty stream.
inline std::int64_t max_feature_index(const Stream& stream) {
  std::int64_t max_index = -1;
  for (const Batch& batch : stream.batches)
    for (const Example& ex : batch.examples)
      for (const auto& [index, value] : ex.features.entries)
        max_index = std::max<std::int64_t>(max_index, index);
  return max_index;
}

// Linear score theta'x. Out-of-range feature indices are an error: model
// dimension is fixed when the model is created, not grown on demand.
inline double predict(const ParameterVector& theta, const SparseVector& x) {
  double z = 0.0;
  for (const auto& [index, value] : x.entries) {
    if (index >= theta.size())
      throw dimension_error("feature index " + std::to_string(index) +
                            " out of range for dimension " +
                            std::to_string(theta.size()));
    z += theta[index] * value;
  }
  return z;
}

}  // namespace salbfgs
