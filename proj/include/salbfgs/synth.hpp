#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "salbfgs/rng.hpp"
#include "salbfgs/types.hpp"

namespace salbfgs {

struct DriftEvent {
  std::size_t time = 0;      // batch index at which the drift applies
  double magnitude = 0.0;    // fraction of coordinates whose sign flips
};

struct DriftSpec {
  std::size_t dimension = 50;
  std::size_t num_batches = 10;
  std::size_t batch_size = 1000;
  std::size_t sparsity = 10;  // nonzero features per example
  double theta_scale = 1.0;   // scale of the true parameter vector
  std::vector<DriftEvent> drifts;
  std::uint64_t seed = 1;

  void validate() const {
    if (dimension < 1) throw config_error("dimension must be >= 1");
    if (num_batches < 1) throw config_error("num_batches must be >= 1");
    if (batch_size < 1) throw config_error("batch_size must be >= 1");
    if (sparsity < 1 || sparsity > dimension)
      throw config_error("sparsity must be in [1, dimension]");
    if (!(theta_scale >= 0.0) || !std::isfinite(theta_scale))
      throw config_error("theta_scale must be finite and >= 0");
    for (const DriftEvent& d : drifts) {
      if (d.time == 0 || d.time >= num_batches)
        throw config_error("drift time must be in [1, num_batches - 1]");
      if (!(d.magnitude >= 0.0 && d.magnitude <= 1.0))
        throw config_error("drift magnitude must be in [0, 1]");
    }
  }
};

// Logistic stream with abrupt concept drift. A hidden parameter vector is
// drawn once; before emitting batch t every drift event scheduled at t flips
// the sign of a random subset of its coordinates. Labels are Bernoulli with
// probability sigmoid(theta_true' x).
//
// Draw order is fixed (drift draws happen at their scheduled batch, whether
// or not the magnitude is zero), so two specs differing only in magnitudes
// produce identical batches before the first differing drift.
inline Stream generate_drift_stream(const DriftSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);

  ParameterVector theta_true(spec.dimension);
  for (double& v : theta_true) v = spec.theta_scale * rng.normal();

  std::vector<DriftEvent> drifts = spec.drifts;
  std::stable_sort(drifts.begin(), drifts.end(),
                   [](const DriftEvent& a, const DriftEvent& b) {
                     return a.time < b.time;
                   });

  Stream stream;
  stream.batches.reserve(spec.num_batches);
  std::size_t next_drift = 0;
  for (std::size_t t = 0; t < spec.num_batches; ++t) {
    while (next_drift < drifts.size() && drifts[next_drift].time == t) {
      const std::size_t flips = static_cast<std::size_t>(
          std::llround(drifts[next_drift].magnitude *
                       static_cast<double>(spec.dimension)));
      for (std::size_t i :
           sample_without_replacement(spec.dimension, flips, rng))
        theta_true[i] = -theta_true[i];
      ++next_drift;
    }

    Batch batch;
    batch.time_index = t;
    batch.examples.reserve(spec.batch_size);
    for (std::size_t n = 0; n < spec.batch_size; ++n) {
      std::vector<std::size_t> indices =
          sample_without_replacement(spec.dimension, spec.sparsity, rng);
      std::sort(indices.begin(), indices.end());
      Example ex;
      double z = 0.0;
      for (std::size_t i : indices) {
        double value = rng.normal();
        if (value == 0.0) value = 1.0;
        ex.features.entries.emplace_back(static_cast<std::uint32_t>(i), value);
        z += theta_true[i] * value;
      }
      const double p = 1.0 / (1.0 + std::exp(-z));
      ex.label = rng.uniform01() < p ? 1 : 0;
      batch.examples.push_back(std::move(ex));
    }
    stream.batches.push_back(std::move(batch));
  }
  return stream;
}

}  // namespace salbfgs
