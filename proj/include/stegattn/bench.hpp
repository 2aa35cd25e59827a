#pragma once

// Single-threaded inference latency measurement.

#include <cstddef>
#include <iosfwd>
#include <span>
#include <vector>

#include "stegattn/fcem.hpp"
#include "stegattn/qis.hpp"

namespace stegattn {

enum class BenchPath {
    /// fcem::forward in infer mode, one sample at a time.
    Reference,
    /// kernels::infer_logit on prebuilt projection tables.
    Tabled,
};

struct BenchConfig {
    std::size_t repetitions = 1000;
    std::size_t warmup = 100;
    BenchPath path = BenchPath::Reference;
};

struct LatencyStats {
    std::size_t frames = 0;
    std::size_t count = 0;
    double mean_us = 0.0;
    double p50_us = 0.0;
    double p99_us = 0.0;
    /// kernels::predict_batch over all samples, serial, table build included.
    double batch_us = 0.0;
    std::vector<double> timings_us;
};

/// Times repetitions single-sample predictions, cycling through samples,
/// after warmup untimed ones. Runs with one OpenMP thread and restores the
/// previous thread count afterwards.
LatencyStats bench_inference(const ModelParams& params, const ModelConfig& config, std::span<const QisSample> samples,
                             const BenchConfig& bench = {});

/// Nearest-rank quantile of unsorted values, q in [0,1].
double quantile(std::vector<double> values, double q);

/// T,mean_us,p50_us,p99_us,batch_us.
void write_latency_csv(std::span<const LatencyStats> stats, std::ostream& out);

}  // namespace stegattn
