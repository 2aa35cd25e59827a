#include "stegattn/bench.hpp"

#include <omp.h>

#include <algorithm>
#include <chrono>
#include <functional>
#include <cmath>
#include <numeric>
#include <ostream>

#include "stegattn/errors.hpp"
#include "stegattn/kernels.hpp"
#include "text_io.hpp"

namespace stegattn {

namespace {

using Clock = std::chrono::steady_clock;

class SingleThread {
public:
    SingleThread() : previous_(omp_get_max_threads()) { omp_set_num_threads(1); }
    ~SingleThread() { omp_set_num_threads(previous_); }
    SingleThread(const SingleThread&) = delete;
    SingleThread& operator=(const SingleThread&) = delete;

private:
    int previous_;
};

// Keeps the optimizer from discarding the timed work.
volatile double g_sink;

}  // namespace

double quantile(std::vector<double> values, double q) {
    if (values.empty()) return 0.0;
    std::sort(values.begin(), values.end());
    const auto rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(values.size())));
    return values[std::clamp<std::size_t>(rank, 1, values.size()) - 1];
}

LatencyStats bench_inference(const ModelParams& params, const ModelConfig& config, std::span<const QisSample> samples,
                             const BenchConfig& bench) {
    if (samples.empty()) throw Error("benchmark needs at least one sample");
    if (bench.repetitions == 0) throw Error("benchmark needs at least one repetition");
    const SingleThread guard;

    std::function<double(const QisSample&)> predict;
    const kernels::ProjectionTables tables(params, config);
    kernels::Workspace ws(config);
    if (bench.path == BenchPath::Reference) {
        predict = [&](const QisSample& s) { return forward(s, params, config, Mode::Infer).first; };
    } else {
        predict = [&](const QisSample& s) { return sigmoid(kernels::infer_logit(s, params, config, tables, ws)); };
    }

    for (std::size_t i = 0; i < bench.warmup; ++i) g_sink = predict(samples[i % samples.size()]);

    LatencyStats stats;
    stats.frames = config.window_frames;
    stats.timings_us.reserve(bench.repetitions);
    for (std::size_t i = 0; i < bench.repetitions; ++i) {
        const auto& s = samples[i % samples.size()];
        const auto t0 = Clock::now();
        g_sink = predict(s);
        const auto t1 = Clock::now();
        stats.timings_us.push_back(std::chrono::duration<double, std::micro>(t1 - t0).count());
    }
    stats.count = stats.timings_us.size();
    stats.mean_us = std::accumulate(stats.timings_us.begin(), stats.timings_us.end(), 0.0) /
                    static_cast<double>(stats.count);
    stats.p50_us = quantile(stats.timings_us, 0.50);
    stats.p99_us = quantile(stats.timings_us, 0.99);

    const auto t0 = Clock::now();
    const auto batch = kernels::predict_batch(samples, params, config, kernels::Exec::Serial);
    const auto t1 = Clock::now();
    g_sink = batch.back();
    stats.batch_us = std::chrono::duration<double, std::micro>(t1 - t0).count() / static_cast<double>(samples.size());
    return stats;
}

void write_latency_csv(std::span<const LatencyStats> stats, std::ostream& out) {
    out << "T,mean_us,p50_us,p99_us,batch_us\n";
    for (const auto& s : stats) {
        out << s.frames << ',' << detail::format_double(s.mean_us) << ',' << detail::format_double(s.p50_us) << ','
            << detail::format_double(s.p99_us) << ',' << detail::format_double(s.batch_us) << '\n';
    }
}

}  // namespace stegattn
