#pragma once

// Batched OpenMP forward/backward for FCEM.
//
// A frame's input is x_t = [V[a] ; V[b] ; V[c]] + PE[t], so its projection
// through the stacked query|key|value weights splits into three vocabulary
// row projections plus one positional row projection. Those tables are built
// once per parameter set, which removes the T x d x 3Hd' matmul from every
// sample. On the way back, weight gradients fold the same way: per-sample
// work only scatters d(qkv)_t into per-vocabulary-row and per-position
// accumulators, and the d x 3Hd' products happen once per batch.
//
// Work is split into fixed chunks of samples that are reduced in chunk
// order, so results are bit-identical for any thread count. The per-sample
// reference in fcem.hpp is the oracle these kernels are tested against.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "stegattn/fcem.hpp"
#include "stegattn/qis.hpp"
#include "stegattn/tensor.hpp"

namespace stegattn::kernels {

enum class Exec { Serial, Parallel };

inline constexpr std::size_t kChunkSize = 16;

class ProjectionTables {
public:
    ProjectionTables(const ModelParams& params, const ModelConfig& config);

    /// Width of one projected row: 3 * heads * head_dim.
    std::size_t width() const { return stacked_.cols; }
    std::span<const double> token(std::size_t vocab_row) const { return token_.row(vocab_row); }
    std::span<const double> position(std::size_t t) const { return position_.row(t); }
    /// Query|key|value weights side by side, frame_dim x width.
    const Matrix& stacked() const { return stacked_; }
    const Matrix& encoding() const { return encoding_; }

private:
    Matrix stacked_;
    Matrix encoding_;
    Matrix token_;
    Matrix position_;
};

/// Per-thread scratch for one sample. Projections are stored head-major,
/// [query|key|value][head][frame][j], so each head's T x d' block is
/// contiguous. T x T matrices have rows padded to `stride` with zeros.
struct Workspace {
    explicit Workspace(const ModelConfig& config);

    std::size_t stride = 0;
    std::vector<double> qkv;
    std::vector<double> d_qkv;
    std::vector<double> weights;  // heads x T x stride
    std::vector<std::uint8_t> clamped;
    std::vector<double> features;  // T x (heads * head_dim), frame-major
    std::vector<double> d_features;
    std::vector<double> d_weights;   // T x stride, one head at a time
    std::vector<double> transposed;  // head_dim x stride
};

/// Pre-sigmoid logit of one sample in inference mode.
double infer_logit(const QisSample& sample, const ModelParams& params, const ModelConfig& config,
                   const ProjectionTables& tables, Workspace& ws);

std::vector<double> predict_batch(std::span<const QisSample* const> samples, const ModelParams& params,
                                  const ModelConfig& config, Exec exec = Exec::Parallel);
std::vector<double> predict_batch(std::span<const QisSample> samples, const ModelParams& params,
                                  const ModelConfig& config, Exec exec = Exec::Parallel);

struct LabeledRef {
    const QisSample* sample = nullptr;
    Label label = Label::Cover;
};

struct BatchGradients {
    Gradients grads;  // mean over the batch
    double loss_sum = 0.0;
    std::size_t count = 0;
};

/// Dropout mask of the sample at batch position i is drawn from
/// Rng(derive_seed(dropout_seed, {i})), identically in both paths.
BatchGradients batch_gradients(std::span<const LabeledRef> batch, const ModelParams& params,
                               const ModelConfig& config, std::uint64_t dropout_seed, Exec exec = Exec::Parallel);

/// Same quantity through fcem::forward/backward, one sample at a time.
BatchGradients batch_gradients_reference(std::span<const LabeledRef> batch, const ModelParams& params,
                                         const ModelConfig& config, std::uint64_t dropout_seed);

}  // namespace stegattn::kernels
