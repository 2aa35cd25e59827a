#pragma once

// Fast Correlation Extraction Model: codeword embedding lookup, sinusoidal
// positional encoding, one multi-head self-attention layer and a sigmoid
// output over the flattened frame features, with exact hand-derived
// gradients.
//
// Everything in this header is the straightforward per-sample reference
// implementation. kernels.hpp holds the batched OpenMP path that training
// and evaluation use; tests pin the two against each other.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "stegattn/qis.hpp"
#include "stegattn/rng.hpp"
#include "stegattn/tensor.hpp"

namespace stegattn {

struct ModelConfig {
    CodecShape codec;
    std::size_t embedding_size = 100;
    std::size_t heads = 8;
    std::size_t head_dim = 32;
    std::size_t window_frames = 30;
    /// Probability of zeroing a feature during training (inverted dropout).
    double dropout_rate = 0.6;
    /// Divide attention logits by sqrt(head_dim).
    bool scaled_attention = false;
    bool positional_encoding = true;

    void validate() const;

    std::size_t vocab_size() const { return codec.vocab_size(); }
    std::size_t frame_dim() const { return 3 * embedding_size; }
    std::size_t feature_width() const { return heads * head_dim; }
    std::size_t output_length() const { return window_frames * feature_width(); }

    bool operator==(const ModelConfig&) const = default;
};

/// Shared layout of the trainable tensors; ModelParams and Gradients are
/// distinct types over it.
struct ParamTensors {
    Matrix embedding;             // vocab_size x embedding_size
    std::vector<Matrix> query;    // heads x (frame_dim x head_dim)
    std::vector<Matrix> key;      // heads x (frame_dim x head_dim)
    std::vector<Matrix> value;    // heads x (frame_dim x head_dim)
    std::vector<double> output_weight;  // window_frames * heads * head_dim
    double output_bias = 0.0;

    /// Every tensor in declaration order: embedding, then per head
    /// (query, key, value), then output weight, then bias.
    std::vector<std::span<double>> tensors();
    std::vector<std::span<const double>> tensors() const;
    /// Names matching tensors(), e.g. "W_key[1]".
    static std::vector<std::string> tensor_names(std::size_t heads);

    std::size_t scalar_count() const;
    void fill(double v);

    bool operator==(const ParamTensors&) const = default;

protected:
    ParamTensors() = default;
    explicit ParamTensors(const ModelConfig& config);
};

struct ModelParams : ParamTensors {
    ModelParams() = default;
    explicit ModelParams(const ModelConfig& config) : ParamTensors(config) {}
};

struct Gradients : ParamTensors {
    Gradients() = default;
    explicit Gradients(const ModelConfig& config) : ParamTensors(config) {}

    void add(const Gradients& other);
    void scale(double s);
};

/// Glorot-uniform embedding and attention weights; zero output layer so the
/// untrained model predicts 0.5.
ModelParams init_params(const ModelConfig& config, std::uint64_t seed);

/// Number of trainable scalars the configuration instantiates.
std::size_t parameter_count(const ModelConfig& config);

/// Row j: concatenated embedding rows of frame j's three codewords, using
/// per-position offsets into the shared vocabulary.
Matrix embed_lookup(const QisSample& sample, const Matrix& embedding, const CodecShape& codec);

/// PE[t][2i] = sin(t / 10000^(2i/d)), PE[t][2i+1] = cos(t / 10000^(2i/d)).
Matrix positional_encoding(std::size_t frames, std::size_t dim);

struct HeadCache {
    Matrix query;    // T x d'
    Matrix key;      // T x d'
    Matrix value;    // T x d'
    Matrix weights;  // T x T, softmax rows
    Matrix output;   // T x d'
    /// 1 where the logit hit the +-kLogitClamp guard.
    std::vector<std::uint8_t> clamped;
};

inline constexpr double kLogitClamp = 50.0;

/// Number of logits clamped since process start (or the last reset).
std::uint64_t logit_clamp_count();
void reset_logit_clamp_count();

/// Single attention head over all T frames (no masking). Logits are plain
/// inner products unless `scaled`. Throws NonFiniteActivation.
HeadCache attention_head(const Matrix& x, const Matrix& w_query, const Matrix& w_key, const Matrix& w_value,
                         bool scaled);

/// Head outputs concatenated per frame in head order: T x (H * d').
Matrix multi_head(const Matrix& x, const ModelParams& params, const ModelConfig& config);
Matrix concat_heads(std::span<const HeadCache> heads);

/// Logistic output over the flattened features. `dropout_scale` holds the
/// per-feature multiplier (0 or 1/(1-p)); empty disables dropout.
double classify(const Matrix& features, std::span<const double> output_weight, double output_bias,
                std::span<const double> dropout_scale = {});

double sigmoid(double z);

enum class Mode { Train, Infer };

/// Inverted-dropout multipliers for `count` features.
std::vector<double> make_dropout_scale(std::size_t count, double rate, Rng& rng);

struct ForwardCache {
    std::vector<Frame> frames;
    Matrix x;  // T x d, embeddings plus positional encoding
    std::vector<HeadCache> heads;
    Matrix features;  // T x (H * d')
    std::vector<double> dropout_scale;  // empty in infer mode
    double logit = 0.0;
    double prediction = 0.5;
};

/// Train mode draws a dropout mask from `rng` (required); infer mode uses
/// none and ignores it.
std::pair<double, ForwardCache> forward(const QisSample& sample, const ModelParams& params,
                                        const ModelConfig& config, Mode mode, Rng* rng = nullptr);

/// Cross-entropy loss (label 1 = stego) and exact gradients. Throws
/// NonFiniteGradient.
std::pair<double, Gradients> backward(const ForwardCache& cache, Label label, const ModelParams& params,
                                      const ModelConfig& config);

/// Numerically stable binary cross-entropy from the pre-sigmoid logit.
double bce_from_logit(double logit, Label label);

struct GradCheckEntry {
    std::string tensor;
    double max_relative_error = 0.0;
    std::size_t checked = 0;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> entries;
    double tolerance = 1e-4;
    bool passed = false;

    /// Name of the worst tensor.
    std::string worst() const;
};

struct GradCheckOptions {
    double epsilon = 1e-5;
    double tolerance = 1e-4;
    /// Evaluate with a fixed dropout mask instead of none.
    bool with_dropout = false;
    /// Test hook applied to the analytic gradients before comparison.
    void (*corrupt)(Gradients&) = nullptr;
};

/// The configuration used by gradient checks: T=4, embedding 6, 2 heads of 3.
ModelConfig small_check_config();

/// Compares backward() against central finite differences on every scalar of
/// every tensor, with randomly initialised parameters (including the output
/// layer) and a random sample and label drawn from `seed`.
GradCheckReport grad_check(const ModelConfig& config, std::uint64_t seed, const GradCheckOptions& options = {});

/// FCEM1 checkpoint: text header followed by little-endian float64 blobs.
void write_checkpoint(const ModelConfig& config, const ModelParams& params, std::ostream& out);
void write_checkpoint(const ModelConfig& config, const ModelParams& params, const std::filesystem::path& path);
std::pair<ModelConfig, ModelParams> read_checkpoint(std::istream& in);
std::pair<ModelConfig, ModelParams> read_checkpoint(const std::filesystem::path& path);

}  // namespace stegattn
