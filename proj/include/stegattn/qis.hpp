#pragma once

// Quantization-index-sequence (QIS) data model: codec shape, samples, the
// synthetic Markov cover source, sliding detection windows and the QISC1
// corpus file format.

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <vector>

#include "stegattn/tensor.hpp"

namespace stegattn {

inline constexpr std::size_t kPositions = 3;

/// Three codewords per frame with independent codebooks. Defaults follow the
/// G.729a LSF quantizer stages (7-bit, 5-bit, 5-bit) and 10 ms frames.
struct CodecShape {
    std::array<std::size_t, kPositions> codebook_sizes{128, 32, 32};
    double frame_duration_ms = 10.0;

    void validate() const;
    std::size_t vocab_size() const;
    /// Row offset of position `p` in a shared embedding vocabulary.
    std::size_t vocab_offset(std::size_t p) const;

    bool operator==(const CodecShape&) const = default;
};

enum class Label : std::uint8_t { Cover = 0, Stego = 1 };

using Frame = std::array<std::uint32_t, kPositions>;

struct SampleMeta {
    std::uint64_t seed = 0;
    double embedding_rate = 0.0;
    double duration_ms = 0.0;

    bool operator==(const SampleMeta&) const = default;
};

struct QisSample {
    std::vector<Frame> frames;
    Label label = Label::Cover;
    SampleMeta meta;

    std::size_t length() const { return frames.size(); }

    bool operator==(const QisSample&) const = default;
};

using RawFrame = std::array<std::int64_t, kPositions>;

/// Range-checks a raw T x 3 index matrix. Throws EmptySample or
/// IndexOutOfRange (reporting the first offending entry in row-major order).
QisSample validate_sample(std::span<const RawFrame> indices, const CodecShape& shape);

/// Per-position first-order Markov chains used as a stand-in cover source.
struct CoverModel {
    CodecShape shape;
    std::array<Matrix, kPositions> transitions;
    std::array<std::vector<double>, kPositions> initial;
    double concentration = 0.3;
    std::uint64_t seed = 0;

    bool operator==(const CoverModel&) const = default;
};

/// Rows of each transition matrix are symmetric-Dirichlet draws; the initial
/// distribution is the chain's stationary distribution.
CoverModel sample_cover_model(const CodecShape& shape, double concentration, std::uint64_t seed);

/// Power iteration on a row-stochastic matrix.
std::vector<double> stationary_distribution(const Matrix& transition, std::size_t max_iter = 10000,
                                            double tol = 1e-14);

/// Precomputed inverse-CDF tables for drawing many samples from one model.
class CoverSampler {
public:
    explicit CoverSampler(const CoverModel& model);

    QisSample generate(std::size_t frames, std::uint64_t seed) const;

private:
    CodecShape shape_;
    std::array<std::vector<double>, kPositions> initial_cdf_;
    std::array<Matrix, kPositions> transition_cdf_;
};

QisSample generate_cover(const CoverModel& model, std::size_t frames, std::uint64_t seed);

/// Contiguous windows of `window_frames` frames every `stride_frames` frames,
/// no padding. Throws StreamTooShort when the stream is shorter than a window.
std::vector<QisSample> slide_windows(std::span<const Frame> stream, std::size_t window_frames,
                                     std::size_t stride_frames, double frame_duration_ms = 10.0);

struct Corpus {
    CodecShape shape;
    std::vector<QisSample> samples;

    /// Common frame count; 0 for an empty corpus. Throws ShapeMismatch when
    /// samples disagree.
    std::size_t frames() const;

    bool operator==(const Corpus&) const = default;
};

/// `count` covers with per-sample seeds split from `root_seed`.
Corpus generate_cover_corpus(const CoverModel& model, std::size_t frames, std::size_t count,
                             std::uint64_t root_seed);

void write_corpus(const Corpus& corpus, std::ostream& out);
void write_corpus(const Corpus& corpus, const std::filesystem::path& path);
Corpus read_corpus(std::istream& in);
Corpus read_corpus(const std::filesystem::path& path);

/// Raw index stream: one frame per line, three integers separated by spaces.
std::vector<Frame> read_index_stream(std::istream& in, const CodecShape& shape);
std::vector<Frame> read_index_stream(const std::filesystem::path& path, const CodecShape& shape);
void write_index_stream(std::span<const Frame> frames, std::ostream& out);

}  // namespace stegattn
