#pragma once

// QIM embedding on index streams: each codebook is split into two labelled
// halves, and a secret bit is hidden by re-quantizing a codeword to the
// nearest codebook vector whose label equals the bit.

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <vector>

#include "stegattn/qis.hpp"
#include "stegattn/tensor.hpp"

namespace stegattn {

struct Codebook {
    std::size_t position = 0;
    Matrix vectors;  // size x dim
    std::uint64_t seed = 0;

    std::size_t size() const { return vectors.rows; }
    std::size_t dim() const { return vectors.cols; }

    bool operator==(const Codebook&) const = default;
};

/// Balanced two-coloring of a codebook.
struct Partition {
    std::vector<std::uint8_t> labels;
    std::uint64_t seed = 0;

    std::size_t count(std::uint8_t label) const;

    bool operator==(const Partition&) const = default;
};

/// Default vector dimension per position (10 for the first LSF stage, 5 for
/// the split second stage).
std::size_t default_codebook_dim(std::size_t position);

/// Rows uniform on [0,1)^dim; duplicate rows are redrawn.
Codebook synth_codebook(std::size_t position, std::size_t size, std::size_t dim, std::uint64_t seed);

Partition build_partition(const Codebook& codebook, std::uint64_t seed);

/// Codebooks and partitions for all positions plus the precomputed
/// same-label nearest-neighbour table used for re-quantization.
class QimKey {
public:
    QimKey(std::array<Codebook, kPositions> codebooks, std::array<Partition, kPositions> partitions);

    static QimKey generate(const CodecShape& shape, std::uint64_t seed);

    const Codebook& codebook(std::size_t p) const { return codebooks_[p]; }
    const Partition& partition(std::size_t p) const { return partitions_[p]; }
    CodecShape shape() const;

    /// Nearest codebook entry (Euclidean, lowest index on ties) to entry
    /// `index` among entries labelled `bit`.
    std::uint32_t requantize(std::size_t p, std::uint32_t index, std::uint8_t bit) const {
        return nearest_[p][2 * index + bit];
    }

    bool operator==(const QimKey& other) const {
        return codebooks_ == other.codebooks_ && partitions_ == other.partitions_;
    }

private:
    std::array<Codebook, kPositions> codebooks_;
    std::array<Partition, kPositions> partitions_;
    std::array<std::vector<std::uint32_t>, kPositions> nearest_;
};

enum class SelectionMode : std::uint8_t {
    Frame,  // a selected frame carries bits in every used position
    Slot,   // every (frame, position) slot is selected independently
};

struct StegoConfig {
    double embedding_rate = 0.0;
    std::array<bool, kPositions> positions_used{true, true, true};
    SelectionMode selection = SelectionMode::Frame;
    /// Seed of the slot-selection generator.
    std::uint64_t seed = 0;

    void validate() const;
};

struct EmbedSlot {
    std::uint32_t frame = 0;
    std::uint8_t position = 0;

    bool operator==(const EmbedSlot&) const = default;
};

using EmbedLog = std::vector<EmbedSlot>;

struct EmbedResult {
    QisSample sample;
    EmbedLog log;
};

/// Which slots the selection generator picks for a `frames`-frame sample, in
/// frame-major, position-minor order.
EmbedLog select_slots(std::size_t frames, const StegoConfig& config);

/// Embeds bits into the selected slots, consuming bits in log order. The
/// output is labelled stego iff at least one slot was selected. Throws
/// BitExhaustion when `bits` is shorter than the number of selected slots.
EmbedResult embed_bits(const QisSample& cover, std::span<const std::uint8_t> bits, const StegoConfig& config,
                       const QimKey& key);

/// QIM decoding: the partition label of the received index, per logged slot.
std::vector<std::uint8_t> extract_bits(const QisSample& stego, const EmbedLog& log, const QimKey& key);

std::vector<std::uint8_t> random_bits(std::size_t count, std::uint64_t seed);

/// One stego sample per cover, each with its own selection seed and bit
/// stream split from `seed`.
Corpus make_stego_corpus(const Corpus& covers, const StegoConfig& config, const QimKey& key, std::uint64_t seed);

/// QIMP1 sidecar: codebooks and partitions, exact round-trip.
void write_key(const QimKey& key, std::ostream& out);
void write_key(const QimKey& key, const std::filesystem::path& path);
QimKey read_key(std::istream& in);
QimKey read_key(const std::filesystem::path& path);

}  // namespace stegattn
