#include "stegattn/qim.hpp"

#include <algorithm>
#include <fstream>
#include <limits>
#include <numeric>
#include <ostream>
#include <set>

#include "stegattn/errors.hpp"
#include "stegattn/rng.hpp"
#include "text_io.hpp"

namespace stegattn {

std::size_t Partition::count(std::uint8_t label) const {
    return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), label));
}

std::size_t default_codebook_dim(std::size_t position) {
    return position == 0 ? 10 : 5;
}

Codebook synth_codebook(std::size_t position, std::size_t size, std::size_t dim, std::uint64_t seed) {
    if (size < 2 || dim < 1) throw Error("codebook needs size >= 2 and dim >= 1");
    Codebook cb;
    cb.position = position;
    cb.seed = seed;
    cb.vectors = Matrix(size, dim);
    Rng rng(seed);
    std::set<std::vector<double>> seen;
    for (std::size_t i = 0; i < size; ++i) {
        std::vector<double> v(dim);
        do {
            for (auto& x : v) x = uniform01(rng);
        } while (!seen.insert(v).second);
        std::copy(v.begin(), v.end(), cb.vectors.row(i).begin());
    }
    return cb;
}

Partition build_partition(const Codebook& codebook, std::uint64_t seed) {
    Partition part;
    part.seed = seed;
    const std::size_t n = codebook.size();
    part.labels.assign(n, 1);
    std::fill(part.labels.begin(), part.labels.begin() + static_cast<std::ptrdiff_t>(n / 2), 0);
    Rng rng(seed);
    shuffle(part.labels, rng);
    return part;
}

QimKey::QimKey(std::array<Codebook, kPositions> codebooks, std::array<Partition, kPositions> partitions)
    : codebooks_(std::move(codebooks)), partitions_(std::move(partitions)) {
    for (std::size_t p = 0; p < kPositions; ++p) {
        const Matrix& vec = codebooks_[p].vectors;
        const auto& labels = partitions_[p].labels;
        if (labels.size() != vec.rows) throw ShapeMismatch("partition size does not match codebook size");
        for (auto l : labels) {
            if (l > 1) throw Error("partition labels must be 0 or 1");
        }
        if (partitions_[p].count(0) == 0 || partitions_[p].count(1) == 0) {
            throw Error("partition must use both labels");
        }
        auto& table = nearest_[p];
        table.assign(2 * vec.rows, 0);
        for (std::size_t i = 0; i < vec.rows; ++i) {
            double best[2] = {std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity()};
            for (std::size_t j = 0; j < vec.rows; ++j) {
                double dist = 0.0;
                for (std::size_t k = 0; k < vec.cols; ++k) {
                    const double d = vec(i, k) - vec(j, k);
                    dist += d * d;
                }
                const auto l = labels[j];
                if (dist < best[l]) {
                    best[l] = dist;
                    table[2 * i + l] = static_cast<std::uint32_t>(j);
                }
            }
        }
    }
}

QimKey QimKey::generate(const CodecShape& shape, std::uint64_t seed) {
    shape.validate();
    std::array<Codebook, kPositions> books;
    std::array<Partition, kPositions> parts;
    for (std::size_t p = 0; p < kPositions; ++p) {
        books[p] = synth_codebook(p, shape.codebook_sizes[p], default_codebook_dim(p), derive_seed(seed, {p, 0}));
        parts[p] = build_partition(books[p], derive_seed(seed, {p, 1}));
    }
    return QimKey(std::move(books), std::move(parts));
}

CodecShape QimKey::shape() const {
    CodecShape s;
    for (std::size_t p = 0; p < kPositions; ++p) s.codebook_sizes[p] = codebooks_[p].size();
    return s;
}

void StegoConfig::validate() const {
    if (!(embedding_rate >= 0.0 && embedding_rate <= 1.0)) throw Error("embedding rate must lie in [0,1]");
}

EmbedLog select_slots(std::size_t frames, const StegoConfig& config) {
    config.validate();
    EmbedLog log;
    Rng rng(config.seed);
    for (std::size_t t = 0; t < frames; ++t) {
        if (config.selection == SelectionMode::Frame) {
            if (!(uniform01(rng) < config.embedding_rate)) continue;
            for (std::size_t p = 0; p < kPositions; ++p) {
                if (config.positions_used[p]) {
                    log.push_back({static_cast<std::uint32_t>(t), static_cast<std::uint8_t>(p)});
                }
            }
        } else {
            for (std::size_t p = 0; p < kPositions; ++p) {
                if (!config.positions_used[p]) continue;
                if (uniform01(rng) < config.embedding_rate) {
                    log.push_back({static_cast<std::uint32_t>(t), static_cast<std::uint8_t>(p)});
                }
            }
        }
    }
    return log;
}

EmbedResult embed_bits(const QisSample& cover, std::span<const std::uint8_t> bits, const StegoConfig& config,
                       const QimKey& key) {
    EmbedResult result;
    result.log = select_slots(cover.length(), config);
    if (bits.size() < result.log.size()) throw BitExhaustion(result.log.size(), bits.size());
    result.sample = cover;
    for (std::size_t i = 0; i < result.log.size(); ++i) {
        const auto [t, p] = result.log[i];
        auto& idx = result.sample.frames[t][p];
        idx = key.requantize(p, idx, bits[i] & 1U);
    }
    result.sample.label = result.log.empty() ? Label::Cover : Label::Stego;
    result.sample.meta.seed = config.seed;
    result.sample.meta.embedding_rate = config.embedding_rate;
    return result;
}

std::vector<std::uint8_t> extract_bits(const QisSample& stego, const EmbedLog& log, const QimKey& key) {
    std::vector<std::uint8_t> bits;
    bits.reserve(log.size());
    for (const auto& slot : log) {
        bits.push_back(key.partition(slot.position).labels[stego.frames[slot.frame][slot.position]]);
    }
    return bits;
}

std::vector<std::uint8_t> random_bits(std::size_t count, std::uint64_t seed) {
    std::vector<std::uint8_t> bits(count);
    Rng rng(seed);
    for (std::size_t i = 0; i < count; i += 64) {
        const auto word = rng();
        for (std::size_t b = 0; b < 64 && i + b < count; ++b) bits[i + b] = (word >> b) & 1U;
    }
    return bits;
}

Corpus make_stego_corpus(const Corpus& covers, const StegoConfig& config, const QimKey& key, std::uint64_t seed) {
    config.validate();
    if (covers.shape.codebook_sizes != key.shape().codebook_sizes) {
        throw ShapeMismatch("QIM key codebooks do not match the corpus codec shape");
    }
    Corpus out;
    out.shape = covers.shape;
    out.samples.resize(covers.samples.size());
    const auto n = static_cast<std::ptrdiff_t>(covers.samples.size());
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < n; ++i) {
        const auto idx = static_cast<std::uint64_t>(i);
        const QisSample& cover = covers.samples[idx];
        StegoConfig cfg = config;
        cfg.seed = derive_seed(seed, {idx, 0});
        const auto bits = random_bits(cover.length() * kPositions, derive_seed(seed, {idx, 1}));
        out.samples[idx] = embed_bits(cover, bits, cfg, key).sample;
    }
    return out;
}

namespace {
constexpr std::string_view kKeyMagic = "QIMP1";
}

void write_key(const QimKey& key, std::ostream& out) {
    out << kKeyMagic << '\n';
    for (std::size_t p = 0; p < kPositions; ++p) {
        const auto& cb = key.codebook(p);
        const auto& part = key.partition(p);
        out << "position " << p << ' ' << cb.size() << ' ' << cb.dim() << ' ' << cb.seed << ' ' << part.seed
            << '\n';
        for (std::size_t i = 0; i < cb.size(); ++i) {
            const auto row = cb.vectors.row(i);
            for (std::size_t k = 0; k < row.size(); ++k) {
                if (k) out << ' ';
                out << detail::format_double(row[k]);
            }
            out << '\n';
        }
        out << "labels ";
        for (auto l : part.labels) out << static_cast<char>('0' + l);
        out << '\n';
    }
}

void write_key(const QimKey& key, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot open " + path.string() + " for writing");
    write_key(key, out);
    if (!out) throw Error("failed writing " + path.string());
}

QimKey read_key(std::istream& in) {
    detail::LineReader reader(in);
    if (reader.next("magic") != kKeyMagic) throw FormatError(1, 0, "bad magic, expected QIMP1");
    std::array<Codebook, kPositions> books;
    std::array<Partition, kPositions> parts;
    for (std::size_t p = 0; p < kPositions; ++p) {
        auto hdr = reader.keyed("position", 5);
        if (reader.number<std::size_t>(hdr[0]) != p) reader.fail("positions must appear in order");
        const auto size = reader.number<std::size_t>(hdr[1]);
        const auto dim = reader.number<std::size_t>(hdr[2]);
        if (size < 2 || dim < 1) reader.fail("invalid codebook dimensions");
        books[p].position = p;
        books[p].seed = reader.number<std::uint64_t>(hdr[3]);
        parts[p].seed = reader.number<std::uint64_t>(hdr[4]);
        books[p].vectors = Matrix(size, dim);
        for (std::size_t i = 0; i < size; ++i) {
            auto tok = reader.tokens("codebook row");
            if (tok.size() != dim) reader.fail("codebook row has wrong width");
            for (std::size_t k = 0; k < dim; ++k) books[p].vectors(i, k) = reader.number<double>(tok[k]);
        }
        auto lab = reader.keyed("labels", 1)[0];
        if (lab.size() != size) reader.fail("label string has wrong length");
        parts[p].labels.resize(size);
        for (std::size_t i = 0; i < size; ++i) {
            if (lab[i] != '0' && lab[i] != '1') reader.fail("labels must be 0 or 1");
            parts[p].labels[i] = static_cast<std::uint8_t>(lab[i] - '0');
        }
    }
    try {
        return QimKey(std::move(books), std::move(parts));
    } catch (const FormatError&) {
        throw;
    } catch (const Error& e) {
        reader.fail(e.what());
    }
}

QimKey read_key(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path.string());
    return read_key(in);
}

}  // namespace stegattn
