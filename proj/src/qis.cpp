#include "stegattn/qis.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <ostream>
#include <random>

#include "stegattn/errors.hpp"
#include "stegattn/rng.hpp"
#include "text_io.hpp"

namespace stegattn {

void CodecShape::validate() const {
    for (auto size : codebook_sizes) {
        if (size < 2) throw Error("codebook size must be at least 2");
    }
    if (!(frame_duration_ms > 0.0)) throw Error("frame duration must be positive");
}

std::size_t CodecShape::vocab_size() const {
    return codebook_sizes[0] + codebook_sizes[1] + codebook_sizes[2];
}

std::size_t CodecShape::vocab_offset(std::size_t p) const {
    std::size_t off = 0;
    for (std::size_t i = 0; i < p; ++i) off += codebook_sizes[i];
    return off;
}

QisSample validate_sample(std::span<const RawFrame> indices, const CodecShape& shape) {
    if (indices.empty()) throw EmptySample();
    QisSample sample;
    sample.frames.resize(indices.size());
    for (std::size_t t = 0; t < indices.size(); ++t) {
        for (std::size_t p = 0; p < kPositions; ++p) {
            const auto v = indices[t][p];
            if (v < 0 || static_cast<std::uint64_t>(v) >= shape.codebook_sizes[p]) {
                throw IndexOutOfRange(t, p, v);
            }
            sample.frames[t][p] = static_cast<std::uint32_t>(v);
        }
    }
    sample.label = Label::Cover;
    sample.meta.duration_ms = static_cast<double>(indices.size()) * shape.frame_duration_ms;
    return sample;
}

std::vector<double> stationary_distribution(const Matrix& transition, std::size_t max_iter, double tol) {
    const std::size_t n = transition.rows;
    std::vector<double> pi(n, 1.0 / static_cast<double>(n));
    std::vector<double> next(n);
    for (std::size_t it = 0; it < max_iter; ++it) {
        std::fill(next.begin(), next.end(), 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            const double w = pi[i];
            const auto row = transition.row(i);
            for (std::size_t j = 0; j < n; ++j) next[j] += w * row[j];
        }
        double sum = 0.0;
        for (double v : next) sum += v;
        double diff = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            next[j] /= sum;
            diff = std::max(diff, std::abs(next[j] - pi[j]));
        }
        pi.swap(next);
        if (diff < tol) break;
    }
    return pi;
}

CoverModel sample_cover_model(const CodecShape& shape, double concentration, std::uint64_t seed) {
    shape.validate();
    if (!(concentration > 0.0)) throw Error("Dirichlet concentration must be positive");

    CoverModel model;
    model.shape = shape;
    model.concentration = concentration;
    model.seed = seed;
    for (std::size_t p = 0; p < kPositions; ++p) {
        const std::size_t n = shape.codebook_sizes[p];
        Rng rng(derive_seed(seed, {p}));
        std::gamma_distribution<double> gamma(concentration, 1.0);
        Matrix& m = model.transitions[p];
        m = Matrix(n, n);
        for (std::size_t i = 0; i < n; ++i) {
            auto row = m.row(i);
            double sum = 0.0;
            // With tiny concentrations every gamma draw can underflow; redraw.
            while (!(sum > 0.0)) {
                sum = 0.0;
                for (auto& v : row) {
                    v = gamma(rng);
                    sum += v;
                }
            }
            for (auto& v : row) v /= sum;
        }
        model.initial[p] = stationary_distribution(m);
    }
    return model;
}

namespace {

std::vector<double> cumulative(std::span<const double> probs) {
    std::vector<double> cdf(probs.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        acc += probs[i];
        cdf[i] = acc;
    }
    for (auto& v : cdf) v /= acc;
    cdf.back() = 1.0;
    return cdf;
}

std::uint32_t draw(std::span<const double> cdf, Rng& rng) {
    const double u = uniform01(rng);
    auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
    if (it == cdf.end()) --it;
    return static_cast<std::uint32_t>(it - cdf.begin());
}

}  // namespace

CoverSampler::CoverSampler(const CoverModel& model) : shape_(model.shape) {
    for (std::size_t p = 0; p < kPositions; ++p) {
        initial_cdf_[p] = cumulative(model.initial[p]);
        const Matrix& m = model.transitions[p];
        transition_cdf_[p] = Matrix(m.rows, m.cols);
        for (std::size_t i = 0; i < m.rows; ++i) {
            auto cdf = cumulative(m.row(i));
            std::copy(cdf.begin(), cdf.end(), transition_cdf_[p].row(i).begin());
        }
    }
}

QisSample CoverSampler::generate(std::size_t frames, std::uint64_t seed) const {
    if (frames == 0) throw EmptySample();
    QisSample sample;
    sample.frames.resize(frames);
    for (std::size_t p = 0; p < kPositions; ++p) {
        Rng rng(derive_seed(seed, {p}));
        std::uint32_t state = draw(initial_cdf_[p], rng);
        sample.frames[0][p] = state;
        for (std::size_t t = 1; t < frames; ++t) {
            state = draw(transition_cdf_[p].row(state), rng);
            sample.frames[t][p] = state;
        }
    }
    sample.label = Label::Cover;
    sample.meta.seed = seed;
    sample.meta.embedding_rate = 0.0;
    sample.meta.duration_ms = static_cast<double>(frames) * shape_.frame_duration_ms;
    return sample;
}

QisSample generate_cover(const CoverModel& model, std::size_t frames, std::uint64_t seed) {
    return CoverSampler(model).generate(frames, seed);
}

Corpus generate_cover_corpus(const CoverModel& model, std::size_t frames, std::size_t count,
                             std::uint64_t root_seed) {
    if (frames == 0) throw EmptySample();
    const CoverSampler sampler(model);
    Corpus corpus;
    corpus.shape = model.shape;
    corpus.samples.resize(count);
    const auto n = static_cast<std::ptrdiff_t>(count);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < n; ++i) {
        const auto idx = static_cast<std::uint64_t>(i);
        corpus.samples[idx] = sampler.generate(frames, derive_seed(root_seed, {idx}));
    }
    return corpus;
}

std::vector<QisSample> slide_windows(std::span<const Frame> stream, std::size_t window_frames,
                                     std::size_t stride_frames, double frame_duration_ms) {
    if (window_frames == 0 || stride_frames == 0) throw Error("window and stride must be at least 1");
    if (stream.size() < window_frames) throw StreamTooShort(stream.size(), window_frames);
    const std::size_t count = (stream.size() - window_frames) / stride_frames + 1;
    std::vector<QisSample> windows(count);
    for (std::size_t i = 0; i < count; ++i) {
        auto slice = stream.subspan(i * stride_frames, window_frames);
        windows[i].frames.assign(slice.begin(), slice.end());
        windows[i].meta.duration_ms = static_cast<double>(window_frames) * frame_duration_ms;
    }
    return windows;
}

std::size_t Corpus::frames() const {
    if (samples.empty()) return 0;
    const std::size_t t = samples.front().length();
    for (const auto& s : samples) {
        if (s.length() != t) {
            throw ShapeMismatch("corpus mixes samples of " + std::to_string(t) + " and " +
                                std::to_string(s.length()) + " frames");
        }
    }
    return t;
}

namespace {

constexpr std::string_view kCorpusMagic = "QISC1";

void write_frames(std::span<const Frame> frames, std::ostream& out) {
    for (const auto& f : frames) out << f[0] << ' ' << f[1] << ' ' << f[2] << '\n';
}

Frame parse_frame(detail::LineReader& reader, const CodecShape& shape) {
    auto tok = reader.tokens("frame indices");
    if (tok.size() != kPositions) reader.fail("expected 3 indices per frame");
    Frame f{};
    for (std::size_t p = 0; p < kPositions; ++p) {
        const auto v = reader.number<std::uint32_t>(tok[p]);
        if (v >= shape.codebook_sizes[p]) {
            reader.fail("index " + std::to_string(v) + " out of range for position " + std::to_string(p));
        }
        f[p] = v;
    }
    return f;
}

}  // namespace

void write_corpus(const Corpus& corpus, std::ostream& out) {
    const std::size_t t = corpus.frames();
    const auto& s = corpus.shape;
    out << kCorpusMagic << '\n';
    out << "codec " << s.codebook_sizes[0] << ' ' << s.codebook_sizes[1] << ' ' << s.codebook_sizes[2] << ' '
        << detail::format_double(s.frame_duration_ms) << '\n';
    out << "frames " << t << '\n';
    out << "samples " << corpus.samples.size() << '\n';
    for (const auto& sample : corpus.samples) {
        out << "sample " << static_cast<int>(sample.label) << ' ' << sample.meta.seed << ' '
            << detail::format_double(sample.meta.embedding_rate) << '\n';
        write_frames(sample.frames, out);
    }
}

void write_corpus(const Corpus& corpus, const std::filesystem::path& path) {
    // Validate before touching the destination.
    (void)corpus.frames();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot open " + path.string() + " for writing");
    write_corpus(corpus, out);
    if (!out) throw Error("failed writing " + path.string());
}

Corpus read_corpus(std::istream& in) {
    detail::LineReader reader(in);
    if (reader.next("magic") != kCorpusMagic) {
        throw FormatError(1, 0, "bad magic, expected QISC1");
    }
    Corpus corpus;
    auto codec = reader.keyed("codec", 4);
    for (std::size_t p = 0; p < kPositions; ++p) {
        corpus.shape.codebook_sizes[p] = reader.number<std::size_t>(codec[p]);
    }
    corpus.shape.frame_duration_ms = reader.number<double>(codec[3]);
    try {
        corpus.shape.validate();
    } catch (const Error& e) {
        reader.fail(e.what());
    }
    const auto frames = reader.number<std::size_t>(reader.keyed("frames", 1)[0]);
    const auto count = reader.number<std::size_t>(reader.keyed("samples", 1)[0]);
    if (frames == 0 && count > 0) reader.fail("frame count must be positive");
    corpus.samples.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        auto rec = reader.keyed("sample", 3);
        QisSample sample;
        const auto label = reader.number<int>(rec[0]);
        if (label != 0 && label != 1) reader.fail("label must be 0 or 1");
        sample.label = static_cast<Label>(label);
        sample.meta.seed = reader.number<std::uint64_t>(rec[1]);
        sample.meta.embedding_rate = reader.number<double>(rec[2]);
        if (!(sample.meta.embedding_rate >= 0.0 && sample.meta.embedding_rate <= 1.0)) {
            reader.fail("embedding rate outside [0,1]");
        }
        sample.meta.duration_ms = static_cast<double>(frames) * corpus.shape.frame_duration_ms;
        sample.frames.reserve(frames);
        for (std::size_t t = 0; t < frames; ++t) sample.frames.push_back(parse_frame(reader, corpus.shape));
        corpus.samples.push_back(std::move(sample));
    }
    while (!reader.at_end()) {
        if (!reader.next("end of input").empty()) reader.fail("trailing content after last sample");
    }
    return corpus;
}

Corpus read_corpus(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path.string());
    return read_corpus(in);
}

std::vector<Frame> read_index_stream(std::istream& in, const CodecShape& shape) {
    detail::LineReader reader(in);
    std::vector<Frame> frames;
    while (!reader.at_end()) {
        auto tok = reader.tokens("frame indices");
        if (tok.empty()) continue;
        if (tok.size() != kPositions) reader.fail("expected 3 indices per frame");
        Frame f{};
        for (std::size_t p = 0; p < kPositions; ++p) {
            const auto v = reader.number<std::uint32_t>(tok[p]);
            if (v >= shape.codebook_sizes[p]) {
                reader.fail("index " + std::to_string(v) + " out of range for position " + std::to_string(p));
            }
            f[p] = v;
        }
        frames.push_back(f);
    }
    return frames;
}

std::vector<Frame> read_index_stream(const std::filesystem::path& path, const CodecShape& shape) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path.string());
    return read_index_stream(in, shape);
}

void write_index_stream(std::span<const Frame> frames, std::ostream& out) {
    write_frames(frames, out);
}

}  // namespace stegattn
