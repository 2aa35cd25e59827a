#include <doctest.h>

#include <boost/math/distributions/chi_squared.hpp>
#include <cmath>
#include <set>
#include <sstream>

#include "stegattn/errors.hpp"
#include "stegattn/qim.hpp"
#include "stegattn/rng.hpp"

using namespace stegattn;

namespace {

const QimKey& default_key() {
    static const QimKey key = QimKey::generate(CodecShape{}, 1234);
    return key;
}

const CoverModel& default_model() {
    static const CoverModel model = sample_cover_model(CodecShape{}, 0.3, 99);
    return model;
}

// Brute-force same-label nearest neighbour, lowest index on ties.
std::uint32_t nearest_oracle(const Codebook& cb, const Partition& part, std::uint32_t index, std::uint8_t bit) {
    double best = INFINITY;
    std::uint32_t arg = 0;
    for (std::uint32_t j = 0; j < cb.size(); ++j) {
        if (part.labels[j] != bit) continue;
        double d = 0.0;
        for (std::size_t k = 0; k < cb.dim(); ++k) {
            const double diff = cb.vectors(index, k) - cb.vectors(j, k);
            d += diff * diff;
        }
        if (d < best) {
            best = d;
            arg = j;
        }
    }
    return arg;
}

StegoConfig config(double rate, std::uint64_t seed) {
    StegoConfig c;
    c.embedding_rate = rate;
    c.seed = seed;
    return c;
}

}  // namespace

TEST_SUITE("qim") {
    TEST_CASE("synthetic codebooks") {
        const auto a = synth_codebook(0, 128, 10, 5);
        CHECK(a == synth_codebook(0, 128, 10, 5));
        CHECK(a.size() == 128);
        CHECK(a.dim() == 10);
        std::set<std::vector<double>> rows;
        for (std::size_t r = 0; r < a.size(); ++r) {
            const auto row = a.vectors.row(r);
            for (double v : row) CHECK((v >= 0.0 && v < 1.0));
            rows.insert({row.begin(), row.end()});
        }
        CHECK(rows.size() == 128);
        CHECK_FALSE(a.vectors == synth_codebook(0, 128, 10, 6).vectors);
        // A 1-d codebook of size 2 over a tiny range still ends up distinct.
        const auto tiny = synth_codebook(1, 2, 1, 3);
        CHECK(tiny.vectors(0, 0) != tiny.vectors(1, 0));
        CHECK(default_codebook_dim(0) == 10);
        CHECK(default_codebook_dim(1) == 5);
        CHECK(default_codebook_dim(2) == 5);
    }

    TEST_CASE("partitions are balanced and seeded") {
        const auto cb32 = synth_codebook(1, 32, 5, 1);
        const auto p = build_partition(cb32, 7);
        CHECK(p.count(0) == 16);
        CHECK(p.count(1) == 16);
        CHECK(p == build_partition(cb32, 7));
        const auto cb5 = synth_codebook(1, 5, 5, 1);
        const auto q = build_partition(cb5, 7);
        CHECK(std::min(q.count(0), q.count(1)) == 2);
        CHECK(std::max(q.count(0), q.count(1)) == 3);
    }

    TEST_CASE("re-quantization table matches brute force") {
        const QimKey& key = default_key();
        for (std::size_t p = 0; p < kPositions; ++p) {
            const auto& cb = key.codebook(p);
            const auto& part = key.partition(p);
            for (std::uint32_t i = 0; i < cb.size(); ++i) {
                for (std::uint8_t bit = 0; bit < 2; ++bit) {
                    const auto r = key.requantize(p, i, bit);
                    CHECK(r == nearest_oracle(cb, part, i, bit));
                    CHECK(part.labels[r] == bit);
                    if (part.labels[i] == bit) CHECK(r == i);
                }
            }
        }
    }

    TEST_CASE("rate 0 is the identity and stays cover") {
        const auto cover = generate_cover(default_model(), 30, 1);
        const auto r = embed_bits(cover, random_bits(90, 2), config(0.0, 3), default_key());
        CHECK(r.log.empty());
        CHECK(r.sample.frames == cover.frames);
        CHECK(r.sample.label == Label::Cover);
    }

    TEST_CASE("rate 1 logs every slot") {
        const auto cover = generate_cover(default_model(), 10, 1);
        const auto r = embed_bits(cover, random_bits(30, 2), config(1.0, 3), default_key());
        CHECK(r.log.size() == 30);
        CHECK(r.sample.label == Label::Stego);
        CHECK(r.sample.meta.embedding_rate == 1.0);
        StegoConfig two = config(1.0, 3);
        two.positions_used = {true, false, true};
        CHECK(embed_bits(cover, random_bits(20, 2), two, default_key()).log.size() == 20);
    }

    TEST_CASE("bits matching the current label leave the index unchanged") {
        const auto cover = generate_cover(default_model(), 10, 4);
        std::vector<std::uint8_t> bits;
        for (const auto& f : cover.frames) {
            for (std::size_t p = 0; p < kPositions; ++p) bits.push_back(default_key().partition(p).labels[f[p]]);
        }
        const auto r = embed_bits(cover, bits, config(1.0, 5), default_key());
        CHECK(r.sample.frames == cover.frames);
        CHECK(r.sample.label == Label::Stego);
    }

    TEST_CASE("too few bits") {
        const auto cover = generate_cover(default_model(), 10, 4);
        CHECK_THROWS_AS(embed_bits(cover, random_bits(29, 1), config(1.0, 5), default_key()), BitExhaustion);
    }

    TEST_CASE("extract inverts embed on random cases") {
        Rng rng(2024);
        std::size_t mismatches = 0;
        for (int trial = 0; trial < 1000; ++trial) {
            const std::size_t t = 1 + rng() % 40;
            const auto cover = generate_cover(default_model(), t, rng());
            StegoConfig c = config(uniform01(rng), rng());
            if (trial % 4 == 0) c.selection = SelectionMode::Slot;
            const auto bits = random_bits(3 * t, rng());
            const auto r = embed_bits(cover, bits, c, default_key());
            const auto got = extract_bits(r.sample, r.log, default_key());
            REQUIRE(got.size() == r.log.size());
            for (std::size_t i = 0; i < got.size(); ++i) mismatches += got[i] != bits[i];
            // Untouched frames are identical; every index stays in range.
            std::set<std::uint32_t> touched;
            for (const auto& s : r.log) touched.insert(s.frame);
            for (std::size_t f = 0; f < t; ++f) {
                for (std::size_t p = 0; p < kPositions; ++p) {
                    CHECK(r.sample.frames[f][p] < CodecShape{}.codebook_sizes[p]);
                }
                if (!touched.count(static_cast<std::uint32_t>(f))) CHECK(r.sample.frames[f] == cover.frames[f]);
            }
        }
        CHECK(mismatches == 0);
    }

    TEST_CASE("extract edge cases") {
        const auto cover = generate_cover(default_model(), 5, 4);
        CHECK(extract_bits(cover, {}, default_key()).empty());
        QisSample s = cover;
        const auto& labels = default_key().partition(2).labels;
        const auto one = static_cast<std::uint32_t>(std::find(labels.begin(), labels.end(), 1) - labels.begin());
        s.frames[3][2] = one;
        const auto bits = extract_bits(s, {EmbedSlot{3, 2}}, default_key());
        REQUIRE(bits.size() == 1);
        CHECK(bits[0] == 1);
    }

    TEST_CASE("selected frame share concentrates at the rate") {
        const std::size_t n = 100, t = 30;
        const Corpus covers = generate_cover_corpus(default_model(), t, n, 5);
        // Frames selected per sample, reconstructed from the per-sample selection seeds.
        double selected = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            StegoConfig c = config(0.2, derive_seed(77, {i, 0}));
            selected += static_cast<double>(select_slots(t, c).size()) / 3.0;
        }
        const double total = static_cast<double>(n * t);
        const double sigma = std::sqrt(total * 0.2 * 0.8);
        CHECK(std::abs(selected - 0.2 * total) <= 3.0 * sigma);

        const Corpus stego = make_stego_corpus(covers, config(0.2, 0), default_key(), 77);
        CHECK(stego.samples.size() == n);
        CHECK(stego == make_stego_corpus(covers, config(0.2, 0), default_key(), 77));
        for (std::size_t i = 0; i < n; ++i) {
            CHECK(stego.samples[i].meta.embedding_rate == 0.2);
            CHECK(stego.samples[i].meta.seed == derive_seed(77, {i, 0}));
        }
        const Corpus none = make_stego_corpus(covers, config(0.0, 0), default_key(), 77);
        for (std::size_t i = 0; i < n; ++i) {
            CHECK(none.samples[i].frames == covers.samples[i].frames);
            CHECK(none.samples[i].label == Label::Cover);
        }
    }

    TEST_CASE("slot selection converges to the rate per slot") {
        StegoConfig c = config(0.3, 11);
        c.selection = SelectionMode::Slot;
        const auto log = select_slots(10000, c);
        const double n = 30000.0;
        CHECK(std::abs(static_cast<double>(log.size()) - 0.3 * n) <= 3.0 * std::sqrt(n * 0.3 * 0.7));
    }

    TEST_CASE("full-rate embedding shifts the index histogram") {
        // Two-sample chi-square on the first-position histogram, per random
        // cover model; the shift must be significant at the 1% level on at
        // least 95% of models.
        const std::size_t models = 20, n = 200, t = 30;
        std::size_t detected = 0;
        for (std::size_t m = 0; m < models; ++m) {
            const auto model = sample_cover_model(CodecShape{}, 0.3, 1000 + m);
            const auto key = QimKey::generate(CodecShape{}, 2000 + m);
            const auto covers = generate_cover_corpus(model, t, n, 3000 + m);
            const auto sources = generate_cover_corpus(model, t, n, 4000 + m);
            const auto stego = make_stego_corpus(sources, config(1.0, 0), key, 5000 + m);
            std::vector<double> a(128, 0.0), b(128, 0.0);
            for (const auto& s : covers.samples) {
                for (const auto& f : s.frames) a[f[0]] += 1.0;
            }
            for (const auto& s : stego.samples) {
                for (const auto& f : s.frames) b[f[0]] += 1.0;
            }
            const double na = static_cast<double>(n * t), nb = na;
            double chi2 = 0.0;
            int bins = 0;
            for (std::size_t k = 0; k < 128; ++k) {
                const double tot = a[k] + b[k];
                if (tot == 0.0) continue;
                ++bins;
                const double ea = tot * na / (na + nb), eb = tot * nb / (na + nb);
                chi2 += (a[k] - ea) * (a[k] - ea) / ea + (b[k] - eb) * (b[k] - eb) / eb;
            }
            const boost::math::chi_squared null(bins - 1);
            if (chi2 > boost::math::quantile(null, 0.99)) ++detected;
        }
        CHECK(static_cast<double>(detected) >= 0.95 * static_cast<double>(models));
    }

    TEST_CASE("key file round-trip") {
        std::stringstream ss;
        write_key(default_key(), ss);
        const QimKey back = read_key(ss);
        CHECK(back == default_key());
        for (std::uint32_t i = 0; i < 128; ++i) CHECK(back.requantize(0, i, 1) == default_key().requantize(0, i, 1));
        std::istringstream bad("QIMP2\n");
        CHECK_THROWS_AS(read_key(bad), FormatError);
    }

    TEST_CASE("config validation") {
        CHECK_THROWS_AS(config(1.5, 0).validate(), Error);
        CHECK_THROWS_AS(config(-0.1, 0).validate(), Error);
        const Corpus covers = generate_cover_corpus(default_model(), 5, 2, 5);
        Corpus other = covers;
        other.shape.codebook_sizes = {64, 32, 32};
        CHECK_THROWS_AS(make_stego_corpus(other, config(0.5, 0), default_key(), 1), Error);
    }
}
