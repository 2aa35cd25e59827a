#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "stegattn/bench.hpp"
#include "stegattn/errors.hpp"
#include "stegattn/manifest.hpp"
#include "stegattn/sweep.hpp"

using namespace stegattn;

namespace {

ExperimentGrid tiny_grid() {
    ExperimentGrid g;
    g.lengths_ms = {50, 100};
    g.rates = {0.5, 1.0};
    g.anchor_rate = 1.0;
    g.anchor_length_ms = 100;
    g.samples_per_class = 40;
    g.model.embedding_size = 6;
    g.model.heads = 2;
    g.model.head_dim = 3;
    g.train.max_epochs = 2;
    g.train.batch_size = 16;
    return g;
}

CellResult row(std::size_t ms, double rate, double acc, std::uint64_t seed = 0) {
    CellResult r;
    r.cell = {ms, ms / 10, rate, seed};
    r.test.accuracy = acc;
    return r;
}

}  // namespace

TEST_SUITE("sweep") {
    TEST_CASE("grid layouts") {
        ExperimentGrid g;
        CHECK(g.cells().size() == 9);  // 5 lengths at 0.2 plus 5 rates at 300 ms, sharing one cell
        g.layout = GridLayout::Cross;
        CHECK(g.cells().size() == 25);
        g.seeds = {1, 2};
        CHECK(g.cells().size() == 50);
        g = ExperimentGrid{};
        g.rates = {0.1, 0.2, 0.3, 0.4, 0.5, 1.0};
        const auto cells = g.cells();
        CHECK(cells.size() == 10);
        CHECK(cells.front().frames == 10);
        CHECK(cells.back().frames == 100);
    }

    TEST_CASE("grid validation") {
        ExperimentGrid g;
        g.rates.clear();
        CHECK_THROWS_AS(g.validate(), Error);
        g = ExperimentGrid{};
        g.lengths_ms = {105};
        CHECK_THROWS_AS(g.validate(), Error);
        g = ExperimentGrid{};
        g.rates = {0.0};
        CHECK_THROWS_AS(g.validate(), Error);
        g = ExperimentGrid{};
        g.test_fraction = 0.5;
        g.validation_fraction = 0.5;
        CHECK_THROWS_AS(g.validate(), Error);
    }

    TEST_CASE("a one-cell grid gives one row") {
        ExperimentGrid g = tiny_grid();
        g.lengths_ms = {100};
        g.rates = {1.0};
        const auto t = run_sweep(g, 3);
        REQUIRE(t.rows.size() == 1);
        const auto& r = t.rows[0];
        CHECK(r.test.total() == 8);  // 10% of 40 per class
        CHECK((r.test.accuracy >= 0.0 && r.test.accuracy <= 1.0));
        CHECK(r.history.size() == 2);
        CHECK(r.train_time_s > 0.0);
        std::ostringstream csv;
        write_results_csv(t, csv);
        const std::string text = csv.str();
        CHECK(std::count(text.begin(), text.end(), '\n') == 2);
    }

    TEST_CASE("sweeps are reproducible byte for byte") {
        const ExperimentGrid g = tiny_grid();
        std::vector<std::string> observed;
        SweepObserver obs;
        obs.cell_done = [&](const CellResult& r) { observed.push_back(std::to_string(r.cell.length_ms)); };
        const auto a = run_sweep(g, 11, obs);
        const auto b = run_sweep(g, 11);
        CHECK(observed.size() == a.rows.size());
        std::ostringstream ca, cb, la, lb;
        write_results_csv(a, ca);
        write_results_csv(b, cb);
        write_curves_csv(a, la);
        write_curves_csv(b, lb);
        CHECK(ca.str() == cb.str());
        CHECK(la.str() == lb.str());
        std::ostringstream text;
        write_aligned_table(a, text);
        CHECK(text.str().find("accuracy") != std::string::npos);
        const auto c = run_sweep(g, 12);
        std::ostringstream cc;
        write_results_csv(c, cc);
        CHECK(cc.str() != ca.str());
    }

    TEST_CASE("trend checks") {
        ResultTable t;
        t.rows = {row(300, 0.1, 0.60), row(300, 0.2, 0.59), row(300, 0.3, 0.70), row(100, 0.2, 0.52),
                  row(500, 0.2, 0.58)};
        CHECK(check_trends(t, 0.02).empty());
        t.rows.push_back(row(300, 0.5, 0.65));
        auto v = check_trends(t, 0.02);
        REQUIRE(v.size() == 1);
        CHECK(v[0].axis == "rate");
        CHECK(v[0].lower->cell.rate == 0.3);
        CHECK(v[0].upper->cell.rate == 0.5);
        CHECK(describe(v[0]).find("rate axis") == 0);
        t.rows.push_back(row(1000, 0.2, 0.50));
        v = check_trends(t, 0.02);
        CHECK(v.size() == 2);
        CHECK(v[1].axis == "length");
        // Replicates are checked independently.
        ResultTable r;
        r.rows = {row(300, 0.1, 0.9, 1), row(300, 0.2, 0.6, 2)};
        CHECK(check_trends(r, 0.0).empty());
    }
}

TEST_SUITE("bench") {
    TEST_CASE("latency statistics") {
        ModelConfig c;
        c.window_frames = 10;
        const auto p = init_params(c, 1);
        const auto model = sample_cover_model(c.codec, 0.3, 2);
        const auto corpus = generate_cover_corpus(model, 10, 8, 3);
        BenchConfig b;
        b.repetitions = 1000;
        b.warmup = 100;
        const auto s = bench_inference(p, c, corpus.samples, b);
        CHECK(s.count == 1000);
        CHECK(s.timings_us.size() == 1000);
        CHECK(s.frames == 10);
        CHECK(s.mean_us > 0.0);
        CHECK(s.p50_us > 0.0);
        CHECK(s.p50_us <= s.p99_us);
        CHECK(s.batch_us > 0.0);
        const auto again = bench_inference(p, c, corpus.samples, b);
        CHECK(std::abs(again.mean_us - s.mean_us) <= 0.3 * s.mean_us);
        b.path = BenchPath::Tabled;
        CHECK(bench_inference(p, c, corpus.samples, b).count == 1000);
        std::ostringstream out;
        write_latency_csv(std::vector<LatencyStats>{s}, out);
        CHECK(out.str().rfind("T,mean_us,p50_us,p99_us,batch_us\n10,", 0) == 0);
    }

    TEST_CASE("nearest-rank quantiles") {
        std::vector<double> v{5, 1, 4, 2, 3};
        CHECK(quantile(v, 0.5) == 3);
        CHECK(quantile(v, 0.0) == 1);
        CHECK(quantile(v, 1.0) == 5);
        std::vector<double> h(100);
        for (std::size_t i = 0; i < 100; ++i) h[i] = static_cast<double>(100 - i);
        CHECK(quantile(h, 0.99) == 99);
    }
}

TEST_SUITE("manifest") {
    TEST_CASE("FNV-1a reference vectors") {
        CHECK(fnv1a64("") == 0xcbf29ce484222325ULL);
        CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
        CHECK(fnv1a64("foobar") == 0x85944171f73967e8ULL);
    }

    TEST_CASE("JSON round-trip") {
        RunManifest m;
        m.command = "train";
        m.flags = {{"lr", "0.001"}, {"seed", "7"}};
        m.root_seed = 7;
        m.outputs.push_back({"checkpoint", "model.fcem", 0xdeadbeefcafef00dULL, 123});
        const auto text = m.to_json();
        CHECK(text.find("timestamp") == std::string::npos);
        const auto back = RunManifest::from_json(text);
        CHECK(back.command == "train");
        CHECK(back.flags == m.flags);
        CHECK(back.outputs.size() == 1);
        CHECK(back.outputs[0].fnv1a == 0xdeadbeefcafef00dULL);
        CHECK(back.to_json() == text);
        CHECK_THROWS_AS(RunManifest::from_json("{"), FormatError);
    }
}
