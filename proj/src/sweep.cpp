#include "stegattn/sweep.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <map>
#include <ostream>
#include <set>

#include "stegattn/errors.hpp"
#include "stegattn/rng.hpp"
#include "text_io.hpp"

namespace stegattn {

void ExperimentGrid::validate() const {
    if (lengths_ms.empty() || rates.empty() || seeds.empty()) throw Error("sweep grid axes must be non-empty");
    if (samples_per_class == 0) throw Error("sweep needs at least one sample per class");
    if (!(test_fraction >= 0.0 && validation_fraction >= 0.0 && test_fraction + validation_fraction < 1.0)) {
        throw Error("test and validation fractions must be non-negative and sum to less than 1");
    }
    if (!(concentration > 0.0)) throw Error("concentration must be positive");
    model.codec.validate();
    train.validate();
    const auto frame_ms = model.codec.frame_duration_ms;
    if (frame_ms != std::floor(frame_ms)) throw Error("sweeps need a whole-millisecond frame duration");
    auto check_length = [&](std::size_t ms) {
        if (ms == 0 || ms % static_cast<std::size_t>(frame_ms) != 0) {
            throw Error("sample length " + std::to_string(ms) + " ms is not a positive multiple of the " +
                        std::to_string(frame_ms) + " ms frame");
        }
    };
    for (auto ms : lengths_ms) check_length(ms);
    for (double r : rates) {
        if (!(r > 0.0 && r <= 1.0)) throw Error("sweep rates must lie in (0,1]");
    }
    if (layout == GridLayout::Tables) {
        check_length(anchor_length_ms);
        if (!(anchor_rate > 0.0 && anchor_rate <= 1.0)) throw Error("anchor rate must lie in (0,1]");
    }
}

std::vector<SweepCell> ExperimentGrid::cells() const {
    validate();
    std::set<std::pair<std::size_t, double>> pairs;
    if (layout == GridLayout::Cross) {
        for (auto ms : lengths_ms) {
            for (double r : rates) pairs.insert({ms, r});
        }
    } else {
        for (auto ms : lengths_ms) pairs.insert({ms, anchor_rate});
        for (double r : rates) pairs.insert({anchor_length_ms, r});
    }
    std::vector<SweepCell> out;
    for (auto seed : seeds) {
        for (const auto& [ms, r] : pairs) {
            out.push_back({ms, ms / static_cast<std::size_t>(model.codec.frame_duration_ms), r, seed});
        }
    }
    return out;
}

namespace {

// Stream identifiers under (root, replicate seed).
enum Stream : std::uint64_t { kCoverModel = 0, kKey = 1, kCovers = 2, kEmbed = 3, kSplit = 4, kTrain = 5 };

std::size_t share(double fraction, std::size_t n) {
    return static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
}

}  // namespace

CellResult run_cell(const ExperimentGrid& grid, const SweepCell& cell, std::uint64_t root_seed,
                    const SweepObserver& observer) {
    grid.validate();
    if (observer.cell_started) observer.cell_started(cell);
    const auto start = std::chrono::steady_clock::now();
    const std::uint64_t s = cell.seed;
    const std::uint64_t t = cell.frames;
    const std::size_t n = grid.samples_per_class;

    const CoverModel model =
        sample_cover_model(grid.model.codec, grid.concentration, derive_seed(root_seed, {s, kCoverModel}));
    const QimKey key = QimKey::generate(grid.model.codec, derive_seed(root_seed, {s, kKey}));
    Corpus covers = generate_cover_corpus(model, cell.frames, 2 * n, derive_seed(root_seed, {s, kCovers, t}));
    Corpus sources;
    sources.shape = covers.shape;
    sources.samples.assign(covers.samples.begin() + static_cast<std::ptrdiff_t>(n), covers.samples.end());
    covers.samples.resize(n);

    StegoConfig stego = grid.stego;
    stego.embedding_rate = cell.rate;
    const Corpus stegos =
        make_stego_corpus(sources, stego, key, derive_seed(root_seed, {s, kEmbed, t, std::bit_cast<std::uint64_t>(cell.rate)}));

    // Stratified split: the same index permutation is applied to both classes.
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng split_rng(derive_seed(root_seed, {s, kSplit, t}));
    shuffle(order, split_rng);
    const std::size_t n_test = share(grid.test_fraction, n);
    const std::size_t n_val = share(grid.validation_fraction, n);
    std::vector<kernels::LabeledRef> test, validation, training;
    for (std::size_t k = 0; k < n; ++k) {
        auto& dst = k < n_test ? test : k < n_test + n_val ? validation : training;
        dst.push_back({&covers.samples[order[k]], covers.samples[order[k]].label});
        dst.push_back({&stegos.samples[order[k]], stegos.samples[order[k]].label});
    }

    ModelConfig mc = grid.model;
    mc.window_frames = cell.frames;
    TrainConfig tc = grid.train;
    tc.seed = derive_seed(root_seed, {s, kTrain, t});
    EpochCallback on_epoch;
    if (observer.epoch_done) {
        on_epoch = [&](const EpochRecord& rec) { observer.epoch_done(cell, rec); };
    }
    TrainResult trained = train_split(mc, training, validation, tc, on_epoch);

    CellResult result;
    result.cell = cell;
    result.test = evaluate(trained.params, mc, test, tc.exec);
    result.best_epoch = trained.best_epoch;
    result.history = std::move(trained.history);
    result.train_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (observer.cell_done) observer.cell_done(result);
    return result;
}

ResultTable run_sweep(const ExperimentGrid& grid, std::uint64_t root_seed, const SweepObserver& observer) {
    ResultTable table;
    for (const auto& cell : grid.cells()) table.rows.push_back(run_cell(grid, cell, root_seed, observer));
    return table;
}

void write_results_csv(const ResultTable& table, std::ostream& out) {
    out << "length_ms,frames,rate,seed,test_accuracy,cover_recall,stego_recall,best_epoch,epochs\n";
    for (const auto& r : table.rows) {
        out << r.cell.length_ms << ',' << r.cell.frames << ',' << detail::format_double(r.cell.rate) << ','
            << r.cell.seed << ',' << detail::format_double(r.test.accuracy) << ','
            << detail::format_double(r.test.cover_recall) << ',' << detail::format_double(r.test.stego_recall) << ','
            << r.best_epoch << ',' << r.history.size() << '\n';
    }
}

void write_curves_csv(const ResultTable& table, std::ostream& out) {
    out << "length_ms,rate,seed,epoch,train_loss,validation_loss,validation_accuracy\n";
    for (const auto& r : table.rows) {
        for (const auto& e : r.history) {
            out << r.cell.length_ms << ',' << detail::format_double(r.cell.rate) << ',' << r.cell.seed << ','
                << e.epoch << ',' << detail::format_double(e.train_loss) << ','
                << detail::format_double(e.validation_loss) << ',' << detail::format_double(e.validation_accuracy)
                << '\n';
        }
    }
}

void write_timing_csv(const ResultTable& table, std::ostream& out) {
    out << "length_ms,rate,seed,train_time_s\n";
    for (const auto& r : table.rows) {
        out << r.cell.length_ms << ',' << detail::format_double(r.cell.rate) << ',' << r.cell.seed << ','
            << detail::format_double(r.train_time_s) << '\n';
    }
}

void write_aligned_table(const ResultTable& table, std::ostream& out) {
    char line[160];
    std::snprintf(line, sizeof line, "%10s %7s %6s %8s %9s %9s %9s %6s %9s\n", "length_ms", "frames", "rate", "seed",
                  "accuracy", "cover_r", "stego_r", "epochs", "time_s");
    out << line;
    for (const auto& r : table.rows) {
        std::snprintf(line, sizeof line, "%10zu %7zu %6.2f %8llu %9.4f %9.4f %9.4f %6zu %9.1f\n", r.cell.length_ms,
                      r.cell.frames, r.cell.rate, static_cast<unsigned long long>(r.cell.seed), r.test.accuracy,
                      r.test.cover_recall, r.test.stego_recall, r.history.size(), r.train_time_s);
        out << line;
    }
}

std::vector<TrendViolation> check_trends(const ResultTable& table, double tolerance) {
    std::vector<TrendViolation> out;
    // Lines along one axis: rows with equal seed and equal value on the other axis.
    std::map<std::pair<std::uint64_t, std::size_t>, std::vector<const CellResult*>> by_length;
    std::map<std::pair<std::uint64_t, double>, std::vector<const CellResult*>> by_rate;
    for (const auto& r : table.rows) {
        by_length[{r.cell.seed, r.cell.length_ms}].push_back(&r);
        by_rate[{r.cell.seed, r.cell.rate}].push_back(&r);
    }
    auto scan = [&](auto& lines, const char* axis, auto key) {
        for (auto& [id, line] : lines) {
            std::sort(line.begin(), line.end(), [&](auto* a, auto* b) { return key(a) < key(b); });
            for (std::size_t i = 1; i < line.size(); ++i) {
                if (line[i]->test.accuracy < line[i - 1]->test.accuracy - tolerance) {
                    out.push_back({axis, id.first, line[i - 1], line[i]});
                }
            }
        }
    };
    scan(by_length, "rate", [](const CellResult* c) { return c->cell.rate; });
    scan(by_rate, "length", [](const CellResult* c) { return static_cast<double>(c->cell.length_ms); });
    return out;
}

std::string describe(const TrendViolation& v) {
    char buf[200];
    std::snprintf(buf, sizeof buf, "%s axis (seed %llu): %zu ms @ %.2f -> %.4f, %zu ms @ %.2f -> %.4f", v.axis.c_str(),
                  static_cast<unsigned long long>(v.seed), v.lower->cell.length_ms, v.lower->cell.rate,
                  v.lower->test.accuracy, v.upper->cell.length_ms, v.upper->cell.rate, v.upper->test.accuracy);
    return buf;
}

}  // namespace stegattn
