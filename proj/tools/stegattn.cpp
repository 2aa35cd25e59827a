// stegattn: generate QIS corpora, embed, train, detect, sweep, benchmark.

#include <omp.h>

#include <CLI11.hpp>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "stegattn/bench.hpp"
#include "stegattn/errors.hpp"
#include "stegattn/fcem.hpp"
#include "stegattn/kernels.hpp"
#include "stegattn/manifest.hpp"
#include "stegattn/qim.hpp"
#include "stegattn/qis.hpp"
#include "stegattn/rng.hpp"
#include "stegattn/sweep.hpp"
#include "stegattn/training.hpp"

namespace fs = std::filesystem;
using namespace stegattn;

namespace {

// Exit status for a failed --assert-* check or a failed gradient check.
constexpr int kAssertionFailed = 2;

void apply_thread_cap() {
    const char* env = std::getenv("STEGATTN_THREADS");
    if (!env || !*env) return;
    char* end = nullptr;
    const long n = std::strtol(env, &end, 10);
    if (*end != '\0' || n < 0) throw Error(std::string("STEGATTN_THREADS must be a non-negative integer, got ") + env);
    if (n > 0) omp_set_num_threads(static_cast<int>(n));
}

std::ofstream open_out(const fs::path& path) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    return out;
}

// Effective value of every option of a subcommand, defaults included.
RunManifest manifest_for(const CLI::App& sub, std::uint64_t seed) {
    RunManifest m;
    m.command = sub.get_name();
    m.root_seed = seed;
    for (const CLI::Option* opt : sub.get_options()) {
        if (opt->get_lnames().empty() || opt->get_lnames().front() == "help") continue;
        std::string value;
        if (opt->count() > 0) {
            for (const auto& r : opt->results()) value += (value.empty() ? "" : ",") + r;
        } else {
            value = opt->get_default_str();
        }
        m.flags[opt->get_lnames().front()] = value;
    }
    return m;
}

struct CodecFlags {
    std::vector<std::size_t> sizes{128, 32, 32};
    double frame_ms = 10.0;

    void add(CLI::App* app) {
        app->add_option("--codebook-sizes", sizes, "Codebook size per position")->expected(3)->capture_default_str();
        app->add_option("--frame-ms", frame_ms, "Frame duration in milliseconds")->capture_default_str();
    }
    CodecShape shape() const {
        CodecShape s;
        for (std::size_t p = 0; p < kPositions; ++p) s.codebook_sizes[p] = sizes[p];
        s.frame_duration_ms = frame_ms;
        s.validate();
        return s;
    }
};

struct StegoFlags {
    std::vector<std::size_t> positions{0, 1, 2};
    std::string selection = "frame";

    void add(CLI::App* app) {
        app->add_option("--positions", positions, "Codeword positions that carry bits")
            ->check(CLI::Range(0, 2))
            ->capture_default_str();
        app->add_option("--selection", selection, "Embedding unit: frame or slot")
            ->check(CLI::IsMember({"frame", "slot"}))
            ->capture_default_str();
    }
    StegoConfig config(double rate) const {
        StegoConfig c;
        c.embedding_rate = rate;
        c.positions_used = {false, false, false};
        for (auto p : positions) c.positions_used[p] = true;
        c.selection = selection == "slot" ? SelectionMode::Slot : SelectionMode::Frame;
        c.validate();
        return c;
    }
};

struct ModelFlags {
    std::size_t embedding_size = 100;
    std::size_t heads = 8;
    std::size_t head_dim = 32;
    double dropout = 0.6;
    bool scaled = false;
    bool no_pe = false;

    void add(CLI::App* app) {
        app->add_option("--embedding-size", embedding_size)->capture_default_str();
        app->add_option("--heads", heads)->capture_default_str();
        app->add_option("--head-dim", head_dim)->capture_default_str();
        app->add_option("--dropout", dropout, "Drop probability on output features")->capture_default_str();
        app->add_flag("--scaled", scaled, "Divide attention logits by sqrt(head_dim)");
        app->add_flag("--no-pe", no_pe, "Disable positional encoding");
    }
    ModelConfig config(const CodecShape& shape, std::size_t frames) const {
        ModelConfig c;
        c.codec = shape;
        c.embedding_size = embedding_size;
        c.heads = heads;
        c.head_dim = head_dim;
        c.window_frames = frames;
        c.dropout_rate = dropout;
        c.scaled_attention = scaled;
        c.positional_encoding = !no_pe;
        c.validate();
        return c;
    }
};

struct TrainFlags {
    std::size_t epochs = 100;
    std::size_t batch = 256;
    double lr = 1e-3;
    std::size_t patience = 10;
    bool serial = false;

    void add(CLI::App* app) {
        app->add_option("--epochs", epochs, "Maximum training epochs")->capture_default_str();
        app->add_option("--batch", batch, "Mini-batch size")->check(CLI::PositiveNumber)->capture_default_str();
        app->add_option("--lr", lr, "Adam learning rate")->capture_default_str();
        app->add_option("--patience", patience, "Early-stop patience in epochs, 0 disables")->capture_default_str();
        app->add_flag("--serial", serial, "Run batch kernels on one thread");
    }
    TrainConfig config(std::uint64_t seed) const {
        TrainConfig c;
        c.max_epochs = epochs;
        c.batch_size = batch;
        c.adam.learning_rate = lr;
        c.patience = patience;
        c.seed = seed;
        c.exec = serial ? kernels::Exec::Serial : kernels::Exec::Parallel;
        return c;
    }
};

void print_epoch(const EpochRecord& e) {
    std::fprintf(stderr, "epoch %3zu  train_loss %.5f  val_loss %.5f  val_acc %.4f\n", e.epoch, e.train_loss,
                 e.validation_loss, e.validation_accuracy);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"QIM steganalysis on quantization-index streams with an attention-only detector"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(kToolVersion));

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "Generate a cover corpus, a stego corpus and the QIM key");
    std::size_t gen_frames = 30, gen_n = 10000;
    double gen_rate = 0.0, gen_conc = 0.3;
    std::uint64_t gen_seed = 0;
    std::string gen_dir = ".";
    CodecFlags gen_codec;
    StegoFlags gen_stego;
    gen->add_option("--frames", gen_frames, "Frames per sample")->check(CLI::PositiveNumber)->capture_default_str();
    gen->add_option("--rate", gen_rate, "Embedding rate in [0,1]")->required()->check(CLI::Range(0.0, 1.0));
    gen->add_option("--n", gen_n, "Samples per class")->check(CLI::PositiveNumber)->capture_default_str();
    gen->add_option("--seed", gen_seed, "Root seed")->capture_default_str();
    gen->add_option("--concentration", gen_conc, "Dirichlet concentration of cover transitions")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    gen->add_option("--out-dir", gen_dir, "Directory for covers.qisc, stego.qisc, key.qimp, manifest.json")
        ->capture_default_str();
    gen_codec.add(gen);
    gen_stego.add(gen);

    // embed
    auto* emb = app.add_subcommand("embed", "Embed random bits into an existing cover corpus");
    std::string emb_covers, emb_key, emb_out;
    double emb_rate = 0.0;
    std::uint64_t emb_seed = 0;
    StegoFlags emb_stego;
    emb->add_option("--covers", emb_covers, "Cover corpus (QISC1)")->required()->check(CLI::ExistingFile);
    emb->add_option("--key", emb_key, "QIM key (QIMP1)")->required()->check(CLI::ExistingFile);
    emb->add_option("--rate", emb_rate, "Embedding rate in [0,1]")->required()->check(CLI::Range(0.0, 1.0));
    emb->add_option("--seed", emb_seed, "Seed for slot selection and bits")->capture_default_str();
    emb->add_option("--out", emb_out, "Stego corpus to write")->required();
    emb_stego.add(emb);

    // train
    auto* trn = app.add_subcommand("train", "Train a detector on a cover and a stego corpus");
    std::string trn_covers, trn_stego, trn_out = "model.fcem", trn_history;
    std::size_t trn_frames = 30;
    double trn_val = 0.1;
    std::uint64_t trn_seed = 0;
    ModelFlags trn_model;
    TrainFlags trn_train;
    trn->add_option("--covers", trn_covers, "Cover corpus (QISC1)")->required()->check(CLI::ExistingFile);
    trn->add_option("--stego", trn_stego, "Stego corpus (QISC1)")->required()->check(CLI::ExistingFile);
    trn->add_option("--frames", trn_frames, "Model window; must equal the corpus frame count")->capture_default_str();
    trn->add_option("--val-fraction", trn_val, "Share held out for model selection")->capture_default_str();
    trn->add_option("--seed", trn_seed, "Training seed")->capture_default_str();
    trn->add_option("--out", trn_out, "Checkpoint to write (FCEM1)")->capture_default_str();
    trn->add_option("--history", trn_history, "Per-epoch CSV to write");
    trn_model.add(trn);
    trn_train.add(trn);

    // detect
    auto* det = app.add_subcommand("detect", "Slide a window over an index stream and classify each window");
    std::string det_ckpt, det_stream;
    std::size_t det_window = 0, det_stride = 0;
    det->add_option("--checkpoint", det_ckpt, "Trained model (FCEM1)")->required()->check(CLI::ExistingFile);
    det->add_option("--stream", det_stream, "Raw stream: one line of three indices per frame")
        ->required()
        ->check(CLI::ExistingFile);
    det->add_option("--window", det_window, "Window in frames; 0 uses the model window")->capture_default_str();
    det->add_option("--stride", det_stride, "Stride in frames; 0 uses the window")->capture_default_str();

    // sweep
    auto* swp = app.add_subcommand("sweep", "Train and test one detector per (length, rate) cell");
    std::vector<std::size_t> swp_lengths{100, 300, 500, 700, 1000};
    std::vector<double> swp_rates{0.1, 0.2, 0.3, 0.4, 0.5};
    std::vector<std::uint64_t> swp_seeds{0};
    std::string swp_layout = "tables", swp_out = "sweep.csv", swp_curves, swp_timing;
    double swp_anchor_rate = 0.2, swp_conc = 0.3, swp_tol = 0.02;
    std::size_t swp_anchor_len = 300, swp_n = 10000;
    std::uint64_t swp_seed = 0;
    bool swp_assert = false;
    ModelFlags swp_model;
    TrainFlags swp_train;
    StegoFlags swp_stego;
    swp->add_option("--lengths", swp_lengths, "Sample lengths in ms")->capture_default_str();
    swp->add_option("--rates", swp_rates, "Embedding rates")->capture_default_str();
    swp->add_option("--layout", swp_layout, "cross: every pair; tables: lengths at the anchor rate plus rates at "
                                            "the anchor length")
        ->check(CLI::IsMember({"cross", "tables"}))
        ->capture_default_str();
    swp->add_option("--anchor-rate", swp_anchor_rate)->capture_default_str();
    swp->add_option("--anchor-length", swp_anchor_len, "Anchor length in ms")->capture_default_str();
    swp->add_option("--n", swp_n, "Samples per class per cell")->capture_default_str();
    swp->add_option("--replicates", swp_seeds, "Replicate seeds")->capture_default_str();
    swp->add_option("--seed", swp_seed, "Root seed")->capture_default_str();
    swp->add_option("--concentration", swp_conc)->capture_default_str();
    swp->add_option("--out", swp_out, "Results CSV")->capture_default_str();
    swp->add_option("--curves", swp_curves, "Per-epoch loss curve CSV");
    swp->add_option("--timing", swp_timing, "Wall-clock CSV (not reproducible)");
    swp->add_flag("--assert-trend", swp_assert, "Exit non-zero if accuracy drops along either axis");
    swp->add_option("--trend-tolerance", swp_tol)->capture_default_str();
    swp_model.add(swp);
    swp_train.add(swp);
    swp_stego.add(swp);

    // bench
    auto* bch = app.add_subcommand("bench", "Single-threaded inference latency per window length");
    std::string bch_ckpt, bch_out = "latency.csv", bch_raw, bch_path = "reference";
    std::vector<std::size_t> bch_frames{10, 30, 50, 70, 100};
    std::size_t bch_reps = 1000, bch_warmup = 100, bch_samples = 64;
    std::uint64_t bch_seed = 0;
    ModelFlags bch_model;
    bch->add_option("--checkpoint", bch_ckpt, "Model to time; otherwise random weights per length")
        ->check(CLI::ExistingFile);
    bch->add_option("--frames", bch_frames, "Window lengths in frames")->capture_default_str();
    bch->add_option("--reps", bch_reps, "Timed runs per length")->check(CLI::PositiveNumber)->capture_default_str();
    bch->add_option("--warmup", bch_warmup, "Untimed runs per length")->capture_default_str();
    bch->add_option("--samples", bch_samples, "Distinct cover samples per length")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    bch->add_option("--path", bch_path, "reference (per-sample forward) or tabled (projection tables)")
        ->check(CLI::IsMember({"reference", "tabled"}))
        ->capture_default_str();
    bch->add_option("--seed", bch_seed)->capture_default_str();
    bch->add_option("--out", bch_out, "Latency CSV")->capture_default_str();
    bch->add_option("--raw", bch_raw, "Every timing as T,rep,us");
    bch_model.add(bch);

    // grad-check
    auto* gck = app.add_subcommand("grad-check", "Compare analytic gradients with central differences");
    std::size_t gck_seeds = 20;
    std::uint64_t gck_first = 0;
    double gck_eps = 1e-5, gck_tol = 1e-4;
    bool gck_dropout = false;
    gck->add_option("--seeds", gck_seeds, "Number of seeds")->capture_default_str();
    gck->add_option("--first-seed", gck_first)->capture_default_str();
    gck->add_option("--epsilon", gck_eps)->capture_default_str();
    gck->add_option("--tolerance", gck_tol)->capture_default_str();
    gck->add_flag("--dropout", gck_dropout, "Check under a fixed dropout mask");

    CLI11_PARSE(app, argc, argv);

    try {
        apply_thread_cap();

        if (*gen) {
            const CodecShape shape = gen_codec.shape();
            const StegoConfig sc = gen_stego.config(gen_rate);
            const CoverModel model = sample_cover_model(shape, gen_conc, derive_seed(gen_seed, {0}));
            const QimKey key = QimKey::generate(shape, derive_seed(gen_seed, {1}));
            const Corpus covers = generate_cover_corpus(model, gen_frames, gen_n, derive_seed(gen_seed, {2}));
            const Corpus sources = generate_cover_corpus(model, gen_frames, gen_n, derive_seed(gen_seed, {3}));
            const Corpus stegos = make_stego_corpus(sources, sc, key, derive_seed(gen_seed, {4}));
            const fs::path dir(gen_dir);
            fs::create_directories(dir);
            write_corpus(covers, dir / "covers.qisc");
            write_corpus(stegos, dir / "stego.qisc");
            write_key(key, dir / "key.qimp");
            RunManifest m = manifest_for(*gen, gen_seed);
            m.add_output("covers", dir / "covers.qisc");
            m.add_output("stego", dir / "stego.qisc");
            m.add_output("key", dir / "key.qimp");
            m.write(dir / "manifest.json");
            std::size_t relabelled = 0;
            for (const auto& s : stegos.samples) relabelled += s.label == Label::Cover;
            std::printf("wrote %zu cover and %zu stego samples of %zu frames to %s\n", covers.samples.size(),
                        stegos.samples.size(), gen_frames, dir.string().c_str());
            if (relabelled) std::printf("%zu stego samples had no embedded slot and are labelled cover\n", relabelled);
        } else if (*emb) {
            const Corpus covers = read_corpus(fs::path(emb_covers));
            const QimKey key = read_key(fs::path(emb_key));
            const Corpus stegos = make_stego_corpus(covers, emb_stego.config(emb_rate), key, emb_seed);
            write_corpus(stegos, fs::path(emb_out));
            RunManifest m = manifest_for(*emb, emb_seed);
            m.add_input("covers", emb_covers);
            m.add_input("key", emb_key);
            m.add_output("stego", emb_out);
            m.write(emb_out + ".manifest.json");
            std::printf("wrote %zu stego samples to %s\n", stegos.samples.size(), emb_out.c_str());
        } else if (*trn) {
            const Corpus covers = read_corpus(fs::path(trn_covers));
            const Corpus stegos = read_corpus(fs::path(trn_stego));
            const ModelConfig mc = trn_model.config(covers.shape, trn_frames);
            TrainConfig tc = trn_train.config(trn_seed);
            tc.validation_fraction = trn_val;
            const TrainResult r = train(mc, covers, stegos, tc, print_epoch);
            write_checkpoint(mc, r.params, fs::path(trn_out));
            RunManifest m = manifest_for(*trn, trn_seed);
            m.add_input("covers", trn_covers);
            m.add_input("stego", trn_stego);
            m.add_output("checkpoint", trn_out);
            if (!trn_history.empty()) {
                auto out = open_out(trn_history);
                write_history_csv(r.history, out);
                out.close();
                m.add_output("history", trn_history);
            }
            m.write(trn_out + ".manifest.json");
            std::printf("best epoch %zu, validation accuracy %.4f\n", r.best_epoch, r.best_validation_accuracy);
        } else if (*det) {
            const auto [mc, params] = read_checkpoint(fs::path(det_ckpt));
            const auto stream = read_index_stream(fs::path(det_stream), mc.codec);
            const std::size_t window = det_window ? det_window : mc.window_frames;
            const std::size_t stride = det_stride ? det_stride : window;
            if (window != mc.window_frames) {
                throw ShapeMismatch("window of " + std::to_string(window) + " frames, model window is " +
                                    std::to_string(mc.window_frames));
            }
            const auto windows = slide_windows(stream, window, stride, mc.codec.frame_duration_ms);
            const auto pred = kernels::predict_batch(std::span<const QisSample>(windows), params, mc);
            for (std::size_t i = 0; i < windows.size(); ++i) {
                std::printf("%zu %.6f %s\n", i * stride, pred[i], pred[i] >= 0.5 ? "stego" : "cover");
            }
        } else if (*swp) {
            ExperimentGrid grid;
            grid.lengths_ms = swp_lengths;
            grid.rates = swp_rates;
            grid.layout = swp_layout == "cross" ? GridLayout::Cross : GridLayout::Tables;
            grid.anchor_rate = swp_anchor_rate;
            grid.anchor_length_ms = swp_anchor_len;
            grid.samples_per_class = swp_n;
            grid.seeds = swp_seeds;
            grid.concentration = swp_conc;
            grid.model = swp_model.config(CodecShape{}, 30);
            grid.train = swp_train.config(0);
            grid.stego = swp_stego.config(0.0);
            SweepObserver obs;
            obs.cell_started = [](const SweepCell& c) {
                std::fprintf(stderr, "cell %zu ms, rate %.2f, replicate %llu\n", c.length_ms, c.rate,
                             static_cast<unsigned long long>(c.seed));
            };
            obs.epoch_done = [](const SweepCell&, const EpochRecord& e) { print_epoch(e); };
            const ResultTable table = run_sweep(grid, swp_seed, obs);
            {
                auto out = open_out(swp_out);
                write_results_csv(table, out);
            }
            RunManifest m = manifest_for(*swp, swp_seed);
            m.add_output("results", swp_out);
            if (!swp_curves.empty()) {
                {
                    auto out = open_out(swp_curves);
                    write_curves_csv(table, out);
                }
                m.add_output("curves", swp_curves);
            }
            if (!swp_timing.empty()) {
                auto out = open_out(swp_timing);
                write_timing_csv(table, out);
            }
            m.write(swp_out + ".manifest.json");
            write_aligned_table(table, std::cout);
            const auto violations = check_trends(table, swp_tol);
            for (const auto& v : violations) std::printf("trend violation: %s\n", describe(v).c_str());
            if (swp_assert && !violations.empty()) return kAssertionFailed;
        } else if (*bch) {
            std::vector<LatencyStats> all;
            BenchConfig bc;
            bc.repetitions = bch_reps;
            bc.warmup = bch_warmup;
            bc.path = bch_path == "tabled" ? BenchPath::Tabled : BenchPath::Reference;
            auto run = [&](const ModelConfig& mc, const ModelParams& params) {
                const CoverModel cm = sample_cover_model(mc.codec, 0.3, derive_seed(bch_seed, {0}));
                const Corpus c = generate_cover_corpus(cm, mc.window_frames, bch_samples,
                                                       derive_seed(bch_seed, {1, mc.window_frames}));
                all.push_back(bench_inference(params, mc, c.samples, bc));
            };
            if (!bch_ckpt.empty()) {
                const auto [mc, params] = read_checkpoint(fs::path(bch_ckpt));
                run(mc, params);
            } else {
                for (auto t : bch_frames) {
                    const ModelConfig mc = bch_model.config(CodecShape{}, t);
                    ModelParams params = init_params(mc, derive_seed(bch_seed, {2, t}));
                    Rng rng(derive_seed(bch_seed, {3, t}));
                    for (auto& w : params.output_weight) w = uniform(rng, -0.01, 0.01);
                    run(mc, params);
                }
            }
            {
                auto out = open_out(bch_out);
                write_latency_csv(all, out);
            }
            if (!bch_raw.empty()) {
                auto out = open_out(bch_raw);
                out << "T,rep,us\n";
                for (const auto& s : all) {
                    for (std::size_t i = 0; i < s.timings_us.size(); ++i) {
                        out << s.frames << ',' << i << ',' << s.timings_us[i] << '\n';
                    }
                }
            }
            RunManifest m = manifest_for(*bch, bch_seed);
            if (!bch_ckpt.empty()) m.add_input("checkpoint", bch_ckpt);
            m.write(bch_out + ".manifest.json");
            std::printf("%6s %8s %10s %10s %10s %10s\n", "T", "runs", "mean_us", "p50_us", "p99_us", "batch_us");
            for (const auto& s : all) {
                std::printf("%6zu %8zu %10.2f %10.2f %10.2f %10.2f\n", s.frames, s.count, s.mean_us, s.p50_us,
                            s.p99_us, s.batch_us);
            }
            if (all.size() > 1) {
                std::printf("latency ratio T=%zu / T=%zu: %.2f\n", all.back().frames, all.front().frames,
                            all.back().mean_us / all.front().mean_us);
            }
        } else if (*gck) {
            GradCheckOptions opts;
            opts.epsilon = gck_eps;
            opts.tolerance = gck_tol;
            opts.with_dropout = gck_dropout;
            bool ok = true;
            for (std::size_t i = 0; i < gck_seeds; ++i) {
                const auto seed = gck_first + i;
                const auto report = grad_check(small_check_config(), seed, opts);
                std::printf("seed %llu: %s", static_cast<unsigned long long>(seed), report.passed ? "pass" : "FAIL");
                for (const auto& e : report.entries) std::printf("  %s=%.2e", e.tensor.c_str(), e.max_relative_error);
                std::printf("\n");
                ok = ok && report.passed;
            }
            if (!ok) return kAssertionFailed;
        }
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
