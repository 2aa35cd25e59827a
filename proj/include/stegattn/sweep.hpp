#pragma once

// Accuracy sweeps over sample length and embedding rate.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "stegattn/fcem.hpp"
#include "stegattn/qim.hpp"
#include "stegattn/training.hpp"

namespace stegattn {

enum class GridLayout {
    /// Every (length, rate) pair.
    Cross,
    /// Lengths at anchor_rate plus rates at anchor_length_ms, deduplicated.
    Tables,
};

struct SweepCell {
    std::size_t length_ms = 0;
    std::size_t frames = 0;
    double rate = 0.0;
    std::uint64_t seed = 0;
};

struct ExperimentGrid {
    std::vector<std::size_t> lengths_ms{100, 300, 500, 700, 1000};
    std::vector<double> rates{0.1, 0.2, 0.3, 0.4, 0.5};
    GridLayout layout = GridLayout::Tables;
    double anchor_rate = 0.2;
    std::size_t anchor_length_ms = 300;
    std::size_t samples_per_class = 10000;
    /// Replicate seeds; every cell is run once per entry.
    std::vector<std::uint64_t> seeds{0};
    double concentration = 0.3;
    double test_fraction = 0.1;
    double validation_fraction = 0.1;
    /// window_frames is set per cell.
    ModelConfig model;
    /// seed and validation_fraction are set per cell.
    TrainConfig train;
    /// embedding_rate and seed are set per cell.
    StegoConfig stego;

    void validate() const;
    /// Cells in run order: by seed, then length, then rate.
    std::vector<SweepCell> cells() const;
};

struct CellResult {
    SweepCell cell;
    Evaluation test;
    std::size_t best_epoch = 0;
    std::vector<EpochRecord> history;
    double train_time_s = 0.0;
};

struct ResultTable {
    std::vector<CellResult> rows;
};

struct SweepObserver {
    std::function<void(const SweepCell&)> cell_started;
    std::function<void(const SweepCell&, const EpochRecord&)> epoch_done;
    std::function<void(const CellResult&)> cell_done;
};

/// Generates, embeds, splits (stratified, seeded), trains and tests one cell.
///
/// Cells that share a replicate seed share the cover model and QIM key. Cells
/// that also share a length share the cover samples, the split and the
/// initial weights, so rate comparisons are paired.
CellResult run_cell(const ExperimentGrid& grid, const SweepCell& cell, std::uint64_t root_seed,
                    const SweepObserver& observer = {});

/// Runs the cells in order. Parallelism lives inside each cell.
ResultTable run_sweep(const ExperimentGrid& grid, std::uint64_t root_seed, const SweepObserver& observer = {});

/// length_ms,frames,rate,seed,test_accuracy,cover_recall,stego_recall,best_epoch,epochs.
/// Contains no wall-clock data, so equal inputs give equal bytes.
void write_results_csv(const ResultTable& table, std::ostream& out);
/// length_ms,rate,seed,epoch,train_loss,validation_loss,validation_accuracy.
void write_curves_csv(const ResultTable& table, std::ostream& out);
/// length_ms,rate,seed,train_time_s.
void write_timing_csv(const ResultTable& table, std::ostream& out);
void write_aligned_table(const ResultTable& table, std::ostream& out);

struct TrendViolation {
    /// "rate" when rate grows at fixed length, "length" when length grows at fixed rate.
    std::string axis;
    std::uint64_t seed = 0;
    const CellResult* lower = nullptr;
    const CellResult* upper = nullptr;
};

/// Checks that test accuracy does not drop by more than tolerance between
/// neighbouring cells along either axis. The table must outlive the result.
std::vector<TrendViolation> check_trends(const ResultTable& table, double tolerance);

std::string describe(const TrendViolation& violation);

}  // namespace stegattn
