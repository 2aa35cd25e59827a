#pragma once

// Supervised training (cross-entropy + Adam), evaluation metrics.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <vector>

#include "stegattn/fcem.hpp"
#include "stegattn/kernels.hpp"
#include "stegattn/qis.hpp"

namespace stegattn {

struct AdamConfig {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

struct TrainConfig {
    std::size_t batch_size = 256;
    std::size_t max_epochs = 100;
    AdamConfig adam;
    std::uint64_t seed = 0;
    /// Stop after this many epochs without a validation improvement; 0 disables.
    std::size_t patience = 10;
    /// Share of the training data held out for model selection.
    double validation_fraction = 0.1;
    kernels::Exec exec = kernels::Exec::Parallel;

    void validate() const;
};

struct AdamState {
    AdamState() = default;
    explicit AdamState(const ModelConfig& config) : first_moment(config), second_moment(config) {}

    Gradients first_moment;
    Gradients second_moment;
    std::uint64_t step = 0;
};

/// One bias-corrected Adam update. Throws NonFiniteUpdate.
void adam_step(ModelParams& params, const Gradients& grads, AdamState& state, const AdamConfig& config);

struct EpochRecord {
    std::size_t epoch = 0;  // 1-based
    double train_loss = 0.0;
    double validation_loss = 0.0;
    double validation_accuracy = 0.0;
    std::size_t steps = 0;
};

struct TrainResult {
    ModelParams params;  // best-validation parameters
    std::vector<EpochRecord> history;
    std::size_t best_epoch = 0;
    double best_validation_accuracy = 0.0;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Trains on labelled references. The validation share is split off with a
/// seeded shuffle before training starts.
TrainResult train_on(const ModelConfig& model_config, std::span<const kernels::LabeledRef> data,
                     const TrainConfig& config, const EpochCallback& on_epoch = {});

/// Trains with an explicit validation set; config.validation_fraction is
/// ignored. An empty validation set keeps the last epoch's parameters.
TrainResult train_split(const ModelConfig& model_config, std::span<const kernels::LabeledRef> train_data,
                        std::span<const kernels::LabeledRef> validation, const TrainConfig& config,
                        const EpochCallback& on_epoch = {});

/// Trains on the union of a cover and a stego corpus; each sample keeps its
/// own label. Throws ShapeMismatch when a corpus frame count differs from the
/// model window.
TrainResult train(const ModelConfig& model_config, const Corpus& covers, const Corpus& stegos,
                  const TrainConfig& config, const EpochCallback& on_epoch = {});

struct Evaluation {
    std::size_t true_stego = 0;
    std::size_t true_cover = 0;
    std::size_t false_stego = 0;  // cover classified as stego
    std::size_t false_cover = 0;  // stego classified as cover
    double accuracy = 0.0;
    double cover_recall = 0.0;
    double stego_recall = 0.0;
    double mean_loss = 0.0;

    std::size_t total() const { return true_stego + true_cover + false_stego + false_cover; }
};

/// Predictions >= 0.5 count as stego.
Evaluation evaluate_predictions(std::span<const double> predictions, std::span<const Label> labels);
Evaluation evaluate(const ModelParams& params, const ModelConfig& config, std::span<const kernels::LabeledRef> data,
                    kernels::Exec exec = kernels::Exec::Parallel);
Evaluation evaluate(const ModelParams& params, const ModelConfig& config, const Corpus& corpus,
                    kernels::Exec exec = kernels::Exec::Parallel);

std::vector<kernels::LabeledRef> labeled_refs(const Corpus& corpus);

void write_history_csv(std::span<const EpochRecord> history, std::ostream& out);

}  // namespace stegattn
