#include "stegattn/training.hpp"

#include <cmath>
#include <limits>
#include <ostream>

#include "stegattn/errors.hpp"
#include "stegattn/rng.hpp"
#include "text_io.hpp"

namespace stegattn {

void TrainConfig::validate() const {
    if (batch_size == 0) throw Error("batch size must be at least 1");
    if (!(validation_fraction >= 0.0 && validation_fraction < 1.0)) {
        throw Error("validation fraction must lie in [0,1)");
    }
}

void adam_step(ModelParams& params, const Gradients& grads, AdamState& state, const AdamConfig& config) {
    ++state.step;
    const double t = static_cast<double>(state.step);
    const double correct1 = 1.0 - std::pow(config.beta1, t);
    const double correct2 = 1.0 - std::pow(config.beta2, t);
    auto theta = params.tensors();
    const auto g = grads.tensors();
    auto m = state.first_moment.tensors();
    auto v = state.second_moment.tensors();
    if (theta.size() != g.size() || theta.size() != m.size()) throw ShapeMismatch("Adam state shape mismatch");
    bool finite = true;
    for (std::size_t i = 0; i < theta.size(); ++i) {
        if (theta[i].size() != g[i].size()) throw ShapeMismatch("gradient shape mismatch");
        for (std::size_t j = 0; j < theta[i].size(); ++j) {
            m[i][j] = config.beta1 * m[i][j] + (1.0 - config.beta1) * g[i][j];
            v[i][j] = config.beta2 * v[i][j] + (1.0 - config.beta2) * g[i][j] * g[i][j];
            const double m_hat = m[i][j] / correct1;
            const double v_hat = v[i][j] / correct2;
            theta[i][j] -= config.learning_rate * m_hat / (std::sqrt(v_hat) + config.epsilon);
            finite = finite && std::isfinite(theta[i][j]);
        }
    }
    if (!finite) throw NonFiniteUpdate("Adam produced a non-finite parameter");
}

Evaluation evaluate_predictions(std::span<const double> predictions, std::span<const Label> labels) {
    Evaluation ev;
    double loss = 0.0;
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        const bool says_stego = predictions[i] >= 0.5;
        const bool is_stego = labels[i] == Label::Stego;
        if (says_stego && is_stego) ++ev.true_stego;
        if (!says_stego && !is_stego) ++ev.true_cover;
        if (says_stego && !is_stego) ++ev.false_stego;
        if (!says_stego && is_stego) ++ev.false_cover;
        loss -= is_stego ? std::log(predictions[i]) : std::log1p(-predictions[i]);
    }
    const std::size_t n = ev.total();
    if (n > 0) {
        ev.accuracy = static_cast<double>(ev.true_stego + ev.true_cover) / static_cast<double>(n);
        ev.mean_loss = loss / static_cast<double>(n);
    }
    const std::size_t covers = ev.true_cover + ev.false_stego;
    const std::size_t stegos = ev.true_stego + ev.false_cover;
    ev.cover_recall = covers ? static_cast<double>(ev.true_cover) / static_cast<double>(covers) : 0.0;
    ev.stego_recall = stegos ? static_cast<double>(ev.true_stego) / static_cast<double>(stegos) : 0.0;
    return ev;
}

Evaluation evaluate(const ModelParams& params, const ModelConfig& config, std::span<const kernels::LabeledRef> data,
                    kernels::Exec exec) {
    std::vector<const QisSample*> samples;
    std::vector<Label> labels;
    samples.reserve(data.size());
    labels.reserve(data.size());
    for (const auto& r : data) {
        samples.push_back(r.sample);
        labels.push_back(r.label);
    }
    const auto pred = kernels::predict_batch(std::span<const QisSample* const>(samples), params, config, exec);
    return evaluate_predictions(pred, labels);
}

Evaluation evaluate(const ModelParams& params, const ModelConfig& config, const Corpus& corpus, kernels::Exec exec) {
    const auto refs = labeled_refs(corpus);
    return evaluate(params, config, refs, exec);
}

std::vector<kernels::LabeledRef> labeled_refs(const Corpus& corpus) {
    std::vector<kernels::LabeledRef> refs;
    refs.reserve(corpus.samples.size());
    for (const auto& s : corpus.samples) refs.push_back({&s, s.label});
    return refs;
}

namespace {

void check_window(const ModelConfig& model_config, std::span<const kernels::LabeledRef> data) {
    for (const auto& r : data) {
        if (r.sample->length() != model_config.window_frames) {
            throw ShapeMismatch("training sample has " + std::to_string(r.sample->length()) +
                                " frames, model window is " + std::to_string(model_config.window_frames));
        }
    }
}

}  // namespace

TrainResult train_on(const ModelConfig& model_config, std::span<const kernels::LabeledRef> data,
                     const TrainConfig& config, const EpochCallback& on_epoch) {
    config.validate();
    std::vector<kernels::LabeledRef> pool(data.begin(), data.end());
    {
        Rng split_rng(derive_seed(config.seed, {0}));
        shuffle(pool, split_rng);
    }
    const auto n_val = static_cast<std::size_t>(std::floor(config.validation_fraction * static_cast<double>(pool.size())));
    const std::span<const kernels::LabeledRef> all(pool);
    return train_split(model_config, all.subspan(n_val), all.first(n_val), config, on_epoch);
}

TrainResult train_split(const ModelConfig& model_config, std::span<const kernels::LabeledRef> train_data,
                        std::span<const kernels::LabeledRef> validation, const TrainConfig& config,
                        const EpochCallback& on_epoch) {
    model_config.validate();
    config.validate();
    check_window(model_config, train_data);
    check_window(model_config, validation);
    std::vector<kernels::LabeledRef> training(train_data.begin(), train_data.end());
    if (training.empty()) throw Error("no training samples");

    TrainResult result;
    ModelParams params = init_params(model_config, derive_seed(config.seed, {1}));
    AdamState adam(model_config);
    result.params = params;
    double best_loss = std::numeric_limits<double>::infinity();
    double best_acc = -1.0;
    std::size_t since_best = 0;

    try {
        for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
            Rng order_rng(derive_seed(config.seed, {2, epoch}));
            shuffle(training, order_rng);
            EpochRecord rec;
            rec.epoch = epoch;
            double loss_sum = 0.0;
            for (std::size_t start = 0; start < training.size(); start += config.batch_size) {
                const std::size_t len = std::min(config.batch_size, training.size() - start);
                const std::span<const kernels::LabeledRef> batch(training.data() + start, len);
                const auto bg = kernels::batch_gradients(batch, params, model_config,
                                                         derive_seed(config.seed, {3, epoch, rec.steps}), config.exec);
                if (!std::isfinite(bg.loss_sum)) throw DivergenceDetected("training loss became non-finite");
                loss_sum += bg.loss_sum;
                adam_step(params, bg.grads, adam, config.adam);
                ++rec.steps;
            }
            rec.train_loss = loss_sum / static_cast<double>(training.size());

            bool improved;
            if (!validation.empty()) {
                const Evaluation ev = evaluate(params, model_config, validation, config.exec);
                rec.validation_accuracy = ev.accuracy;
                rec.validation_loss = ev.mean_loss;
                improved = ev.accuracy > best_acc || (ev.accuracy == best_acc && ev.mean_loss < best_loss);
                if (improved) {
                    best_acc = ev.accuracy;
                    best_loss = ev.mean_loss;
                }
            } else {
                rec.validation_accuracy = std::numeric_limits<double>::quiet_NaN();
                rec.validation_loss = std::numeric_limits<double>::quiet_NaN();
                improved = true;
            }
            result.history.push_back(rec);
            if (on_epoch) on_epoch(rec);
            if (improved) {
                result.params = params;
                result.best_epoch = epoch;
                result.best_validation_accuracy = rec.validation_accuracy;
                since_best = 0;
            } else if (config.patience > 0 && ++since_best >= config.patience) {
                break;
            }
        }
    } catch (const NonFiniteActivation& e) {
        throw DivergenceDetected(std::string("training diverged: ") + e.what());
    } catch (const NonFiniteGradient& e) {
        throw DivergenceDetected(std::string("training diverged: ") + e.what());
    } catch (const NonFiniteUpdate& e) {
        throw DivergenceDetected(std::string("training diverged: ") + e.what());
    }
    return result;
}

TrainResult train(const ModelConfig& model_config, const Corpus& covers, const Corpus& stegos,
                  const TrainConfig& config, const EpochCallback& on_epoch) {
    for (const Corpus* c : {&covers, &stegos}) {
        const std::size_t t = c->frames();
        if (!c->samples.empty() && t != model_config.window_frames) {
            throw ShapeMismatch("corpus has " + std::to_string(t) + " frames per sample, model window is " +
                                std::to_string(model_config.window_frames));
        }
        if (c->shape.codebook_sizes != model_config.codec.codebook_sizes) {
            throw ShapeMismatch("corpus codec shape does not match the model");
        }
    }
    auto refs = labeled_refs(covers);
    const auto more = labeled_refs(stegos);
    refs.insert(refs.end(), more.begin(), more.end());
    return train_on(model_config, refs, config, on_epoch);
}

void write_history_csv(std::span<const EpochRecord> history, std::ostream& out) {
    out << "epoch,train_loss,validation_loss,validation_accuracy,steps\n";
    for (const auto& r : history) {
        out << r.epoch << ',' << detail::format_double(r.train_loss) << ','
            << detail::format_double(r.validation_loss) << ',' << detail::format_double(r.validation_accuracy)
            << ',' << r.steps << '\n';
    }
}

}  // namespace stegattn
