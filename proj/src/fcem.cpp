#include "stegattn/fcem.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>

#include "clamp_counter.hpp"
#include "stegattn/errors.hpp"

namespace stegattn {

namespace {
std::atomic<std::uint64_t> g_clamp_count{0};
}

namespace detail {
void add_logit_clamps(std::uint64_t n) { g_clamp_count.fetch_add(n, std::memory_order_relaxed); }
}  // namespace detail

std::uint64_t logit_clamp_count() { return g_clamp_count.load(std::memory_order_relaxed); }
void reset_logit_clamp_count() { g_clamp_count.store(0, std::memory_order_relaxed); }

void ModelConfig::validate() const {
    codec.validate();
    if (embedding_size == 0 || heads == 0 || head_dim == 0 || window_frames == 0) {
        throw Error("model dimensions must be at least 1");
    }
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw Error("dropout rate must lie in [0,1)");
}

ParamTensors::ParamTensors(const ModelConfig& config)
    : embedding(config.vocab_size(), config.embedding_size),
      query(config.heads, Matrix(config.frame_dim(), config.head_dim)),
      key(config.heads, Matrix(config.frame_dim(), config.head_dim)),
      value(config.heads, Matrix(config.frame_dim(), config.head_dim)),
      output_weight(config.output_length(), 0.0),
      output_bias(0.0) {}

std::vector<std::span<double>> ParamTensors::tensors() {
    std::vector<std::span<double>> out;
    out.emplace_back(embedding.data);
    for (std::size_t h = 0; h < query.size(); ++h) {
        out.emplace_back(query[h].data);
        out.emplace_back(key[h].data);
        out.emplace_back(value[h].data);
    }
    out.emplace_back(output_weight);
    out.emplace_back(&output_bias, 1);
    return out;
}

std::vector<std::span<const double>> ParamTensors::tensors() const {
    std::vector<std::span<const double>> out;
    out.emplace_back(embedding.data);
    for (std::size_t h = 0; h < query.size(); ++h) {
        out.emplace_back(query[h].data);
        out.emplace_back(key[h].data);
        out.emplace_back(value[h].data);
    }
    out.emplace_back(output_weight);
    out.emplace_back(&output_bias, 1);
    return out;
}

std::vector<std::string> ParamTensors::tensor_names(std::size_t heads) {
    std::vector<std::string> names{"V"};
    for (std::size_t h = 0; h < heads; ++h) {
        const auto suffix = "[" + std::to_string(h) + "]";
        names.push_back("W_query" + suffix);
        names.push_back("W_key" + suffix);
        names.push_back("W_value" + suffix);
    }
    names.emplace_back("w");
    names.emplace_back("b");
    return names;
}

std::size_t ParamTensors::scalar_count() const {
    std::size_t n = 0;
    for (auto t : tensors()) n += t.size();
    return n;
}

void ParamTensors::fill(double v) {
    for (auto t : tensors()) std::fill(t.begin(), t.end(), v);
}

void Gradients::add(const Gradients& other) {
    auto dst = tensors();
    auto src = other.tensors();
    for (std::size_t i = 0; i < dst.size(); ++i) {
        for (std::size_t j = 0; j < dst[i].size(); ++j) dst[i][j] += src[i][j];
    }
}

void Gradients::scale(double s) {
    for (auto t : tensors()) {
        for (auto& v : t) v *= s;
    }
}

ModelParams init_params(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    ModelParams params(config);
    auto glorot = [](Matrix& m, std::size_t fan_in, std::size_t fan_out, std::uint64_t s) {
        const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
        Rng rng(s);
        for (auto& v : m.data) v = uniform(rng, -limit, limit);
    };
    glorot(params.embedding, config.vocab_size(), config.embedding_size, derive_seed(seed, {0}));
    for (std::size_t h = 0; h < config.heads; ++h) {
        glorot(params.query[h], config.frame_dim(), config.head_dim, derive_seed(seed, {1, h}));
        glorot(params.key[h], config.frame_dim(), config.head_dim, derive_seed(seed, {2, h}));
        glorot(params.value[h], config.frame_dim(), config.head_dim, derive_seed(seed, {3, h}));
    }
    return params;
}

std::size_t parameter_count(const ModelConfig& config) {
    return config.vocab_size() * config.embedding_size +
           config.heads * 3 * config.frame_dim() * config.head_dim + config.output_length() + 1;
}

Matrix embed_lookup(const QisSample& sample, const Matrix& embedding, const CodecShape& codec) {
    const std::size_t e = embedding.cols;
    Matrix x(sample.length(), kPositions * e);
    for (std::size_t t = 0; t < sample.length(); ++t) {
        auto dst = x.row(t);
        for (std::size_t p = 0; p < kPositions; ++p) {
            const auto src = embedding.row(codec.vocab_offset(p) + sample.frames[t][p]);
            std::copy(src.begin(), src.end(), dst.begin() + static_cast<std::ptrdiff_t>(p * e));
        }
    }
    return x;
}

Matrix positional_encoding(std::size_t frames, std::size_t dim) {
    Matrix pe(frames, dim);
    for (std::size_t t = 0; t < frames; ++t) {
        for (std::size_t c = 0; c < dim; ++c) {
            const std::size_t i = c / 2;
            const double angle =
                static_cast<double>(t) / std::pow(10000.0, 2.0 * static_cast<double>(i) / static_cast<double>(dim));
            pe(t, c) = (c % 2 == 0) ? std::sin(angle) : std::cos(angle);
        }
    }
    return pe;
}

HeadCache attention_head(const Matrix& x, const Matrix& w_query, const Matrix& w_key, const Matrix& w_value,
                         bool scaled) {
    HeadCache c;
    c.query = matmul(x, w_query);
    c.key = matmul(x, w_key);
    c.value = matmul(x, w_value);
    const std::size_t t_len = x.rows;
    Matrix logits = matmul_a_bt(c.query, c.key);
    if (scaled) {
        const double s = 1.0 / std::sqrt(static_cast<double>(w_query.cols));
        for (auto& v : logits.data) v *= s;
    }
    if (!all_finite(logits.data)) throw NonFiniteActivation("non-finite attention logit");

    c.clamped.assign(t_len * t_len, 0);
    std::uint64_t clamps = 0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        double& v = logits.data[i];
        if (v > kLogitClamp || v < -kLogitClamp) {
            v = std::clamp(v, -kLogitClamp, kLogitClamp);
            c.clamped[i] = 1;
            ++clamps;
        }
    }
    if (clamps) detail::add_logit_clamps(clamps);

    c.weights = Matrix(t_len, t_len);
    for (std::size_t m = 0; m < t_len; ++m) {
        const auto row = logits.row(m);
        const double mx = *std::max_element(row.begin(), row.end());
        double sum = 0.0;
        auto out = c.weights.row(m);
        for (std::size_t k = 0; k < t_len; ++k) {
            out[k] = std::exp(row[k] - mx);
            sum += out[k];
        }
        for (auto& v : out) v /= sum;
    }
    c.output = matmul(c.weights, c.value);
    if (!all_finite(c.output.data)) throw NonFiniteActivation("non-finite attention output");
    return c;
}

Matrix concat_heads(std::span<const HeadCache> heads) {
    const std::size_t t_len = heads.front().output.rows;
    const std::size_t dh = heads.front().output.cols;
    Matrix out(t_len, heads.size() * dh);
    for (std::size_t h = 0; h < heads.size(); ++h) {
        for (std::size_t t = 0; t < t_len; ++t) {
            const auto src = heads[h].output.row(t);
            std::copy(src.begin(), src.end(), out.row(t).begin() + static_cast<std::ptrdiff_t>(h * dh));
        }
    }
    return out;
}

Matrix multi_head(const Matrix& x, const ModelParams& params, const ModelConfig& config) {
    std::vector<HeadCache> heads;
    heads.reserve(config.heads);
    for (std::size_t h = 0; h < config.heads; ++h) {
        heads.push_back(attention_head(x, params.query[h], params.key[h], params.value[h], config.scaled_attention));
    }
    return concat_heads(heads);
}

double sigmoid(double z) {
    double y;
    if (z >= 0.0) {
        y = 1.0 / (1.0 + std::exp(-z));
    } else {
        const double e = std::exp(z);
        y = e / (1.0 + e);
    }
    // Keep predictions strictly inside (0, 1).
    return std::clamp(y, std::numeric_limits<double>::min(), std::nextafter(1.0, 0.0));
}

namespace {

double output_logit(std::span<const double> features, std::span<const double> weight, double bias,
                    std::span<const double> dropout_scale) {
    double z = bias;
    if (dropout_scale.empty()) {
        for (std::size_t i = 0; i < features.size(); ++i) z += weight[i] * features[i];
    } else {
        for (std::size_t i = 0; i < features.size(); ++i) z += weight[i] * (features[i] * dropout_scale[i]);
    }
    return z;
}

}  // namespace

double classify(const Matrix& features, std::span<const double> output_weight, double output_bias,
                std::span<const double> dropout_scale) {
    if (output_weight.size() != features.size()) throw ShapeMismatch("output weight length does not match features");
    if (!dropout_scale.empty() && dropout_scale.size() != features.size()) {
        throw ShapeMismatch("dropout mask length does not match features");
    }
    return sigmoid(output_logit(features.data, output_weight, output_bias, dropout_scale));
}

std::vector<double> make_dropout_scale(std::size_t count, double rate, Rng& rng) {
    std::vector<double> scale(count, 1.0);
    if (rate <= 0.0) return scale;
    const double keep = 1.0 / (1.0 - rate);
    // Branch-free: the keep/drop pattern is random, so a branch mispredicts often.
    for (auto& s : scale) s = keep * static_cast<double>(uniform01(rng) >= rate);
    return scale;
}

namespace {

ForwardCache forward_with_mask(const QisSample& sample, const ModelParams& params, const ModelConfig& config,
                               std::vector<double> dropout_scale) {
    if (sample.length() != config.window_frames) {
        throw ShapeMismatch("sample has " + std::to_string(sample.length()) + " frames, model expects " +
                            std::to_string(config.window_frames));
    }
    ForwardCache cache;
    cache.frames = sample.frames;
    cache.x = embed_lookup(sample, params.embedding, config.codec);
    if (config.positional_encoding) {
        const Matrix pe = positional_encoding(sample.length(), config.frame_dim());
        for (std::size_t i = 0; i < pe.size(); ++i) cache.x.data[i] += pe.data[i];
    }
    cache.heads.reserve(config.heads);
    for (std::size_t h = 0; h < config.heads; ++h) {
        cache.heads.push_back(
            attention_head(cache.x, params.query[h], params.key[h], params.value[h], config.scaled_attention));
    }
    cache.features = concat_heads(cache.heads);
    cache.dropout_scale = std::move(dropout_scale);
    cache.logit = output_logit(cache.features.data, params.output_weight, params.output_bias, cache.dropout_scale);
    if (!std::isfinite(cache.logit)) throw NonFiniteActivation("non-finite output logit");
    cache.prediction = sigmoid(cache.logit);
    return cache;
}

}  // namespace

std::pair<double, ForwardCache> forward(const QisSample& sample, const ModelParams& params,
                                        const ModelConfig& config, Mode mode, Rng* rng) {
    std::vector<double> scale;
    if (mode == Mode::Train) {
        if (rng == nullptr) throw Error("train-mode forward needs a random generator for dropout");
        scale = make_dropout_scale(config.output_length(), config.dropout_rate, *rng);
    }
    ForwardCache cache = forward_with_mask(sample, params, config, std::move(scale));
    const double y = cache.prediction;
    return {y, std::move(cache)};
}

double bce_from_logit(double logit, Label label) {
    const double y = label == Label::Stego ? 1.0 : 0.0;
    return std::max(logit, 0.0) - y * logit + std::log1p(std::exp(-std::abs(logit)));
}

std::pair<double, Gradients> backward(const ForwardCache& cache, Label label, const ModelParams& params,
                                      const ModelConfig& config) {
    const std::size_t t_len = cache.x.rows;
    const std::size_t dh = config.head_dim;
    const std::size_t width = config.feature_width();
    const double y = label == Label::Stego ? 1.0 : 0.0;
    const double loss = bce_from_logit(cache.logit, label);

    Gradients grads(config);
    // dL/dz of sigmoid + cross-entropy.
    const double dz = 1.0 / (1.0 + std::exp(-cache.logit)) - y;
    const bool dropout = !cache.dropout_scale.empty();

    std::vector<double> dfeat(cache.features.size());
    for (std::size_t i = 0; i < dfeat.size(); ++i) {
        const double s = dropout ? cache.dropout_scale[i] : 1.0;
        grads.output_weight[i] = dz * cache.features.data[i] * s;
        dfeat[i] = dz * params.output_weight[i] * s;
    }
    grads.output_bias = dz;

    const double logit_scale = config.scaled_attention ? 1.0 / std::sqrt(static_cast<double>(dh)) : 1.0;
    Matrix dx(t_len, config.frame_dim());
    for (std::size_t h = 0; h < config.heads; ++h) {
        const HeadCache& hc = cache.heads[h];
        Matrix d_out(t_len, dh);
        for (std::size_t t = 0; t < t_len; ++t) {
            for (std::size_t j = 0; j < dh; ++j) d_out(t, j) = dfeat[t * width + h * dh + j];
        }
        const Matrix d_weights = matmul_a_bt(d_out, hc.value);  // T x T
        const Matrix d_value = matmul_at_b(hc.weights, d_out);  // T x d'

        // Softmax Jacobian, row by row.
        Matrix d_logits(t_len, t_len);
        for (std::size_t m = 0; m < t_len; ++m) {
            double dot = 0.0;
            for (std::size_t k = 0; k < t_len; ++k) dot += hc.weights(m, k) * d_weights(m, k);
            for (std::size_t k = 0; k < t_len; ++k) {
                const bool clamped = hc.clamped[m * t_len + k] != 0;
                d_logits(m, k) = clamped ? 0.0 : hc.weights(m, k) * (d_weights(m, k) - dot) * logit_scale;
            }
        }
        const Matrix d_query = matmul(d_logits, hc.key);       // T x d'
        const Matrix d_key = matmul_at_b(d_logits, hc.query);  // T x d'

        grads.query[h] = matmul_at_b(cache.x, d_query);
        grads.key[h] = matmul_at_b(cache.x, d_key);
        grads.value[h] = matmul_at_b(cache.x, d_value);

        const Matrix dxq = matmul_a_bt(d_query, params.query[h]);
        const Matrix dxk = matmul_a_bt(d_key, params.key[h]);
        const Matrix dxv = matmul_a_bt(d_value, params.value[h]);
        for (std::size_t i = 0; i < dx.size(); ++i) dx.data[i] += dxq.data[i] + dxk.data[i] + dxv.data[i];
    }

    const std::size_t e = config.embedding_size;
    for (std::size_t t = 0; t < t_len; ++t) {
        for (std::size_t p = 0; p < kPositions; ++p) {
            auto dst = grads.embedding.row(config.codec.vocab_offset(p) + cache.frames[t][p]);
            const auto src = dx.row(t).subspan(p * e, e);
            for (std::size_t i = 0; i < e; ++i) dst[i] += src[i];
        }
    }

    for (auto tensor : std::as_const(grads).tensors()) {
        if (!all_finite(tensor)) throw NonFiniteGradient("non-finite gradient");
    }
    if (!std::isfinite(loss)) throw NonFiniteGradient("non-finite loss");
    return {loss, std::move(grads)};
}

ModelConfig small_check_config() {
    ModelConfig c;
    c.embedding_size = 6;
    c.heads = 2;
    c.head_dim = 3;
    c.window_frames = 4;
    return c;
}

std::string GradCheckReport::worst() const {
    std::string name;
    double worst_err = -1.0;
    for (const auto& e : entries) {
        if (e.max_relative_error > worst_err) {
            worst_err = e.max_relative_error;
            name = e.tensor;
        }
    }
    return name;
}

GradCheckReport grad_check(const ModelConfig& config, std::uint64_t seed, const GradCheckOptions& options) {
    config.validate();
    ModelParams params = init_params(config, derive_seed(seed, {0}));
    Rng rng(derive_seed(seed, {1}));
    for (auto& w : params.output_weight) w = uniform(rng, -1.0, 1.0);
    params.output_bias = uniform(rng, -0.5, 0.5);

    QisSample sample;
    sample.frames.resize(config.window_frames);
    for (auto& f : sample.frames) {
        for (std::size_t p = 0; p < kPositions; ++p) {
            f[p] = static_cast<std::uint32_t>(rng() % config.codec.codebook_sizes[p]);
        }
    }
    const Label label = (rng() & 1U) ? Label::Stego : Label::Cover;
    std::vector<double> mask;
    if (options.with_dropout) mask = make_dropout_scale(config.output_length(), config.dropout_rate, rng);

    const ForwardCache cache = forward_with_mask(sample, params, config, mask);
    auto [loss, grads] = backward(cache, label, params, config);
    (void)loss;
    if (options.corrupt) options.corrupt(grads);

    auto loss_at = [&](const ModelParams& p) {
        return bce_from_logit(forward_with_mask(sample, p, config, mask).logit, label);
    };

    GradCheckReport report;
    report.tolerance = options.tolerance;
    const auto names = ParamTensors::tensor_names(config.heads);
    auto param_tensors = params.tensors();
    const auto grad_tensors = std::as_const(grads).tensors();
    for (std::size_t ti = 0; ti < param_tensors.size(); ++ti) {
        GradCheckEntry entry;
        entry.tensor = names[ti];
        for (std::size_t i = 0; i < param_tensors[ti].size(); ++i) {
            double& theta = param_tensors[ti][i];
            const double saved = theta;
            theta = saved + options.epsilon;
            const double up = loss_at(params);
            theta = saved - options.epsilon;
            const double down = loss_at(params);
            theta = saved;
            const double numeric = (up - down) / (2.0 * options.epsilon);
            const double analytic = grad_tensors[ti][i];
            const double denom = std::max({std::abs(numeric), std::abs(analytic), 1e-6});
            entry.max_relative_error = std::max(entry.max_relative_error, std::abs(numeric - analytic) / denom);
            ++entry.checked;
        }
        report.entries.push_back(entry);
    }
    report.passed = std::all_of(report.entries.begin(), report.entries.end(),
                                [&](const GradCheckEntry& e) { return e.max_relative_error < options.tolerance; });
    return report;
}

}  // namespace stegattn
