#include "stegattn/kernels.hpp"

#include <algorithm>
#include <cmath>

#include "clamp_counter.hpp"
#include "fast_exp.hpp"
#include "parallel.hpp"
#include "small_gemm.hpp"
#include "stegattn/errors.hpp"
#include "stegattn/rng.hpp"

namespace stegattn::kernels {

namespace {

inline double dot(const double* __restrict__ a, const double* __restrict__ b, std::size_t n) {
    double acc = 0.0;
#pragma omp simd reduction(+ : acc)
    for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
    return acc;
}

inline void axpy(double s, const double* __restrict__ x, double* __restrict__ y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += s * x[i];
}

// Row r of `out` = row r of `rows` times the block of `weights` starting at
// row `first` (rows.cols rows tall).
void project_rows(const Matrix& rows, std::size_t row_begin, std::size_t row_end, const Matrix& weights,
                  std::size_t first, Matrix& out) {
    const std::size_t k = rows.cols;
    const std::size_t w = weights.cols;
    const auto n = static_cast<std::ptrdiff_t>(row_end - row_begin);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t ii = 0; ii < n; ++ii) {
        const std::size_t r = row_begin + static_cast<std::size_t>(ii);
        double* dst = out.row(r).data();
        std::fill(dst, dst + w, 0.0);
        const auto src = rows.row(r);
        for (std::size_t i = 0; i < k; ++i) axpy(src[i], weights.row(first + i).data(), dst, w);
    }
}

}  // namespace

ProjectionTables::ProjectionTables(const ModelParams& params, const ModelConfig& config) {
    const std::size_t d = config.frame_dim();
    const std::size_t dh = config.head_dim;
    const std::size_t hw = config.heads * dh;
    stacked_ = Matrix(d, 3 * hw);
    for (std::size_t c = 0; c < d; ++c) {
        auto row = stacked_.row(c);
        for (std::size_t h = 0; h < config.heads; ++h) {
            for (std::size_t j = 0; j < dh; ++j) {
                row[h * dh + j] = params.query[h](c, j);
                row[hw + h * dh + j] = params.key[h](c, j);
                row[2 * hw + h * dh + j] = params.value[h](c, j);
            }
        }
    }
    token_ = Matrix(config.vocab_size(), 3 * hw);
    for (std::size_t p = 0; p < kPositions; ++p) {
        const std::size_t begin = config.codec.vocab_offset(p);
        project_rows(params.embedding, begin, begin + config.codec.codebook_sizes[p], stacked_,
                     p * config.embedding_size, token_);
    }
    position_ = Matrix(config.window_frames, 3 * hw);
    if (config.positional_encoding) {
        encoding_ = positional_encoding(config.window_frames, d);
        project_rows(encoding_, 0, config.window_frames, stacked_, 0, position_);
    }
}

Workspace::Workspace(const ModelConfig& config)
    : stride(detail::padded(config.window_frames)),
      qkv(3 * config.window_frames * config.feature_width()),
      d_qkv(qkv.size()),
      weights(config.heads * config.window_frames * stride),
      clamped(weights.size()),
      features(config.output_length()),
      d_features(config.output_length()),
      d_weights(config.window_frames * stride),
      transposed(config.head_dim * stride) {}

namespace {

// Offset of block (s = 0 query, 1 key, 2 value; head h) in Workspace::qkv.
inline std::size_t block(std::size_t s, std::size_t h, const ModelConfig& config) {
    return (s * config.heads + h) * config.window_frames * config.head_dim;
}

// Fills ws.qkv, ws.weights, ws.clamped and ws.features for one sample.
void forward_features(const QisSample& sample, const ModelConfig& config, const ProjectionTables& tables,
                      Workspace& ws) {
    const std::size_t t_len = config.window_frames;
    if (sample.length() != t_len) {
        throw ShapeMismatch("sample has " + std::to_string(sample.length()) + " frames, model expects " +
                            std::to_string(t_len));
    }
    const std::size_t dh = config.head_dim;
    const std::size_t hw = config.feature_width();
    const std::size_t blocks = 3 * config.heads;
    std::size_t offsets[kPositions];
    for (std::size_t p = 0; p < kPositions; ++p) offsets[p] = config.codec.vocab_offset(p);

    for (std::size_t t = 0; t < t_len; ++t) {
        const double* a = tables.token(offsets[0] + sample.frames[t][0]).data();
        const double* b = tables.token(offsets[1] + sample.frames[t][1]).data();
        const double* c = tables.token(offsets[2] + sample.frames[t][2]).data();
        const double* pe = tables.position(t).data();
        for (std::size_t bi = 0; bi < blocks; ++bi) {
            double* __restrict__ dst = ws.qkv.data() + (bi * t_len + t) * dh;
            const std::size_t o = bi * dh;
#pragma omp simd
            for (std::size_t j = 0; j < dh; ++j) dst[j] = pe[o + j] + a[o + j] + b[o + j] + c[o + j];
        }
    }

    const double scale = config.scaled_attention ? 1.0 / std::sqrt(static_cast<double>(dh)) : 1.0;
    const std::size_t ld = ws.stride;
    std::uint64_t clamps = 0;
    for (std::size_t h = 0; h < config.heads; ++h) {
        const double* q_blk = ws.qkv.data() + block(0, h, config);
        const double* k_blk = ws.qkv.data() + block(1, h, config);
        const double* v_blk = ws.qkv.data() + block(2, h, config);
        double* alpha = ws.weights.data() + h * t_len * ld;
        std::uint8_t* clamped = ws.clamped.data() + h * t_len * ld;
        detail::transpose_padded(k_blk, t_len, dh, dh, ws.transposed.data(), ld);
        detail::gemm<false>(t_len, ld, dh, q_blk, dh, ws.transposed.data(), ld, alpha, ld);
        for (std::size_t m = 0; m < t_len; ++m) {
            double* arow = alpha + m * ld;
            std::uint8_t* crow = clamped + m * ld;
            double mx = -kLogitClamp;
            double probe = 0.0;  // NaN iff some logit is not finite
            std::uint64_t row_clamps = 0;
#pragma omp simd reduction(max : mx) reduction(+ : probe, row_clamps)
            for (std::size_t k = 0; k < t_len; ++k) {
                const double v = arow[k] * scale;
                probe += v * 0.0;
                const bool out = v > kLogitClamp || v < -kLogitClamp;
                crow[k] = static_cast<std::uint8_t>(out);
                row_clamps += out;
                const double c = std::min(std::max(v, -kLogitClamp), kLogitClamp);
                arow[k] = c;
                mx = std::max(mx, c);
            }
            if (probe != 0.0) throw NonFiniteActivation("non-finite attention logit");
            clamps += row_clamps;
            double sum = 0.0;
#pragma omp simd reduction(+ : sum)
            for (std::size_t k = 0; k < t_len; ++k) {
                arow[k] = detail::exp_nonpositive(arow[k] - mx);
                sum += arow[k];
            }
            const double inv = 1.0 / sum;
            for (std::size_t k = 0; k < t_len; ++k) arow[k] *= inv;
            for (std::size_t k = t_len; k < ld; ++k) {
                arow[k] = 0.0;
                crow[k] = 0;
            }
        }
        detail::gemm<false>(t_len, dh, t_len, alpha, ld, v_blk, dh, ws.features.data() + h * dh, hw);
    }
    if (clamps) detail::add_logit_clamps(clamps);
}

}  // namespace

double infer_logit(const QisSample& sample, const ModelParams& params, const ModelConfig& config,
                   const ProjectionTables& tables, Workspace& ws) {
    forward_features(sample, config, tables, ws);
    return params.output_bias + dot(params.output_weight.data(), ws.features.data(), ws.features.size());
}

std::vector<double> predict_batch(std::span<const QisSample* const> samples, const ModelParams& params,
                                  const ModelConfig& config, Exec exec) {
    const ProjectionTables tables(params, config);
    std::vector<double> out(samples.size());
    detail::ExceptionSlot error;
    const auto n = static_cast<std::ptrdiff_t>(samples.size());
#pragma omp parallel if (exec == Exec::Parallel)
    {
        Workspace ws(config);
#pragma omp for schedule(static)
        for (std::ptrdiff_t i = 0; i < n; ++i) {
            error.run([&] {
                const auto idx = static_cast<std::size_t>(i);
                out[idx] = sigmoid(infer_logit(*samples[idx], params, config, tables, ws));
            });
        }
    }
    error.rethrow();
    return out;
}

std::vector<double> predict_batch(std::span<const QisSample> samples, const ModelParams& params,
                                  const ModelConfig& config, Exec exec) {
    std::vector<const QisSample*> refs;
    refs.reserve(samples.size());
    for (const auto& s : samples) refs.push_back(&s);
    return predict_batch(std::span<const QisSample* const>(refs), params, config, exec);
}

namespace {

struct Accumulator {
    Accumulator(const ModelConfig& config, std::size_t width)
        : token(config.vocab_size(), width),
          position(config.window_frames, width),
          output_weight(config.output_length(), 0.0) {}

    Matrix token;     // sum of d(qkv)_t over every occurrence of a vocabulary row
    Matrix position;  // sum of d(qkv)_t per frame index
    std::vector<double> output_weight;
    double output_bias = 0.0;
    double loss = 0.0;

    void add(const Accumulator& o) {
        for (std::size_t i = 0; i < token.size(); ++i) token.data[i] += o.token.data[i];
        for (std::size_t i = 0; i < position.size(); ++i) position.data[i] += o.position.data[i];
        for (std::size_t i = 0; i < output_weight.size(); ++i) output_weight[i] += o.output_weight[i];
        output_bias += o.output_bias;
        loss += o.loss;
    }
};

void accumulate_sample(const LabeledRef& ref, std::span<const double> dropout_scale, const ModelParams& params,
                       const ModelConfig& config, const ProjectionTables& tables, Workspace& ws, Accumulator& acc) {
    forward_features(*ref.sample, config, tables, ws);
    const std::size_t t_len = config.window_frames;
    const std::size_t dh = config.head_dim;
    const std::size_t hw = config.feature_width();
    const std::size_t n_feat = ws.features.size();

    double z = params.output_bias;
    for (std::size_t i = 0; i < n_feat; ++i) z += params.output_weight[i] * (ws.features[i] * dropout_scale[i]);
    if (!std::isfinite(z)) throw NonFiniteActivation("non-finite output logit");
    const double y = ref.label == Label::Stego ? 1.0 : 0.0;
    acc.loss += bce_from_logit(z, ref.label);
    const double dz = 1.0 / (1.0 + std::exp(-z)) - y;
    for (std::size_t i = 0; i < n_feat; ++i) {
        acc.output_weight[i] += dz * ws.features[i] * dropout_scale[i];
        ws.d_features[i] = dz * params.output_weight[i] * dropout_scale[i];
    }
    acc.output_bias += dz;

    const double scale = config.scaled_attention ? 1.0 / std::sqrt(static_cast<double>(dh)) : 1.0;
    const std::size_t ld = ws.stride;
    double* d_logits = ws.d_weights.data();
    for (std::size_t h = 0; h < config.heads; ++h) {
        const double* alpha = ws.weights.data() + h * t_len * ld;
        const std::uint8_t* clamped = ws.clamped.data() + h * t_len * ld;
        const double* q_blk = ws.qkv.data() + block(0, h, config);
        const double* k_blk = ws.qkv.data() + block(1, h, config);
        const double* v_blk = ws.qkv.data() + block(2, h, config);
        const double* d_out = ws.d_features.data() + h * dh;
        // d alpha = d_out V^T, d V = alpha^T d_out
        detail::transpose_padded(v_blk, t_len, dh, dh, ws.transposed.data(), ld);
        detail::gemm<false>(t_len, ld, dh, d_out, hw, ws.transposed.data(), ld, d_logits, ld);
        detail::gemm<true>(t_len, dh, t_len, alpha, ld, d_out, hw, ws.d_qkv.data() + block(2, h, config), dh);
        // softmax backward; clamped logits pass no gradient
        for (std::size_t m = 0; m < t_len; ++m) {
            const double* arow = alpha + m * ld;
            const std::uint8_t* crow = clamped + m * ld;
            double* drow = d_logits + m * ld;
            double row_dot = 0.0;
            for (std::size_t k = 0; k < t_len; ++k) row_dot += arow[k] * drow[k];
            for (std::size_t k = 0; k < t_len; ++k) {
                drow[k] = crow[k] ? 0.0 : arow[k] * (drow[k] - row_dot) * scale;
            }
        }
        // d Q = d_logits K, d K = d_logits^T Q
        detail::gemm<false>(t_len, dh, t_len, d_logits, ld, k_blk, dh, ws.d_qkv.data() + block(0, h, config), dh);
        detail::gemm<true>(t_len, dh, t_len, d_logits, ld, q_blk, dh, ws.d_qkv.data() + block(1, h, config), dh);
    }

    const std::size_t blocks = 3 * config.heads;
    for (std::size_t t = 0; t < t_len; ++t) {
        double* dst[kPositions];
        for (std::size_t p = 0; p < kPositions; ++p) {
            dst[p] = acc.token.row(config.codec.vocab_offset(p) + ref.sample->frames[t][p]).data();
        }
        double* pos = acc.position.row(t).data();
        for (std::size_t bi = 0; bi < blocks; ++bi) {
            const double* __restrict__ src = ws.d_qkv.data() + (bi * t_len + t) * dh;
            const std::size_t o = bi * dh;
            for (std::size_t p = 0; p < kPositions; ++p) {
                double* __restrict__ d = dst[p] + o;
#pragma omp simd
                for (std::size_t j = 0; j < dh; ++j) d[j] += src[j];
            }
            if (config.positional_encoding) {
                double* __restrict__ d = pos + o;
#pragma omp simd
                for (std::size_t j = 0; j < dh; ++j) d[j] += src[j];
            }
        }
    }
}

// Turns summed per-row upstream gradients into parameter gradients.
Gradients finalize(const Accumulator& acc, const ModelParams& params, const ModelConfig& config,
                   const ProjectionTables& tables) {
    const std::size_t d = config.frame_dim();
    const std::size_t e = config.embedding_size;
    const std::size_t width = tables.width();
    const Matrix& stacked = tables.stacked();

    // d stacked[c][j] = sum_r x_r[c] * token[r][j] + sum_t PE[t][c] * position[t][j]
    Matrix d_stacked(d, width);
    const auto d_rows = static_cast<std::ptrdiff_t>(d);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t ci = 0; ci < d_rows; ++ci) {
        const auto c = static_cast<std::size_t>(ci);
        const std::size_t p = c / e;
        const std::size_t i = c % e;
        double* dst = d_stacked.row(c).data();
        const std::size_t begin = config.codec.vocab_offset(p);
        const std::size_t end = begin + config.codec.codebook_sizes[p];
        for (std::size_t r = begin; r < end; ++r) {
            const double s = params.embedding(r, i);
            if (s != 0.0) axpy(s, acc.token.row(r).data(), dst, width);
        }
        if (config.positional_encoding) {
            for (std::size_t t = 0; t < config.window_frames; ++t) {
                axpy(tables.encoding()(t, c), acc.position.row(t).data(), dst, width);
            }
        }
    }

    Gradients g(config);
    // dV[r][i] = stacked[p*e + i] . token[r]
    const auto vocab = static_cast<std::ptrdiff_t>(config.vocab_size());
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t ri = 0; ri < vocab; ++ri) {
        const auto r = static_cast<std::size_t>(ri);
        std::size_t p = 0;
        while (p + 1 < kPositions && r >= config.codec.vocab_offset(p + 1)) ++p;
        const double* up = acc.token.row(r).data();
        for (std::size_t i = 0; i < e; ++i) g.embedding(r, i) = dot(stacked.row(p * e + i).data(), up, width);
    }

    const std::size_t dh = config.head_dim;
    const std::size_t hw = config.feature_width();
    for (std::size_t c = 0; c < d; ++c) {
        const auto row = d_stacked.row(c);
        for (std::size_t h = 0; h < config.heads; ++h) {
            for (std::size_t j = 0; j < dh; ++j) {
                g.query[h](c, j) = row[h * dh + j];
                g.key[h](c, j) = row[hw + h * dh + j];
                g.value[h](c, j) = row[2 * hw + h * dh + j];
            }
        }
    }
    g.output_weight = acc.output_weight;
    g.output_bias = acc.output_bias;
    return g;
}

}  // namespace

BatchGradients batch_gradients(std::span<const LabeledRef> batch, const ModelParams& params,
                               const ModelConfig& config, std::uint64_t dropout_seed, Exec exec) {
    const ProjectionTables tables(params, config);
    const std::size_t n = batch.size();
    const std::size_t chunks = (n + kChunkSize - 1) / kChunkSize;
    std::vector<Accumulator> partial(chunks, Accumulator(config, tables.width()));
    detail::ExceptionSlot error;
    const auto n_chunks = static_cast<std::ptrdiff_t>(chunks);
#pragma omp parallel if (exec == Exec::Parallel)
    {
        Workspace ws(config);
#pragma omp for schedule(static)
        for (std::ptrdiff_t ci = 0; ci < n_chunks; ++ci) {
            error.run([&] {
                const auto c = static_cast<std::size_t>(ci);
                const std::size_t end = std::min(n, (c + 1) * kChunkSize);
                for (std::size_t i = c * kChunkSize; i < end; ++i) {
                    Rng rng(derive_seed(dropout_seed, {i}));
                    const auto mask = make_dropout_scale(config.output_length(), config.dropout_rate, rng);
                    accumulate_sample(batch[i], mask, params, config, tables, ws, partial[c]);
                }
            });
        }
    }
    error.rethrow();

    BatchGradients out;
    out.count = n;
    if (n == 0) {
        out.grads = Gradients(config);
        return out;
    }
    Accumulator& total = partial.front();
    for (std::size_t c = 1; c < chunks; ++c) total.add(partial[c]);
    out.grads = finalize(total, params, config, tables);
    out.grads.scale(1.0 / static_cast<double>(n));
    out.loss_sum = total.loss;
    for (auto t : std::as_const(out.grads).tensors()) {
        if (!all_finite(t)) throw NonFiniteGradient("non-finite batch gradient");
    }
    return out;
}

BatchGradients batch_gradients_reference(std::span<const LabeledRef> batch, const ModelParams& params,
                                         const ModelConfig& config, std::uint64_t dropout_seed) {
    BatchGradients out;
    out.grads = Gradients(config);
    out.count = batch.size();
    for (std::size_t i = 0; i < batch.size(); ++i) {
        Rng rng(derive_seed(dropout_seed, {i}));
        auto [y, cache] = forward(*batch[i].sample, params, config, Mode::Train, &rng);
        (void)y;
        auto [loss, g] = backward(cache, batch[i].label, params, config);
        out.loss_sum += loss;
        out.grads.add(g);
    }
    if (!batch.empty()) out.grads.scale(1.0 / static_cast<double>(batch.size()));
    return out;
}

}  // namespace stegattn::kernels
