#include <bit>
#include <fstream>
#include <istream>
#include <ostream>

#include "stegattn/errors.hpp"
#include "stegattn/fcem.hpp"
#include "text_io.hpp"

namespace stegattn {

namespace {

constexpr std::string_view kCheckpointMagic = "FCEM1";

void put_f64(std::ostream& out, double v) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    char bytes[8];
    for (int i = 0; i < 8; ++i) bytes[i] = static_cast<char>((bits >> (8 * i)) & 0xFFU);
    out.write(bytes, 8);
}

}  // namespace

void write_checkpoint(const ModelConfig& config, const ModelParams& params, std::ostream& out) {
    config.validate();
    if (params.scalar_count() != parameter_count(config)) throw ShapeMismatch("parameters do not match config");
    const auto& cs = config.codec.codebook_sizes;
    out << kCheckpointMagic << '\n'
        << "codec " << cs[0] << ' ' << cs[1] << ' ' << cs[2] << ' '
        << detail::format_double(config.codec.frame_duration_ms) << '\n'
        << "embedding_size " << config.embedding_size << '\n'
        << "heads " << config.heads << '\n'
        << "head_dim " << config.head_dim << '\n'
        << "window_frames " << config.window_frames << '\n'
        << "dropout_rate " << detail::format_double(config.dropout_rate) << '\n'
        << "scaled_attention " << (config.scaled_attention ? 1 : 0) << '\n'
        << "positional_encoding " << (config.positional_encoding ? 1 : 0) << '\n'
        << "scalars " << params.scalar_count() << '\n'
        << "end\n";
    for (auto tensor : params.tensors()) {
        for (double v : tensor) put_f64(out, v);
    }
}

void write_checkpoint(const ModelConfig& config, const ModelParams& params, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot open " + path.string() + " for writing");
    write_checkpoint(config, params, out);
    if (!out) throw Error("failed writing " + path.string());
}

std::pair<ModelConfig, ModelParams> read_checkpoint(std::istream& in) {
    detail::LineReader reader(in);
    if (reader.next("magic") != kCheckpointMagic) throw FormatError(1, 0, "bad magic, expected FCEM1");
    ModelConfig config;
    auto codec = reader.keyed("codec", 4);
    for (std::size_t p = 0; p < kPositions; ++p) {
        config.codec.codebook_sizes[p] = reader.number<std::size_t>(codec[p]);
    }
    config.codec.frame_duration_ms = reader.number<double>(codec[3]);
    config.embedding_size = reader.number<std::size_t>(reader.keyed("embedding_size", 1)[0]);
    config.heads = reader.number<std::size_t>(reader.keyed("heads", 1)[0]);
    config.head_dim = reader.number<std::size_t>(reader.keyed("head_dim", 1)[0]);
    config.window_frames = reader.number<std::size_t>(reader.keyed("window_frames", 1)[0]);
    config.dropout_rate = reader.number<double>(reader.keyed("dropout_rate", 1)[0]);
    config.scaled_attention = reader.number<int>(reader.keyed("scaled_attention", 1)[0]) != 0;
    config.positional_encoding = reader.number<int>(reader.keyed("positional_encoding", 1)[0]) != 0;
    const auto scalars = reader.number<std::size_t>(reader.keyed("scalars", 1)[0]);
    if (reader.next("end") != "end") reader.fail("expected 'end'");
    try {
        config.validate();
    } catch (const Error& e) {
        reader.fail(e.what());
    }
    if (scalars != parameter_count(config)) reader.fail("scalar count does not match the model configuration");

    ModelParams params(config);
    std::size_t offset = reader.offset();
    for (auto tensor : params.tensors()) {
        for (double& v : tensor) {
            unsigned char bytes[8];
            if (!in.read(reinterpret_cast<char*>(bytes), 8)) {
                throw FormatError(0, offset, "truncated tensor data");
            }
            std::uint64_t bits = 0;
            for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
            v = std::bit_cast<double>(bits);
            offset += 8;
        }
    }
    if (in.peek() != std::char_traits<char>::eof()) throw FormatError(0, offset, "trailing bytes after tensor data");
    return {config, std::move(params)};
}

std::pair<ModelConfig, ModelParams> read_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path.string());
    return read_checkpoint(in);
}

}  // namespace stegattn
