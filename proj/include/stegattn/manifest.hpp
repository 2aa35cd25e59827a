#pragma once

// Run manifests: enough to re-run a command and check its outputs.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace stegattn {

inline constexpr std::string_view kToolVersion = "0.1.0";

/// 64-bit FNV-1a over the file's bytes.
std::uint64_t fnv1a64_file(const std::filesystem::path& path);
std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t state = 0xcbf29ce484222325ULL);

struct ArtifactHash {
    std::string role;  // e.g. "covers", "checkpoint"
    std::string path;
    std::uint64_t fnv1a = 0;
    std::uint64_t bytes = 0;
};

struct RunManifest {
    std::string command;
    /// Every flag with its effective value, including defaults.
    std::map<std::string, std::string> flags;
    std::uint64_t root_seed = 0;
    std::vector<ArtifactHash> inputs;
    std::vector<ArtifactHash> outputs;
    std::string tool_version{kToolVersion};

    void add_input(std::string role, const std::filesystem::path& path);
    void add_output(std::string role, const std::filesystem::path& path);
    /// Pretty JSON with sorted keys and no timestamps.
    std::string to_json() const;
    static RunManifest from_json(std::string_view text);
    void write(const std::filesystem::path& path) const;
};

}  // namespace stegattn
