#include "stegattn/manifest.hpp"

#include <cstdio>
#include <fstream>
#include <json.hpp>

#include "stegattn/errors.hpp"

namespace stegattn {

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t state) {
    for (unsigned char c : bytes) {
        state ^= c;
        state *= 0x100000001b3ULL;
    }
    return state;
}

std::uint64_t fnv1a64_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path.string());
    std::uint64_t h = 0xcbf29ce484222325ULL;
    char buf[1 << 16];
    while (in.read(buf, sizeof buf) || in.gcount() > 0) h = fnv1a64({buf, static_cast<std::size_t>(in.gcount())}, h);
    return h;
}

namespace {

ArtifactHash hash_artifact(std::string role, const std::filesystem::path& path) {
    return {std::move(role), path.string(), fnv1a64_file(path), std::filesystem::file_size(path)};
}

std::string hex(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

nlohmann::json artifacts_json(const std::vector<ArtifactHash>& list) {
    auto arr = nlohmann::json::array();
    for (const auto& a : list) {
        arr.push_back({{"role", a.role}, {"path", a.path}, {"fnv1a64", hex(a.fnv1a)}, {"bytes", a.bytes}});
    }
    return arr;
}

std::vector<ArtifactHash> artifacts_from(const nlohmann::json& arr) {
    std::vector<ArtifactHash> out;
    for (const auto& a : arr) {
        out.push_back({a.at("role").get<std::string>(), a.at("path").get<std::string>(),
                       std::stoull(a.at("fnv1a64").get<std::string>(), nullptr, 16), a.at("bytes").get<std::uint64_t>()});
    }
    return out;
}

}  // namespace

void RunManifest::add_input(std::string role, const std::filesystem::path& path) {
    inputs.push_back(hash_artifact(std::move(role), path));
}

void RunManifest::add_output(std::string role, const std::filesystem::path& path) {
    outputs.push_back(hash_artifact(std::move(role), path));
}

std::string RunManifest::to_json() const {
    nlohmann::json j;
    j["command"] = command;
    j["flags"] = flags;
    j["root_seed"] = root_seed;
    j["inputs"] = artifacts_json(inputs);
    j["outputs"] = artifacts_json(outputs);
    j["tool_version"] = tool_version;
    return j.dump(2) + "\n";
}

RunManifest RunManifest::from_json(std::string_view text) {
    try {
        const auto j = nlohmann::json::parse(text);
        RunManifest m;
        m.command = j.at("command").get<std::string>();
        m.flags = j.at("flags").get<std::map<std::string, std::string>>();
        m.root_seed = j.at("root_seed").get<std::uint64_t>();
        m.inputs = artifacts_from(j.at("inputs"));
        m.outputs = artifacts_from(j.at("outputs"));
        m.tool_version = j.at("tool_version").get<std::string>();
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(0, 0, std::string("bad manifest: ") + e.what());
    }
}

void RunManifest::write(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    out << to_json();
}

}  // namespace stegattn
