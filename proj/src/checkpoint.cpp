#include "dmsp/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "dmsp/error.hpp"

namespace dmsp {

namespace {

constexpr char kMagic[8] = {'D', 'M', 'S', 'P', 'C', 'K', 'P', '1'};

void write_doubles(std::ofstream& out, const std::vector<double>& v) {
    static_assert(sizeof(double) == 8);
    if constexpr (std::endian::native == std::endian::little) {
        out.write(reinterpret_cast<const char*>(v.data()),
                  static_cast<std::streamsize>(v.size() * 8));
    } else {
        for (double d : v) {
            std::uint64_t bits;
            std::memcpy(&bits, &d, 8);
            char b[8];
            for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((bits >> (8 * i)) & 0xFF);
            out.write(b, 8);
        }
    }
}

void read_doubles(std::ifstream& in, std::vector<double>& v, std::size_t count) {
    v.resize(count);
    if constexpr (std::endian::native == std::endian::little) {
        in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(count * 8));
    } else {
        for (std::size_t i = 0; i < count; ++i) {
            char b[8];
            in.read(b, 8);
            std::uint64_t bits = 0;
            for (int j = 0; j < 8; ++j)
                bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(b[j])) << (8 * j);
            std::memcpy(&v[i], &bits, 8);
        }
    }
    if (!in) throw data_error("checkpoint error", "truncated payload");
}

}  // namespace

const std::vector<double>* CheckpointExtras::array(const std::string& name) const {
    for (const auto& [n, v] : arrays)
        if (n == name) return &v;
    return nullptr;
}

void save_checkpoint(const ModelParams& params, const std::string& path,
                     const CheckpointExtras& extras) {
    nlohmann::json manifest;
    manifest["format"] = "dmsp-checkpoint";
    manifest["version"] = 1;
    manifest["hidden_dim"] = params.hidden_dim;
    manifest["num_layers"] = params.num_layers;
    manifest["num_sources"] = params.num_sources;
    manifest["feature_dims"] = params.feature_dims;
    manifest["param_count"] = params.store.size();
    auto blocks = nlohmann::json::array();
    for (const auto& b : params.store.blocks())
        blocks.push_back({{"name", b.name},
                          {"kind", b.kind == ad::ParamStore::BlockKind::affine ? "affine" : "vector"},
                          {"out", b.out},
                          {"in", b.in}});
    manifest["blocks"] = std::move(blocks);
    manifest["extras"] = extras.meta;
    auto arr = nlohmann::json::array();
    for (const auto& [name, v] : extras.arrays)
        arr.push_back({{"name", name}, {"count", v.size()}});
    manifest["extra_arrays"] = std::move(arr);

    const std::string text = manifest.dump();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw data_error("file error", "cannot write " + path);
    out.write(kMagic, 8);
    const std::uint64_t len = text.size();
    char lenb[8];
    for (int i = 0; i < 8; ++i) lenb[i] = static_cast<char>((len >> (8 * i)) & 0xFF);
    out.write(lenb, 8);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    write_doubles(out, params.store.data());
    for (const auto& [name, v] : extras.arrays) write_doubles(out, v);
    if (!out) throw data_error("file error", "write failed for " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw data_error("file error", "cannot open " + path);
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, kMagic, 8) != 0)
        throw data_error("checkpoint error", "bad magic in " + path);
    char lenb[8];
    in.read(lenb, 8);
    std::uint64_t len = 0;
    for (int i = 0; i < 8; ++i)
        len |= static_cast<std::uint64_t>(static_cast<unsigned char>(lenb[i])) << (8 * i);
    std::string text(len, '\0');
    in.read(text.data(), static_cast<std::streamsize>(len));
    if (!in) throw data_error("checkpoint error", "truncated manifest");

    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw data_error("checkpoint error", e.what());
    }
    if (manifest.value("format", "") != "dmsp-checkpoint" || manifest.value("version", 0) != 1)
        throw data_error("checkpoint error", "unsupported format/version");

    LoadedCheckpoint loaded{
        ModelParams::create(manifest.at("num_sources").get<int>(),
                            manifest.at("feature_dims").get<std::vector<int>>(),
                            manifest.at("hidden_dim").get<int>(),
                            manifest.at("num_layers").get<int>(), 0),
        {}};
    if (loaded.params.store.size() != manifest.at("param_count").get<std::size_t>())
        throw data_error("checkpoint error", "parameter count mismatch");
    read_doubles(in, loaded.params.store.data(), loaded.params.store.size());

    loaded.extras.meta = manifest.value("extras", nlohmann::json::object());
    for (const auto& a : manifest.value("extra_arrays", nlohmann::json::array())) {
        std::vector<double> v;
        read_doubles(in, v, a.at("count").get<std::size_t>());
        loaded.extras.arrays.emplace_back(a.at("name").get<std::string>(), std::move(v));
    }
    return loaded;
}

}  // namespace dmsp
