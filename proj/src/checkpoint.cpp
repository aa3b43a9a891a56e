#include "diffuasr/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace diffuasr::nn {

namespace {

constexpr char kMagic[8] = {'D', 'A', 'S', 'R', 'C', 'K', 'P', '1'};

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O writes host byte order and assumes it is little-endian");

template <typename T>
constexpr const char* dtype_name() {
    return sizeof(T) == 4 ? "f32" : "f64";
}

void write_u64(std::ostream& os, std::uint64_t v) { os.write(reinterpret_cast<const char*>(&v), 8); }

std::uint64_t read_u64(std::istream& is) {
    std::uint64_t v = 0;
    is.read(reinterpret_cast<char*>(&v), 8);
    return v;
}

struct Opened {
    std::ifstream in;
    nlohmann::json manifest;
    std::streamoff data_start = 0;
};

Opened open_checkpoint(const std::filesystem::path& path) {
    Opened o;
    o.in.open(path, std::ios::binary);
    if (!o.in) throw IoError("cannot open checkpoint " + path.string());
    char magic[8];
    o.in.read(magic, 8);
    if (!o.in || std::memcmp(magic, kMagic, 8) != 0) throw IoError("not a checkpoint file: " + path.string());
    const std::uint64_t len = read_u64(o.in);
    std::string text(len, '\0');
    o.in.read(text.data(), static_cast<std::streamsize>(len));
    if (!o.in) throw IoError("truncated checkpoint manifest: " + path.string());
    o.manifest = nlohmann::json::parse(text);
    o.data_start = static_cast<std::streamoff>(16 + len);
    return o;
}

}  // namespace

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const ParameterSet<T>& params,
                     const nlohmann::json& config) {
    nlohmann::json manifest;
    manifest["config"] = config;
    manifest["tensors"] = nlohmann::json::array();
    std::uint64_t offset = 0;
    for (const auto& [name, var] : params.entries()) {
        const std::uint64_t nbytes = static_cast<std::uint64_t>(var.numel()) * sizeof(T);
        manifest["tensors"].push_back(
            {{"name", name}, {"shape", var.shape()}, {"dtype", dtype_name<T>()}, {"offset", offset}, {"nbytes", nbytes}});
        offset += nbytes;
    }
    const std::string text = manifest.dump();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint " + path.string());
    out.write(kMagic, 8);
    write_u64(out, text.size());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& [name, var] : params.entries())
        out.write(reinterpret_cast<const char*>(var.value().ptr()),
                  static_cast<std::streamsize>(var.numel() * static_cast<std::int64_t>(sizeof(T))));
    if (!out) throw IoError("write failed for checkpoint " + path.string());
}

template <typename T>
nlohmann::json load_checkpoint(const std::filesystem::path& path, ParameterSet<T>& params) {
    Opened o = open_checkpoint(path);
    for (auto& [name, var] : params.entries()) {
        const nlohmann::json* entry = nullptr;
        for (const auto& e : o.manifest["tensors"])
            if (e["name"] == name) entry = &e;
        if (!entry) throw IoError("checkpoint " + path.string() + " has no tensor '" + name + "'");
        const Shape shape = (*entry)["shape"].get<Shape>();
        if (shape != var.shape())
            throw ShapeError("checkpoint tensor '" + name + "' has shape " + shape_str(shape) + ", model expects " +
                             shape_str(var.shape()));
        const std::string dtype = (*entry)["dtype"];
        o.in.seekg(o.data_start + static_cast<std::streamoff>((*entry)["offset"].get<std::uint64_t>()));
        const auto n = static_cast<std::size_t>(var.numel());
        auto& dst = var.mutable_value();
        if (dtype == dtype_name<T>()) {
            o.in.read(reinterpret_cast<char*>(dst.ptr()), static_cast<std::streamsize>(n * sizeof(T)));
        } else if (dtype == "f32") {
            std::vector<float> buf(n);
            o.in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n * sizeof(float)));
            for (std::size_t i = 0; i < n; ++i) dst[static_cast<std::int64_t>(i)] = static_cast<T>(buf[i]);
        } else if (dtype == "f64") {
            std::vector<double> buf(n);
            o.in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n * sizeof(double)));
            for (std::size_t i = 0; i < n; ++i) dst[static_cast<std::int64_t>(i)] = static_cast<T>(buf[i]);
        } else {
            throw IoError("checkpoint tensor '" + name + "' has unknown dtype " + dtype);
        }
        if (!o.in) throw IoError("truncated checkpoint data for '" + name + "' in " + path.string());
    }
    return o.manifest["config"];
}

nlohmann::json read_checkpoint_manifest(const std::filesystem::path& path) { return open_checkpoint(path).manifest; }

template void save_checkpoint(const std::filesystem::path&, const ParameterSet<float>&, const nlohmann::json&);
template void save_checkpoint(const std::filesystem::path&, const ParameterSet<double>&, const nlohmann::json&);
template nlohmann::json load_checkpoint(const std::filesystem::path&, ParameterSet<float>&);
template nlohmann::json load_checkpoint(const std::filesystem::path&, ParameterSet<double>&);

}  // namespace diffuasr::nn
