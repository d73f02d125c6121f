#include "tinydet/io.hpp"

#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>

#include "tinydet/errors.hpp"
#include "tinydet/rng.hpp"

namespace tinydet::io {

namespace fs = std::filesystem;

namespace {

constexpr char kGridMagic[4] = {'T', 'D', 'F', 'G'};
constexpr char kCheckpointMagic[4] = {'T', 'D', 'C', 'P'};
constexpr std::uint32_t kDtypeFloat64 = 1;

void write_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
}

void write_u64(std::ostream& os, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t read_u64(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

void write_f64_array(std::ostream& os, const double* data, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
        std::uint64_t bits;
        std::memcpy(&bits, &data[i], 8);
        write_u64(os, bits);
    }
}

void read_f64_array(std::istream& is, double* data, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
        const std::uint64_t bits = read_u64(is);
        std::memcpy(&data[i], &bits, 8);
    }
}

void write_string(std::ostream& os, const std::string& s) {
    write_u64(os, s.size());
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& is) {
    const std::uint64_t n = read_u64(is);
    std::string s(n, '\0');
    is.read(s.data(), static_cast<std::streamsize>(n));
    return s;
}

std::ofstream open_out(const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open for writing: " + path);
    return os;
}

std::ifstream open_in(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open for reading: " + path);
    return is;
}

}  // namespace

void write_float_grid(const std::string& path, const Tensor& grid) {
    int h = 0, w = 0;
    if (grid.ndim() == 2) {
        h = grid.dim(0);
        w = grid.dim(1);
    } else if (grid.ndim() == 3 && grid.dim(0) == 1) {
        h = grid.dim(1);
        w = grid.dim(2);
    } else {
        throw ShapeError("write_float_grid: expected [HxW] or [1xHxW], got " + grid.shape_str());
    }
    std::ofstream os = open_out(path);
    os.write(kGridMagic, 4);
    write_u32(os, static_cast<std::uint32_t>(h));
    write_u32(os, static_cast<std::uint32_t>(w));
    write_u32(os, kDtypeFloat64);
    write_f64_array(os, grid.data(), static_cast<std::size_t>(grid.size()));
    if (!os) throw IoError("failed writing float grid: " + path);
}

Tensor read_float_grid(const std::string& path) {
    std::ifstream is = open_in(path);
    char magic[4];
    is.read(magic, 4);
    if (std::memcmp(magic, kGridMagic, 4) != 0) {
        throw IoError("bad float grid magic in " + path);
    }
    const int h = static_cast<int>(read_u32(is));
    const int w = static_cast<int>(read_u32(is));
    const std::uint32_t dtype = read_u32(is);
    if (dtype != kDtypeFloat64) {
        throw IoError("unsupported float grid dtype tag " + std::to_string(dtype) + " in " +
                      path);
    }
    Tensor out({1, h, w});
    read_f64_array(is, out.data(), static_cast<std::size_t>(out.size()));
    if (!is) throw IoError("truncated float grid: " + path);
    return out;
}

void save_checkpoint(const std::string& path, const model::ParamStore& params,
                     const nlohmann::json& config_snapshot) {
    std::ofstream os = open_out(path);
    os.write(kCheckpointMagic, 4);
    write_u32(os, kCheckpointVersion);
    write_string(os, config_snapshot.dump());
    write_u64(os, static_cast<std::uint64_t>(params.count()));
    for (int i = 0; i < params.count(); ++i) {
        const Tensor& t = params.value(i);
        write_string(os, params.names()[static_cast<std::size_t>(i)]);
        write_u64(os, static_cast<std::uint64_t>(t.ndim()));
        for (int dm = 0; dm < t.ndim(); ++dm) {
            write_u64(os, static_cast<std::uint64_t>(t.dim(dm)));
        }
        write_f64_array(os, t.data(), static_cast<std::size_t>(t.size()));
    }
    if (!os) throw IoError("failed writing checkpoint: " + path);
}

nlohmann::json load_checkpoint(const std::string& path, model::ParamStore& params) {
    std::ifstream is = open_in(path);
    char magic[4];
    is.read(magic, 4);
    if (std::memcmp(magic, kCheckpointMagic, 4) != 0) {
        throw IoError("bad checkpoint magic in " + path);
    }
    const std::uint32_t version = read_u32(is);
    if (version != kCheckpointVersion) {
        throw IoError("unsupported checkpoint version " + std::to_string(version));
    }
    nlohmann::json snapshot = nlohmann::json::parse(read_string(is));
    const std::uint64_t count = read_u64(is);
    if (count != static_cast<std::uint64_t>(params.count())) {
        throw IoError("checkpoint has " + std::to_string(count) + " tensors, model expects " +
                      std::to_string(params.count()));
    }
    for (std::uint64_t i = 0; i < count; ++i) {
        const std::string name = read_string(is);
        const std::uint64_t ndim = read_u64(is);
        std::vector<int> shape;
        for (std::uint64_t d = 0; d < ndim; ++d) {
            shape.push_back(static_cast<int>(read_u64(is)));
        }
        if (!params.has(name)) throw IoError("checkpoint tensor " + name + " unknown to model");
        Tensor& t = params.get(name);
        if (t.shape() != shape) {
            throw IoError("checkpoint tensor " + name + " has shape " +
                          Tensor::shape_str(shape) + ", model expects " + t.shape_str());
        }
        read_f64_array(is, t.data(), static_cast<std::size_t>(t.size()));
    }
    if (!is) throw IoError("truncated checkpoint: " + path);
    return snapshot;
}

namespace {

std::string scene_stem(int index) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "scene_%06d", index);
    return buf;
}

}  // namespace

void save_dataset(const std::string& dir, const std::vector<synth::Scene>& scenes,
                  const nlohmann::json& manifest) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create dataset directory " + dir + ": " + ec.message());
    for (std::size_t i = 0; i < scenes.size(); ++i) {
        const std::string stem = (fs::path(dir) / scene_stem(static_cast<int>(i))).string();
        write_float_grid(stem + ".tfg", scenes[i].image);
        nlohmann::json side;
        side["image_id"] = i;
        side["gt"] = nlohmann::json::array();
        for (const auto& g : scenes[i].gt) {
            side["gt"].push_back({{"box", {g.box.x1, g.box.y1, g.box.x2, g.box.y2}},
                                  {"class", g.cls}});
        }
        write_text(stem + ".json", side.dump(2) + "\n");
    }
    write_text((fs::path(dir) / "manifest.json").string(), manifest.dump(2) + "\n");
}

std::vector<synth::Scene> load_dataset(const std::string& dir) {
    nlohmann::json manifest = load_manifest(dir);
    const int count = manifest.at("count").get<int>();
    std::vector<synth::Scene> scenes;
    scenes.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) {
        const std::string stem = (fs::path(dir) / scene_stem(i)).string();
        synth::Scene scene;
        scene.image = read_float_grid(stem + ".tfg");
        std::ifstream is(stem + ".json");
        if (!is) throw IoError("missing scene sidecar: " + stem + ".json");
        nlohmann::json side = nlohmann::json::parse(is);
        for (const auto& g : side.at("gt")) {
            const auto& b = g.at("box");
            scene.gt.push_back({{b[0].get<double>(), b[1].get<double>(), b[2].get<double>(),
                                 b[3].get<double>()},
                                g.at("class").get<int>()});
        }
        scenes.push_back(std::move(scene));
    }
    return scenes;
}

nlohmann::json load_manifest(const std::string& dir) {
    std::ifstream is(fs::path(dir) / "manifest.json");
    if (!is) throw IoError("missing manifest.json in " + dir);
    return nlohmann::json::parse(is);
}

void write_text(const std::string& path, const std::string& content) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open for writing: " + path);
    os.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!os) throw IoError("failed writing " + path);
}

void write_csv(const std::string& path, const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows) {
    std::string out;
    auto append_row = [&out](const std::vector<std::string>& cells) {
        for (std::size_t i = 0; i < cells.size(); ++i) {
            if (i) out += ',';
            out += cells[i];
        }
        out += '\n';
    };
    append_row(header);
    for (const auto& row : rows) append_row(row);
    write_text(path, out);
}

std::string format_double(double v) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    if (std::isnan(v)) return "nan";
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

std::string json_hash(const nlohmann::json& j) {
    const std::uint64_t h = fnv1a64(j.dump());
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

}  // namespace tinydet::io
