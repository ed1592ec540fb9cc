#include "dastm/dt64.hpp"

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include "dastm/error.hpp"

namespace dastm::dt64 {

namespace {

constexpr std::array<char, 4> kMagic = {'D', 'T', '6', '4'};

void put_u32(std::ostream& out, std::uint32_t v) {
    const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                                static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& in) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4)) throw IoError("DT64: truncated header");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void put_f64(std::ostream& out, double v) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(bits >> (8 * i));
    out.write(reinterpret_cast<const char*>(b), 8);
}

double get_f64(std::istream& in) {
    unsigned char b[8];
    if (!in.read(reinterpret_cast<char*>(b), 8)) throw IoError("DT64: truncated payload");
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return std::bit_cast<double>(bits);
}

std::filesystem::path with_suffix(const std::filesystem::path& stem, const char* suffix) {
    std::filesystem::path p = stem;
    p += suffix;
    return p;
}

}  // namespace

void write(std::ostream& out, const Tensor4& t) {
    out.write(kMagic.data(), kMagic.size());
    const Shape& s = t.shape();
    put_u32(out, static_cast<std::uint32_t>(s.n));
    put_u32(out, static_cast<std::uint32_t>(s.c));
    put_u32(out, static_cast<std::uint32_t>(s.h));
    put_u32(out, static_cast<std::uint32_t>(s.w));
    for (double v : t.data()) put_f64(out, v);
}

Tensor4 read(std::istream& in) {
    std::array<char, 4> magic{};
    if (!in.read(magic.data(), magic.size())) throw IoError("DT64: missing magic");
    if (magic != kMagic) throw IoError("DT64: bad magic");
    Shape s;
    s.n = static_cast<int>(get_u32(in));
    s.c = static_cast<int>(get_u32(in));
    s.h = static_cast<int>(get_u32(in));
    s.w = static_cast<int>(get_u32(in));
    std::vector<double> values(s.numel());
    for (double& v : values) v = get_f64(in);
    return Tensor4(s, std::move(values));
}

void save(const std::filesystem::path& path, const Tensor4& t) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    write(out, t);
    if (!out) throw IoError("write failed: " + path.string());
}

Tensor4 load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read " + path.string());
    return read(in);
}

void save_checkpoint(const std::filesystem::path& stem, const ParamSet& params) {
    const auto data_path = with_suffix(stem, ".dt64");
    const auto index_path = with_suffix(stem, ".index");
    std::ofstream data(data_path, std::ios::binary);
    std::ofstream index(index_path);
    if (!data) throw IoError("cannot write " + data_path.string());
    if (!index) throw IoError("cannot write " + index_path.string());
    std::uint64_t offset = 0;
    for (const auto& [name, t] : params) {
        const Shape& s = t.shape();
        index << name << ' ' << s.n << ' ' << s.c << ' ' << s.h << ' ' << s.w << ' ' << offset << '\n';
        write(data, t);
        offset += 20 + 8 * t.numel();
    }
    if (!data || !index) throw IoError("checkpoint write failed: " + stem.string());
}

void load_checkpoint(const std::filesystem::path& stem, ParamSet& params) {
    const auto data_path = with_suffix(stem, ".dt64");
    const auto index_path = with_suffix(stem, ".index");
    std::ifstream data(data_path, std::ios::binary);
    std::ifstream index(index_path);
    if (!data) throw IoError("cannot read " + data_path.string());
    if (!index) throw IoError("cannot read " + index_path.string());
    std::string line;
    std::size_t lineno = 0;
    std::size_t loaded = 0;
    while (std::getline(index, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream fields(line);
        std::string name;
        Shape s;
        std::uint64_t offset = 0;
        if (!(fields >> name >> s.n >> s.c >> s.h >> s.w >> offset))
            throw IoError(index_path.string() + ":" + std::to_string(lineno) + ": malformed index line");
        data.seekg(static_cast<std::streamoff>(offset));
        Tensor4 t = read(data);
        if (!(t.shape() == s)) throw IoError(index_path.string() + ": shape mismatch for " + name);
        if (!params.contains(name)) throw IoError("checkpoint has unknown tensor '" + name + "'");
        Tensor4& dst = params.get(name);
        if (!(dst.shape() == s))
            throw IoError("checkpoint tensor '" + name + "' has shape " + s.str() + ", model expects " +
                          dst.shape().str());
        std::copy(t.data().begin(), t.data().end(), dst.data().begin());
        ++loaded;
    }
    if (loaded != params.size())
        throw IoError("checkpoint provides " + std::to_string(loaded) + " tensors, model has " +
                      std::to_string(params.size()));
}

}  // namespace dastm::dt64
