#include "et/checkpoint.hpp"

#include "et/errors.hpp"

#include <cstring>
#include <fstream>

namespace et::checkpoint {

namespace {

void put_u32(std::ostream& out, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

void put_f64(std::ostream& out, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(bits >> (8 * i));
    out.write(reinterpret_cast<const char*>(b), 8);
}

std::uint32_t get_u32(std::istream& in, const std::string& what) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4))
        throw FormatError("truncated checkpoint reading " + what);
    return std::uint32_t(b[0]) | std::uint32_t(b[1]) << 8 | std::uint32_t(b[2]) << 16 |
           std::uint32_t(b[3]) << 24;
}

double get_f64(std::istream& in, const std::string& what) {
    unsigned char b[8];
    if (!in.read(reinterpret_cast<char*>(b), 8))
        throw FormatError("truncated checkpoint reading " + what);
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= std::uint64_t(b[i]) << (8 * i);
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
}

} // namespace

void save(const Checkpoint& c, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    out.write(MAGIC, 4);
    put_u32(out, VERSION);
    put_u32(out, std::uint32_t(c.tensors.size()));
    for (const auto& [name, t] : c.tensors) {
        put_u32(out, std::uint32_t(name.size()));
        out.write(name.data(), long(name.size()));
        put_u32(out, std::uint32_t(t.rank()));
        for (std::size_t d : t.shape()) put_u32(out, std::uint32_t(d));
        for (double v : t.data()) put_f64(out, v);
    }
    std::string echo;
    for (const auto& [k, v] : c.config) echo += k + "=" + v + "\n";
    put_u32(out, std::uint32_t(echo.size()));
    out.write(echo.data(), long(echo.size()));
    if (!out) throw IoError("write failed: " + path);
}

Checkpoint load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read " + path);
    char magic[4];
    if (!in.read(magic, 4) || std::memcmp(magic, MAGIC, 4) != 0)
        throw FormatError("bad checkpoint magic in " + path);
    const std::uint32_t version = get_u32(in, "version");
    if (version != VERSION)
        throw FormatError("unsupported checkpoint version " + std::to_string(version));
    Checkpoint c;
    const std::uint32_t count = get_u32(in, "record count");
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint32_t name_len = get_u32(in, "name length");
        std::string name(name_len, '\0');
        if (!in.read(name.data(), name_len)) throw FormatError("truncated tensor name");
        const std::uint32_t rank = get_u32(in, "rank");
        Shape shape(rank);
        std::size_t n = 1;
        for (auto& d : shape) {
            d = get_u32(in, "dim");
            n *= d;
        }
        std::vector<double> data(n);
        for (auto& v : data) v = get_f64(in, name);
        c.tensors[name] = Tensor::from_data(std::move(shape), std::move(data));
    }
    const std::uint32_t echo_len = get_u32(in, "config length");
    std::string echo(echo_len, '\0');
    if (!in.read(echo.data(), echo_len)) throw FormatError("truncated config echo");
    std::size_t pos = 0;
    while (pos < echo.size()) {
        std::size_t nl = echo.find('\n', pos);
        if (nl == std::string::npos) nl = echo.size();
        const std::string line = echo.substr(pos, nl - pos);
        pos = nl + 1;
        if (line.empty()) continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos) throw FormatError("malformed config echo line: " + line);
        c.config[line.substr(0, eq)] = line.substr(eq + 1);
    }
    return c;
}

} // namespace et::checkpoint
