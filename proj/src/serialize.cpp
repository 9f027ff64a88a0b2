#include "fedmix/serialize.hpp"

#include "fedmix/errors.hpp"

#include <charconv>
#include <cstring>
#include <fstream>
#include <limits>

namespace fedmix {
namespace {

void put_u32(std::vector<std::uint8_t>& buf, std::uint32_t v) {
    buf.push_back(static_cast<std::uint8_t>(v));
    buf.push_back(static_cast<std::uint8_t>(v >> 8));
    buf.push_back(static_cast<std::uint8_t>(v >> 16));
    buf.push_back(static_cast<std::uint8_t>(v >> 24));
}

void put_f64(std::vector<std::uint8_t>& buf, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof(bits));
    for (int i = 0; i < 8; ++i) {
        buf.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
    }
}

struct Reader {
    const std::vector<std::uint8_t>& buf;
    std::size_t pos = 0;

    void need(std::size_t n) const {
        if (pos + n > buf.size()) throw StructuralError("truncated ParamVector data");
    }

    std::uint32_t u32() {
        need(4);
        std::uint32_t v = buf[pos] | (std::uint32_t(buf[pos + 1]) << 8) |
                          (std::uint32_t(buf[pos + 2]) << 16) |
                          (std::uint32_t(buf[pos + 3]) << 24);
        pos += 4;
        return v;
    }

    double f64() {
        need(8);
        std::uint64_t bits = 0;
        for (int i = 0; i < 8; ++i) bits |= std::uint64_t(buf[pos + i]) << (8 * i);
        pos += 8;
        double v;
        std::memcpy(&v, &bits, sizeof(v));
        return v;
    }

    std::string str(std::size_t n) {
        need(n);
        std::string s(reinterpret_cast<const char*>(buf.data() + pos), n);
        pos += n;
        return s;
    }
};

} // namespace

std::vector<std::uint8_t> serialize_params(const ParamVector& pv) {
    std::vector<std::uint8_t> buf;
    buf.push_back('F');
    buf.push_back('M');
    buf.push_back('X');
    buf.push_back('1');
    put_u32(buf, static_cast<std::uint32_t>(pv.blocks.size()));
    for (const Block& b : pv.blocks) {
        put_u32(buf, static_cast<std::uint32_t>(b.name.size()));
        buf.insert(buf.end(), b.name.begin(), b.name.end());
        put_u32(buf, static_cast<std::uint32_t>(b.dims.size()));
        for (std::size_t d : b.dims) put_u32(buf, static_cast<std::uint32_t>(d));
        for (double v : b.values) put_f64(buf, v);
    }
    return buf;
}

ParamVector parse_params(const std::vector<std::uint8_t>& buf) {
    Reader r{buf};
    const std::string magic = r.str(4);
    if (magic != "FMX1") throw StructuralError("bad ParamVector magic");
    ParamVector pv;
    const std::uint32_t nblocks = r.u32();
    pv.blocks.reserve(nblocks);
    for (std::uint32_t i = 0; i < nblocks; ++i) {
        Block b;
        b.name = r.str(r.u32());
        const std::uint32_t ndims = r.u32();
        b.dims.resize(ndims);
        std::size_t count = 1;
        for (auto& d : b.dims) {
            d = r.u32();
            count *= d;
        }
        if (ndims == 0) count = 0;
        b.values.resize(count);
        for (auto& v : b.values) v = r.f64();
        pv.blocks.push_back(std::move(b));
    }
    if (r.pos != buf.size()) throw StructuralError("trailing bytes after ParamVector data");
    pv.validate();
    return pv;
}

void save_params(const ParamVector& pv, const std::string& path) {
    const std::vector<std::uint8_t> buf = serialize_params(pv);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw StructuralError("cannot open '" + path + "' for writing");
    out.write(reinterpret_cast<const char*>(buf.data()),
              static_cast<std::streamsize>(buf.size()));
    if (!out) throw StructuralError("write failed for '" + path + "'");
}

ParamVector load_params(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw StructuralError("cannot open '" + path + "'");
    std::vector<std::uint8_t> buf((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
    return parse_params(buf);
}

std::string format_double(double v) {
    char tmp[64];
    const auto res = std::to_chars(tmp, tmp + sizeof(tmp), v);
    return std::string(tmp, res.ptr);
}

void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw StructuralError("cannot open '" + path + "' for writing");
    out << content;
    if (!out) throw StructuralError("write failed for '" + path + "'");
}

std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw StructuralError("cannot open '" + path + "'");
    return std::string((std::istreambuf_iterator<char>(in)),
                       std::istreambuf_iterator<char>());
}

} // namespace fedmix
