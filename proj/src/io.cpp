#include "cdgan/io.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace cdgan::io {
namespace {

static_assert(std::endian::native == std::endian::little, "HSC1/CM01 writers assume a little-endian host");

void put_u32(std::ostream& os, std::uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }

std::uint32_t get_u32(std::istream& is, const std::filesystem::path& path) {
    std::uint32_t v = 0;
    if (!is.read(reinterpret_cast<char*>(&v), 4)) throw IoError("truncated header in " + path.string());
    return v;
}

void expect_magic(std::istream& is, const char* magic, const std::filesystem::path& path) {
    std::array<char, 4> m{};
    if (!is.read(m.data(), 4) || std::memcmp(m.data(), magic, 4) != 0)
        throw IoError(path.string() + ": bad magic, expected " + magic);
}

std::ofstream open_out(const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open " + path.string() + " for writing");
    return os;
}

std::ifstream open_in(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open " + path.string());
    return is;
}

} // namespace

void write_hsc(const std::filesystem::path& path, const HyperImage& img) {
    auto os = open_out(path);
    os.write("HSC1", 4);
    put_u32(os, static_cast<std::uint32_t>(img.bands()));
    put_u32(os, static_cast<std::uint32_t>(img.rows()));
    put_u32(os, static_cast<std::uint32_t>(img.cols()));
    std::vector<float> buf(img.size());
    for (std::size_t i = 0; i < img.size(); ++i) buf[i] = static_cast<float>(img.data()[i]);
    os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (!os) throw IoError("write failed: " + path.string());
}

HyperImage read_hsc(const std::filesystem::path& path) {
    auto is = open_in(path);
    expect_magic(is, "HSC1", path);
    Shape s;
    s.bands = get_u32(is, path);
    s.rows = get_u32(is, path);
    s.cols = get_u32(is, path);
    std::vector<float> buf(s.size());
    if (!is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float))))
        throw IoError("truncated payload in " + path.string());
    return HyperImage(s, std::vector<double>(buf.begin(), buf.end()));
}

void write_cm(const std::filesystem::path& path, const BinaryMap& map) {
    auto os = open_out(path);
    os.write("CM01", 4);
    put_u32(os, static_cast<std::uint32_t>(map.rows()));
    put_u32(os, static_cast<std::uint32_t>(map.cols()));
    os.write(reinterpret_cast<const char*>(map.data().data()), static_cast<std::streamsize>(map.size()));
    if (!os) throw IoError("write failed: " + path.string());
}

BinaryMap read_cm(const std::filesystem::path& path) {
    auto is = open_in(path);
    expect_magic(is, "CM01", path);
    const std::uint32_t rows = get_u32(is, path);
    const std::uint32_t cols = get_u32(is, path);
    std::vector<std::uint8_t> data(static_cast<std::size_t>(rows) * cols);
    if (!is.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size())))
        throw IoError("truncated payload in " + path.string());
    try {
        return BinaryMap(rows, cols, std::move(data));
    } catch (const ShapeError& e) {
        throw IoError(path.string() + ": " + e.what());
    }
}

std::string read_text(const std::filesystem::path& path) {
    auto is = open_in(path);
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    auto os = open_out(path);
    os << text;
    if (!os) throw IoError("write failed: " + path.string());
}

} // namespace cdgan::io
