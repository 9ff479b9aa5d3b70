#include "harope/io.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>

namespace harope {

std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open file: " + path.string());
    std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return content;
}

void write_text_file(const std::filesystem::path& path, const std::string& content) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write file: " + path.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
}

std::string matrix_to_pgm(const Matrix& m) {
    if (m.size() == 0) throw ShapeError("pgm: empty matrix");
    double lo = m.data()[0], hi = m.data()[0];
    for (double v : m.values()) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    const double span = hi - lo;
    std::string out = "P5\n" + std::to_string(m.cols()) + " " + std::to_string(m.rows()) +
                      "\n255\n";
    out.reserve(out.size() + m.size());
    for (double v : m.values()) {
        unsigned byte = 0;
        if (span > 0.0) {
            byte = static_cast<unsigned>(std::lround((v - lo) / span * 255.0));
        }
        out.push_back(static_cast<char>(static_cast<std::uint8_t>(byte)));
    }
    return out;
}

void write_pgm(const std::filesystem::path& path, const Matrix& m) {
    write_text_file(path, matrix_to_pgm(m));
}

PgmImage parse_pgm(const std::string& bytes) {
    std::size_t pos = 0;
    auto token = [&]() -> std::string {
        while (pos < bytes.size() && std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
        const std::size_t start = pos;
        while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
        if (start == pos) throw FormatError("pgm: truncated header", start);
        return bytes.substr(start, pos - start);
    };
    if (token() != "P5") throw FormatError("pgm: not a P5 file", 0);
    const std::size_t w = std::stoul(token());
    const std::size_t h = std::stoul(token());
    const std::size_t maxval = std::stoul(token());
    if (maxval != 255) throw FormatError("pgm: expected maxval 255", pos);
    ++pos;  // single whitespace after maxval
    if (bytes.size() - pos < w * h) throw FormatError("pgm: truncated pixel data", pos);
    PgmImage img;
    img.width = w;
    img.height = h;
    img.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                      bytes.begin() + static_cast<std::ptrdiff_t>(pos + w * h));
    return img;
}

std::filesystem::path resolve_out_dir(const std::filesystem::path& dir) {
    if (dir.is_absolute()) return dir;
    if (const char* root = std::getenv("HAROPE_OUT_ROOT")) {
        return std::filesystem::path(root) / dir;
    }
    return dir;
}

}  // namespace harope
