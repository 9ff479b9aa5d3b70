#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "harope/matrix.hpp"

namespace harope {

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& content);

// 8-bit binary PGM (P5) with per-matrix linear min-max normalization:
// min -> 0, max -> 255; a constant matrix maps to all zeros.
std::string matrix_to_pgm(const Matrix& m);
void write_pgm(const std::filesystem::path& path, const Matrix& m);

struct PgmImage {
    std::size_t width{0};
    std::size_t height{0};
    std::vector<std::uint8_t> pixels;  // row-major
};
PgmImage parse_pgm(const std::string& bytes);

// Resolves an output directory against the HAROPE_OUT_ROOT environment
// variable: absolute paths pass through, relative ones land under the root.
std::filesystem::path resolve_out_dir(const std::filesystem::path& dir);

}  // namespace harope
