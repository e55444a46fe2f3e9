#pragma once

#include <filesystem>

#include "cdgan/core.hpp"

namespace cdgan::io {

// HSC1: "HSC1", u32 bands, u32 rows, u32 cols, then band-sequential f32 values (LE).
void write_hsc(const std::filesystem::path& path, const HyperImage& img);
HyperImage read_hsc(const std::filesystem::path& path);

// CM01: "CM01", u32 rows, u32 cols, then rows*cols bytes of 0/1.
void write_cm(const std::filesystem::path& path, const BinaryMap& map);
BinaryMap read_cm(const std::filesystem::path& path);

std::string read_text(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, const std::string& text);

} // namespace cdgan::io
