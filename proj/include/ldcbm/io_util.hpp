#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace ldcbm::io {

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path);
void write_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
std::string read_text(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, const std::string& text);

/// zlib CRC-32 of a byte range.
std::uint32_t crc32(std::span<const std::uint8_t> bytes);

/// 17-significant-digit decimal; parses back to the identical double.
std::string format_double(double value);

}  // namespace ldcbm::io
