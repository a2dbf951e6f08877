#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

namespace knord {

std::string read_file(const std::filesystem::path& path);

// Writes to a sibling temp file and renames over the target.
void atomic_write(const std::filesystem::path& path, std::string_view contents);

// 16 hex digits of FNV-1a over the bytes. Content identity, not security.
std::string checksum_hex(std::string_view bytes);
std::string file_checksum(const std::filesystem::path& path);

// Little-endian binary helpers shared by the representation cache and the
// classifier checkpoint.
void append_f32le(std::string& out, double value);
void append_u32le(std::string& out, std::uint32_t value);
std::uint32_t read_u32le(std::string_view bytes, std::size_t offset);
float read_f32le(std::string_view bytes, std::size_t offset);

}  // namespace knord
