#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace arcgen::io {

// All artifact writes go through write_file_atomic (write temp, rename) so a
// killed run never leaves a half-written file behind.
void write_file_atomic(const std::filesystem::path& path, const std::string& bytes);
std::string read_file(const std::filesystem::path& path);
bool file_exists(const std::filesystem::path& path);

std::string base64_encode(const void* data, size_t len);
std::vector<uint8_t> base64_decode(const std::string& text);

std::string base64_of_floats(const std::vector<float>& v);
std::vector<float> floats_of_base64(const std::string& text);

// Shortest round-trip decimal text for a double (std::to_chars). Used for
// every float that lands in a CSV so reruns are byte-identical and parsing
// the file back recovers the exact value.
std::string fmt_double(double v);
std::string fmt_fixed(double v, int digits);

// FNV-1a 64-bit, printed as 16 hex chars. Stable fingerprint for configs,
// datasets and manifests.
uint64_t fnv1a64(const void* data, size_t len);
std::string hex64(uint64_t v);
std::string fingerprint(const std::string& bytes);

// Little-endian scalar append/read helpers for the flat binary formats.
void put_u32(std::string& out, uint32_t v);
void put_u64(std::string& out, uint64_t v);
void put_f32(std::string& out, float v);
uint32_t get_u32(const std::string& in, size_t& off);
uint64_t get_u64(const std::string& in, size_t& off);
float get_f32(const std::string& in, size_t& off);

std::vector<std::string> split_csv_line(const std::string& line);

}  // namespace arcgen::io
