#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace screenseg {

// FNV-1a over a byte range; used for parameter/dataset checksums.
uint64_t fnv1a64(const void* bytes, size_t n, uint64_t h = 0xcbf29ce484222325ULL);

uint64_t checksum_file(const std::filesystem::path& path);

// Checksum of a directory tree: file paths (relative, sorted) and contents.
uint64_t checksum_tree(const std::filesystem::path& root);

std::string format_hex(uint64_t v);

std::vector<std::string> split(const std::string& s, char sep);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace screenseg
