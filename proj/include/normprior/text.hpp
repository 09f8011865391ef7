#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace normprior::text {

std::string_view trim(std::string_view s);
std::string to_lower_ascii(std::string_view s);

// Whitespace split with ASCII punctuation emitted as separate tokens.
// Apostrophes inside a word ("don't") stay attached.
std::vector<std::string> tokenize(std::string_view s, bool lowercase);

// 64-bit FNV-1a; stable across platforms, used for feature hashing.
constexpr std::uint64_t fnv1a(std::string_view s,
                              std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Reads a whole file; throws ValidationError naming the path when missing.
std::string read_file(const std::string& path);

// Writes via a sibling temporary and rename, so readers never see a partial
// file.
void write_file_atomic(const std::string& path, std::string_view contents);

}  // namespace normprior::text
