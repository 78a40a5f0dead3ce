#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

namespace mvpose::util {

// splitmix64 step, used to derive independent RNG streams from one seed.
inline std::uint64_t mix_seed(std::uint64_t base, std::uint64_t salt) {
  std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (salt + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// FNV-1a 64-bit over a byte string. Stable across platforms and runs.
inline std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v);

// FNV-1a over a file's contents. Throws mvpose::Error if unreadable.
std::uint64_t hash_file(const std::filesystem::path& path);

}  // namespace mvpose::util
