#include "mvpose/util.hpp"

#include <fstream>
#include <sstream>

#include "mvpose/errors.hpp"

namespace mvpose::util {

std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[i] = digits[v & 0xf];
    v >>= 4;
  }
  return out;
}

std::uint64_t hash_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw Error("cannot read file for hashing: " + path.string());
  }
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return fnv1a(buffer.str());
}

}  // namespace mvpose::util
