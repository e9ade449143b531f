#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "psmmlab/error.hpp"
#include "psmmlab/parameters.hpp"

namespace psmmlab::checkpoint {

// Directory layout:
//   index.txt   "# meta k=v ..." then one line per tensor:
//               name dtype shape byte_offset byte_length   (shape as 2x3x4)
//   weights.bin concatenated little-endian float32 payloads
using Metadata = std::map<std::string, std::string>;

inline std::string shape_token(const Shape& s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "x" : "") + std::to_string(s[i]);
  return out;
}

inline Shape parse_shape_token(const std::string& tok) {
  Shape s;
  std::stringstream ss(tok);
  std::string part;
  while (std::getline(ss, part, 'x')) {
    try {
      s.push_back(std::stoul(part));
    } catch (...) {
      throw InputError("checkpoint: bad shape token '" + tok + "'");
    }
  }
  return s;
}

inline void save(const std::filesystem::path& dir, const ParameterSet& params, const Metadata& meta) {
  std::filesystem::create_directories(dir);
  std::ofstream index(dir / "index.txt", std::ios::binary);
  std::ofstream bin(dir / "weights.bin", std::ios::binary);
  if (!index || !bin) throw InputError("checkpoint: cannot write to " + dir.string());
  index << "# meta";
  for (const auto& [k, v] : meta) index << ' ' << k << '=' << v;
  index << '\n';
  std::uint64_t offset = 0;
  for (const auto& p : params) {
    const std::uint64_t len = p.value.size() * 4;
    index << p.name << " f32 " << shape_token(p.value.shape()) << ' ' << offset << ' ' << len << '\n';
    for (double v : p.value.data()) {
      const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
      const char bytes[4] = {static_cast<char>(bits & 0xFF), static_cast<char>((bits >> 8) & 0xFF),
                             static_cast<char>((bits >> 16) & 0xFF), static_cast<char>((bits >> 24) & 0xFF)};
      bin.write(bytes, 4);
    }
    offset += len;
  }
}

inline Metadata read_metadata(const std::filesystem::path& dir) {
  std::ifstream index(dir / "index.txt");
  if (!index) throw InputError("checkpoint: missing " + (dir / "index.txt").string());
  std::string line;
  Metadata meta;
  if (std::getline(index, line) && line.rfind("# meta", 0) == 0) {
    std::istringstream ss(line.substr(6));
    std::string kv;
    while (ss >> kv) {
      auto eq = kv.find('=');
      if (eq != std::string::npos) meta[kv.substr(0, eq)] = kv.substr(eq + 1);
    }
  }
  return meta;
}

// Loads every tensor into `params`, which must already hold exactly the same
// names and shapes; anything else is an incompatible checkpoint.
inline Metadata load(const std::filesystem::path& dir, ParameterSet& params) {
  Metadata meta = read_metadata(dir);
  std::ifstream index(dir / "index.txt");
  std::ifstream bin(dir / "weights.bin", std::ios::binary);
  if (!bin) throw InputError("checkpoint: missing " + (dir / "weights.bin").string());
  std::vector<char> payload((std::istreambuf_iterator<char>(bin)), std::istreambuf_iterator<char>());

  std::string line;
  std::size_t seen = 0;
  while (std::getline(index, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    std::string name, dtype, shape_tok;
    std::uint64_t offset = 0, len = 0;
    if (!(ss >> name >> dtype >> shape_tok >> offset >> len)) throw InputError("checkpoint: malformed index line: " + line);
    if (dtype != "f32") throw IncompatibleError("checkpoint: unsupported dtype " + dtype);
    if (!params.contains(name)) throw IncompatibleError("checkpoint: model has no parameter named " + name);
    Tensor& t = params.get(name).value;
    if (parse_shape_token(shape_tok) != t.shape())
      throw IncompatibleError("checkpoint: shape mismatch for " + name + ": " + shape_tok + " vs " +
                              shape_token(t.shape()));
    if (len != t.size() * 4 || offset + len > payload.size())
      throw IncompatibleError("checkpoint: payload range out of bounds for " + name);
    auto out = t.data();
    for (std::size_t i = 0; i < t.size(); ++i) {
      const auto* b = reinterpret_cast<const unsigned char*>(payload.data() + offset + 4 * i);
      const std::uint32_t bits = static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
                                 (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
      out[i] = static_cast<double>(std::bit_cast<float>(bits));
    }
    ++seen;
  }
  if (seen != params.size())
    throw IncompatibleError("checkpoint: holds " + std::to_string(seen) + " tensors, model expects " +
                            std::to_string(params.size()));
  return meta;
}

}  // namespace psmmlab::checkpoint
