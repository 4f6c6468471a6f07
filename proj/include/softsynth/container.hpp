#pragma once

#include <bit>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "softsynth/common.hpp"

namespace softsynth {

static_assert(std::endian::native == std::endian::little, "checkpoint payloads are little-endian float64");

/// Checkpoint container: one JSON header line, then the row-major float64
/// payloads of every tensor listed in header["tensors"], in order.
struct Container {
  static constexpr const char* kFormatTag = "softsynth-container/1";

  std::string kind;
  nlohmann::json meta = nlohmann::json::object();
  std::vector<std::pair<std::string, Matrix>> tensors;

  void add(std::string name, const Matrix& m) { tensors.emplace_back(std::move(name), m); }

  const Matrix& tensor(const std::string& name) const {
    for (const auto& [n, m] : tensors)
      if (n == name) return m;
    throw ValidationError("checkpoint has no tensor '" + name + "'");
  }

  std::string serialize() const {
    nlohmann::json header;
    header["format"] = kFormatTag;
    header["kind"] = kind;
    header["meta"] = meta;
    auto& list = header["tensors"] = nlohmann::json::array();
    for (const auto& [name, m] : tensors) list.push_back({{"name", name}, {"rows", m.rows()}, {"cols", m.cols()}});
    std::string out = header.dump();
    out += '\n';
    for (const auto& [name, m] : tensors)
      out.append(reinterpret_cast<const char*>(m.data()), static_cast<std::size_t>(m.size()) * sizeof(double));
    return out;
  }

  static Container deserialize(const std::string& bytes, const std::string& expected_kind) {
    const auto newline = bytes.find('\n');
    if (newline == std::string::npos) throw ValidationError("checkpoint: missing header");
    nlohmann::json header;
    try {
      header = nlohmann::json::parse(bytes.substr(0, newline));
    } catch (const nlohmann::json::parse_error&) {
      throw ValidationError("checkpoint: malformed header");
    }
    if (header.value("format", "") != kFormatTag)
      throw ValidationError("checkpoint: unsupported format tag '" + header.value("format", "") + "'");
    Container c;
    c.kind = header.value("kind", "");
    if (c.kind != expected_kind)
      throw ValidationError("checkpoint: expected kind '" + expected_kind + "', found '" + c.kind + "'");
    c.meta = header["meta"];
    std::size_t offset = newline + 1;
    for (const auto& t : header["tensors"]) {
      const auto rows = t["rows"].get<Eigen::Index>();
      const auto cols = t["cols"].get<Eigen::Index>();
      const std::size_t n = static_cast<std::size_t>(rows * cols) * sizeof(double);
      if (offset + n > bytes.size()) throw ValidationError("checkpoint: truncated payload");
      Matrix m(rows, cols);
      std::memcpy(m.data(), bytes.data() + offset, n);
      offset += n;
      c.tensors.emplace_back(t["name"].get<std::string>(), std::move(m));
    }
    if (offset != bytes.size()) throw ValidationError("checkpoint: trailing bytes after payload");
    return c;
  }

  void save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw RuntimeFailure("cannot write '" + path.string() + "'");
    const std::string bytes = serialize();
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  }

  static Container load(const std::filesystem::path& path, const std::string& expected_kind) {
    return deserialize(read_file(path), expected_kind);
  }

  static std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open '" + path.string() + "'");
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  }
};

inline std::string file_digest(const std::filesystem::path& path) {
  Digest d;
  d.update(Container::read_file(path));
  return d.hex();
}

}  // namespace softsynth
