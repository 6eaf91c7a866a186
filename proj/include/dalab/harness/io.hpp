#pragma once

#include "dalab/core.hpp"
#include "dalab/field.hpp"
#include "dalab/harness/config.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

namespace dalab::harness {

namespace fs = std::filesystem;

inline void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error("cannot create directory " + dir.string() + ": " + ec.message());
}

inline void write_text(const fs::path& path, const std::string& text) {
  ensure_dir(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open " + path.string() + " for writing");
  os << text;
  if (!os) throw Error("write failed: " + path.string());
}

inline std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

inline json load_json(const fs::path& path) {
  try {
    return json::parse(read_text(path));
  } catch (const json::exception& e) {
    throw Error(path.string() + ": " + e.what());
  }
}

inline json to_json(const Vector& v) { return json(std::vector<double>(v.data(), v.data() + v.size())); }

inline Vector vector_from_json(const json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Vector>(v.data(), Eigen::Index(v.size()));
}

/// Shortest decimal that reads back to the same double.
inline std::string fmt(double x) {
  char buf[32];
  for (int prec = 15; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof buf, "%.*g", prec, x);
    if (std::strtod(buf, nullptr) == x) break;
  }
  return buf;
}

inline void write_field(const fs::path& path, const Grid2D& grid, const Vector& values) {
  ensure_dir(path.parent_path());
  write_field_csv(path.string(), Field(grid, values));
}

inline Vector read_field(const fs::path& path) { return read_field_csv(path.string()).values(); }

/// Member bundle: one row per member, one column per cell.
inline void write_members(const fs::path& path, const std::vector<Vector>& members) {
  std::string out = "member";
  if (!members.empty())
    for (Eigen::Index k = 0; k < members.front().size(); ++k) out += ",c" + std::to_string(k);
  out += '\n';
  for (std::size_t j = 0; j < members.size(); ++j) {
    out += std::to_string(j);
    for (Eigen::Index k = 0; k < members[j].size(); ++k) out += ',' + fmt(members[j][k]);
    out += '\n';
  }
  write_text(path, out);
}

inline std::vector<Vector> read_members(const fs::path& path) {
  std::istringstream in(read_text(path));
  std::string line;
  std::getline(in, line);
  std::vector<Vector> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> vals;
    std::istringstream row(line);
    std::string cell;
    std::getline(row, cell, ',');  // member index
    while (std::getline(row, cell, ',')) vals.push_back(std::stod(cell));
    out.push_back(Eigen::Map<const Vector>(vals.data(), Eigen::Index(vals.size())));
  }
  return out;
}

/// Checksum of a data vector: FNV-1a over the IEEE bytes.
inline std::string data_checksum(const Vector& y) {
  std::string bytes(std::size_t(y.size()) * sizeof(double), '\0');
  std::memcpy(bytes.data(), y.data(), bytes.size());
  return fnv1a_hex(bytes);
}

}  // namespace dalab::harness
