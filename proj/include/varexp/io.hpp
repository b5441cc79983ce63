#pragma once

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "varexp/error.hpp"
#include "varexp/grid.hpp"

namespace varexp {

// ---------------------------------------------------------------------------
// VXF1 field files

/// Field read from or written to a VXF1 file: values on the nodes or the
/// cells of a grid, `components` values per entry.
struct FieldFile {
  Grid grid;
  bool on_nodes = true;
  int components = 1;
  std::vector<double> values;
};

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline double parse_double(const std::string& s, const std::string& what) {
  double v = 0.0;
  const char* b = s.data();
  const char* e = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(b, e, v);
  if (ec != std::errc() || ptr != e) throw Error("cannot parse number '" + s + "' for " + what);
  return v;
}

inline long long parse_int(const std::string& s, const std::string& what) {
  long long v = 0;
  const char* b = s.data();
  const char* e = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(b, e, v);
  if (ec != std::errc() || ptr != e) throw Error("cannot parse integer '" + s + "' for " + what);
  return v;
}

inline void write_vxf(std::ostream& os, const FieldFile& f) {
  const Grid& g = f.grid;
  const int n = g.dim();
  os << "VXF1 " << n << ' ' << f.components << ' ' << (f.on_nodes ? "nodes" : "cells");
  for (int d = 0; d < n; ++d) os << ' ' << (f.on_nodes ? g.cells_per_axis()[d] + 1 : g.cells_per_axis()[d]);
  for (int d = 0; d < n; ++d) os << ' ' << format_double(g.origin()[d]);
  for (int d = 0; d < n; ++d) os << ' ' << format_double(g.extent()[d]);
  os << '\n';
  for (double v : f.values) os << format_double(v) << '\n';
}

inline FieldFile read_vxf(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw Error("VXF1: empty file");
  std::istringstream hs(line);
  std::vector<std::string> tok;
  for (std::string t; hs >> t;) tok.push_back(t);
  if (tok.size() < 4 || tok[0] != "VXF1") throw Error("VXF1: bad header");
  const int n = static_cast<int>(parse_int(tok[1], "VXF1 dimension"));
  if (n < 1 || n > kMaxDim) throw Error("VXF1: dimension out of range");
  if (tok.size() != 4 + 3 * static_cast<std::size_t>(n)) throw Error("VXF1: header has wrong number of fields");
  FieldFile f;
  f.components = static_cast<int>(parse_int(tok[2], "VXF1 codomain"));
  if (f.components < 1) throw Error("VXF1: codomain must be positive");
  if (tok[3] == "nodes")
    f.on_nodes = true;
  else if (tok[3] == "cells")
    f.on_nodes = false;
  else
    throw Error("VXF1: flag must be 'nodes' or 'cells'");
  std::vector<int> cells(n);
  std::vector<double> origin(n), extent(n);
  for (int d = 0; d < n; ++d) {
    const long long c = parse_int(tok[4 + d], "VXF1 counts");
    cells[d] = static_cast<int>(f.on_nodes ? c - 1 : c);
    origin[d] = parse_double(tok[4 + n + d], "VXF1 origin");
    extent[d] = parse_double(tok[4 + 2 * n + d], "VXF1 extent");
  }
  f.grid = make_grid(n, origin, extent, cells);
  const std::size_t expected = (f.on_nodes ? f.grid.node_count() : f.grid.cell_count()) * f.components;
  f.values.reserve(expected);
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    f.values.push_back(parse_double(line, "VXF1 value"));
  }
  if (f.values.size() != expected) throw Error("VXF1: expected " + std::to_string(expected) + " values");
  for (double v : f.values)
    if (!std::isfinite(v)) throw Error("VXF1: non-finite value");
  return f;
}

inline void save_vxf(const std::filesystem::path& path, const FieldFile& f) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot write " + path.string());
  write_vxf(os, f);
}

inline FieldFile load_vxf(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot read " + path.string());
  return read_vxf(is);
}

inline FieldFile to_file(const GridFunction& u) { return {u.grid, true, u.codomain, u.values}; }
inline FieldFile to_file(const CellField& f) { return {f.grid, false, f.components, f.values}; }

inline GridFunction nodal_field(const FieldFile& f) {
  require(f.on_nodes, "expected a nodal field file");
  GridFunction u(f.grid, f.components);
  u.values = f.values;
  return u;
}

inline CellField cell_field(const FieldFile& f) {
  require(!f.on_nodes, "expected a cell field file");
  CellField c(f.grid, f.components);
  c.values = f.values;
  return c;
}

// ---------------------------------------------------------------------------
// PGM images

/// 8-bit grayscale image, row-major.
struct Image {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;

  std::uint8_t& at(int row, int col) { return pixels[static_cast<std::size_t>(row) * width + col]; }
  std::uint8_t at(int row, int col) const { return pixels[static_cast<std::size_t>(row) * width + col]; }
};

namespace detail {

inline std::string pgm_token(std::istream& is) {
  std::string tok;
  int c;
  while ((c = is.get()) != EOF) {
    if (c == '#') {
      while ((c = is.get()) != EOF && c != '\n') {
      }
      continue;
    }
    if (std::isspace(c)) {
      if (!tok.empty()) return tok;
      continue;
    }
    tok.push_back(static_cast<char>(c));
  }
  return tok;
}

}  // namespace detail

inline Image read_pgm(std::istream& is) {
  const std::string magic = detail::pgm_token(is);
  if (magic != "P2" && magic != "P5") throw Error("PGM: unsupported magic '" + magic + "'");
  Image img;
  img.width = static_cast<int>(parse_int(detail::pgm_token(is), "PGM width"));
  img.height = static_cast<int>(parse_int(detail::pgm_token(is), "PGM height"));
  const long long maxval = parse_int(detail::pgm_token(is), "PGM maxval");
  if (img.width <= 0 || img.height <= 0) throw Error("PGM: bad dimensions");
  if (maxval < 1 || maxval > 255) throw Error("PGM: only 8-bit images are supported");
  const std::size_t count = static_cast<std::size_t>(img.width) * img.height;
  img.pixels.resize(count);
  auto scale = [&](long long v) {
    if (v < 0 || v > maxval) throw Error("PGM: pixel out of range");
    return static_cast<std::uint8_t>(maxval == 255 ? v : (v * 255 + maxval / 2) / maxval);
  };
  if (magic == "P2") {
    for (std::size_t i = 0; i < count; ++i) {
      const std::string t = detail::pgm_token(is);
      if (t.empty()) throw Error("PGM: truncated data");
      img.pixels[i] = scale(parse_int(t, "PGM pixel"));
    }
  } else {
    std::vector<char> buf(count);
    is.read(buf.data(), static_cast<std::streamsize>(count));
    if (static_cast<std::size_t>(is.gcount()) != count) throw Error("PGM: truncated data");
    for (std::size_t i = 0; i < count; ++i) img.pixels[i] = scale(static_cast<unsigned char>(buf[i]));
  }
  return img;
}

inline void write_pgm(std::ostream& os, const Image& img, bool binary = true) {
  os << (binary ? "P5" : "P2") << '\n' << img.width << ' ' << img.height << "\n255\n";
  if (binary) {
    os.write(reinterpret_cast<const char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
    return;
  }
  for (int r = 0; r < img.height; ++r) {
    for (int c = 0; c < img.width; ++c) os << (c ? " " : "") << static_cast<int>(img.at(r, c));
    os << '\n';
  }
}

inline Image load_pgm(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot read " + path.string());
  return read_pgm(is);
}

inline void save_pgm(const std::filesystem::path& path, const Image& img, bool binary = true) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot write " + path.string());
  write_pgm(os, img, binary);
}

// ---------------------------------------------------------------------------
// configuration files

/// Flat key=value configuration with [section] headers; keys are stored as
/// "section.key". Lines starting with '#' or ';' are comments.
class Config {
 public:
  static Config parse(std::istream& is) {
    Config cfg;
    std::string line, section;
    int lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      const std::string t = trim(line);
      if (t.empty() || t[0] == '#' || t[0] == ';') continue;
      if (t.front() == '[') {
        if (t.back() != ']') throw Error("config line " + std::to_string(lineno) + ": malformed section header");
        section = trim(t.substr(1, t.size() - 2));
        if (section.empty()) throw Error("config line " + std::to_string(lineno) + ": empty section name");
        continue;
      }
      const auto eq = t.find('=');
      if (eq == std::string::npos) throw Error("config line " + std::to_string(lineno) + ": expected key = value");
      const std::string key = trim(t.substr(0, eq));
      if (key.empty()) throw Error("config line " + std::to_string(lineno) + ": empty key");
      const std::string full = section.empty() ? key : section + "." + key;
      if (cfg.values_.count(full)) throw Error("config: duplicate key " + full);
      cfg.values_[full] = trim(t.substr(eq + 1));
    }
    return cfg;
  }

  static Config load(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw Error("cannot read config " + path.string());
    return parse(is);
  }

  /// Throws on the first key not in the allowed set.
  void check_keys(const std::set<std::string>& allowed) const {
    for (const auto& [k, v] : values_)
      if (!allowed.count(k)) throw Error("config: unknown key " + k);
  }

  bool has(const std::string& key) const { return values_.count(key) != 0; }

  std::string get(const std::string& key, const std::string& fallback) const {
    const auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
  }

  double number(const std::string& key, double fallback) const {
    return has(key) ? parse_double(values_.at(key), key) : fallback;
  }

  long long integer(const std::string& key, long long fallback) const {
    return has(key) ? parse_int(values_.at(key), key) : fallback;
  }

  /// Comma or whitespace separated list of numbers.
  std::vector<double> numbers(const std::string& key, std::vector<double> fallback) const {
    if (!has(key)) return fallback;
    std::vector<double> out;
    std::string s = values_.at(key);
    std::replace(s.begin(), s.end(), ',', ' ');
    std::istringstream ss(s);
    for (std::string t; ss >> t;) out.push_back(parse_double(t, key));
    if (out.empty()) throw Error("config: " + key + " must not be empty");
    return out;
  }

  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
  }

  std::map<std::string, std::string> values_;
};

/// 64-bit FNV-1a hash, used to fingerprint configurations in reports.
inline std::uint64_t fnv1a(const std::string& data) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace varexp
