#pragma once

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "grrnn/common.hpp"

namespace grrnn {

struct ManifestEntry {
  std::string image_path;
  int writer_id = 0;
  int page_id = 0;
  int line_id = 0;
  std::string split;  // "train" or "test"
};

inline constexpr const char* kManifestHeader = "image_path\twriter_id\tpage_id\tline_id\tsplit";

inline void write_manifest(const std::string& path, const std::vector<ManifestEntry>& rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open manifest '" + path + "' for writing");
  out << kManifestHeader << "\n";
  for (const auto& r : rows)
    out << r.image_path << "\t" << r.writer_id << "\t" << r.page_id << "\t" << r.line_id << "\t"
        << r.split << "\n";
  if (!out) throw IoError("short write to manifest '" + path + "'");
}

inline std::vector<ManifestEntry> read_manifest(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open manifest '" + path + "' for reading");
  std::string line;
  if (!std::getline(in, line)) throw DataError("manifest '" + path + "' is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kManifestHeader)
    throw DataError("manifest '" + path + "' has unexpected header '" + line + "'");
  std::vector<ManifestEntry> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::istringstream ss(line);
    ManifestEntry e;
    std::string w, p, l;
    if (!std::getline(ss, e.image_path, '\t') || !std::getline(ss, w, '\t') ||
        !std::getline(ss, p, '\t') || !std::getline(ss, l, '\t') ||
        !std::getline(ss, e.split, '\t'))
      throw DataError("manifest '" + path + "' line " + std::to_string(lineno) +
                      ": expected 5 tab-separated fields");
    try {
      e.writer_id = std::stoi(w);
      e.page_id = std::stoi(p);
      e.line_id = std::stoi(l);
    } catch (...) {
      throw DataError("manifest '" + path + "' line " + std::to_string(lineno) +
                      ": non-numeric id field");
    }
    if (e.split != "train" && e.split != "test")
      throw DataError("manifest '" + path + "' line " + std::to_string(lineno) +
                      ": split must be train|test, got '" + e.split + "'");
    rows.push_back(std::move(e));
  }
  return rows;
}

}  // namespace grrnn
