#pragma once

#include <fstream>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "misinfo/error.hpp"

namespace misinfo {

inline constexpr int kModelFormatVersion = 1;

/// {"format_version": 1, "arch": ..., "params": {...}, "meta": {...}}
inline void write_model_file(const std::string& path, const std::string& arch, nlohmann::json params,
                             nlohmann::json meta) {
  nlohmann::json doc;
  doc["format_version"] = kModelFormatVersion;
  doc["arch"] = arch;
  doc["params"] = std::move(params);
  doc["meta"] = std::move(meta);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path);
  out << doc.dump() << '\n';
  if (!out) throw Error(ErrorKind::Io, "write failed for " + path);
}

inline nlohmann::json read_model_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(ss.str());
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorKind::CorruptFile, path + ": " + e.what());
  }
  if (!doc.is_object() || !doc.contains("format_version") || !doc["format_version"].is_number_integer())
    throw Error(ErrorKind::CorruptFile, path + ": missing format_version");
  if (doc["format_version"].get<int>() != kModelFormatVersion)
    throw Error(ErrorKind::UnsupportedVersion,
                path + ": format_version " + std::to_string(doc["format_version"].get<int>()));
  for (const char* key : {"arch", "params", "meta"})
    if (!doc.contains(key)) throw Error(ErrorKind::CorruptFile, path + ": missing \"" + key + "\"");
  return doc;
}

}  // namespace misinfo
