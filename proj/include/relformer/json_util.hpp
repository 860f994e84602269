#pragma once

// Strict JSON helpers shared by every config reader.

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "relformer/errors.hpp"

namespace relformer::json {

// Throws ConfigError naming the first key not in `allowed`.
void RejectUnknownKeys(const nlohmann::json& j, const std::vector<std::string>& allowed, const std::string& where);

// Reads j[key] into out when present; type errors become ConfigError.
template <typename V>
void Read(const nlohmann::json& j, const char* key, V& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<V>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(where + "." + key + ": " + e.what());
  }
}

// Parses a file; throws IoError if unreadable and ConfigError if malformed.
nlohmann::json ParseFile(const std::string& path);

// 64-bit FNV-1a.
std::uint64_t Fnv1a(std::string_view bytes, std::uint64_t h = 1469598103934665603ull);

std::string HexHash(std::uint64_t h);

}  // namespace relformer::json
