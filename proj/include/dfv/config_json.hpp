#pragma once

#include <string>
#include <string_view>

#include "dfv/error.hpp"
#include "json.hpp"

namespace dfv {

using Json = nlohmann::json;

/// Reads a typed value, reporting the key on a type mismatch.
template <class T>
T json_value(const Json& v, std::string_view key) {
  try {
    return v.get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError("config key '" + std::string(key) + "' has the wrong type: " + v.dump());
  }
}

/// Parses a JSON document from a file; missing files and syntax errors are ConfigError.
Json read_json_file(const std::string& path);
/// Writes pretty-printed JSON with a trailing newline; failures are IoError.
void write_json_file(const std::string& path, const Json& j);

}  // namespace dfv
