#pragma once

#include <cstddef>
#include <filesystem>
#include <fstream>
#include <istream>
#include <stdexcept>
#include <string>

#include <json.hpp>

namespace simpeval::jsonl {

using nlohmann::json;

struct LineError : std::runtime_error {
  LineError(std::size_t line, const std::string& what)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line(line) {}
  std::size_t line;
};

// Calls fn(line_number, object) for every non-blank line. Lines that are not
// a JSON object raise LineError.
template <typename Fn>
void for_each_object(std::istream& in, Fn&& fn) {
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::exception& e) {
      throw LineError(line_no, e.what());
    }
    if (!obj.is_object()) throw LineError(line_no, "expected a JSON object");
    fn(line_no, obj);
  }
}

inline std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return in;
}

// Required string member; throws std::invalid_argument naming the key.
inline std::string get_string(const json& obj, const char* key) {
  auto it = obj.find(key);
  if (it == obj.end()) throw std::invalid_argument(std::string("missing field '") + key + "'");
  if (!it->is_string()) throw std::invalid_argument(std::string("field '") + key + "' is not a string");
  return it->get<std::string>();
}

}  // namespace simpeval::jsonl
