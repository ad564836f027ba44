#pragma once

#include <set>
#include <string>
#include <vector>

#include "json.hpp"

namespace srmt {

/// Reads optional fields from a JSON object, collecting every problem
/// (wrong type, unknown key) instead of stopping at the first.
class FieldReader {
 public:
  FieldReader(const nlohmann::json& doc, std::string prefix, std::vector<std::string>& errors)
      : doc_(doc), prefix_(std::move(prefix)), errors_(errors) {
    if (!doc_.is_object()) errors_.push_back(where("") + "expected an object");
  }

  template <class T>
  bool get(const std::string& key, T& out) {
    seen_.insert(key);
    if (!doc_.is_object() || !doc_.contains(key)) return false;
    const auto& v = doc_.at(key);
    if constexpr (std::is_integral_v<T> && !std::is_same_v<T, bool>) {
      if (!v.is_number_integer()) {
        errors_.push_back(where(key) + "expected an integer");
        return false;
      }
    }
    try {
      out = v.template get<T>();
      return true;
    } catch (const nlohmann::json::exception&) {
      errors_.push_back(where(key) + "has the wrong type");
      return false;
    }
  }

  /// Sub-object (or null json when absent).
  const nlohmann::json* child(const std::string& key) {
    seen_.insert(key);
    if (!doc_.is_object() || !doc_.contains(key)) return nullptr;
    return &doc_.at(key);
  }

  void finish() {
    if (!doc_.is_object()) return;
    for (const auto& [key, value] : doc_.items())
      if (!seen_.count(key)) errors_.push_back(where(key) + "unknown key");
  }

  std::string where(const std::string& key) const {
    std::string path = prefix_.empty() ? key : (key.empty() ? prefix_ : prefix_ + "." + key);
    return path.empty() ? "" : path + ": ";
  }

 private:
  const nlohmann::json& doc_;
  std::string prefix_;
  std::vector<std::string>& errors_;
  std::set<std::string> seen_;
};

/// Joins problems into one message, one per line.
inline std::string join_problems(const std::vector<std::string>& problems) {
  std::string out;
  for (const auto& p : problems) out += (out.empty() ? "" : "\n") + p;
  return out;
}

}  // namespace srmt
