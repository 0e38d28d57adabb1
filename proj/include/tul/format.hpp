//
// Copyright 2026 The TUL Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
//

// Deterministic text output: "%.6g" report numbers, float-exact JSON numbers
// and flat key=value files.

#ifndef TUL_FORMAT_HPP_
#define TUL_FORMAT_HPP_

#include <cstdio>
#include <cstdlib>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

namespace tul {

using Json = nlohmann::json;

inline std::string FormatG(double v, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", digits, v);
  return buf;
}

// The double whose shortest decimal form is v printed with %.6g. The JSON
// serializer then emits exactly those digits.
inline double Report6(double v) { return std::strtod(FormatG(v, 6).c_str(), nullptr); }

// Nine significant digits round-trip any float; the JSON text stays short
// and parsing it back and narrowing returns the original bits.
inline double Exact9(float v) { return std::strtod(FormatG(v, 9).c_str(), nullptr); }

// Sorted-key JSON (nlohmann's default object is an ordered std::map).
inline std::string DumpJson(const Json& j) { return j.dump(2) + "\n"; }

// Flat `key=value` lines in the given order.
class KeyValueReport {
 public:
  void Add(const std::string& key, const std::string& value) {
    lines_.emplace_back(key, value);
  }
  void Add(const std::string& key, double value) { Add(key, FormatG(value)); }
  void Add(const std::string& key, std::uint64_t value) {
    Add(key, std::to_string(value));
  }
  void Add(const std::string& key, int value) { Add(key, std::to_string(value)); }

  void Merge(const KeyValueReport& other) {
    lines_.insert(lines_.end(), other.lines_.begin(), other.lines_.end());
  }

  std::string Text() const {
    std::string out;
    for (const auto& [k, v] : lines_) out += k + "=" + v + "\n";
    return out;
  }

  // Same content as JSON; numeric-looking values become numbers.
  Json ToJson() const {
    Json j = Json::object();
    for (const auto& [k, v] : lines_) {
      char* end = nullptr;
      const double d = std::strtod(v.c_str(), &end);
      if (!v.empty() && end && *end == '\0') {
        j[k] = Report6(d);
      } else {
        j[k] = v;
      }
    }
    return j;
  }

 private:
  std::vector<std::pair<std::string, std::string>> lines_;
};

}  // namespace tul

#endif  // TUL_FORMAT_HPP_
