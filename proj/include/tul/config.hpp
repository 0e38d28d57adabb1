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

// Run configuration: flat `key=value` text, `#` comments, comma-separated
// lists. Every key has a default; Text() writes the effective values back
// out in a form ParseConfig() reads unchanged.

#ifndef TUL_CONFIG_HPP_
#define TUL_CONFIG_HPP_

#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "tul/error.hpp"
#include "tul/explain.hpp"
#include "tul/format.hpp"
#include "tul/graph.hpp"
#include "tul/network.hpp"
#include "tul/unlearn.hpp"

namespace tul {

struct RunConfig {
  std::uint64_t seed = 7;
  std::size_t num_targets = 3;
  std::size_t num_samples = 4096;
  double cooccurrence = 0.6;
  double train_fraction = 0.75;
  std::size_t epochs = 30;
  std::size_t batch_size = 32;
  double lr = 0.05;
  double max_grad_norm = 10.0;
  std::size_t sigma = 5;
  double delta = 0.1;
  std::size_t n_ref = 8;
  bool abs_alpha = false;
  std::vector<std::size_t> unlearn_targets{0};
  std::size_t recover_epochs = 0;
  double recover_lr = 0.05;
  std::vector<std::size_t> sweep_sigmas{3, 4, 5};
  std::vector<double> sweep_deltas{0.05, 0.1, 0.2, 0.3, 0.4, 0.5};
  std::string out_dir = "tul_out";

  GenerateConfig generate() const {
    return {num_samples, num_targets, seed, cooccurrence};
  }
  TrainConfig train() const {
    TrainConfig c;
    c.epochs = epochs;
    c.batch_size = batch_size;
    c.lr = static_cast<float>(lr);
    c.seed = seed;
    c.max_grad_norm = static_cast<float>(max_grad_norm);
    return c;
  }
  PipelineConfig pipeline() const {
    PipelineConfig p;
    p.unlearning_targets = unlearn_targets;
    p.sigma = sigma;
    p.delta = delta;
    p.n_ref = n_ref;
    p.abs_alpha = abs_alpha;
    p.recover = {recover_epochs, static_cast<float>(recover_lr), batch_size, seed};
    p.seed = seed;
    return p;
  }

  std::string Text() const;
  void Set(const std::string& key, const std::string& value);
  void Validate() const;
};

namespace detail {

[[noreturn]] inline void BadValue(const std::string& key, const std::string& value,
                                  const char* want) {
  Fail(ErrorKind::kValidation, key, "\"" + value + "\" is not " + want);
}

inline std::string Trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline std::uint64_t ParseUint(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || ec != std::errc() || ptr != v.data() + v.size()) {
    BadValue(key, v, "a non-negative integer");
  }
  return out;
}

inline double ParseDouble(const std::string& key, const std::string& v) {
  char* end = nullptr;
  const double out = std::strtod(v.c_str(), &end);
  if (v.empty() || end != v.c_str() + v.size() || !std::isfinite(out)) {
    BadValue(key, v, "a finite number");
  }
  return out;
}

inline bool ParseBool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  BadValue(key, v, "true or false");
}

inline std::vector<std::string> SplitList(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(Trim(item));
  return out;
}

inline std::string JoinList(const std::vector<std::size_t>& items) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i)
    out += (i ? "," : "") + std::to_string(items[i]);
  return out;
}

// Shortest text that parses back to the same double.
inline std::string ExactDouble(double v) {
  for (int digits = 6; digits <= 17; ++digits) {
    std::string s = FormatG(v, digits);
    if (std::strtod(s.c_str(), nullptr) == v) return s;
  }
  return FormatG(v, 17);
}

}  // namespace detail

inline void RunConfig::Set(const std::string& key, const std::string& raw) {
  using namespace detail;
  const std::string v = Trim(raw);
  auto as_size = [&] { return static_cast<std::size_t>(ParseUint(key, v)); };
  if (key == "seed") seed = ParseUint(key, v);
  else if (key == "num_targets") num_targets = as_size();
  else if (key == "num_samples") num_samples = as_size();
  else if (key == "cooccurrence") cooccurrence = ParseDouble(key, v);
  else if (key == "train_fraction") train_fraction = ParseDouble(key, v);
  else if (key == "epochs") epochs = as_size();
  else if (key == "batch_size") batch_size = as_size();
  else if (key == "lr") lr = ParseDouble(key, v);
  else if (key == "max_grad_norm") max_grad_norm = ParseDouble(key, v);
  else if (key == "sigma") sigma = as_size();
  else if (key == "delta") delta = ParseDouble(key, v);
  else if (key == "n_ref") n_ref = as_size();
  else if (key == "abs_alpha") abs_alpha = ParseBool(key, v);
  else if (key == "recover_epochs") recover_epochs = as_size();
  else if (key == "recover_lr") recover_lr = ParseDouble(key, v);
  else if (key == "out_dir") out_dir = v;
  else if (key == "unlearn_targets" || key == "sweep_sigmas") {
    std::vector<std::size_t> items;
    if (!v.empty())
      for (const auto& s : SplitList(v)) items.push_back(ParseUint(key, s));
    (key == "unlearn_targets" ? unlearn_targets : sweep_sigmas) = std::move(items);
  } else if (key == "sweep_deltas") {
    sweep_deltas.clear();
    if (!v.empty())
      for (const auto& s : SplitList(v)) sweep_deltas.push_back(ParseDouble(key, s));
  } else {
    Fail(ErrorKind::kValidation, key, "unknown config key");
  }
}

inline std::string RunConfig::Text() const {
  using detail::ExactDouble;
  KeyValueReport r;
  r.Add("seed", std::to_string(seed));
  r.Add("num_targets", std::to_string(num_targets));
  r.Add("num_samples", std::to_string(num_samples));
  r.Add("cooccurrence", ExactDouble(cooccurrence));
  r.Add("train_fraction", ExactDouble(train_fraction));
  r.Add("epochs", std::to_string(epochs));
  r.Add("batch_size", std::to_string(batch_size));
  r.Add("lr", ExactDouble(lr));
  r.Add("max_grad_norm", ExactDouble(max_grad_norm));
  r.Add("sigma", std::to_string(sigma));
  r.Add("delta", ExactDouble(delta));
  r.Add("n_ref", std::to_string(n_ref));
  r.Add("abs_alpha", abs_alpha ? "true" : "false");
  r.Add("unlearn_targets", detail::JoinList(unlearn_targets));
  r.Add("recover_epochs", std::to_string(recover_epochs));
  r.Add("recover_lr", ExactDouble(recover_lr));
  r.Add("sweep_sigmas", detail::JoinList(sweep_sigmas));
  std::string deltas;
  for (std::size_t i = 0; i < sweep_deltas.size(); ++i)
    deltas += (i ? "," : "") + ExactDouble(sweep_deltas[i]);
  r.Add("sweep_deltas", deltas);
  r.Add("out_dir", out_dir);
  return r.Text();
}

// Number of conv layers in the default architecture; sigma is checked
// against it before any work starts.
inline std::size_t DefaultConvLayers() {
  std::size_t n = 0;
  for (const LayerSpec& s : DefaultArchitecture(2)) n += s.kind == LayerKind::kConv;
  return n;
}

inline void RunConfig::Validate() const {
  auto fail = [](const char* field, const std::string& msg) {
    Fail(ErrorKind::kValidation, field, msg);
  };
  if (num_targets < 2 || num_targets > kMaxTargets) fail("num_targets", "must be in [2,5]");
  if (num_samples < 2) fail("num_samples", "must be >= 2");
  if (!(cooccurrence >= 0.0 && cooccurrence <= 1.0)) fail("cooccurrence", "must be in [0,1]");
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    fail("train_fraction", "must be in (0,1)");
  }
  if (epochs == 0) fail("epochs", "must be >= 1");
  if (batch_size == 0) fail("batch_size", "must be >= 1");
  if (!(lr >= 0.0)) fail("lr", "must be >= 0");
  if (!(max_grad_norm >= 0.0)) fail("max_grad_norm", "must be >= 0");
  const std::size_t L = DefaultConvLayers();
  if (sigma == 0 || sigma > L) {
    fail("sigma", "must be in [1," + std::to_string(L) + "]");
  }
  if (!(delta > 0.0 && delta <= 1.0)) fail("delta", "must be in (0,1]");
  if (n_ref == 0) fail("n_ref", "must be >= 1");
  RemainingTargets(unlearn_targets, num_targets);
  if (!(recover_lr >= 0.0)) fail("recover_lr", "must be >= 0");
  for (std::size_t s : sweep_sigmas)
    if (s == 0 || s > L) fail("sweep_sigmas", "each sigma must be in [1," + std::to_string(L) + "]");
  for (double d : sweep_deltas)
    if (!(d > 0.0 && d <= 1.0)) fail("sweep_deltas", "each delta must be in (0,1]");
  if (out_dir.empty()) fail("out_dir", "must not be empty");
}

// Applies `key=value` lines on top of `base`.
inline RunConfig ParseConfig(const std::string& text, RunConfig base = {}) {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    const std::string t = detail::Trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      Fail(ErrorKind::kValidation, "line " + std::to_string(line_no),
           "expected key=value");
    }
    base.Set(detail::Trim(t.substr(0, eq)), t.substr(eq + 1));
  }
  return base;
}

}  // namespace tul

#endif  // TUL_CONFIG_HPP_
