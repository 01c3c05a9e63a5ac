#pragma once

// Plain-text key=value configuration for TrainConfig. Lines starting with
// '#' are comments. Grid sizes accept "n" (cube) or "nx x ny x nz"; lists
// are comma separated.

#include <charconv>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "nvv/error.hpp"
#include "nvv/trainer.hpp"

namespace nvv {

namespace detail {

inline std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  const auto e = s.find_last_not_of(" \t\r");
  return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
}

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep)) out.push_back(trim(item));
  return out;
}

template <class N>
N parse_number(const std::string& key, const std::string& v) {
  N out{};
  const char* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end) throw config_error("bad value '" + v + "' for " + key);
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
  if (v == "0" || v == "false" || v == "no" || v == "off") return false;
  throw config_error("bad boolean '" + v + "' for " + key);
}

inline Dims3 parse_dims(const std::string& key, const std::string& v) {
  const auto parts = split(v, 'x');
  if (parts.size() == 1) {
    const int n = parse_number<int>(key, parts[0]);
    return {n, n, n};
  }
  if (parts.size() != 3) throw config_error("bad grid size '" + v + "' for " + key);
  return {parse_number<int>(key, parts[0]), parse_number<int>(key, parts[1]), parse_number<int>(key, parts[2])};
}

inline std::vector<int> parse_ints(const std::string& key, const std::string& v) {
  std::vector<int> out;
  for (const auto& p : split(v, ',')) out.push_back(parse_number<int>(key, p));
  return out;
}

inline std::string dims_text(Dims3 d) {
  return std::to_string(d.nx) + "x" + std::to_string(d.ny) + "x" + std::to_string(d.nz);
}

}  // namespace detail

/// Sets one TrainConfig field by name; false if the key is not a TrainConfig
/// field (callers may handle their own keys).
inline bool apply_setting(TrainConfig& c, const std::string& key, const std::string& value) {
  using namespace detail;
  const std::string v = trim(value);
  if (key == "lambda1") c.lambda1 = parse_number<double>(key, v);
  else if (key == "lambda2") c.lambda2 = parse_number<double>(key, v);
  else if (key == "gof_length") c.gof_length = parse_number<int>(key, v);
  else if (key == "iframe_iters") c.iframe_iters = parse_number<int>(key, v);
  else if (key == "pframe_iters") c.pframe_iters = parse_number<int>(key, v);
  else if (key == "rays_per_batch") c.rays_per_batch = parse_number<int>(key, v);
  else if (key == "samples_per_ray") c.samples_per_ray = parse_number<int>(key, v);
  else if (key == "lr_grid") c.lr_grid = parse_number<double>(key, v);
  else if (key == "lr_mlp") c.lr_mlp = parse_number<double>(key, v);
  else if (key == "lr_laplace") c.lr_laplace = parse_number<double>(key, v);
  else if (key == "init_b") c.init_b = parse_number<double>(key, v);
  else if (key == "init_grid") c.init_grid = parse_number<double>(key, v);
  else if (key == "seed") c.seed = parse_number<std::uint64_t>(key, v);
  else if (key == "warm_start") c.warm_start = parse_bool(key, v);
  else if (key == "iframe_warm_start") c.iframe_warm_start = parse_bool(key, v);
  else if (key == "freeze_mlp_after_first_gof") c.freeze_mlp_after_first_gof = parse_bool(key, v);
  else if (key == "coef_dims") c.layout.coef_dims = parse_dims(key, v);
  else if (key == "basis_dims") {
    c.layout.basis_dims.clear();
    for (const auto& p : split(v, ',')) c.layout.basis_dims.push_back(parse_dims(key, p));
  } else if (key == "basis_freqs") c.layout.basis_freqs = parse_ints(key, v);
  else if (key == "basis_channels") c.layout.basis_channels = parse_number<int>(key, v);
  else if (key == "mlp_hidden") c.layout.mlp_hidden = parse_ints(key, v);
  else if (key == "dir_octaves") c.layout.dir_octaves = parse_number<int>(key, v);
  else if (key == "background") {
    const auto p = split(v, ',');
    if (p.size() != 3) throw config_error("background needs three components");
    c.background = {parse_number<double>(key, p[0]), parse_number<double>(key, p[1]), parse_number<double>(key, p[2])};
  } else {
    return false;
  }
  return true;
}

/// key=value pairs of a config text; a repeated key keeps its last value.
inline std::map<std::string, std::string> parse_key_values(const std::string& text, const std::string& origin) {
  std::map<std::string, std::string> out;
  std::stringstream ss(text);
  std::string line;
  int n = 0;
  while (std::getline(ss, line)) {
    ++n;
    line = detail::trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw config_error(origin + ":" + std::to_string(n) + ": expected key=value");
    out[detail::trim(line.substr(0, eq))] = detail::trim(line.substr(eq + 1));
  }
  return out;
}

/// Applies every TrainConfig key in `kv`; unknown keys are returned.
inline std::map<std::string, std::string> apply_settings(TrainConfig& c, const std::map<std::string, std::string>& kv) {
  std::map<std::string, std::string> rest;
  for (const auto& [k, v] : kv)
    if (!apply_setting(c, k, v)) rest[k] = v;
  return rest;
}

inline std::map<std::string, std::string> read_config_file(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw io_error("cannot open config " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_key_values(ss.str(), path.string());
}

/// Text that apply_settings reads back into an equal TrainConfig.
inline std::string config_text(const TrainConfig& c) {
  std::ostringstream s;
  s.precision(17);
  auto ints = [](const std::vector<int>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
    return out;
  };
  std::string basis;
  for (std::size_t i = 0; i < c.layout.basis_dims.size(); ++i)
    basis += (i ? "," : "") + detail::dims_text(c.layout.basis_dims[i]);
  s << "lambda1=" << c.lambda1 << "\nlambda2=" << c.lambda2 << "\ngof_length=" << c.gof_length
    << "\niframe_iters=" << c.iframe_iters << "\npframe_iters=" << c.pframe_iters
    << "\nrays_per_batch=" << c.rays_per_batch << "\nsamples_per_ray=" << c.samples_per_ray
    << "\nlr_grid=" << c.lr_grid << "\nlr_mlp=" << c.lr_mlp << "\nlr_laplace=" << c.lr_laplace
    << "\ninit_b=" << c.init_b << "\ninit_grid=" << c.init_grid << "\nseed=" << c.seed
    << "\nwarm_start=" << c.warm_start << "\niframe_warm_start=" << c.iframe_warm_start
    << "\nfreeze_mlp_after_first_gof=" << c.freeze_mlp_after_first_gof
    << "\ncoef_dims=" << detail::dims_text(c.layout.coef_dims) << "\nbasis_dims=" << basis
    << "\nbasis_freqs=" << ints(c.layout.basis_freqs) << "\nbasis_channels=" << c.layout.basis_channels
    << "\nmlp_hidden=" << ints(c.layout.mlp_hidden) << "\ndir_octaves=" << c.layout.dir_octaves
    << "\nbackground=" << c.background.x << "," << c.background.y << "," << c.background.z << "\n";
  return s.str();
}

}  // namespace nvv
