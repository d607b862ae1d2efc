#pragma once

#include <charconv>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "hapt3d/error.hpp"
#include "hapt3d/orchard.hpp"
#include "hapt3d/train.hpp"

namespace hapt3d {

using KeyValues = std::vector<std::pair<std::string, std::string>>;

namespace config_detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline double to_double(const std::string& key, const std::string& v) {
  double d = 0.0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), d);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size()) {
    throw ValidationError("config key '" + key + "': expected a number, got '" + v + "'");
  }
  return d;
}

inline long long to_int(const std::string& key, const std::string& v) {
  long long i = 0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), i);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size()) {
    throw ValidationError("config key '" + key + "': expected an integer, got '" + v + "'");
  }
  return i;
}

inline bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "on" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "off" || v == "no") return false;
  throw ValidationError("config key '" + key + "': expected true/false, got '" + v + "'");
}

inline std::vector<std::string> split(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string tok;
  while (std::getline(ss, tok, ',')) out.push_back(trim(tok));
  return out;
}

inline std::vector<double> to_doubles(const std::string& key, const std::string& v) {
  std::vector<double> out;
  for (const auto& t : split(v)) out.push_back(to_double(key, t));
  return out;
}

inline std::vector<int> to_ints(const std::string& key, const std::string& v) {
  std::vector<int> out;
  for (const auto& t : split(v)) out.push_back(static_cast<int>(to_int(key, t)));
  return out;
}

inline Range to_range(const std::string& key, const std::string& v) {
  const auto d = to_doubles(key, v);
  if (d.size() != 2) throw ValidationError("config key '" + key + "': expected 'min,max'");
  return {d[0], d[1]};
}

}  // namespace config_detail

// One `key = value` per line; `#` starts a comment. Order is preserved.
inline KeyValues parse_key_values(std::string_view text, const std::string& source = "config") {
  KeyValues out;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    std::string_view line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    const std::string t = config_detail::trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ValidationError(source + ":" + std::to_string(line_no) + ": expected 'key = value'");
    }
    std::string key = config_detail::trim(std::string_view(t).substr(0, eq));
    std::string value = config_detail::trim(std::string_view(t).substr(eq + 1));
    if (key.empty()) throw ValidationError(source + ":" + std::to_string(line_no) + ": empty key");
    out.emplace_back(std::move(key), std::move(value));
  }
  return out;
}

inline KeyValues read_key_values(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_key_values(ss.str(), path.string());
}

// Everything a CLI run can be configured with. Unknown keys are errors.
struct RunConfig {
  OrchardConfig orchard;
  TrainConfig train;
  std::string data_dir;
  std::string val_dir;

  void set(const std::string& key, const std::string& value) {
    const auto& table = setters();
    const auto it = table.find(key);
    if (it == table.end()) throw ValidationError("unknown config key '" + key + "'");
    it->second(*this, key, value);
  }

  void apply(const KeyValues& kv) {
    for (const auto& [k, v] : kv) set(k, v);
  }

  // Parses "key=value" overrides given on the command line.
  void apply_override(const std::string& assignment) {
    const auto kv = parse_key_values(assignment, "--set");
    if (kv.size() != 1) throw ValidationError("--set expects key=value, got '" + assignment + "'");
    set(kv[0].first, kv[0].second);
  }

  void validate() const {
    orchard.validate();
    train.validate();
  }

  static std::vector<std::string> keys() {
    std::vector<std::string> out;
    for (const auto& [k, f] : setters()) out.push_back(k);
    return out;
  }

 private:
  using Setter = std::function<void(RunConfig&, const std::string&, const std::string&)>;

  static const std::map<std::string, Setter>& setters() {
    using namespace config_detail;
    static const std::map<std::string, Setter> table = [] {
      std::map<std::string, Setter> t;
      auto real = [&](const std::string& k, double* (*field)(RunConfig&)) {
        t[k] = [field](RunConfig& c, const std::string& key, const std::string& v) { *field(c) = to_double(key, v); };
      };
      auto integer = [&](const std::string& k, int* (*field)(RunConfig&)) {
        t[k] = [field](RunConfig& c, const std::string& key, const std::string& v) {
          *field(c) = static_cast<int>(to_int(key, v));
        };
      };
      auto range = [&](const std::string& k, Range* (*field)(RunConfig&)) {
        t[k] = [field](RunConfig& c, const std::string& key, const std::string& v) { *field(c) = to_range(key, v); };
      };
      auto flag = [&](const std::string& k, bool* (*field)(RunConfig&)) {
        t[k] = [field](RunConfig& c, const std::string& key, const std::string& v) { *field(c) = to_bool(key, v); };
      };

      real("orchard.trees_per_tile", [](RunConfig& c) { return &c.orchard.trees_per_tile; });
      real("orchard.fruits_per_tree", [](RunConfig& c) { return &c.orchard.fruits_per_tree; });
      real("orchard.tile_extent", [](RunConfig& c) { return &c.orchard.tile_extent; });
      real("orchard.row_width", [](RunConfig& c) { return &c.orchard.row_width; });
      real("orchard.ground_roughness", [](RunConfig& c) { return &c.orchard.ground_roughness; });
      range("orchard.trunk_radius", [](RunConfig& c) { return &c.orchard.trunk_radius; });
      range("orchard.trunk_height", [](RunConfig& c) { return &c.orchard.trunk_height; });
      range("orchard.canopy_radius_xy", [](RunConfig& c) { return &c.orchard.canopy_radius_xy; });
      range("orchard.canopy_radius_z", [](RunConfig& c) { return &c.orchard.canopy_radius_z; });
      range("orchard.apple_radius", [](RunConfig& c) { return &c.orchard.apple_radius; });
      integer("orchard.poles_per_tile", [](RunConfig& c) { return &c.orchard.poles_per_tile; });
      range("orchard.pole_height", [](RunConfig& c) { return &c.orchard.pole_height; });
      real("orchard.pole_radius", [](RunConfig& c) { return &c.orchard.pole_radius; });
      integer("orchard.ground_points", [](RunConfig& c) { return &c.orchard.ground_points; });
      integer("orchard.trunk_points", [](RunConfig& c) { return &c.orchard.trunk_points; });
      integer("orchard.canopy_points", [](RunConfig& c) { return &c.orchard.canopy_points; });
      integer("orchard.apple_points", [](RunConfig& c) { return &c.orchard.apple_points; });
      integer("orchard.pole_points", [](RunConfig& c) { return &c.orchard.pole_points; });
      real("orchard.sensor_noise_sigma", [](RunConfig& c) { return &c.orchard.sensor_noise_sigma; });
      real("orchard.color_noise_sigma", [](RunConfig& c) { return &c.orchard.color_noise_sigma; });

      real("train.lr", [](RunConfig& c) { return &c.train.optim.lr; });
      real("train.weight_decay", [](RunConfig& c) { return &c.train.optim.weight_decay; });
      real("train.beta1", [](RunConfig& c) { return &c.train.optim.beta1; });
      real("train.beta2", [](RunConfig& c) { return &c.train.optim.beta2; });
      real("train.eps", [](RunConfig& c) { return &c.train.optim.eps; });
      integer("train.epochs", [](RunConfig& c) { return &c.train.epochs; });
      integer("train.eval_every", [](RunConfig& c) { return &c.train.eval_every; });
      real("train.grad_clip", [](RunConfig& c) { return &c.train.grad_clip; });
      t["train.seed"] = [](RunConfig& c, const std::string& key, const std::string& v) {
        const long long s = to_int(key, v);
        if (s < 0) throw ValidationError("train.seed must be non-negative");
        c.train.seed = static_cast<std::uint64_t>(s);
      };
      t["train.batch_size"] = [](RunConfig&, const std::string& key, const std::string& v) {
        if (to_int(key, v) != 1) throw ValidationError("train.batch_size is fixed at 1");
      };

      real("network.voxel_size", [](RunConfig& c) { return &c.train.network.voxel_size; });
      real("network.norm_eps", [](RunConfig& c) { return &c.train.network.norm_eps; });
      real("network.norm_momentum", [](RunConfig& c) { return &c.train.network.norm_momentum; });
      t["network.skip_scheme"] = [](RunConfig& c, const std::string&, const std::string& v) {
        c.train.network.skip_scheme = parse_scheme(v);
      };
      t["network.encoder_channels"] = [](RunConfig& c, const std::string& key, const std::string& v) {
        c.train.network.encoder_channels = to_ints(key, v);
        c.train.network.stages = static_cast<int>(c.train.network.encoder_channels.size());
      };
      t["network.decoder_channels"] = [](RunConfig& c, const std::string& key, const std::string& v) {
        c.train.network.decoder_channels = to_ints(key, v);
      };

      real("loss.w_sem", [](RunConfig& c) { return &c.train.loss.w_sem; });
      real("loss.w_tree", [](RunConfig& c) { return &c.train.loss.w_tree; });
      real("loss.w_ins", [](RunConfig& c) { return &c.train.loss.w_ins; });
      real("loss.eta_tree", [](RunConfig& c) { return &c.train.loss.eta_tree; });
      real("loss.eta_instance", [](RunConfig& c) { return &c.train.loss.eta_instance; });
      t["loss.class_weights"] = [](RunConfig& c, const std::string& key, const std::string& v) {
        c.train.loss.class_weights = v.empty() ? std::vector<double>{} : to_doubles(key, v);
      };
      t["loss.centroid"] = [](RunConfig& c, const std::string& key, const std::string& v) {
        if (v == "embedding") {
          c.train.loss.centroid = CentroidMode::kEmbeddingMean;
        } else if (v == "spatial") {
          c.train.loss.centroid = CentroidMode::kSpatial;
        } else {
          throw ValidationError("config key '" + key + "': expected embedding or spatial");
        }
      };

      flag("augment.scale", [](RunConfig& c) { return &c.train.augment.scale_enabled; });
      flag("augment.rotation", [](RunConfig& c) { return &c.train.augment.rotation_enabled; });
      flag("augment.shear", [](RunConfig& c) { return &c.train.augment.shear_enabled; });
      flag("augment.elastic", [](RunConfig& c) { return &c.train.augment.elastic_enabled; });
      flag("augment.color", [](RunConfig& c) { return &c.train.augment.color_enabled; });
      range("augment.scale_range", [](RunConfig& c) { return &c.train.augment.scale; });
      real("augment.max_tilt", [](RunConfig& c) { return &c.train.augment.max_tilt; });
      real("augment.shear_max", [](RunConfig& c) { return &c.train.augment.shear; });
      real("augment.color_sigma", [](RunConfig& c) { return &c.train.augment.color_sigma; });
      real("augment.elastic_spacing", [](RunConfig& c) { return &c.train.augment.elastic_spacing; });
      real("augment.elastic_sigma", [](RunConfig& c) { return &c.train.augment.elastic_sigma; });

      integer("cluster.tree.min_cluster_size", [](RunConfig& c) { return &c.train.tree_cluster.min_cluster_size; });
      integer("cluster.tree.min_samples", [](RunConfig& c) { return &c.train.tree_cluster.min_samples; });
      integer("cluster.instance.min_cluster_size",
              [](RunConfig& c) { return &c.train.instance_cluster.min_cluster_size; });
      integer("cluster.instance.min_samples", [](RunConfig& c) { return &c.train.instance_cluster.min_samples; });

      t["paths.data"] = [](RunConfig& c, const std::string&, const std::string& v) { c.data_dir = v; };
      t["paths.val"] = [](RunConfig& c, const std::string&, const std::string& v) { c.val_dir = v; };
      return t;
    }();
    return table;
  }
};

}  // namespace hapt3d
