#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "kog/common.hpp"

namespace kog {

// 2D -> 3D lifting model configuration. Defaults are the full-size preset;
// preset_mini() gives the lightweight variant (dim 64, order 5).
struct KogConfig {
  int layers = 5;
  int dim = 128;
  int heads = 4;
  int order = 4;
  int delta = 2;
  bool directed = true;
  double dropout = 0.1;
  int joints = 16;

  static KogConfig preset_default() { return KogConfig{}; }
  static KogConfig preset_mini() {
    KogConfig c;
    c.dim = 64;
    c.order = 5;
    return c;
  }

  void validate() const {
    if (layers < 1) throw ConfigError("kog: layers must be >= 1");
    if (dim < 1 || heads < 1 || dim % heads != 0)
      throw ConfigError("kog: dim must be positive and divisible by heads");
    if (order < 0) throw ConfigError("kog: order must be >= 0");
    if (delta < 1) throw ConfigError("kog: delta must be >= 1");
    if (dropout < 0.0 || dropout >= 1.0)
      throw ConfigError("kog: dropout must be in [0, 1)");
    if (joints < 1) throw ConfigError("kog: joints must be >= 1");
  }
};

inline void to_json(nlohmann::json& j, const KogConfig& c) {
  j = nlohmann::json{{"layers", c.layers}, {"dim", c.dim},
                     {"heads", c.heads},   {"order", c.order},
                     {"delta", c.delta},   {"directed", c.directed},
                     {"dropout", c.dropout}, {"joints", c.joints}};
}

inline void from_json(const nlohmann::json& j, KogConfig& c) {
  c = KogConfig{};
  if (j.contains("preset")) {
    std::string p = j.at("preset").get<std::string>();
    if (p == "mini")
      c = KogConfig::preset_mini();
    else if (p != "default")
      throw ConfigError("unknown kog preset '" + p + "'");
  }
  if (j.contains("layers")) c.layers = j.at("layers").get<int>();
  if (j.contains("dim")) c.dim = j.at("dim").get<int>();
  if (j.contains("heads")) c.heads = j.at("heads").get<int>();
  if (j.contains("order")) c.order = j.at("order").get<int>();
  if (j.contains("delta")) c.delta = j.at("delta").get<int>();
  if (j.contains("directed")) c.directed = j.at("directed").get<bool>();
  if (j.contains("dropout")) c.dropout = j.at("dropout").get<double>();
  if (j.contains("joints")) c.joints = j.at("joints").get<int>();
  c.validate();
}

// 3D pose -> mesh shape model configuration. `schedule` holds the five
// upsample targets; the attention blocks therefore run on node counts
// [joints, schedule[0..3]] and the output has schedule.back() vertices.
struct GaseConfig {
  int dim = 32;
  double dropout = 0.2;
  int joints = 21;
  std::vector<int> schedule = {48, 96, 192, 389, 778};
  int cheb_order = 2;

  int vertices() const { return schedule.back(); }

  void validate() const {
    if (dim < 1) throw ConfigError("gase: dim must be >= 1");
    if (dropout < 0.0 || dropout >= 1.0)
      throw ConfigError("gase: dropout must be in [0, 1)");
    if (joints < 1) throw ConfigError("gase: joints must be >= 1");
    if (schedule.size() != 5)
      throw ConfigError("gase: schedule must list 5 node counts, got " +
                        std::to_string(schedule.size()));
    int prev = joints;
    for (int s : schedule) {
      if (s <= prev)
        throw ConfigError("gase: schedule must be strictly increasing from the "
                          "joint count; " +
                          std::to_string(s) + " follows " + std::to_string(prev));
      prev = s;
    }
    if (cheb_order < 1) throw ConfigError("gase: chebyshev order must be >= 1");
  }
};

inline void to_json(nlohmann::json& j, const GaseConfig& c) {
  j = nlohmann::json{{"dim", c.dim},           {"dropout", c.dropout},
                     {"joints", c.joints},     {"schedule", c.schedule},
                     {"cheb_order", c.cheb_order}};
}

inline void from_json(const nlohmann::json& j, GaseConfig& c) {
  c = GaseConfig{};
  if (j.contains("dim")) c.dim = j.at("dim").get<int>();
  if (j.contains("dropout")) c.dropout = j.at("dropout").get<double>();
  if (j.contains("joints")) c.joints = j.at("joints").get<int>();
  if (j.contains("schedule")) c.schedule = j.at("schedule").get<std::vector<int>>();
  if (j.contains("cheb_order")) c.cheb_order = j.at("cheb_order").get<int>();
  c.validate();
}

}  // namespace kog
