#pragma once

#include <fstream>
#include <string>

#include <json.hpp>

#include "upt/head.hpp"

namespace upt {

// Checkpoint: a self-describing JSON container holding the head configuration
// and every parameter as a named array (name, shape, row-major 64-bit values),
// in registration order.

inline void save_checkpoint(const std::string& path, const InteractionHead& head) {
  nlohmann::json j;
  j["format"] = "upt-checkpoint";
  j["version"] = 1;
  const HeadConfig& c = head.config;
  j["config"] = {{"feature_dim", c.feature_dim}, {"heads", c.heads},
                 {"coop_layers", c.coop_layers}, {"comp_layers", c.comp_layers},
                 {"branches", c.branches},       {"num_actions", c.num_actions},
                 {"ffn_dim", c.ffn_dim},         {"variant", to_string(c.variant)},
                 {"log_eps", c.log_eps},         {"ln_eps", c.ln_eps}};
  auto arrays = nlohmann::json::array();
  for (const auto& [name, t] : head.params.entries()) {
    arrays.push_back({{"name", name}, {"shape", t.shape()}, {"data", t.values()}});
  }
  j["arrays"] = std::move(arrays);
  auto out = detail::open_output(path);
  out << j.dump() << '\n';
}

inline InteractionHead load_checkpoint(const std::string& path) {
  auto in = detail::open_input(path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw io_error("checkpoint " + path + ": " + e.what());
  }
  if (!j.contains("format") || j["format"] != "upt-checkpoint") {
    throw io_error("checkpoint " + path + ": missing or unexpected 'format' field");
  }
  const auto& cj = j.at("config");
  HeadConfig cfg;
  cfg.feature_dim = cj.at("feature_dim").get<std::size_t>();
  cfg.heads = cj.at("heads").get<std::size_t>();
  cfg.coop_layers = cj.at("coop_layers").get<std::size_t>();
  cfg.comp_layers = cj.at("comp_layers").get<std::size_t>();
  cfg.branches = cj.at("branches").get<std::size_t>();
  cfg.num_actions = cj.at("num_actions").get<std::size_t>();
  cfg.ffn_dim = cj.at("ffn_dim").get<std::size_t>();
  cfg.variant = coop_variant_from_string(cj.at("variant").get<std::string>());
  cfg.log_eps = cj.at("log_eps").get<double>();
  cfg.ln_eps = cj.at("ln_eps").get<double>();

  InteractionHead head = make_interaction_head(cfg, 0);
  const auto& arrays = j.at("arrays");
  if (arrays.size() != head.params.entries().size()) {
    throw io_error("checkpoint " + path + ": expected " +
                   std::to_string(head.params.entries().size()) + " arrays, found " +
                   std::to_string(arrays.size()));
  }
  for (const auto& aj : arrays) {
    std::string name = aj.at("name").get<std::string>();
    Tensor* t = head.params.find(name);
    if (!t) throw io_error("checkpoint " + path + ": unknown array '" + name + "'");
    Shape shape = aj.at("shape").get<Shape>();
    if (shape != t->shape()) {
      throw io_error("checkpoint " + path + ": array '" + name + "' has shape " +
                     detail::shape_str(shape) + ", expected " + detail::shape_str(t->shape()));
    }
    auto data = aj.at("data").get<std::vector<double>>();
    if (data.size() != t->numel()) {
      throw io_error("checkpoint " + path + ": array '" + name + "' has wrong length");
    }
    t->values() = std::move(data);
  }
  return head;
}

}  // namespace upt
