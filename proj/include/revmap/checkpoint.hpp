#pragma once

// Self-describing checkpoint document (JSON):
//
//   {
//     "format": "revmap-checkpoint", "version": 1, "kind": "scn-reg",
//     "architecture": { family, state_dim, action_dim, activation, strict_odd,
//                       encoder_hidden, decoder_hidden, feature_width,
//                       feature_hidden, tensor_hidden,
//                       hyper_layout: "row-major",
//                       action_space: { n, c, max_norm } },
//     "parameters": [ { name, rows, cols, data: [row-major values] }, ... ],
//     "metadata": { ... free-form training provenance ... }
//   }
//
// Parameters appear in declaration order (encoder, then decoder). Tensor
// layer H arrays are the h x (w*n) reshape with H[i,k,j] at column k*n + j.

#include <fstream>
#include <string>

#include <json.hpp>

#include "revmap/action_maps.hpp"

namespace revmap {

inline constexpr const char* kCheckpointFormat = "revmap-checkpoint";

inline nlohmann::json architecture_to_json(const Architecture& a) {
  return {{"family", to_string(a.family)},
          {"state_dim", a.state_dim},
          {"action_dim", a.action_dim},
          {"activation", to_string(a.activation)},
          {"strict_odd", a.strict_odd},
          {"encoder_hidden", a.encoder_hidden},
          {"decoder_hidden", a.decoder_hidden},
          {"feature_width", a.feature_width},
          {"feature_hidden", a.feature_hidden},
          {"tensor_hidden", a.tensor_hidden},
          {"hyper_layout", "row-major"},
          {"action_space", {{"n", a.action_space.n}, {"c", a.action_space.c}, {"max_norm", a.action_space.max_norm}}}};
}

inline Architecture architecture_from_json(const nlohmann::json& j) {
  Architecture a;
  a.family = parse_family(j.at("family").get<std::string>());
  a.state_dim = j.at("state_dim").get<Eigen::Index>();
  a.action_dim = j.at("action_dim").get<Eigen::Index>();
  a.activation = parse_activation(j.at("activation").get<std::string>());
  a.strict_odd = j.at("strict_odd").get<bool>();
  a.encoder_hidden = j.at("encoder_hidden").get<std::vector<Eigen::Index>>();
  a.decoder_hidden = j.at("decoder_hidden").get<std::vector<Eigen::Index>>();
  a.feature_width = j.at("feature_width").get<Eigen::Index>();
  a.feature_hidden = j.at("feature_hidden").get<std::vector<Eigen::Index>>();
  a.tensor_hidden = j.at("tensor_hidden").get<std::vector<Eigen::Index>>();
  if (j.value("hyper_layout", std::string("row-major")) != "row-major")
    throw ConfigError("checkpoint: unsupported hyper_layout");
  const auto& s = j.at("action_space");
  a.action_space = ActionSpace{s.at("n").get<Eigen::Index>(), s.at("c").get<double>(), s.at("max_norm").get<double>()};
  a.validate();
  return a;
}

inline nlohmann::json checkpoint_to_json(const Model& m, const nlohmann::json& metadata = nlohmann::json::object()) {
  nlohmann::json params = nlohmann::json::array();
  for (const Parameter* p : m.parameters()) {
    std::vector<double> data;
    data.reserve(static_cast<std::size_t>(p->value.size()));
    for (Eigen::Index r = 0; r < p->value.rows(); ++r)
      for (Eigen::Index c = 0; c < p->value.cols(); ++c) data.push_back(p->value(r, c));
    params.push_back({{"name", p->name}, {"rows", p->value.rows()}, {"cols", p->value.cols()}, {"data", std::move(data)}});
  }
  return {{"format", kCheckpointFormat},
          {"version", 1},
          {"kind", m.kind},
          {"architecture", architecture_to_json(m.arch)},
          {"parameters", std::move(params)},
          {"metadata", metadata}};
}

inline Model checkpoint_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format").get<std::string>() != kCheckpointFormat) throw InputError("checkpoint: wrong format tag");
    Model m = Model::build(j.at("kind").get<std::string>(), architecture_from_json(j.at("architecture")), 0);
    const auto& params = j.at("parameters");
    auto targets = m.parameters();
    if (params.size() != targets.size())
      throw InputError("checkpoint: expected " + std::to_string(targets.size()) + " parameter arrays, found " +
                       std::to_string(params.size()));
    for (std::size_t i = 0; i < targets.size(); ++i) {
      const auto& pj = params[i];
      Parameter& p = *targets[i];
      if (pj.at("name").get<std::string>() != p.name)
        throw InputError("checkpoint: parameter " + std::to_string(i) + " is '" + pj.at("name").get<std::string>() +
                         "', expected '" + p.name + "'");
      const auto rows = pj.at("rows").get<Eigen::Index>();
      const auto cols = pj.at("cols").get<Eigen::Index>();
      const auto& data = pj.at("data");
      if (rows != p.value.rows() || cols != p.value.cols() || static_cast<Eigen::Index>(data.size()) != rows * cols)
        throw InputError("checkpoint: shape mismatch for '" + p.name + "'");
      for (Eigen::Index r = 0; r < rows; ++r)
        for (Eigen::Index c = 0; c < cols; ++c) p.value(r, c) = data[static_cast<std::size_t>(r * cols + c)].get<double>();
      if (!p.value.allFinite()) throw InputError("checkpoint: nonfinite values in '" + p.name + "'");
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("checkpoint: malformed document: ") + e.what());
  }
}

inline void save_checkpoint(const std::string& path, const Model& m, const nlohmann::json& metadata = nlohmann::json::object()) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FileError("cannot open '" + path + "' for writing");
  os << checkpoint_to_json(m, metadata).dump() << '\n';
  if (!os) throw FileError("failed writing '" + path + "'");
}

inline nlohmann::json read_json_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FileError("cannot open '" + path + "'");
  try {
    return nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw InputError("'" + path + "' is not valid JSON: " + e.what());
  }
}

inline Model load_checkpoint(const std::string& path) { return checkpoint_from_json(read_json_file(path)); }

}  // namespace revmap
