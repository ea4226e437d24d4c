#pragma once

// Model checkpoints as JSON: configuration, normalizer, block layout and the
// flat parameter vector. Doubles are written in shortest round-trip form, so
// save/load is exact.

#include <filesystem>
#include <fstream>
#include <string>

#include "corrcast/error.hpp"
#include "corrcast/neural/model.hpp"
#include "json.hpp"

namespace corrcast::nn {

inline constexpr const char* kModelSchema = "corrcast.model";
inline constexpr int kModelSchemaVersion = 1;

inline nlohmann::json model_config_to_json(const ModelConfig& c) {
  return {{"variant", to_string(c.variant)}, {"cell", to_string(c.cell)}, {"hidden_dim", c.hidden_dim},
          {"m", c.m},                        {"n", c.n},                    {"recon_len", c.recon_len}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j, ModelConfig c = {}) {
  if (j.contains("variant")) c.variant = variant_from_string(j.at("variant").get<std::string>());
  if (j.contains("cell")) c.cell = cell_kind_from_string(j.at("cell").get<std::string>());
  c.hidden_dim = j.value("hidden_dim", c.hidden_dim);
  c.m = j.value("m", c.m);
  c.n = j.value("n", c.n);
  c.recon_len = j.value("recon_len", c.recon_len);
  return c;
}

inline nlohmann::json model_to_json(const Seq2SeqKnowledgeModel& model) {
  nlohmann::json blocks = nlohmann::json::array();
  for (const auto& b : model.blocks()) blocks.push_back({{"name", b.name}, {"offset", b.offset}, {"size", b.size}});
  return {{"schema", kModelSchema},
          {"version", kModelSchemaVersion},
          {"config", model_config_to_json(model.config)},
          {"normalizer", {{"shift", model.shift}, {"scale", model.scale}}},
          {"blocks", std::move(blocks)},
          {"theta", std::vector<double>(model.theta.data(), model.theta.data() + model.theta.size())}};
}

inline Seq2SeqKnowledgeModel model_from_json(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("version")) throw VersionError("model checkpoint: missing version field");
  if (j.value("schema", std::string{}) != kModelSchema) throw ParseError("model checkpoint: wrong schema");
  if (j.at("version").get<int>() != kModelSchemaVersion) {
    throw VersionError("model checkpoint: unsupported version " + j.at("version").dump());
  }
  try {
    Seq2SeqKnowledgeModel model(model_config_from_json(j.at("config")));
    model.shift = j.at("normalizer").at("shift").get<double>();
    model.scale = j.at("normalizer").at("scale").get<double>();
    const auto theta = j.at("theta").get<std::vector<double>>();
    if (theta.size() != model.param_count()) {
      throw ParseError("model checkpoint: expected " + std::to_string(model.param_count()) + " parameters, got " +
                       std::to_string(theta.size()));
    }
    model.theta = ConstVecMap(theta.data(), static_cast<Eigen::Index>(theta.size()));
    return model;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("model checkpoint: ") + e.what());
  }
}

inline void save_model(const Seq2SeqKnowledgeModel& model, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw RuntimeFailure("cannot write " + path.string());
  out << model_to_json(model).dump() << '\n';
}

inline Seq2SeqKnowledgeModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  return model_from_json(j);
}

}  // namespace corrcast::nn
