// JSON checkpoints of a JointModel: every parameter tensor with its shape,
// the token and tag vocabularies, and their fingerprint. Doubles are written
// in shortest round-trip form, so save/load is exact.
#pragma once

#include <fstream>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "unbed/model.hpp"

namespace unbed {

inline constexpr const char* kCheckpointFormat = "unbed-checkpoint";

inline std::string hex64(std::uint64_t v) {
  std::ostringstream out;
  out << std::hex;
  out.width(16);
  out.fill('0');
  out << v;
  return out.str();
}

inline nlohmann::ordered_json checkpoint_json(const JointModel& model, std::uint64_t config_hash = 0) {
  nlohmann::ordered_json j;
  j["format"] = kCheckpointFormat;
  j["version"] = "v1";
  j["config_hash"] = hex64(config_hash);
  j["vocab_hash"] = hex64(model.fingerprint());
  j["distribution"] = model.distribution() == TokenDistribution::crf_marginals ? "crf" : "softmax";
  j["entity_types"] = model.tags().entity_types();
  j["relation_types"] = model.tags().relation_types();
  j["tokens"] = model.tokens().tokens();
  auto& tensors = j["tensors"] = nlohmann::ordered_json::object();
  model.params().visit([&](const char* name, const Matrix& m) {
    tensors[name] = {{"shape", {m.rows(), m.cols()}}, {"data", m.data()}};
  });
  return j;
}

inline JointModel model_from_checkpoint(const nlohmann::ordered_json& j, const std::string& source = "<checkpoint>") {
  try {
    require(j.value("format", "") == kCheckpointFormat, "invalid_input", source + ": not an unbed checkpoint");
    require(j.value("version", "") == "v1", "version", source + ": unsupported checkpoint version");
    TagVocabulary tags(j.at("entity_types").get<std::vector<std::string>>(),
                       j.at("relation_types").get<std::vector<std::string>>());
    auto tokens = TokenVocabulary::from_list(j.at("tokens").get<std::vector<std::string>>());
    const auto& tensors = j.at("tensors");
    const std::size_t width = tensors.at("encoder.embeddings").at("shape")[1].get<std::size_t>();
    ModelParams params(tokens.size(), width, tags.size());
    params.visit([&](const char* name, Matrix& m) {
      require(tensors.contains(name), "invalid_input", source + ": missing tensor " + name);
      const auto& t = tensors.at(name);
      const auto rows = t.at("shape")[0].get<std::size_t>(), cols = t.at("shape")[1].get<std::size_t>();
      require(rows == m.rows() && cols == m.cols(), "invalid_input",
              source + ": tensor " + name + " has shape " + std::to_string(rows) + "x" + std::to_string(cols) +
                  ", expected " + std::to_string(m.rows()) + "x" + std::to_string(m.cols()));
      auto data = t.at("data").get<std::vector<double>>();
      require(data.size() == m.size(), "invalid_input", source + ": tensor " + name + " has the wrong element count");
      m.data() = std::move(data);
    });
    JointModel model(std::move(tokens), std::move(tags), std::move(params),
                     j.value("distribution", "crf") == "softmax" ? TokenDistribution::softmax
                                                                  : TokenDistribution::crf_marginals);
    require(hex64(model.fingerprint()) == j.at("vocab_hash").get<std::string>(), "invalid_input",
            source + ": vocabulary hash mismatch");
    require(model.all_finite(), "non_finite", source + ": checkpoint holds non-finite parameters");
    return model;
  } catch (const nlohmann::json::exception& e) {
    throw Error("invalid_input", source + ": " + e.what());
  }
}

inline void save_checkpoint(const JointModel& model, const std::string& path, std::uint64_t config_hash = 0) {
  std::ofstream out(path, std::ios::binary);
  require(out.good(), "io", "cannot write '" + path + "'");
  out << checkpoint_json(model, config_hash).dump() << '\n';
}

inline JointModel load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), "io", "cannot open checkpoint '" + path + "'");
  nlohmann::ordered_json j;
  try {
    j = nlohmann::ordered_json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error("invalid_input", path + ": " + e.what());
  }
  return model_from_checkpoint(j, path);
}

}  // namespace unbed
