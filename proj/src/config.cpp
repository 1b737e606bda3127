#include "lst/config.hpp"

#include <fstream>
#include <set>

#include "lst/errors.hpp"

namespace lst {

void TrainConfig::validate() const {
  if (!(temperature > 0.0)) throw InputError("config: temperature must be positive");
  if (!(edge_threshold > 0.0)) throw InputError("config: edge_threshold must be positive");
  if (!(lambda1 >= 0.0) || !(lambda2 >= 0.0)) throw InputError("config: lambda1 and lambda2 must be nonnegative");
  if (!(epsilon > 0.0)) throw InputError("config: epsilon must be positive");
  if (!(gw_tol > 0.0)) throw InputError("config: gw_tol must be positive");
  if (!(learning_rate > 0.0)) throw InputError("config: learning_rate must be positive");
  if (batch_size == 0 || d_h == 0 || d_p == 0) throw InputError("config: batch_size, d_h and d_p must be positive");
  if (inner_iter == 0 || outer_iter == 0) throw InputError("config: iteration counts must be positive");
  if (encoder_mode == EncoderMode::File && embeddings.empty()) {
    throw InputError("config: file encoder mode needs an embeddings path");
  }
}

GwOptions TrainConfig::gw_options() const {
  GwOptions o;
  o.epsilon = epsilon;
  o.inner_iter = inner_iter;
  o.outer_iter = outer_iter;
  o.tol = gw_tol;
  return o;
}

nlohmann::json TrainConfig::to_json() const {
  return {{"temperature", temperature},
          {"edge_threshold", edge_threshold},
          {"lambda1", lambda1},
          {"lambda2", lambda2},
          {"epsilon", epsilon},
          {"inner_iter", inner_iter},
          {"outer_iter", outer_iter},
          {"gw_tol", gw_tol},
          {"learning_rate", learning_rate},
          {"epochs", epochs},
          {"batch_size", batch_size},
          {"d_h", d_h},
          {"d_p", d_p},
          {"seed", seed},
          {"ablate_aux", ablate_aux},
          {"ablate_gw", ablate_gw},
          {"encoder_mode", to_string(encoder_mode)},
          {"embeddings", embeddings}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j, TrainConfig c) {
  if (!j.is_object()) throw InputError("config must be a JSON object");
  const auto known = TrainConfig{}.to_json();
  for (const auto& [key, _] : j.items()) {
    if (!known.contains(key)) throw InputError("config: unknown key '" + key + "'");
  }
  try {
    auto read = [&](const char* key, auto& field) {
      if (j.contains(key)) field = j[key].get<std::remove_reference_t<decltype(field)>>();
    };
    read("temperature", c.temperature);
    read("edge_threshold", c.edge_threshold);
    read("lambda1", c.lambda1);
    read("lambda2", c.lambda2);
    read("epsilon", c.epsilon);
    read("inner_iter", c.inner_iter);
    read("outer_iter", c.outer_iter);
    read("gw_tol", c.gw_tol);
    read("learning_rate", c.learning_rate);
    read("epochs", c.epochs);
    read("batch_size", c.batch_size);
    read("d_h", c.d_h);
    read("d_p", c.d_p);
    read("seed", c.seed);
    read("ablate_aux", c.ablate_aux);
    read("ablate_gw", c.ablate_gw);
    read("embeddings", c.embeddings);
    if (j.contains("encoder_mode")) c.encoder_mode = encoder_mode_from_string(j["encoder_mode"].get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("config: ") + e.what());
  }
  return c;
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) { return from_json(j, TrainConfig{}); }

TrainConfig TrainConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open config " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw InputError("config " + path + ": " + e.what());
  }
  return from_json(j);
}

}  // namespace lst
