#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

#include <json.hpp>

#include "lst/gw.hpp"
#include "lst/model.hpp"

namespace lst {

struct TrainConfig {
  double temperature = 4.0;
  double edge_threshold = 1.5;
  double lambda1 = 0.1;
  double lambda2 = 0.01;
  double epsilon = 0.05;
  std::size_t inner_iter = 200;
  std::size_t outer_iter = 20;
  double gw_tol = 1e-6;
  double learning_rate = 0.05;
  std::size_t epochs = 20;
  std::size_t batch_size = 8;
  std::size_t d_h = 32;
  std::size_t d_p = 32;
  std::uint64_t seed = 1;
  bool ablate_aux = false;
  bool ablate_gw = false;
  EncoderMode encoder_mode = EncoderMode::Toy;
  /// JSON Lines embedding file for the file encoder.
  std::string embeddings;

  /// Throws InputError unless T > 0, delta > 0, lambdas >= 0 and sizes are positive.
  void validate() const;
  GwOptions gw_options() const;
  ModelDims dims() const { return {d_h, d_p}; }

  bool aux_active() const { return !ablate_aux && lambda1 != 0.0; }
  bool gw_active() const { return !ablate_gw && lambda2 != 0.0; }

  nlohmann::json to_json() const;
  /// Overlays the keys present in j onto base. Unknown keys are rejected.
  static TrainConfig from_json(const nlohmann::json& j, TrainConfig base);
  static TrainConfig from_json(const nlohmann::json& j);
  static TrainConfig load(const std::string& path);
};

}  // namespace lst
