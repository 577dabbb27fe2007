#pragma once

#include <filesystem>
#include <memory>
#include <string>

#include <json.hpp>
#include <torch/torch.h>

#include "semiderain/networks.hpp"

namespace semiderain {

class TrainState;

/// Whole-image deraining with a trained mask learner and generator.
class Derainer {
 public:
  enum class Path { Synthetic, Real };  // G_s or G_r

  static Derainer from_checkpoint(const std::filesystem::path& path, Path which = Path::Synthetic);
  static Derainer identity();

  /// [3,H,W] in [0,1] -> [3,H,W]; reflect-pads to the U-net multiple and crops back.
  torch::Tensor derain(const torch::Tensor& chw) const;

  const std::string& id() const { return id_; }
  /// Model configuration of the checkpoint (null for the identity stub).
  const nlohmann::json& model_config() const { return model_config_; }

 private:
  std::shared_ptr<TrainState> state_;
  Path which_ = Path::Synthetic;
  std::string id_ = "identity";
  nlohmann::json model_config_;
};

}  // namespace semiderain
