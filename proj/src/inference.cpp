#include "semiderain/inference.hpp"

#include "semiderain/checkpoint.hpp"
#include "semiderain/error.hpp"

namespace semiderain {

Derainer Derainer::from_checkpoint(const std::filesystem::path& path, Path which) {
  const auto meta = read_checkpoint_meta(path);
  Derainer d;
  d.id_ = path.string();
  if (meta.value("kind", "") == "identity") return d;
  auto loaded = load_checkpoint(path);
  d.model_config_ = loaded.config.model;
  d.state_ = std::move(loaded.state);
  d.which_ = which;
  return d;
}

Derainer Derainer::identity() { return Derainer{}; }

torch::Tensor Derainer::derain(const torch::Tensor& chw) const {
  if (chw.dim() != 3 || chw.size(0) != 3) throw ShapeError("derain expects [3,H,W], got " + c10::str(chw.sizes()));
  if (!state_) return chw;
  torch::NoGradGuard no_grad;
  auto x = chw.to(torch::kFloat32).unsqueeze(0);
  auto& nets = state_->nets;
  auto y = which_ == Path::Synthetic ? nets.derain_synthetic(x) : nets.derain_real(x);
  return y.squeeze(0).contiguous();
}

}  // namespace semiderain
