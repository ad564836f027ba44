#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "srmt/numkit/autodiff.hpp"

namespace srmt::nk {

struct Param {
  std::string name;
  NodePtr node;
};

/// Named, ordered collection of trainable tensors.
class ParamStore {
 public:
  int add(std::string name, Tensor init);

  std::size_t size() const { return params_.size(); }
  const Param& operator[](std::size_t i) const { return params_[i]; }
  Tensor& value(std::size_t i) { return params_[i].node->value; }
  const Tensor& value(std::size_t i) const { return params_[i].node->value; }
  int index_of(const std::string& name) const;
  std::size_t numel() const;

  /// One Var per parameter: tracked leaves on `tape`, constants when null.
  std::vector<Var> bind(Tape* tape) const;
  /// Leaf gradients in parameter order.
  std::vector<Tensor> gradients(const Gradients& grads) const;

  /// Deep copy with independent storage.
  ParamStore clone() const;
  void copy_values_from(const ParamStore& other);

 private:
  std::vector<Param> params_;
};

/// Adam moments and hyperparameters.
struct AdamState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::int64_t step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  static AdamState for_params(const ParamStore& params);
};

/// One bias-corrected Adam update, in place.
void adam_step(std::span<Tensor* const> params, std::span<const Tensor> grads, AdamState& state, double lr);
void adam_step(ParamStore& params, std::span<const Tensor> grads, AdamState& state, double lr);

/// Scales `grads` in place so their global L2 norm is at most `max_norm`.
/// Returns the norm before scaling.
double clip_grad_norm(std::vector<Tensor>& grads, double max_norm);
double global_norm(std::span<const Tensor> grads);

/// rows×cols matrix with orthonormal rows (rows ≤ cols) or columns
/// (rows > cols), times `gain`. Deterministic per seed.
Tensor orthogonal_init(int rows, int cols, std::uint64_t seed, double gain = 1.0);

/// Single-file checkpoint: one line of JSON header naming every tensor and
/// its shape, then the raw little-endian f64 payloads in header order.
struct Checkpoint {
  nlohmann::json meta = nlohmann::json::object();
  std::vector<std::pair<std::string, Tensor>> tensors;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Every parameter under its name, plus `meta`.
Checkpoint make_checkpoint(const ParamStore& params, nlohmann::json meta = nlohmann::json::object());
/// Loads values by name; names and shapes must match exactly.
void restore_params(ParamStore& params, const Checkpoint& ckpt);

}  // namespace srmt::nk
