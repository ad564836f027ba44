#include "srmt/numkit/params.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

namespace srmt::nk {

int ParamStore::add(std::string name, Tensor init) {
  if (index_of(name) >= 0) throw ContractError("duplicate parameter name " + name);
  params_.push_back(Param{std::move(name), std::make_shared<Node>(std::move(init))});
  return static_cast<int>(params_.size() - 1);
}

int ParamStore::index_of(const std::string& name) const {
  for (std::size_t i = 0; i < params_.size(); ++i)
    if (params_[i].name == name) return static_cast<int>(i);
  return -1;
}

std::size_t ParamStore::numel() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.node->value.numel();
  return n;
}

std::vector<Var> ParamStore::bind(Tape* tape) const {
  std::vector<Var> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(tape ? tape->watch(p.node) : Var::constant(p.node));
  return out;
}

std::vector<Tensor> ParamStore::gradients(const Gradients& grads) const {
  std::vector<Tensor> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(grads.of(p.node));
  return out;
}

ParamStore ParamStore::clone() const {
  ParamStore copy;
  for (const auto& p : params_) copy.add(p.name, p.node->value);
  return copy;
}

void ParamStore::copy_values_from(const ParamStore& other) {
  if (other.size() != size()) throw DimensionError("parameter count mismatch");
  for (std::size_t i = 0; i < size(); ++i) {
    require_same_shape(value(i).shape(), other.value(i).shape(), "copy_values_from");
    value(i) = other.value(i);
  }
}

// ---------------------------------------------------------------------------

AdamState AdamState::for_params(const ParamStore& params) {
  AdamState s;
  for (std::size_t i = 0; i < params.size(); ++i) {
    s.m.push_back(Tensor::zeros(params.value(i).shape()));
    s.v.push_back(Tensor::zeros(params.value(i).shape()));
  }
  return s;
}

void adam_step(std::span<Tensor* const> params, std::span<const Tensor> grads, AdamState& state, double lr) {
  if (params.size() != grads.size() || params.size() != state.m.size() || params.size() != state.v.size())
    throw DimensionError("adam_step: parameter, gradient and moment counts differ");
  state.step += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i];
    const Tensor& g = grads[i];
    require_same_shape(p.shape(), g.shape(), "adam_step");
    require_same_shape(p.shape(), state.m[i].shape(), "adam_step");
    Tensor& m = state.m[i];
    Tensor& v = state.v[i];
    for (std::size_t j = 0; j < p.numel(); ++j) {
      m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g[j];
      v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g[j] * g[j];
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      p[j] -= lr * mhat / (std::sqrt(vhat) + state.eps);
    }
  }
}

void adam_step(ParamStore& params, std::span<const Tensor> grads, AdamState& state, double lr) {
  std::vector<Tensor*> ptrs;
  ptrs.reserve(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) ptrs.push_back(&params.value(i));
  adam_step(ptrs, grads, state, lr);
}

double global_norm(std::span<const Tensor> grads) {
  double sq = 0.0;
  for (const auto& g : grads)
    for (double v : g.storage()) sq += v * v;
  return std::sqrt(sq);
}

double clip_grad_norm(std::vector<Tensor>& grads, double max_norm) {
  const double norm = global_norm(grads);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (auto& g : grads)
      for (double& v : g.storage()) v *= s;
  }
  return norm;
}

// ---------------------------------------------------------------------------

Tensor orthogonal_init(int rows, int cols, std::uint64_t seed, double gain) {
  if (rows < 1 || cols < 1) throw DimensionError("orthogonal_init needs rows, cols >= 1");
  // Orthonormalize the shorter side: vectors of length `len`, `count` of them.
  const bool by_rows = rows <= cols;
  const int count = by_rows ? rows : cols;
  const int len = by_rows ? cols : rows;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<std::vector<double>> vecs(static_cast<std::size_t>(count), std::vector<double>(static_cast<std::size_t>(len)));
  for (auto& v : vecs)
    for (double& x : v) x = normal(rng);

  // Modified Gram-Schmidt, two passes.
  for (int i = 0; i < count; ++i) {
    auto& vi = vecs[static_cast<std::size_t>(i)];
    for (int pass = 0; pass < 2; ++pass)
      for (int j = 0; j < i; ++j) {
        const auto& vj = vecs[static_cast<std::size_t>(j)];
        double dot = 0.0;
        for (int k = 0; k < len; ++k) dot += vi[static_cast<std::size_t>(k)] * vj[static_cast<std::size_t>(k)];
        for (int k = 0; k < len; ++k) vi[static_cast<std::size_t>(k)] -= dot * vj[static_cast<std::size_t>(k)];
      }
    double norm = 0.0;
    for (double x : vi) norm += x * x;
    norm = std::sqrt(norm);
    for (double& x : vi) x /= norm;
  }

  Tensor out(Shape{rows, cols});
  for (int i = 0; i < count; ++i)
    for (int k = 0; k < len; ++k) {
      const double v = gain * vecs[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)];
      if (by_rows)
        out.at(i, k) = v;
      else
        out.at(k, i) = v;
    }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

constexpr const char* kFormat = "srmt-checkpoint";

std::uint64_t to_le(std::uint64_t v) {
  if constexpr (std::endian::native == std::endian::little) return v;
  std::uint64_t r = 0;
  for (int i = 0; i < 8; ++i) r |= ((v >> (8 * i)) & 0xFFu) << (8 * (7 - i));
  return r;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  nlohmann::json header;
  header["format"] = kFormat;
  header["version"] = 1;
  header["precision"] = "f64";
  header["meta"] = ckpt.meta;
  auto& list = header["tensors"] = nlohmann::json::array();
  for (const auto& [name, t] : ckpt.tensors) list.push_back({{"name", name}, {"shape", t.shape().dims()}});

  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp + " for writing");
    out << header.dump() << '\n';
    for (const auto& [name, t] : ckpt.tensors)
      for (double v : t.storage()) {
        std::uint64_t bits = to_le(std::bit_cast<std::uint64_t>(v));
        out.write(reinterpret_cast<const char*>(&bits), sizeof bits);
      }
    if (!out) throw IoError("failed writing " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into place at " + path.string() + ": " + ec.message());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw IoError("empty checkpoint " + path.string());
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("bad checkpoint header in " + path.string() + ": " + e.what());
  }
  if (header.value("format", "") != kFormat || header.value("precision", "") != "f64")
    throw IoError(path.string() + " is not an f64 srmt checkpoint");

  Checkpoint ckpt;
  ckpt.meta = header.value("meta", nlohmann::json::object());
  for (const auto& entry : header.at("tensors")) {
    const auto dims = entry.at("shape").get<std::vector<int>>();
    Tensor t{Shape(std::span<const int>(dims))};
    for (double& v : t.storage()) {
      std::uint64_t bits = 0;
      if (!in.read(reinterpret_cast<char*>(&bits), sizeof bits)) throw IoError("truncated checkpoint " + path.string());
      v = std::bit_cast<double>(to_le(bits));
    }
    ckpt.tensors.emplace_back(entry.at("name").get<std::string>(), std::move(t));
  }
  if (in.peek() != std::char_traits<char>::eof()) throw IoError("trailing bytes in checkpoint " + path.string());
  return ckpt;
}

Checkpoint make_checkpoint(const ParamStore& params, nlohmann::json meta) {
  Checkpoint ckpt;
  ckpt.meta = std::move(meta);
  for (std::size_t i = 0; i < params.size(); ++i) ckpt.tensors.emplace_back(params[i].name, params.value(i));
  return ckpt;
}

void restore_params(ParamStore& params, const Checkpoint& ckpt) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Tensor* found = nullptr;
    for (const auto& [name, t] : ckpt.tensors)
      if (name == params[i].name) found = &t;
    if (!found) throw IoError("checkpoint lacks parameter " + params[i].name);
    if (!(found->shape() == params.value(i).shape()))
      throw IoError("parameter " + params[i].name + " has shape " + found->shape().str() + " in checkpoint, expected " +
                    params.value(i).shape().str());
    params.value(i) = *found;
  }
}

}  // namespace srmt::nk
