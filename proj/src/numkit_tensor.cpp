#include "srmt/numkit/tensor.hpp"

#include <cmath>
#include <sstream>

namespace srmt::nk {

Shape::Shape(std::initializer_list<int> dims) : Shape(std::span<const int>(dims.begin(), dims.size())) {}

Shape::Shape(std::span<const int> dims) {
  if (dims.size() > static_cast<std::size_t>(kMaxRank))
    throw DimensionError("rank " + std::to_string(dims.size()) + " exceeds " + std::to_string(kMaxRank));
  rank_ = static_cast<int>(dims.size());
  for (int i = 0; i < rank_; ++i) {
    if (dims[i] < 0) throw DimensionError("negative dimension");
    dims_[i] = dims[i];
  }
}

std::size_t Shape::numel() const {
  std::size_t n = 1;
  for (int i = 0; i < rank_; ++i) n *= static_cast<std::size_t>(dims_[i]);
  return n;
}

std::string Shape::str() const {
  std::ostringstream os;
  os << '[';
  for (int i = 0; i < rank_; ++i) os << (i ? "x" : "") << dims_[i];
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, double fill) : shape_(shape), data_(shape.numel(), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(shape), data_(std::move(data)) {
  if (data_.size() != shape_.numel())
    throw DimensionError("shape " + shape_.str() + " needs " + std::to_string(shape_.numel()) +
                         " values, got " + std::to_string(data_.size()));
}

Tensor Tensor::from_rows(const std::vector<std::vector<double>>& rows) {
  const int r = static_cast<int>(rows.size());
  const int c = r ? static_cast<int>(rows[0].size()) : 0;
  std::vector<double> data;
  data.reserve(static_cast<std::size_t>(r) * c);
  for (const auto& row : rows) {
    if (static_cast<int>(row.size()) != c) throw DimensionError("ragged rows");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor(Shape{r, c}, std::move(data));
}

int Tensor::cols() const { return shape_.rank() == 0 ? 1 : shape_[shape_.rank() - 1]; }

int Tensor::rows() const {
  const int c = cols();
  return c == 0 ? 0 : static_cast<int>(numel() / static_cast<std::size_t>(c));
}

double Tensor::item() const {
  if (numel() != 1) throw DimensionError("item() on tensor of shape " + shape_.str());
  return data_[0];
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape.numel() != numel())
    throw DimensionError("cannot reshape " + shape_.str() + " to " + shape.str());
  return Tensor(shape, data_);
}

bool Tensor::all_finite() const {
  for (double v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

Tensor& Tensor::operator+=(const Tensor& other) {
  require_same_shape(shape_, other.shape_, "+=");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

void require_same_shape(const Shape& a, const Shape& b, const char* op) {
  if (!(a == b)) throw DimensionError(std::string(op) + ": shape mismatch " + a.str() + " vs " + b.str());
}

}  // namespace srmt::nk
