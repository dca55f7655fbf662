#include "seqlink/array.hpp"

#include <cmath>
#include <sstream>

namespace seqlink {

Array::Array(std::vector<std::size_t> shape)
    : shape_(std::move(shape)), data_(shape_product(shape_), 0.0) {}

Array::Array(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_product(shape_) != data_.size()) {
    throw ShapeError("array data length " + std::to_string(data_.size()) +
                     " does not match shape " + shape_str());
  }
}

Array Array::full(std::vector<std::size_t> shape, double v) {
  Array a(std::move(shape));
  for (double& x : a.data_) x = v;
  return a;
}

bool Array::all_finite() const {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

std::string Array::shape_str() const {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape_.size(); ++i) {
    if (i) os << ", ";
    os << shape_[i];
  }
  os << "]";
  return os.str();
}

}  // namespace seqlink
