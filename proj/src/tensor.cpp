#include "aldsr/tensor.hpp"

namespace aldsr {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i > 0) out += ",";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

const char* dtype_name(DType dtype) { return dtype == DType::F32 ? "f32" : "f64"; }

}  // namespace aldsr
