#include "pifield/tensor.hpp"

#include <cmath>
#include <sstream>

namespace pifield {

std::string Tensor::shape_str(const std::vector<int>& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

bool Tensor::all_finite() const {
  for (float v : data)
    if (!std::isfinite(v)) return false;
  return true;
}

Tensor kaiming_uniform(std::vector<int> shape, long fan_in, Rng& rng) {
  if (fan_in <= 0) throw ValueError("kaiming_uniform: fan_in must be positive");
  Tensor t(std::move(shape));
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  for (auto& v : t.data) v = static_cast<float>(rng.uniform(-bound, bound));
  return t;
}

}  // namespace pifield
