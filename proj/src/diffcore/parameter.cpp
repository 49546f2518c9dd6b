#include "mrd/diffcore/parameter.hpp"

#include <cmath>

#include "mrd/error.hpp"
#include "mrd/random.hpp"

namespace mrd {

Parameter make_parameter(std::string name, Shape shape, InitSpec init) {
  const std::size_t n = shape_size(shape);
  std::vector<double> values(n, 0.0);
  if (init.scheme == InitScheme::kXavierUniform) {
    // Glorot uniform over the last two extents (fan_in x fan_out).
    const double fan_out = static_cast<double>(shape.back());
    const double fan_in = shape.size() >= 2 ? static_cast<double>(shape[shape.size() - 2]) : 1.0;
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    Rng rng(init.seed);
    for (auto& v : values) v = rng.uniform(-limit, limit);
  }
  return Parameter{std::move(name), Tensor::from_values(std::move(shape), std::move(values), true),
                   init};
}

Tensor ParameterStore::add(const std::string& name, Shape shape, InitScheme scheme) {
  if (find(name)) throw ConfigError("duplicate parameter name '" + name + "'");
  const InitSpec init{scheme, derive_seed(master_seed_, fnv1a64(name))};
  params_.push_back(make_parameter(name, std::move(shape), init));
  return params_.back().tensor;
}

const Parameter& ParameterStore::get(const std::string& name) const {
  for (const auto& p : params_) {
    if (p.name == name) return p;
  }
  throw ConfigError("unknown parameter '" + name + "'");
}

Parameter* ParameterStore::find(const std::string& name) {
  for (auto& p : params_) {
    if (p.name == name) return &p;
  }
  return nullptr;
}

std::size_t ParameterStore::entry_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.tensor.size();
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

}  // namespace mrd
