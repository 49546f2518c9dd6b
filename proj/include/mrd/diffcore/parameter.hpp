#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mrd/diffcore/tensor.hpp"

namespace mrd {

enum class InitScheme { kXavierUniform, kZeros };

struct InitSpec {
  InitScheme scheme = InitScheme::kXavierUniform;
  std::uint64_t seed = 0;
};

// A named trainable tensor. Its initial values are a pure function of
// (scheme, seed, shape).
struct Parameter {
  std::string name;
  Tensor tensor;
  InitSpec init;
};

Parameter make_parameter(std::string name, Shape shape, InitSpec init);

// Owns a model's parameters in registration order. Names are unique; the
// order is stable and defines optimizer, checkpoint and grad-check layouts.
class ParameterStore {
 public:
  // Seeds are derived from (master_seed, name) so a parameter's init does
  // not depend on registration order.
  explicit ParameterStore(std::uint64_t master_seed = 0) : master_seed_(master_seed) {}

  Tensor add(const std::string& name, Shape shape, InitScheme scheme);

  const std::vector<Parameter>& parameters() const { return params_; }
  std::vector<Parameter>& parameters() { return params_; }
  const Parameter& get(const std::string& name) const;
  Parameter* find(const std::string& name);
  std::size_t entry_count() const;

  void zero_grad();

 private:
  std::uint64_t master_seed_;
  std::vector<Parameter> params_;
};

}  // namespace mrd
