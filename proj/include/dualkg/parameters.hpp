#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "dualkg/autodiff.hpp"
#include "dualkg/random.hpp"
#include "dualkg/tensor.hpp"

namespace dualkg {

/// Named learnable tensors plus their Adam moments.
class ParameterStore {
 public:
  struct Slot {
    Tensor value;
    Tensor first_moment;
    Tensor second_moment;
    std::uint64_t step = 0;
  };

  /// Registers a parameter. Names must be unique.
  void add(const std::string& name, Tensor initial);
  /// Registers a [fan_in, fan_out] (or [fan_out]) tensor drawn from
  /// U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
  void add_uniform(const std::string& name, Shape shape, std::size_t fan_in, Rng& rng);
  void add_zeros(const std::string& name, Shape shape) { add(name, Tensor(std::move(shape))); }

  bool contains(const std::string& name) const { return slots_.count(name) != 0; }
  const Tensor& get(const std::string& name) const;
  Tensor& get(const std::string& name);
  /// Replaces the value, keeping the registered shape.
  void set(const std::string& name, Tensor value);

  const std::map<std::string, Slot>& slots() const noexcept { return slots_; }
  std::map<std::string, Slot>& slots() noexcept { return slots_; }
  std::vector<std::string> names() const;
  std::size_t size() const noexcept { return slots_.size(); }
  std::size_t element_count() const;

  friend bool operator==(const ParameterStore& a, const ParameterStore& b);

 private:
  std::map<std::string, Slot> slots_;
};

struct AdamConfig {
  double learning_rate = 7e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// One bias-corrected Adam update of every parameter in the store. A parameter
/// with no entry in grads is updated as if its gradient were zero (its moments
/// decay and its step counter still advances).
void adam_step(ParameterStore& params, const ad::GradientMap& grads, const AdamConfig& config);

// Checkpoint layout (all integers little-endian):
//   magic   8 bytes  "DUALKGCK"
//   version u32      currently 1
//   count   u64      number of parameters
//   per parameter, in name order:
//     name_len u32, name bytes
//     rank u32, dims u64 x rank
//     value  f64 x numel
//     step u64, first moment f64 x numel, second moment f64 x numel
//   meta_len u64, meta bytes (UTF-8 JSON describing config and vocabularies)
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  ParameterStore params;
  std::string metadata;
};

void save_checkpoint(const std::filesystem::path& path, const ParameterStore& params, const std::string& metadata);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace dualkg
