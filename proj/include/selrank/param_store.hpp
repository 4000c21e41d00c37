#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "selrank/tensor.hpp"

namespace selrank {

enum class Init { kZeros, kOnes, kXavier };

// Named collection of trainable leaf tensors plus per-parameter optimizer
// state. Iteration order is the sorted name order, which keeps optimizer
// sweeps and checkpoints deterministic.
class ParameterStore {
 public:
  Tensor create(const std::string& name, Index rows, Index cols, int rank,
                Init init, SeededRng& rng);
  // Registers an externally built leaf (checkpoint loading).
  void put(const std::string& name, Tensor leaf);

  Tensor get(const std::string& name) const;
  bool contains(const std::string& name) const;
  std::vector<std::string> names() const;
  size_t size() const { return params_.size(); }

  void zero_grads();

  // Deep value snapshot / restore, used for best-checkpoint tracking.
  std::map<std::string, Mat> snapshot_values() const;
  void restore_values(const std::map<std::string, Mat>& values);

  struct Moments {
    Mat first;
    Mat second;
  };
  Moments& moments(const std::string& name);
  std::int64_t& step_count() { return step_count_; }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

 private:
  std::map<std::string, Tensor> params_;
  std::map<std::string, Moments> moments_;
  std::int64_t step_count_ = 0;
};

}  // namespace selrank
