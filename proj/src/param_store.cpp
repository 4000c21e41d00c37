#include "selrank/param_store.hpp"

#include <cmath>
#include <stdexcept>

namespace selrank {

Tensor ParameterStore::create(const std::string& name, Index rows, Index cols,
                              int rank, Init init, SeededRng& rng) {
  if (params_.count(name))
    throw std::invalid_argument("parameter already exists: " + name);
  Mat m(rows, cols);
  switch (init) {
    case Init::kZeros:
      m.setZero();
      break;
    case Init::kOnes:
      m.setOnes();
      break;
    case Init::kXavier: {
      const double limit =
          std::sqrt(6.0 / static_cast<double>(rows + cols));
      for (Index r = 0; r < rows; ++r)
        for (Index c = 0; c < cols; ++c) m(r, c) = rng.uniform(-limit, limit);
      break;
    }
  }
  Tensor t = Tensor::leaf(std::move(m), rank);
  params_.emplace(name, t);
  return t;
}

void ParameterStore::put(const std::string& name, Tensor leaf) {
  if (params_.count(name))
    throw std::invalid_argument("parameter already exists: " + name);
  params_.emplace(name, std::move(leaf));
}

Tensor ParameterStore::get(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end())
    throw std::invalid_argument("unknown parameter: " + name);
  return it->second;
}

bool ParameterStore::contains(const std::string& name) const {
  return params_.count(name) != 0;
}

std::vector<std::string> ParameterStore::names() const {
  std::vector<std::string> out;
  out.reserve(params_.size());
  for (const auto& [name, _] : params_) out.push_back(name);
  return out;
}

void ParameterStore::zero_grads() {
  for (auto& [_, t] : params_) t.clear_grad();
}

std::map<std::string, Mat> ParameterStore::snapshot_values() const {
  std::map<std::string, Mat> out;
  for (const auto& [name, t] : params_) out.emplace(name, t.value());
  return out;
}

void ParameterStore::restore_values(const std::map<std::string, Mat>& values) {
  for (auto& [name, t] : params_) {
    auto it = values.find(name);
    if (it == values.end())
      throw std::invalid_argument("snapshot missing parameter: " + name);
    t.mutable_value() = it->second;
  }
}

ParameterStore::Moments& ParameterStore::moments(const std::string& name) {
  auto it = moments_.find(name);
  if (it != moments_.end()) return it->second;
  const Tensor t = get(name);
  Moments m;
  m.first = Mat::Zero(t.rows(), t.cols());
  m.second = Mat::Zero(t.rows(), t.cols());
  return moments_.emplace(name, std::move(m)).first->second;
}

}  // namespace selrank
