#pragma once

#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "holobyte/errors.hpp"
#include "holobyte/tensor.hpp"

namespace holobyte::nn {

template <class Real>
struct Parameter {
  std::string id;
  Tensor<Real> values;
  Tensor<Real> grad;  // empty when absent
  bool decay_exempt = false;

  bool has_grad() const { return !grad.empty() && grad.shape() == values.shape(); }
  void zero_grad() { grad = Tensor<Real>(); }
};

/// Owns parameters in registration order; addresses stay stable.
template <class Real>
class ParameterRegistry {
 public:
  Parameter<Real>& add(std::string id, Tensor<Real> values, bool decay_exempt) {
    require(!index_.count(id), ErrorKind::InvalidArgument, "duplicate parameter id '" + id + "'");
    auto p = std::make_unique<Parameter<Real>>();
    p->id = std::move(id);
    p->values = std::move(values);
    p->decay_exempt = decay_exempt;
    index_[p->id] = params_.size();
    params_.push_back(std::move(p));
    return *params_.back();
  }

  Parameter<Real>& at(const std::string& id) {
    auto it = index_.find(id);
    require(it != index_.end(), ErrorKind::InvalidArgument, "unknown parameter id '" + id + "'");
    return *params_[it->second];
  }
  const Parameter<Real>& at(const std::string& id) const {
    auto it = index_.find(id);
    require(it != index_.end(), ErrorKind::InvalidArgument, "unknown parameter id '" + id + "'");
    return *params_[it->second];
  }
  bool contains(const std::string& id) const { return index_.count(id) != 0; }

  std::size_t size() const { return params_.size(); }
  Parameter<Real>& operator[](std::size_t i) { return *params_[i]; }
  const Parameter<Real>& operator[](std::size_t i) const { return *params_[i]; }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p->values.numel();
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) p->zero_grad();
  }

 private:
  std::vector<std::unique_ptr<Parameter<Real>>> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace holobyte::nn
