#pragma once

// Reverse-mode tape. Each forward op appends a node holding its value and a
// closure that pushes the node's gradient back into its inputs. Parameters
// enter the tape as leaves; `backward` accumulates their gradients into the
// owning Parameter.

#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "holobyte/errors.hpp"
#include "holobyte/nn/parameter.hpp"
#include "holobyte/tensor.hpp"

namespace holobyte::nn {

/// Records every attention map a forward pass instantiates.
struct AttentionProbe {
  struct Record {
    std::string site;
    std::size_t batch = 0;   // independent sequences sharing the call
    std::size_t length = 0;  // L of each L x L map
    std::size_t heads = 0;
    std::size_t elements() const { return batch * length * length; }  // per head
  };
  std::vector<Record> records;
};

struct Var {
  static constexpr std::size_t npos = static_cast<std::size_t>(-1);
  std::size_t id = npos;
  bool valid() const { return id != npos; }
};

template <class Real>
class Graph {
 public:
  using Backward = std::function<void(Graph&, Var self)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;
  Graph(Graph&&) = default;
  Graph& operator=(Graph&&) = default;

  Var constant(Tensor<Real> value) { return push_node(std::move(value), false, nullptr, {}); }

  /// Leaf bound to a parameter. With gradients disabled the parameter is read
  /// as a constant.
  Var param(Parameter<Real>& p) {
    return push_node(p.values, grad_enabled_, grad_enabled_ ? &p : nullptr, {});
  }

  /// Appends an op result. The node requires grad when any input does.
  Var push(Tensor<Real> value, std::initializer_list<Var> inputs, Backward backward) {
    bool needs = false;
    for (Var v : inputs) needs = needs || (v.valid() && nodes_[v.id].requires_grad);
    return push_node(std::move(value), needs, nullptr, needs ? std::move(backward) : Backward{});
  }

  const Tensor<Real>& value(Var v) const { return nodes_.at(v.id).value; }
  bool requires_grad(Var v) const { return v.valid() && nodes_.at(v.id).requires_grad; }

  /// Gradient buffer of `v`, zero-initialized on first access.
  Tensor<Real>& grad(Var v) {
    auto& n = nodes_.at(v.id);
    if (n.grad.empty() && !n.value.empty()) n.grad = Tensor<Real>(n.value.shape());
    return n.grad;
  }
  bool has_grad(Var v) const { return !nodes_.at(v.id).grad.empty(); }

  /// Backpropagates from a scalar and accumulates into bound parameters.
  void backward(Var loss) {
    require(value(loss).numel() == 1, ErrorKind::Shape, "backward: loss must be a scalar");
    grad(loss)[0] = Real{1};
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      auto& n = nodes_[i];
      if (n.backward && !n.grad.empty()) n.backward(*this, Var{i});
    }
    for (auto& n : nodes_) {
      if (!n.param || n.grad.empty()) continue;
      auto& pg = n.param->grad;
      if (pg.empty())
        pg = n.grad;
      else
        for (std::size_t k = 0; k < pg.numel(); ++k) pg[k] += n.grad[k];
    }
  }

  void set_grad_enabled(bool on) { grad_enabled_ = on; }
  bool grad_enabled() const { return grad_enabled_; }

  void set_probe(AttentionProbe* probe) { probe_ = probe; }
  AttentionProbe* probe() const { return probe_; }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor<Real> value;
    Tensor<Real> grad;
    bool requires_grad = false;
    Parameter<Real>* param = nullptr;
    Backward backward;
  };

  Var push_node(Tensor<Real> value, bool requires_grad, Parameter<Real>* p, Backward backward) {
    nodes_.push_back(Node{std::move(value), {}, requires_grad, p, std::move(backward)});
    return Var{nodes_.size() - 1};
  }

  std::vector<Node> nodes_;
  bool grad_enabled_ = true;
  AttentionProbe* probe_ = nullptr;
};

}  // namespace holobyte::nn
