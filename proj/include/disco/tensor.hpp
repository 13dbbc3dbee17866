#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace disco {

template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using RowVec = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

using MatF = Mat<float>;
using MatD = Mat<double>;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NonDifferentiableError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A node on the reverse-mode tape. Every tensor is a 2-D row-major matrix
// [rows = time/batch, cols = features]; vectors are 1 x C.
template <typename Scalar>
struct Node {
  Mat<Scalar> value;
  Mat<Scalar> grad;  // empty until something flows into it
  bool requires_grad = false;
  bool differentiable = true;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(const Mat<Scalar>&)> backward;

  void accumulate(const Mat<Scalar>& g) {
    if (!requires_grad) return;
    if (grad.size() == 0)
      grad = g;
    else
      grad += g;
  }
};

template <typename Scalar>
class Var {
 public:
  using NodePtr = std::shared_ptr<Node<Scalar>>;

  Var() = default;
  explicit Var(NodePtr n) : node_(std::move(n)) {}

  static Var constant(Mat<Scalar> v) {
    auto n = std::make_shared<Node<Scalar>>();
    n->value = std::move(v);
    return Var(std::move(n));
  }

  static Var parameter(Mat<Scalar> v) {
    auto n = std::make_shared<Node<Scalar>>();
    n->value = std::move(v);
    n->requires_grad = true;
    return Var(std::move(n));
  }

  bool defined() const { return node_ != nullptr; }
  const Mat<Scalar>& value() const { return node_->value; }
  Mat<Scalar>& mutable_value() { return node_->value; }
  const Mat<Scalar>& grad() const { return node_->grad; }
  Mat<Scalar>& mutable_grad() { return node_->grad; }
  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  Eigen::Index rows() const { return node_->value.rows(); }
  Eigen::Index cols() const { return node_->value.cols(); }
  std::vector<Eigen::Index> shape() const { return {rows(), cols()}; }
  Scalar item() const {
    if (node_->value.size() != 1) throw ShapeError("item() on non-scalar tensor");
    return node_->value(0, 0);
  }
  const NodePtr& node() const { return node_; }

 private:
  NodePtr node_;
};

namespace detail {

template <typename Scalar>
inline void check_finite(const Mat<Scalar>& v, const char* op) {
  if (!v.allFinite()) throw NumericError(std::string("non-finite value produced by ") + op);
}

// Builds a node from parents. The backward closure is attached only when some
// parent participates in differentiation, so inference graphs stay light.
template <typename Scalar, typename Backward>
Var<Scalar> make_node(const char* op, Mat<Scalar> value, std::vector<std::shared_ptr<Node<Scalar>>> parents,
                      Backward&& backward, bool differentiable = true) {
  check_finite(value, op);
  auto n = std::make_shared<Node<Scalar>>();
  n->value = std::move(value);
  n->op = op;
  n->differentiable = differentiable;
  bool any = false;
  for (const auto& p : parents) any = any || p->requires_grad;
  if (any) {
    n->requires_grad = true;
    n->parents = std::move(parents);
    n->backward = std::forward<Backward>(backward);
  }
  return Var<Scalar>(std::move(n));
}

}  // namespace detail

// Runs reverse-mode differentiation from a scalar root. Parameter leaves
// accumulate into their grad; interior gradients are released afterwards.
template <typename Scalar>
void backward(const Var<Scalar>& root) {
  if (root.value().size() != 1) throw ShapeError("backward() requires a scalar root");
  if (!root.requires_grad()) return;
  using NodeT = Node<Scalar>;
  std::vector<NodeT*> order;
  std::unordered_set<NodeT*> seen;
  std::vector<std::pair<NodeT*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [n, i] = stack.back();
    if (i < n->parents.size()) {
      NodeT* p = n->parents[i++].get();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  root.node()->accumulate(Mat<Scalar>::Ones(1, 1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    NodeT* n = *it;
    if (!n->backward || n->grad.size() == 0) continue;
    if (!n->differentiable)
      throw NonDifferentiableError(std::string("gradient requested through non-differentiable op ") + n->op);
    n->backward(n->grad);
    n->grad.resize(0, 0);
  }
}

}  // namespace disco
