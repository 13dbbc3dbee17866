#include "disco/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace disco {

namespace {

double evaluate(const std::function<Var<double>()>& f) {
  const double v = f().item();
  if (!std::isfinite(v)) throw NumericError("grad_check: objective is not finite");
  return v;
}

}  // namespace

double grad_check_leaves(const std::function<Var<double>()>& f, const std::vector<Var<double>>& leaves, double eps,
                         std::optional<std::size_t> coords_per_leaf, Rng* rng) {
  SurrogateScope surrogate;
  std::vector<Var<double>> params = leaves;
  for (auto& p : params) {
    p.set_requires_grad(true);
    p.mutable_grad().resize(0, 0);
  }
  Var<double> out = f();
  if (!std::isfinite(out.item())) throw NumericError("grad_check: objective is not finite");
  backward(out);

  double worst = 0.0;
  for (auto& p : params) {
    const Eigen::Index n = p.value().size();
    Mat<double> analytic = p.grad().size() ? p.grad() : Mat<double>::Zero(p.rows(), p.cols());
    std::vector<Eigen::Index> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), Eigen::Index{0});
    if (coords_per_leaf && rng && *coords_per_leaf < idx.size()) {
      std::shuffle(idx.begin(), idx.end(), *rng);
      idx.resize(*coords_per_leaf);
    }
    for (Eigen::Index i : idx) {
      double& slot = p.mutable_value().data()[i];
      const double saved = slot;
      slot = saved + eps;
      const double up = evaluate(f);
      slot = saved - eps;
      const double down = evaluate(f);
      slot = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double err = std::abs(analytic.data()[i] - numeric) / std::max(1.0, std::abs(numeric));
      worst = std::max(worst, err);
    }
    p.mutable_grad().resize(0, 0);
  }
  return worst;
}

double grad_check(const std::function<Var<double>(const Var<double>&)>& f, const Mat<double>& x, double eps) {
  auto leaf = Var<double>::parameter(x);
  return grad_check_leaves([&] { return f(leaf); }, {leaf}, eps);
}

}  // namespace disco
