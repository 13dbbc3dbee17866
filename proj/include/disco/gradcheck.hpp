#pragma once

#include "disco/nn.hpp"
#include "disco/tensor.hpp"

#include <cstddef>
#include <functional>
#include <optional>
#include <vector>

namespace disco {

/// Max over coordinates of |analytic - central difference| / max(1, |central difference|),
/// evaluated in double precision. Straight-through ops are evaluated by their
/// smooth surrogate for the duration of the check; ops without any declared
/// gradient raise NonDifferentiableError. A non-finite f(x) raises NumericError.
double grad_check(const std::function<Var<double>(const Var<double>&)>& f, const Mat<double>& x, double eps = 1e-6);

/// Same contract, differentiating with respect to existing leaves (typically
/// model parameters). When `coords_per_leaf` is set, that many coordinates are
/// sampled from each leaf with `rng` instead of checking every entry.
double grad_check_leaves(const std::function<Var<double>()>& f, const std::vector<Var<double>>& leaves,
                         double eps = 1e-6, std::optional<std::size_t> coords_per_leaf = std::nullopt,
                         Rng* rng = nullptr);

}  // namespace disco
