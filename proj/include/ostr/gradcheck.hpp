#pragma once

#include "ostr/rng.hpp"
#include "ostr/tensor.hpp"

#include <functional>
#include <string>
#include <vector>

namespace ostr {

struct GradcheckReport {
    double max_rel_error = 0.0;
    std::size_t checked = 0; ///< number of input elements perturbed
    bool passed = false;
};

using GradcheckFn = std::function<Tensor<double>(const std::vector<Tensor<double>>&)>;

/// Compares analytic gradients of fn against central finite differences.
///
/// A non-scalar output is reduced with a fixed random projection so every
/// output element participates. The error for each input tensor is
/// max|analytic - numeric| / max(max|numeric|, max|analytic|), and the report
/// holds the worst value over all inputs. Inputs are treated as leaves and
/// must be double precision.
GradcheckReport gradcheck(const GradcheckFn& fn, const std::vector<Tensor<double>>& inputs, double eps = 1e-5,
                          double tol = 1e-4, std::uint64_t projection_seed = 7);

/// Random tensor with entries uniform in [lo, hi).
Tensor<double> random_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0, bool requires_grad = true);

} // namespace ostr
