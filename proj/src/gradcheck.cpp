#include "ostr/gradcheck.hpp"

#include "ostr/errors.hpp"

#include <algorithm>
#include <cmath>

namespace ostr {

namespace {

constexpr double kGradNoise = 1e-7;

double project(const Tensor<double>& out, const std::vector<double>& weights)
{
    double acc = 0.0;
    for (std::size_t i = 0; i < out.numel(); ++i) acc += out[i] * weights[i];
    return acc;
}

} // namespace

Tensor<double> random_tensor(Rng& rng, Shape shape, double lo, double hi, bool requires_grad)
{
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = rng.uniform(lo, hi);
    return Tensor<double>::from(std::move(shape), std::move(v), requires_grad);
}

GradcheckReport gradcheck(const GradcheckFn& fn, const std::vector<Tensor<double>>& inputs, double eps, double tol,
                          std::uint64_t projection_seed)
{
    std::vector<Tensor<double>> leaves;
    leaves.reserve(inputs.size());
    for (const auto& in : inputs) leaves.push_back(Tensor<double>::from(in.shape(), {in.data().begin(), in.data().end()}, true));

    auto out = fn(leaves);
    Rng rng(projection_seed);
    std::vector<double> weights(out.numel());
    for (auto& w : weights) w = rng.uniform(0.5, 1.5) * (rng.uniform() < 0.5 ? -1.0 : 1.0);
    auto w = Tensor<double>::from(out.shape(), weights);
    auto loss = sum(mul(out, w));
    backward(loss);

    GradcheckReport report;
    for (std::size_t k = 0; k < leaves.size(); ++k) {
        auto& leaf = leaves[k];
        std::vector<double> analytic(leaf.numel(), 0.0);
        if (leaf.has_grad()) std::copy(leaf.grad().begin(), leaf.grad().end(), analytic.begin());
        std::vector<double> numeric(leaf.numel());
        for (std::size_t i = 0; i < leaf.numel(); ++i) {
            auto vals = leaf.mutable_data();
            const double orig = vals[i];
            vals[i] = orig + eps;
            const double fp = project(fn(leaves), weights);
            vals[i] = orig - eps;
            const double fm = project(fn(leaves), weights);
            vals[i] = orig;
            numeric[i] = (fp - fm) / (2.0 * eps);
        }
        double diff = 0.0, scale = 0.0;
        for (std::size_t i = 0; i < numeric.size(); ++i) {
            diff = std::max(diff, std::abs(analytic[i] - numeric[i]));
            scale = std::max({scale, std::abs(numeric[i]), std::abs(analytic[i])});
        }
        // Below the central-difference noise a relative error is meaningless.
        const double rel = scale > kGradNoise ? diff / scale : diff;
        report.max_rel_error = std::max(report.max_rel_error, rel);
        report.checked += leaf.numel();
    }
    report.passed = std::isfinite(report.max_rel_error) && report.max_rel_error < tol;
    return report;
}

} // namespace ostr
