#include "ostr/margin.hpp"

#include "ostr/errors.hpp"
#include "ostr/rng.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <vector>

namespace ostr {

namespace {

using Mat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic>;

struct Pair {
    float v;
    std::uint32_t i, j;
};

void normalize_column(Mat& q, Eigen::Index j)
{
    const float n = q.col(j).norm();
    if (n > 0) q.col(j) /= n;
}

/// Largest off-diagonal entry of QᵀQ computed block-wise over the upper
/// triangle. With `pool` set, also keeps the (at most cap) largest pairs.
double gram_pass(const Mat& q, std::size_t cap, std::vector<Pair>* pool)
{
    const Eigen::Index n = q.cols();
    const Eigen::Index block = std::min<Eigen::Index>(n, 1024);
    double best = -std::numeric_limits<double>::infinity();
    float thr = -std::numeric_limits<float>::infinity();
    auto prune = [&](std::size_t keep) {
        if (pool->size() <= keep) return;
        std::nth_element(pool->begin(), pool->begin() + static_cast<std::ptrdiff_t>(keep), pool->end(),
                         [](const Pair& a, const Pair& b) { return a.v > b.v; });
        pool->resize(keep);
        thr = std::numeric_limits<float>::infinity();
        for (const auto& p : *pool) thr = std::min(thr, p.v);
    };
    if (pool) pool->clear();
    Mat g;
    for (Eigen::Index r0 = 0; r0 < n; r0 += block) {
        const Eigen::Index b = std::min(block, n - r0);
        g.noalias() = q.middleCols(r0, n - r0).transpose() * q.middleCols(r0, b);
        for (Eigen::Index a = 0; a < b; ++a) {
            const float* col = g.col(a).data();
            for (Eigen::Index jj = a + 1; jj < n - r0; ++jj) {
                const float v = col[jj];
                if (v > best) best = v;
                if (pool && v > thr) {
                    pool->push_back({v, static_cast<std::uint32_t>(r0 + a), static_cast<std::uint32_t>(r0 + jj)});
                    if (pool->size() >= 2 * cap) prune(cap);
                }
            }
        }
    }
    if (pool) {
        prune(cap);
        std::sort(pool->begin(), pool->end(),
                  [](const Pair& x, const Pair& y) { return x.i != y.i ? x.i < y.i : x.j < y.j; });
    }
    return best;
}

void dump_state(const std::filesystem::path& path, const Mat& q, std::size_t step, double tau)
{
    std::ofstream out(path);
    if (!out) return;
    out << "step " << step << " tau " << tau << " n " << q.cols() << " d " << q.rows() << '\n';
    out.precision(9);
    for (Eigen::Index j = 0; j < q.cols(); ++j) {
        for (Eigen::Index i = 0; i < q.rows(); ++i) out << (i ? "\t" : "") << q(i, j);
        out << '\n';
    }
}

} // namespace

MarginSpec estimate_margin(std::size_t n, std::size_t d, const MarginOptions& opts)
{
    if (n < 2) throw ContractError("margin solver needs n >= 2");
    if (d < 1) throw ContractError("margin solver needs d >= 1");
    if (n > std::numeric_limits<std::uint32_t>::max()) throw ContractError("margin solver: n too large");
    if (opts.steps < 1) throw ConfigError("margin solver needs at least one step");
    if (!(opts.tau_start > 0 && opts.tau_end > 0 && opts.lr > 0 && opts.lr_end > 0))
        throw ConfigError("margin solver temperatures and step sizes must be positive");

    if (d == 1) {
        // The circle of dimension zero: only +1 and -1 are available.
        return {n, d, n == 2 ? -1.0 : 1.0, opts.seed, opts.steps};
    }

    Rng rng(opts.seed);
    Mat q(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(n));
    for (Eigen::Index j = 0; j < q.cols(); ++j) {
        for (Eigen::Index i = 0; i < q.rows(); ++i) q(i, j) = static_cast<float>(rng.normal());
        normalize_column(q, j);
    }

    const double total_pairs = 0.5 * static_cast<double>(n) * static_cast<double>(n - 1);
    const bool all_pairs = total_pairs <= static_cast<double>(opts.max_candidates);
    std::vector<Pair> cand;
    if (all_pairs) {
        for (std::uint32_t i = 0; i < n; ++i)
            for (std::uint32_t j = i + 1; j < n; ++j) cand.push_back({0.0f, i, j});
    }

    Mat grad = Mat::Zero(q.rows(), q.cols());
    std::vector<char> touched(n, 0);
    std::vector<std::uint32_t> touched_list;
    std::vector<double> w;
    const double steps_m1 = static_cast<double>(std::max<std::size_t>(opts.steps - 1, 1));
    for (std::size_t s = 0; s < opts.steps; ++s) {
        const double t = static_cast<double>(s) / steps_m1;
        const double tau = opts.tau_start * std::pow(opts.tau_end / opts.tau_start, t);
        const double lr = opts.lr * std::pow(opts.lr_end / opts.lr, t);
        if (!all_pairs && s % opts.refresh_every == 0) {
            const double mx = gram_pass(q, opts.max_candidates, &cand);
            if (opts.log) {
                std::ostringstream os;
                float floor = std::numeric_limits<float>::infinity();
                for (const auto& p : cand) floor = std::min(floor, p.v);
                os << "step " << s << " tau " << tau << " max " << mx << " pairs " << cand.size() << " floor " << floor;
                opts.log(os.str());
            }
        }

        w.resize(cand.size());
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k < cand.size(); ++k) {
            w[k] = q.col(cand[k].i).dot(q.col(cand[k].j));
            mx = std::max(mx, w[k]);
        }
        if (!std::isfinite(mx)) {
            if (!opts.dump_path.empty()) dump_state(opts.dump_path, q, s, tau);
            throw OptimizerError("margin solver diverged at step " + std::to_string(s));
        }
        double z = 0;
        for (auto& v : w) {
            v = std::exp((v - mx) / tau);
            z += v;
        }
        for (std::size_t k = 0; k < cand.size(); ++k) {
            const float c = static_cast<float>(w[k] / z);
            if (c == 0.0f) continue;
            const auto i = cand[k].i, j = cand[k].j;
            grad.col(i) += c * q.col(j);
            grad.col(j) += c * q.col(i);
            for (auto x : {i, j})
                if (!touched[x]) {
                    touched[x] = 1;
                    touched_list.push_back(x);
                }
        }
        std::sort(touched_list.begin(), touched_list.end());
        double max_norm = 0;
        for (auto j : touched_list) {
            grad.col(j) -= q.col(j).dot(grad.col(j)) * q.col(j);
            max_norm = std::max(max_norm, static_cast<double>(grad.col(j).norm()));
        }
        if (max_norm > 0) {
            const float step = static_cast<float>(lr / max_norm);
            for (auto j : touched_list) {
                q.col(j) -= step * grad.col(j);
                normalize_column(q, j);
            }
        }
        for (auto j : touched_list) {
            grad.col(j).setZero();
            touched[j] = 0;
        }
        touched_list.clear();
    }

    MarginSpec spec;
    spec.n = n;
    spec.d = d;
    spec.seed = opts.seed;
    spec.steps = opts.steps;
    spec.m_p = gram_pass(q, 0, nullptr);
    if (!std::isfinite(spec.m_p)) {
        if (!opts.dump_path.empty()) dump_state(opts.dump_path, q, opts.steps, opts.tau_end);
        throw OptimizerError("margin solver produced a non-finite margin");
    }
    return spec;
}

MarginSpec estimate_margin(std::size_t n, std::size_t d, std::size_t steps, double lr, std::uint64_t seed)
{
    MarginOptions o;
    o.steps = steps;
    o.lr = lr;
    o.seed = seed;
    return estimate_margin(n, d, o);
}

void write_margin_file(const std::filesystem::path& path, const MarginSpec& spec)
{
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out.precision(17);
    out << spec.n << ' ' << spec.d << ' ' << spec.m_p << ' ' << spec.seed << ' ' << spec.steps << '\n';
}

MarginSpec read_margin_file(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) throw LoadError("cannot open margin file " + path.string());
    MarginSpec s;
    if (!(in >> s.n >> s.d >> s.m_p >> s.seed >> s.steps)) throw LoadError("malformed margin file " + path.string());
    if (!(s.m_p >= -1.0 && s.m_p < 1.0)) throw LoadError("margin out of range in " + path.string());
    return s;
}

} // namespace ostr
