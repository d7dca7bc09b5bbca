#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>

namespace ostr {

struct MarginSpec {
    std::size_t n = 0;
    std::size_t d = 0;
    double m_p = 0.0;
    std::uint64_t seed = 0;
    std::size_t steps = 0;
};

struct MarginOptions {
    std::size_t steps = 200;
    double lr = 0.1;              ///< largest per-step column displacement (radians) at the start
    double lr_end = 1e-4;         ///< ... and at the end, geometric in between
    std::uint64_t seed = 1;
    double tau_start = 0.1;
    double tau_end = 0.001;
    std::size_t refresh_every = 25;        ///< full-Gram candidate refresh period (large n only)
    std::size_t max_candidates = 400000;   ///< pair budget tracked between refreshes
    std::filesystem::path dump_path;       ///< written on divergence when non-empty
    std::function<void(const std::string&)> log;
};

/// Packs n unit vectors in R^d to minimize their largest pairwise cosine:
/// projected gradient descent on a log-sum-exp smoothing of the maximum with
/// an annealed temperature. Returns the exact largest off-diagonal cosine of
/// the final configuration. For n(n-1)/2 above max_candidates, only the pairs
/// above an adaptive threshold are tracked and re-selected from a chunked Gram
/// pass every refresh_every steps.
MarginSpec estimate_margin(std::size_t n, std::size_t d, const MarginOptions& opts);
MarginSpec estimate_margin(std::size_t n, std::size_t d, std::size_t steps, double lr, std::uint64_t seed);

/// One line: `n d m_p seed steps`.
void write_margin_file(const std::filesystem::path& path, const MarginSpec& spec);
MarginSpec read_margin_file(const std::filesystem::path& path);

} // namespace ostr
