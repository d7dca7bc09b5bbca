#pragma once

#include "ostr/bank.hpp"
#include "ostr/checkpoint.hpp"
#include "ostr/config.hpp"
#include "ostr/margin.hpp"
#include "ostr/metrics.hpp"

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace ostr {

using LogFn = std::function<void(const std::string&)>;

struct TrainSummary {
    std::filesystem::path checkpoint;
    std::filesystem::path bank; ///< empty for the baseline
    std::size_t iterations = 0;
    double last_loss = 0.0;
};

/// Trains the prototype recognizer. Writes `model.ostr`, `bank.ostr` (the
/// training charset), `loss.tsv` and optional `checkpoint-<iter>.ostr` into
/// out_dir. A non-finite loss writes `diagnostic.ostr` and raises
/// OptimizerError.
TrainSummary train(const RunConfig& cfg, const std::filesystem::path& out_dir, const LogFn& log = {});

/// Trains the closed-vocabulary classifier on the training charset.
TrainSummary baseline_train(const RunConfig& cfg, const std::filesystem::path& out_dir, const LogFn& log = {});

struct EvalRequest {
    std::filesystem::path checkpoint;
    std::filesystem::path bank;    ///< defaults to bank.ostr next to the checkpoint; built when absent
    std::filesystem::path dataset;
    std::filesystem::path out_dir; ///< report.txt, report.tsv, predictions.tsv
    RunConfig settings;            ///< test_charset, split_*, threads are read from here
};

/// C_test is test_charset resolved over the bank charset and the dataset
/// characters; every in-set character needs a prototype.
MetricsReport eval(const EvalRequest& req, const LogFn& log = {});

/// Encodes the templates of `chars` taken from `source` and appends them to
/// the bank cache (created from the training charset when missing).
PrototypeBank charset_add(const std::filesystem::path& checkpoint, const std::filesystem::path& bank_path,
                          const TemplateAtlas& source, const std::vector<CharId>& chars);
PrototypeBank charset_remove(const std::filesystem::path& checkpoint, const std::filesystem::path& bank_path,
                             const std::vector<CharId>& chars);

MarginSpec margin_solve(std::size_t n, std::size_t d, const MarginOptions& opts, const std::filesystem::path& out,
                        const LogFn& log = {});

struct GradcheckCase {
    std::string name;
    std::size_t instances = 0;
    double worst = 0.0;
    double tol = 0.0;
    bool passed() const { return worst < tol; }
};

/// Finite-difference checks of every differentiable op and the composed
/// model blocks, `instances` random draws each.
std::vector<GradcheckCase> gradcheck_suite(std::uint64_t seed, std::size_t instances, const LogFn& log = {});

/// Writes a synthetic dataset (labels.tsv + PGMs) over synth_charset.
std::size_t synth(const RunConfig& cfg, const std::filesystem::path& out_dir);

} // namespace ostr
