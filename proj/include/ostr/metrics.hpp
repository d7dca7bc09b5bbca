#pragma once

#include "ostr/predictor.hpp"
#include "ostr/synth.hpp"
#include "ostr/text.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

namespace ostr {

/// Symbol-level edit distance (UNK and EOS are ordinary symbols).
std::size_t levenshtein(const Label& a, const Label& b);

/// Fraction of exact matches. Empty input is a ContractError.
double line_accuracy(std::span<const Label> gts, std::span<const Label> prs);
/// 1 - sum(ED) / sum(len(gt)); may be negative. Zero total length is a ContractError.
double char_accuracy(std::span<const Label> gts, std::span<const Label> prs);

struct RejectionMetrics {
    double re = 0, pr = 0, fm = 0;
    std::size_t rejected_gt = 0, rejected_pred = 0, rejected_both = 0;
};

/// A ground truth is to be rejected iff it contains a character of out_set; a
/// prediction is rejected iff it contains UNK. 0/0 counts as 0.
RejectionMetrics rejection_metrics(std::span<const Label> gts, std::span<const Label> prs,
                                   const std::set<CharId>& out_set);

enum class SplitMode { GZSL, OSR_noSOC, OSR_SOC, GOSR, OSTR };

const char* split_mode_name(SplitMode m);
SplitMode parse_split_mode(const std::string& s);

struct SplitParams {
    std::map<std::string, std::vector<CharId>> groups; ///< named character groups
    std::string soc_group;        ///< seen characters moved out-of-set (OSR_SOC, OSTR)
    std::string noc_group;        ///< novel characters moved out-of-set (GOSR, OSTR)
    std::size_t soc_count = 0;    ///< random seen subgroup size when soc_group is empty
    std::size_t noc_count = 0;    ///< random novel subgroup size when noc_group is empty
};

struct OpenSetSplit {
    SplitMode mode = SplitMode::GZSL;
    std::set<CharId> in_set;
    std::set<CharId> out_set;
    std::set<CharId> seen;  ///< C_test ∩ C_train
    std::set<CharId> novel; ///< C_test \ C_train
};

/// Partitions C_test according to the regime. Named groups must exist and
/// contain only characters of the right kind (seen for SOC, novel for NOC).
OpenSetSplit build_split(std::span<const CharId> c_test, const std::set<CharId>& c_train, SplitMode mode,
                         const SplitParams& params, std::uint64_t seed);

struct MetricsReport {
    SplitMode mode = SplitMode::GZSL;
    double la = 0, ca = 0, re = 0, pr = 0, fm = 0;
    std::size_t n = 0;        ///< all samples
    std::size_t n_inset = 0;  ///< samples made only of in-set characters (LA/CA population)
    std::size_t rejected_gt = 0, rejected_pred = 0;
    bool operator==(const MetricsReport&) const = default;
};

/// LA/CA over pure in-set samples (0 when there are none), RE/PR/FM over all.
MetricsReport compute_report(std::span<const Label> gts, std::span<const Label> prs, const OpenSetSplit& split);

struct PredictionRecord {
    std::string name;
    Label gt;
    Label pred;
};

using LinePredictor = std::function<Decoding(const Image&)>;

/// Runs the predictor over the dataset (fanned out over `threads` workers with
/// results placed by sample index) and computes the report.
MetricsReport evaluate(const LinePredictor& predict, const std::vector<DatasetEntry>& data, const OpenSetSplit& split,
                       std::size_t threads, std::vector<PredictionRecord>* records = nullptr);

/// key=value lines.
void write_report(const std::filesystem::path& path, const MetricsReport& r);
/// Header plus one row `mode LA CA RE PR FM N`.
void write_report_tsv(const std::filesystem::path& path, const MetricsReport& r);
/// `<image> <TAB> <decoded> <TAB> <rejected 0|1>` per sample.
void write_predictions(const std::filesystem::path& path, const std::vector<PredictionRecord>& records);

} // namespace ostr
