#include "ostr/metrics.hpp"

#include "ostr/errors.hpp"
#include "ostr/rng.hpp"

#include <algorithm>
#include <cstdio>
#include <exception>
#include <fstream>
#include <thread>

namespace ostr {

std::size_t levenshtein(const Label& a, const Label& b)
{
    std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
    for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
    for (std::size_t i = 1; i <= a.size(); ++i) {
        cur[0] = i;
        for (std::size_t j = 1; j <= b.size(); ++j)
            cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

namespace {

void require_pairs(std::span<const Label> gts, std::span<const Label> prs)
{
    if (gts.size() != prs.size())
        throw ContractError("ground truth and prediction counts differ (" + std::to_string(gts.size()) + " vs " +
                            std::to_string(prs.size()) + ")");
}

double ratio(std::size_t a, std::size_t b) { return b == 0 ? 0.0 : static_cast<double>(a) / static_cast<double>(b); }

bool contains_any(const Label& l, const std::set<CharId>& s)
{
    return std::any_of(l.begin(), l.end(), [&](CharId c) { return s.count(c) > 0; });
}

bool contains_unk(const Label& l) { return std::find(l.begin(), l.end(), kUnk) != l.end(); }

} // namespace

double line_accuracy(std::span<const Label> gts, std::span<const Label> prs)
{
    require_pairs(gts, prs);
    if (gts.empty()) throw ContractError("line accuracy of an empty set is undefined");
    std::size_t hit = 0;
    for (std::size_t i = 0; i < gts.size(); ++i) hit += gts[i] == prs[i];
    return ratio(hit, gts.size());
}

double char_accuracy(std::span<const Label> gts, std::span<const Label> prs)
{
    require_pairs(gts, prs);
    std::size_t ed = 0, len = 0;
    for (std::size_t i = 0; i < gts.size(); ++i) {
        ed += levenshtein(gts[i], prs[i]);
        len += gts[i].size();
    }
    if (len == 0) throw ContractError("character accuracy needs a non-empty total label length");
    return 1.0 - static_cast<double>(ed) / static_cast<double>(len);
}

RejectionMetrics rejection_metrics(std::span<const Label> gts, std::span<const Label> prs,
                                   const std::set<CharId>& out_set)
{
    require_pairs(gts, prs);
    RejectionMetrics m;
    for (std::size_t i = 0; i < gts.size(); ++i) {
        const bool g = contains_any(gts[i], out_set);
        const bool p = contains_unk(prs[i]);
        m.rejected_gt += g;
        m.rejected_pred += p;
        m.rejected_both += g && p;
    }
    m.re = ratio(m.rejected_both, m.rejected_gt);
    m.pr = ratio(m.rejected_both, m.rejected_pred);
    m.fm = m.re + m.pr > 0 ? 2 * m.re * m.pr / (m.re + m.pr) : 0.0;
    return m;
}

const char* split_mode_name(SplitMode m)
{
    switch (m) {
    case SplitMode::GZSL: return "GZSL";
    case SplitMode::OSR_noSOC: return "OSR_noSOC";
    case SplitMode::OSR_SOC: return "OSR_SOC";
    case SplitMode::GOSR: return "GOSR";
    case SplitMode::OSTR: return "OSTR";
    }
    return "?";
}

SplitMode parse_split_mode(const std::string& s)
{
    for (auto m : {SplitMode::GZSL, SplitMode::OSR_noSOC, SplitMode::OSR_SOC, SplitMode::GOSR, SplitMode::OSTR})
        if (s == split_mode_name(m)) return m;
    throw ConfigError("unknown split mode '" + s + "'");
}

namespace {

std::set<CharId> pick_subgroup(const std::string& group, std::size_t count, const std::set<CharId>& pool,
                               const SplitParams& params, Rng& rng, const char* what)
{
    if (!group.empty()) {
        auto it = params.groups.find(group);
        if (it == params.groups.end()) throw ConfigError("unknown character group '" + group + "'");
        std::set<CharId> out;
        for (auto c : it->second) {
            if (!pool.count(c))
                throw ConfigError(std::string("group '") + group + "' contains " + to_utf8(c) + ", which is not a " +
                                  what + " test character");
            out.insert(c);
        }
        return out;
    }
    if (count == 0) throw ConfigError(std::string("split needs a ") + what + " out-of-set group or count");
    if (count > pool.size())
        throw ConfigError(std::string("requested ") + std::to_string(count) + " " + what + " characters, only " +
                          std::to_string(pool.size()) + " available");
    std::vector<CharId> v(pool.begin(), pool.end());
    rng.shuffle(v);
    return {v.begin(), v.begin() + static_cast<std::ptrdiff_t>(count)};
}

} // namespace

OpenSetSplit build_split(std::span<const CharId> c_test, const std::set<CharId>& c_train, SplitMode mode,
                         const SplitParams& params, std::uint64_t seed)
{
    if (c_test.empty()) throw ContractError("test character set is empty");
    OpenSetSplit s;
    s.mode = mode;
    for (auto c : c_test) (c_train.count(c) ? s.seen : s.novel).insert(c);
    Rng rng(seed);
    std::set<CharId> out;
    switch (mode) {
    case SplitMode::GZSL: break;
    case SplitMode::OSR_noSOC: out = s.novel; break;
    case SplitMode::OSR_SOC:
        out = s.novel;
        for (auto c : pick_subgroup(params.soc_group, params.soc_count, s.seen, params, rng, "seen")) out.insert(c);
        break;
    case SplitMode::GOSR: out = pick_subgroup(params.noc_group, params.noc_count, s.novel, params, rng, "novel"); break;
    case SplitMode::OSTR:
        out = pick_subgroup(params.noc_group, params.noc_count, s.novel, params, rng, "novel");
        for (auto c : pick_subgroup(params.soc_group, params.soc_count, s.seen, params, rng, "seen")) out.insert(c);
        break;
    }
    s.out_set = out;
    for (auto c : c_test)
        if (!out.count(c)) s.in_set.insert(c);
    return s;
}

MetricsReport compute_report(std::span<const Label> gts, std::span<const Label> prs, const OpenSetSplit& split)
{
    require_pairs(gts, prs);
    MetricsReport r;
    r.mode = split.mode;
    r.n = gts.size();
    std::vector<Label> in_g, in_p;
    for (std::size_t i = 0; i < gts.size(); ++i) {
        const bool pure = std::all_of(gts[i].begin(), gts[i].end(), [&](CharId c) { return split.in_set.count(c) > 0; });
        if (!pure) continue;
        in_g.push_back(gts[i]);
        in_p.push_back(prs[i]);
    }
    r.n_inset = in_g.size();
    if (!in_g.empty()) {
        r.la = line_accuracy(in_g, in_p);
        std::size_t len = 0;
        for (const auto& g : in_g) len += g.size();
        if (len > 0) r.ca = char_accuracy(in_g, in_p);
    }
    const auto rej = rejection_metrics(gts, prs, split.out_set);
    r.re = rej.re;
    r.pr = rej.pr;
    r.fm = rej.fm;
    r.rejected_gt = rej.rejected_gt;
    r.rejected_pred = rej.rejected_pred;
    return r;
}

MetricsReport evaluate(const LinePredictor& predict, const std::vector<DatasetEntry>& data, const OpenSetSplit& split,
                       std::size_t threads, std::vector<PredictionRecord>* records)
{
    std::vector<Label> prs(data.size());
    const std::size_t workers = std::max<std::size_t>(1, std::min(threads, data.size()));
    std::vector<std::exception_ptr> errors(workers);
    auto work = [&](std::size_t w) {
        try {
            for (std::size_t i = w; i < data.size(); i += workers) prs[i] = predict(data[i].image).labels;
        } catch (...) {
            errors[w] = std::current_exception();
        }
    };
    if (workers == 1) {
        work(0);
    } else {
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work, w);
        for (auto& t : pool) t.join();
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);

    std::vector<Label> gts;
    gts.reserve(data.size());
    for (const auto& d : data) gts.push_back(d.label);
    if (records) {
        records->clear();
        for (std::size_t i = 0; i < data.size(); ++i) records->push_back({data[i].name, data[i].label, prs[i]});
    }
    return compute_report(gts, prs, split);
}

namespace {

std::string fmt(double v)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

} // namespace

void write_report(const std::filesystem::path& path, const MetricsReport& r)
{
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << "mode=" << split_mode_name(r.mode) << '\n'
        << "LA=" << fmt(r.la) << '\n'
        << "CA=" << fmt(r.ca) << '\n'
        << "RE=" << fmt(r.re) << '\n'
        << "PR=" << fmt(r.pr) << '\n'
        << "FM=" << fmt(r.fm) << '\n'
        << "N=" << r.n << '\n'
        << "N_inset=" << r.n_inset << '\n'
        << "rejected_gt=" << r.rejected_gt << '\n'
        << "rejected_pred=" << r.rejected_pred << '\n';
}

void write_report_tsv(const std::filesystem::path& path, const MetricsReport& r)
{
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << "mode\tLA\tCA\tRE\tPR\tFM\tN\n"
        << split_mode_name(r.mode) << '\t' << fmt(r.la) << '\t' << fmt(r.ca) << '\t' << fmt(r.re) << '\t'
        << fmt(r.pr) << '\t' << fmt(r.fm) << '\t' << r.n << '\n';
}

void write_predictions(const std::filesystem::path& path, const std::vector<PredictionRecord>& records)
{
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    for (const auto& r : records)
        out << r.name << '\t' << to_utf8(r.pred) << '\t' << (contains_unk(r.pred) ? 1 : 0) << '\n';
}

} // namespace ostr
