#include <doctest.h>

#include "ostr/errors.hpp"
#include "ostr/metrics.hpp"

#include "temp_dir.hpp"

#include <fstream>
#include <functional>
#include <sstream>

using namespace ostr;

namespace {

std::size_t naive_edit(const Label& a, const Label& b)
{
    if (a.empty()) return b.size();
    if (b.empty()) return a.size();
    const Label ta = a.substr(1), tb = b.substr(1);
    return std::min({naive_edit(ta, b) + 1, naive_edit(a, tb) + 1, naive_edit(ta, tb) + (a[0] != b[0])});
}

std::vector<Label> all_strings(std::size_t max_len)
{
    std::vector<Label> out{Label()};
    std::size_t begin = 0;
    for (std::size_t len = 1; len <= max_len; ++len) {
        const std::size_t end = out.size();
        for (std::size_t i = begin; i < end; ++i)
            for (CharId c : {U'a', U'b', U'c', U'd'}) out.push_back(out[i] + c);
        begin = end;
    }
    return out;
}

} // namespace

TEST_CASE("levenshtein agrees with the naive recursion on short strings")
{
    const auto all = all_strings(3);
    for (const auto& a : all)
        for (const auto& b : all) REQUIRE(levenshtein(a, b) == naive_edit(a, b));
    CHECK(levenshtein(U"kitten", U"sitting") == 3);
    CHECK(levenshtein(Label{kUnk}, U"a") == 1);
}

TEST_CASE("line and character accuracy examples")
{
    std::vector<Label> g{U"ab", U"cd"}, p{U"ab", U"ce"};
    CHECK(line_accuracy(g, g) == 1.0);
    CHECK(line_accuracy(g, p) == 0.5);
    CHECK_THROWS_AS(line_accuracy(std::vector<Label>{}, std::vector<Label>{}), ContractError);
    CHECK_THROWS_AS(line_accuracy(g, std::vector<Label>{U"ab"}), ContractError);

    CHECK(char_accuracy(g, g) == 1.0);
    CHECK(char_accuracy(std::vector<Label>{U"abc"}, std::vector<Label>{U"abd"}) == doctest::Approx(2.0 / 3));
    CHECK(char_accuracy(std::vector<Label>{U"a"}, std::vector<Label>{U"abcd"}) == doctest::Approx(-2.0));
    CHECK_THROWS_AS(char_accuracy(std::vector<Label>{U""}, std::vector<Label>{U"a"}), ContractError);
}

TEST_CASE("rejection metrics")
{
    std::set<CharId> out{U'z'};
    std::vector<Label> g{U"ab", U"cd"};
    auto none = rejection_metrics(g, g, out);
    CHECK(none.re == 0.0);
    CHECK(none.pr == 0.0);
    CHECK(none.fm == 0.0);

    const Label unk{kUnk};
    std::vector<Label> g4{U"z", U"az", U"a", U"b"};
    std::vector<Label> p4{unk, U"a", unk, U"b"};
    auto m = rejection_metrics(g4, p4, out);
    CHECK(m.re == 0.5);
    CHECK(m.pr == 0.5);
    CHECK(m.fm == 0.5);

    std::vector<Label> all_unk(4, unk);
    auto sat = rejection_metrics(g4, all_unk, out);
    CHECK(sat.re == 1.0);
    CHECK(sat.pr == 0.5);
}

TEST_CASE("build_split modes")
{
    std::vector<CharId> test;
    for (CharId c = 0x4E00; c < 0x4E00 + 60; ++c) test.push_back(c);
    std::set<CharId> train(test.begin(), test.begin() + 40);

    auto gz = build_split(test, train, SplitMode::GZSL, {}, 1);
    CHECK(gz.in_set.size() == 60);
    CHECK(gz.out_set.empty());

    auto osr = build_split(test, train, SplitMode::OSR_noSOC, {}, 1);
    CHECK(osr.out_set.size() == 20);
    CHECK(osr.in_set == train);

    SplitParams p;
    p.noc_count = 10;
    p.soc_count = 4;
    auto a = build_split(test, train, SplitMode::OSTR, p, 7);
    auto b = build_split(test, train, SplitMode::OSTR, p, 7);
    CHECK(a.out_set == b.out_set);
    CHECK(a.out_set.size() == 14);
    std::size_t seen_out = 0;
    for (auto c : a.out_set) seen_out += train.count(c);
    CHECK(seen_out == 4);
    for (auto c : a.in_set) CHECK(a.out_set.count(c) == 0);
    CHECK(a.in_set.size() + a.out_set.size() == 60);

    SplitParams named;
    named.groups["latin"] = {test[0], test[1]};
    named.soc_group = "latin";
    auto soc = build_split(test, train, SplitMode::OSR_SOC, named, 1);
    CHECK(soc.out_set.size() == 22);
    named.soc_group = "kana";
    CHECK_THROWS_AS(build_split(test, train, SplitMode::OSR_SOC, named, 1), ConfigError);
    named.noc_group = "latin";
    CHECK_THROWS_AS(build_split(test, train, SplitMode::GOSR, named, 1), ConfigError);
    CHECK_THROWS_AS(build_split(test, train, SplitMode::GOSR, {}, 1), ConfigError);
}

TEST_CASE("evaluate: oracle and all-UNK predictors, mode consistency, report files")
{
    std::vector<DatasetEntry> data;
    const std::vector<Label> labels{U"ab", U"ba", U"az", U"zz", U"b"};
    for (std::size_t i = 0; i < labels.size(); ++i) data.push_back({"s" + std::to_string(i) + ".pgm", Image(32, 32), labels[i]});
    std::set<CharId> train{U'a', U'b', U'z'};
    const CharId cs[] = {U'a', U'b', U'z'};
    SplitParams p;
    p.groups["zed"] = {U'z'};
    p.soc_group = "zed";
    auto split = build_split(cs, train, SplitMode::OSR_SOC, p, 1);

    std::size_t k = 0;
    std::vector<Label> oracle_out;
    for (const auto& l : labels) {
        Label o = l;
        for (auto& c : o)
            if (split.out_set.count(c)) c = kUnk;
        oracle_out.push_back(o);
    }
    LinePredictor oracle = [&](const Image&) { return Decoding{oracle_out[k++], 0}; };
    auto r = evaluate(oracle, data, split, 1);
    CHECK(r.la == 1.0);
    CHECK(r.ca == 1.0);
    CHECK(r.re == 1.0);
    CHECK(r.pr == 1.0);
    CHECK(r.n_inset == 3);

    LinePredictor unk = [](const Image&) { return Decoding{Label{kUnk}, 1}; };
    auto u = evaluate(unk, data, split, 3);
    CHECK(u.la == 0.0);
    CHECK(u.re == 1.0);
    CHECK(evaluate(unk, data, split, 1) == u);

    auto gz = build_split(cs, train, SplitMode::GZSL, {}, 1);
    SplitParams none;
    none.groups["empty"] = {};
    none.noc_group = "empty";
    none.soc_group = "empty";
    auto ostr = build_split(cs, train, SplitMode::OSTR, none, 1);
    auto r1 = evaluate(unk, data, gz, 1);
    auto r2 = evaluate(unk, data, ostr, 1);
    r2.mode = r1.mode;
    CHECK(r1 == r2);

    TempDir dir;
    std::vector<PredictionRecord> recs;
    evaluate(unk, data, split, 2, &recs);
    write_report(dir.path() / "report.txt", u);
    write_report_tsv(dir.path() / "report.tsv", u);
    write_predictions(dir.path() / "pred.tsv", recs);
    std::ifstream in(dir.path() / "pred.tsv");
    std::string line;
    std::getline(in, line);
    CHECK(line == "s0.pgm\t[-]\t1");
    std::ifstream tsv(dir.path() / "report.tsv");
    std::getline(tsv, line);
    CHECK(line == "mode\tLA\tCA\tRE\tPR\tFM\tN");
}
