#include <doctest.h>

#include "ostr/ostr.h"

#include "temp_dir.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

namespace {

const char* kTiny = "input_width=64\nbackbone_channels=4,8,8\nd=16\nl_max=3\ncam_hidden=4\n"
                    "encoder_channels=4,8,8,16\nalphabet_classes=6\ntrain_charset=first:4\nmax_len=2\n"
                    "samples_per_epoch=4\nbatch_size=2\nepochs=1\nb_max=8\nsynth_count=3\n";

struct Config {
    ostr_config* p = nullptr;
    ~Config() { ostr_config_free(p); }
};

std::string text_of(const ostr_config* c)
{
    char* t = nullptr;
    REQUIRE(ostr_config_serialize(c, &t) == OSTR_OK);
    std::string s = t;
    ostr_string_free(t);
    return s;
}

} // namespace

TEST_CASE("c api: config handles and error reporting")
{
    Config c;
    REQUIRE(ostr_config_default(&c.p) == OSTR_OK);
    const auto before = text_of(c.p);
    CHECK(before.find("seed=1\n") != std::string::npos);

    CHECK(ostr_config_set(c.p, "d", "32") == OSTR_OK);
    CHECK(text_of(c.p).find("\nd=32\n") != std::string::npos);
    CHECK(ostr_config_set(c.p, "group.kana", "ab") == OSTR_OK);
    CHECK(text_of(c.p).find("group.kana=ab") != std::string::npos);

    const auto good = text_of(c.p);
    CHECK(ostr_config_set(c.p, "no_such_key", "1") == OSTR_E_CONFIG);
    CHECK(std::strstr(ostr_last_error(), "no_such_key") != nullptr);
    CHECK(ostr_config_set(c.p, "momentum", "1.5") == OSTR_E_CONFIG);
    CHECK(text_of(c.p) == good);

    Config bad;
    CHECK(ostr_config_parse("d=8\nd=9\n", &bad.p) == OSTR_E_CONFIG);
    CHECK(bad.p == nullptr);
    CHECK(ostr_config_load("/nonexistent/run.cfg", &bad.p) != OSTR_OK);
    CHECK(ostr_config_set(nullptr, "d", "1") == OSTR_E_CONTRACT);

    CHECK(std::string(ostr_status_name(OSTR_OK)) == "ok");
    CHECK(std::string(ostr_status_name(OSTR_E_LOAD)) == "load error");
}

TEST_CASE("c api: margin anchors")
{
    double m = 0.0;
    REQUIRE(ostr_margin_solve(2, 4, 1, 0, nullptr, nullptr, nullptr, &m) == OSTR_OK);
    CHECK(m == doctest::Approx(-1.0).epsilon(1e-3));
    REQUIRE(ostr_margin_solve(4, 3, 1, 0, nullptr, nullptr, nullptr, &m) == OSTR_OK);
    CHECK(m == doctest::Approx(-1.0 / 3.0).epsilon(5e-3));
}

TEST_CASE("c api: train, synth, charset edits, eval and direct recognition")
{
    TempDir dir;
    Config c;
    REQUIRE(ostr_config_parse(kTiny, &c.p) == OSTR_OK);

    std::vector<std::string> lines;
    ostr_train_result r{};
    REQUIRE(ostr_train(c.p, (dir.path() / "run").c_str(),
                       [](const char* line, void* user) { static_cast<std::vector<std::string>*>(user)->push_back(line); },
                       &lines, &r) == OSTR_OK);
    CHECK(r.iterations == 2);
    CHECK(std::isfinite(r.last_loss));
    CHECK_FALSE(lines.empty());
    const auto ck = (dir.path() / "run" / "model.ostr").string();

    std::size_t n = 0;
    REQUIRE(ostr_config_set(c.p, "synth_charset", "first:4") == OSTR_OK);
    REQUIRE(ostr_synth(c.p, (dir.path() / "data").c_str(), &n) == OSTR_OK);
    CHECK(n == 3);
    CHECK(std::filesystem::exists(dir.path() / "data" / "labels.tsv"));

    std::size_t templates = 0;
    REQUIRE(ostr_charset_add(ck.c_str(), nullptr, nullptr, "last:2", &templates) == OSTR_OK);
    CHECK(templates == 6);
    REQUIRE(ostr_charset_remove(ck.c_str(), nullptr, "first:4", &templates) == OSTR_OK);
    CHECK(templates == 2);
    CHECK(ostr_charset_add(ck.c_str(), nullptr, nullptr, "chars:q", &templates) == OSTR_E_CONFIG);

    // The data's characters were removed from the bank.
    ostr_report rep{};
    CHECK(ostr_eval(ck.c_str(), nullptr, (dir.path() / "data").c_str(), nullptr, nullptr, nullptr, nullptr, &rep) ==
          OSTR_E_CONTRACT);
    REQUIRE(ostr_charset_add(ck.c_str(), nullptr, nullptr, "first:4", &templates) == OSTR_OK);
    REQUIRE(ostr_eval(ck.c_str(), nullptr, (dir.path() / "data").c_str(), nullptr, (dir.path() / "eval").c_str(),
                      nullptr, nullptr, &rep) == OSTR_OK);
    CHECK(std::string(rep.mode) == "GZSL");
    CHECK(rep.n == 3);
    CHECK(std::filesystem::exists(dir.path() / "eval" / "report.txt"));

    REQUIRE(ostr_bank_export_tsv((dir.path() / "run" / "bank.ostr").c_str(), (dir.path() / "bank.tsv").c_str()) ==
            OSTR_OK);
    std::ifstream tsv(dir.path() / "bank.tsv");
    std::size_t rows = 0;
    for (std::string line; std::getline(tsv, line);) rows += !line.empty();
    CHECK(rows == 6);

    ostr_model* model = nullptr;
    REQUIRE(ostr_model_load(ck.c_str(), nullptr, &model) == OSTR_OK);
    CHECK(ostr_model_charset_size(model) == 6);
    std::vector<float> pixels(32 * 40, 0.0f);
    char* label = nullptr;
    REQUIRE(ostr_model_recognize(model, pixels.data(), 32, 40, &label) == OSTR_OK);
    CHECK(label != nullptr);
    ostr_string_free(label);
    CHECK(ostr_model_recognize(model, pixels.data(), 16, 40, &label) != OSTR_OK);
    ostr_model_free(model);

    ostr_train_result b{};
    REQUIRE(ostr_baseline_train(c.p, (dir.path() / "baseline").c_str(), nullptr, nullptr, &b) == OSTR_OK);
    CHECK(b.iterations == 2);
    CHECK(ostr_model_load((dir.path() / "baseline" / "model.ostr").c_str(), nullptr, &model) == OSTR_E_CONTRACT);
}

TEST_CASE("c api: intermediate checkpoints and empty synthesis")
{
    TempDir dir;
    Config c;
    REQUIRE(ostr_config_parse(kTiny, &c.p) == OSTR_OK);
    REQUIRE(ostr_config_set(c.p, "samples_per_epoch", "10") == OSTR_OK);
    REQUIRE(ostr_config_set(c.p, "checkpoint_every", "2") == OSTR_OK);
    ostr_train_result r{};
    REQUIRE(ostr_train(c.p, (dir.path() / "run").c_str(), nullptr, nullptr, &r) == OSTR_OK);
    CHECK(r.iterations == 5);
    CHECK(std::filesystem::exists(dir.path() / "run" / "checkpoint-2.ostr"));
    CHECK(std::filesystem::exists(dir.path() / "run" / "checkpoint-4.ostr"));
    CHECK_FALSE(std::filesystem::exists(dir.path() / "run" / "checkpoint-5.ostr"));

    // A failed edit leaves no bank behind.
    const auto ck = (dir.path() / "run" / "checkpoint-2.ostr").string();
    const auto side = (dir.path() / "side.ostr").string();
    CHECK(ostr_charset_add(ck.c_str(), side.c_str(), nullptr, "first:1", nullptr) == OSTR_E_CONTRACT);
    CHECK_FALSE(std::filesystem::exists(side));
    std::size_t templates = 0;
    REQUIRE(ostr_charset_add(ck.c_str(), side.c_str(), nullptr, "last:1", &templates) == OSTR_OK);
    CHECK(templates == 5);

    REQUIRE(ostr_config_set(c.p, "synth_count", "0") == OSTR_OK);
    std::size_t n = 7;
    REQUIRE(ostr_synth(c.p, (dir.path() / "data").c_str(), &n) == OSTR_OK);
    CHECK(n == 0);
    CHECK(std::filesystem::file_size(dir.path() / "data" / "labels.tsv") == 0);
}

TEST_CASE("c api: missing files map to load errors")
{
    ostr_model* model = nullptr;
    CHECK(ostr_model_load("/nonexistent/model.ostr", nullptr, &model) != OSTR_OK);
    CHECK(model == nullptr);
    CHECK(std::strlen(ostr_last_error()) > 0);
    ostr_report rep{};
    CHECK(ostr_eval("/nonexistent/model.ostr", nullptr, "/nonexistent", nullptr, nullptr, nullptr, nullptr, &rep) !=
          OSTR_OK);
}
