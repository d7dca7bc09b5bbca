// Command-line front end over the C API.
#include "ostr/ostr.h"

#include <CLI11.hpp>

#include <cstdio>
#include <memory>
#include <string>
#include <vector>

namespace {

struct ConfigDeleter {
    void operator()(ostr_config* c) const { ostr_config_free(c); }
};
using ConfigPtr = std::unique_ptr<ostr_config, ConfigDeleter>;

struct Common {
    std::string config;
    std::string out;
    long long seed = -1;
    int threads = 0;
    std::vector<std::string> overrides;
};

void print_line(const char* line, void*)
{
    std::fprintf(stderr, "%s\n", line);
    std::fflush(stderr);
}

int check(ostr_status s)
{
    if (s == OSTR_OK) return 0;
    std::fprintf(stderr, "error (%s): %s\n", ostr_status_name(s), ostr_last_error());
    return static_cast<int>(s) + 1;
}

struct Failure {
    int code;
};

void must(ostr_status s)
{
    if (const int c = check(s)) throw Failure{c};
}

ConfigPtr make_config(const Common& o)
{
    ostr_config* raw = nullptr;
    must(o.config.empty() ? ostr_config_default(&raw) : ostr_config_load(o.config.c_str(), &raw));
    ConfigPtr cfg(raw);
    if (o.seed >= 0) must(ostr_config_set(cfg.get(), "seed", std::to_string(o.seed).c_str()));
    if (o.threads > 0) must(ostr_config_set(cfg.get(), "threads", std::to_string(o.threads).c_str()));
    for (const auto& kv : o.overrides) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) {
            std::fprintf(stderr, "error: --set expects key=value, got '%s'\n", kv.c_str());
            throw Failure{2};
        }
        must(ostr_config_set(cfg.get(), kv.substr(0, eq).c_str(), kv.substr(eq + 1).c_str()));
    }
    return cfg;
}

const char* opt(const std::string& s) { return s.empty() ? nullptr : s.c_str(); }

void add_common(CLI::App* cmd, Common& o, bool needs_out)
{
    cmd->add_option("--config", o.config, "run configuration file")->check(CLI::ExistingFile);
    cmd->add_option("--seed", o.seed, "override the config seed")->check(CLI::NonNegativeNumber);
    cmd->add_option("--threads", o.threads, "worker threads")->check(CLI::PositiveNumber);
    cmd->add_option("--set", o.overrides, "extra key=value override (repeatable)");
    auto* out = cmd->add_option("--out", o.out, "output directory");
    if (needs_out) out->required();
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"open-set text recognition"};
    app.require_subcommand(1);

    Common o;
    std::string checkpoint, bank, data, chars, source;
    std::size_t n = 0, d = 0, steps = 0, instances = 20;

    auto* train = app.add_subcommand("train", "train the prototype recognizer");
    add_common(train, o, true);

    auto* base = app.add_subcommand("baseline-train", "train the closed-vocabulary baseline");
    add_common(base, o, true);

    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
    add_common(eval, o, false);
    eval->add_option("--checkpoint", checkpoint)->required()->check(CLI::ExistingFile);
    eval->add_option("--bank", bank, "prototype bank (default: bank.ostr next to the checkpoint)");
    eval->add_option("--data", data, "dataset directory")->required()->check(CLI::ExistingDirectory);

    auto* charset = app.add_subcommand("charset", "edit the prototype bank");
    charset->require_subcommand(1);
    auto* add = charset->add_subcommand("add", "encode and add characters");
    auto* rm = charset->add_subcommand("remove", "drop characters");
    for (auto* c : {add, rm}) {
        c->add_option("--checkpoint", checkpoint)->required()->check(CLI::ExistingFile);
        c->add_option("--bank", bank, "bank file (default: bank.ostr next to the checkpoint)");
        c->add_option("chars", chars, "charset expression: all, first:N, last:N, range:A:B, chars:<utf8>")
            ->required();
    }
    add->add_option("--config", source, "config naming the glyph atlas (default: the checkpoint's)")
        ->check(CLI::ExistingFile);

    auto* margin = app.add_subcommand("margin-solve", "solve the prototype margin for n classes in d dimensions");
    margin->add_option("n", n)->required()->check(CLI::PositiveNumber);
    margin->add_option("d", d)->required()->check(CLI::PositiveNumber);
    margin->add_option("--seed", o.seed)->check(CLI::NonNegativeNumber);
    margin->add_option("--steps", steps, "optimizer steps (default schedule when omitted)");
    margin->add_option("--out", o.out, "margin file to write");

    auto* grad = app.add_subcommand("gradcheck", "finite-difference gradient checks");
    grad->add_option("--seed", o.seed)->check(CLI::NonNegativeNumber);
    grad->add_option("--instances", instances, "random instances per case")->check(CLI::PositiveNumber);

    auto* synth = app.add_subcommand("synth", "render a synthetic dataset");
    add_common(synth, o, true);

    CLI11_PARSE(app, argc, argv);

    try {
        if (*train || *base) {
            auto cfg = make_config(o);
            ostr_train_result r{};
            must((*train ? ostr_train : ostr_baseline_train)(cfg.get(), o.out.c_str(), print_line, nullptr, &r));
            std::printf("iterations %llu\nlast_loss %.6f\n", static_cast<unsigned long long>(r.iterations),
                        r.last_loss);
        } else if (*eval) {
            ConfigPtr cfg;
            if (!o.config.empty() || o.seed >= 0 || o.threads > 0 || !o.overrides.empty()) cfg = make_config(o);
            ostr_report r{};
            must(ostr_eval(checkpoint.c_str(), opt(bank), data.c_str(), cfg.get(), opt(o.out), print_line, nullptr,
                           &r));
            std::printf("mode %s\nn %llu\nLA %.4f\nCA %.4f\n", r.mode, static_cast<unsigned long long>(r.n), r.la,
                        r.ca);
            if (std::string(r.mode) != "GZSL")
                std::printf("RE %.4f\nPR %.4f\nFM %.4f\n", r.re, r.pr, r.fm);
        } else if (*add || *rm) {
            std::size_t size = 0;
            if (*add) {
                ConfigPtr src;
                if (!source.empty()) {
                    ostr_config* raw = nullptr;
                    must(ostr_config_load(source.c_str(), &raw));
                    src.reset(raw);
                }
                must(ostr_charset_add(checkpoint.c_str(), opt(bank), src.get(), chars.c_str(), &size));
            } else {
                must(ostr_charset_remove(checkpoint.c_str(), opt(bank), chars.c_str(), &size));
            }
            std::printf("bank_templates %zu\n", size);
        } else if (*margin) {
            double m = 0.0;
            must(ostr_margin_solve(n, d, o.seed >= 0 ? static_cast<std::uint64_t>(o.seed) : 1, steps, opt(o.out),
                                   print_line, nullptr, &m));
            std::printf("m_p %.6f\n", m);
        } else if (*grad) {
            std::size_t failed = 0;
            must(ostr_gradcheck(o.seed >= 0 ? static_cast<std::uint64_t>(o.seed) : 1, instances,
                                [](const char* line, void*) { std::printf("%s\n", line), std::fflush(stdout); },
                                nullptr, &failed));
            std::printf("failed %zu\n", failed);
            return failed == 0 ? 0 : 1;
        } else if (*synth) {
            auto cfg = make_config(o);
            std::size_t count = 0;
            must(ostr_synth(cfg.get(), o.out.c_str(), &count));
            std::printf("samples %zu\n", count);
        }
    } catch (const Failure& f) {
        return f.code;
    }
    return 0;
}
