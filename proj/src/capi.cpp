#include "ostr/ostr.h"

#include "ostr/checkpoint.hpp"
#include "ostr/errors.hpp"
#include "ostr/harness.hpp"
#include "ostr/predictor.hpp"

#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <exception>
#include <filesystem>
#include <new>
#include <set>
#include <string>

struct ostr_config {
    ostr::RunConfig cfg;
};

struct ostr_model {
    ostr::Recognizer<float> model;
    ostr::PrototypeBank bank;
    std::set<ostr::CharId> charset;
};

namespace {

thread_local std::string g_error;

ostr_status fail(ostr_status s, const std::string& what)
{
    g_error = what;
    return s;
}

ostr_status map_kind(ostr::ErrorKind k)
{
    switch (k) {
    case ostr::ErrorKind::Dimension: return OSTR_E_DIMENSION;
    case ostr::ErrorKind::Degenerate: return OSTR_E_DEGENERATE;
    case ostr::ErrorKind::Contract: return OSTR_E_CONTRACT;
    case ostr::ErrorKind::Config: return OSTR_E_CONFIG;
    case ostr::ErrorKind::Load: return OSTR_E_LOAD;
    case ostr::ErrorKind::Length: return OSTR_E_LENGTH;
    case ostr::ErrorKind::Optimizer: return OSTR_E_OPTIMIZER;
    case ostr::ErrorKind::Io: return OSTR_E_IO;
    }
    return OSTR_E_INTERNAL;
}

template <typename F>
ostr_status guard(F&& f)
{
    try {
        f();
        return OSTR_OK;
    } catch (const ostr::Error& e) {
        return fail(map_kind(e.kind()), e.what());
    } catch (const std::bad_alloc&) {
        return fail(OSTR_E_INTERNAL, "out of memory");
    } catch (const std::filesystem::filesystem_error& e) {
        return fail(OSTR_E_IO, e.what());
    } catch (const std::exception& e) {
        return fail(OSTR_E_INTERNAL, e.what());
    }
}

ostr::LogFn logger(ostr_log_fn fn, void* user)
{
    if (!fn) return {};
    return [fn, user](const std::string& s) { fn(s.c_str(), user); };
}

char* dup(const std::string& s)
{
    auto* p = static_cast<char*>(std::malloc(s.size() + 1));
    if (!p) throw std::bad_alloc();
    std::memcpy(p, s.c_str(), s.size() + 1);
    return p;
}

std::filesystem::path opt_path(const char* p) { return p ? std::filesystem::path(p) : std::filesystem::path(); }

#define OSTR_REQUIRE(cond, msg)                                                                                  \
    if (!(cond)) return fail(OSTR_E_CONTRACT, msg)

} // namespace

extern "C" {

const char* ostr_last_error(void) { return g_error.c_str(); }

const char* ostr_status_name(ostr_status status)
{
    switch (status) {
    case OSTR_OK: return "ok";
    case OSTR_E_DIMENSION: return "dimension error";
    case OSTR_E_DEGENERATE: return "degenerate input";
    case OSTR_E_CONTRACT: return "contract violation";
    case OSTR_E_CONFIG: return "config error";
    case OSTR_E_LOAD: return "load error";
    case OSTR_E_LENGTH: return "length error";
    case OSTR_E_OPTIMIZER: return "optimizer error";
    case OSTR_E_IO: return "i/o error";
    case OSTR_E_INTERNAL: return "internal error";
    }
    return "unknown status";
}

ostr_status ostr_config_default(ostr_config** out)
{
    OSTR_REQUIRE(out, "ostr_config_default: null output");
    return guard([&] { *out = new ostr_config{}; });
}

ostr_status ostr_config_load(const char* path, ostr_config** out)
{
    OSTR_REQUIRE(path && out, "ostr_config_load: null argument");
    return guard([&] { *out = new ostr_config{ostr::load_config(path)}; });
}

ostr_status ostr_config_parse(const char* text, ostr_config** out)
{
    OSTR_REQUIRE(text && out, "ostr_config_parse: null argument");
    return guard([&] { *out = new ostr_config{ostr::parse_config(text)}; });
}

ostr_status ostr_config_set(ostr_config* config, const char* key, const char* value)
{
    OSTR_REQUIRE(config && key && value, "ostr_config_set: null argument");
    return guard([&] {
        auto text = ostr::serialize_config(config->cfg);
        std::string line = std::string(key) + "=" + value + "\n";
        // Later duplicates are rejected by the parser, so replace the existing line.
        std::string out;
        std::size_t pos = 0;
        bool replaced = false;
        while (pos < text.size()) {
            const auto end = text.find('\n', pos);
            const auto cur = text.substr(pos, end - pos + 1);
            if (cur.rfind(std::string(key) + "=", 0) == 0) {
                out += line;
                replaced = true;
            } else {
                out += cur;
            }
            pos = end + 1;
        }
        if (!replaced) out += line;
        config->cfg = ostr::parse_config(out, "override");
    });
}

ostr_status ostr_config_serialize(const ostr_config* config, char** text)
{
    OSTR_REQUIRE(config && text, "ostr_config_serialize: null argument");
    return guard([&] { *text = dup(ostr::serialize_config(config->cfg)); });
}

void ostr_config_free(ostr_config* config) { delete config; }

void ostr_string_free(char* text) { std::free(text); }

ostr_status ostr_train(const ostr_config* config, const char* out_dir, ostr_log_fn log, void* user,
                       ostr_train_result* result)
{
    OSTR_REQUIRE(config && out_dir, "ostr_train: null argument");
    return guard([&] {
        const auto s = ostr::train(config->cfg, out_dir, logger(log, user));
        if (result) *result = {s.iterations, s.last_loss};
    });
}

ostr_status ostr_baseline_train(const ostr_config* config, const char* out_dir, ostr_log_fn log, void* user,
                                ostr_train_result* result)
{
    OSTR_REQUIRE(config && out_dir, "ostr_baseline_train: null argument");
    return guard([&] {
        const auto s = ostr::baseline_train(config->cfg, out_dir, logger(log, user));
        if (result) *result = {s.iterations, s.last_loss};
    });
}

ostr_status ostr_eval(const char* checkpoint, const char* bank, const char* dataset, const ostr_config* settings,
                      const char* out_dir, ostr_log_fn log, void* user, ostr_report* report)
{
    OSTR_REQUIRE(checkpoint && dataset, "ostr_eval: null checkpoint or dataset");
    return guard([&] {
        ostr::EvalRequest req;
        req.checkpoint = checkpoint;
        req.bank = opt_path(bank);
        req.dataset = dataset;
        req.out_dir = opt_path(out_dir);
        req.settings = settings ? settings->cfg : ostr::load_checkpoint(checkpoint).meta.config;
        const auto r = ostr::eval(req, logger(log, user));
        if (report) {
            *report = {};
            std::snprintf(report->mode, sizeof report->mode, "%s", ostr::split_mode_name(r.mode));
            report->la = r.la;
            report->ca = r.ca;
            report->re = r.re;
            report->pr = r.pr;
            report->fm = r.fm;
            report->n = r.n;
            report->n_inset = r.n_inset;
            report->rejected_gt = r.rejected_gt;
            report->rejected_pred = r.rejected_pred;
        }
    });
}

ostr_status ostr_charset_add(const char* checkpoint, const char* bank, const ostr_config* source, const char* chars,
                             size_t* bank_templates)
{
    OSTR_REQUIRE(checkpoint && chars, "ostr_charset_add: null argument");
    return guard([&] {
        const auto cfg = source ? source->cfg : ostr::load_checkpoint(checkpoint).meta.config;
        const auto atlas = ostr::load_run_atlas(cfg);
        const auto sel = ostr::resolve_charset(chars, atlas.charset());
        const auto b = ostr::charset_add(checkpoint, opt_path(bank), atlas, sel);
        if (bank_templates) *bank_templates = b.size();
    });
}

ostr_status ostr_charset_remove(const char* checkpoint, const char* bank, const char* chars, size_t* bank_templates)
{
    OSTR_REQUIRE(checkpoint && chars, "ostr_charset_remove: null argument");
    return guard([&] {
        const auto path = bank ? std::filesystem::path(bank) : std::filesystem::path(checkpoint).parent_path() / "bank.ostr";
        std::vector<ostr::CharId> universe;
        if (std::filesystem::exists(path)) universe = ostr::load_bank(path).charset();
        const auto sel = ostr::resolve_charset(chars, universe);
        const auto b = ostr::charset_remove(checkpoint, path, sel);
        if (bank_templates) *bank_templates = b.size();
    });
}

ostr_status ostr_bank_export_tsv(const char* bank, const char* path)
{
    OSTR_REQUIRE(bank && path, "ostr_bank_export_tsv: null argument");
    return guard([&] { ostr::export_bank_tsv(ostr::load_bank(bank), path); });
}

ostr_status ostr_margin_solve(size_t n, size_t d, uint64_t seed, size_t steps, const char* out_path, ostr_log_fn log,
                              void* user, double* m_p)
{
    return guard([&] {
        ostr::MarginOptions o;
        o.seed = seed;
        if (steps) o.steps = steps;
        const auto spec = ostr::margin_solve(n, d, o, opt_path(out_path), logger(log, user));
        if (m_p) *m_p = spec.m_p;
    });
}

ostr_status ostr_gradcheck(uint64_t seed, size_t instances, ostr_log_fn log, void* user, size_t* failed)
{
    OSTR_REQUIRE(instances > 0, "ostr_gradcheck: need at least one instance per case");
    return guard([&] {
        std::size_t bad = 0;
        for (const auto& c : ostr::gradcheck_suite(seed, instances, logger(log, user))) bad += !c.passed();
        if (failed) *failed = bad;
    });
}

ostr_status ostr_synth(const ostr_config* config, const char* out_dir, size_t* count)
{
    OSTR_REQUIRE(config && out_dir, "ostr_synth: null argument");
    return guard([&] {
        const auto n = ostr::synth(config->cfg, out_dir);
        if (count) *count = n;
    });
}

ostr_status ostr_model_load(const char* checkpoint, const char* bank, ostr_model** out)
{
    OSTR_REQUIRE(checkpoint && out, "ostr_model_load: null argument");
    return guard([&] {
        auto ck = ostr::load_checkpoint(checkpoint);
        if (!ck.model) throw ostr::ContractError(std::string(checkpoint) + " is not a prototype checkpoint");
        const auto path = bank ? std::filesystem::path(bank) : std::filesystem::path(checkpoint).parent_path() / "bank.ostr";
        auto b = ostr::load_bank(path);
        const auto cs = b.charset();
        *out = new ostr_model{std::move(*ck.model), std::move(b), {cs.begin(), cs.end()}};
    });
}

ostr_status ostr_model_recognize(const ostr_model* model, const float* pixels, size_t height, size_t width,
                                 char** label)
{
    OSTR_REQUIRE(model && pixels && label, "ostr_model_recognize: null argument");
    return guard([&] {
        ostr::Image img(height, width);
        std::copy(pixels, pixels + height * width, img.pixels.begin());
        const auto& m = model->model;
        const auto F = m.backbone.extract(img);
        const auto d = ostr::predict_with_charset(F, model->bank, m.alpha, m.s_minus, m.config.metric, model->charset);
        *label = dup(ostr::to_utf8(d.labels));
    });
}

size_t ostr_model_charset_size(const ostr_model* model) { return model ? model->charset.size() : 0; }

void ostr_model_free(ostr_model* model) { delete model; }

} // extern "C"
