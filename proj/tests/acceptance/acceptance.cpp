// Acceptance suite. Prints one PASS/FAIL line per criterion; exit status is
// the number of failed criteria.
#include "ostr/ostr.h"

#include "ostr/bank.hpp"
#include "ostr/checkpoint.hpp"
#include "ostr/gradcheck.hpp"
#include "ostr/harness.hpp"
#include "ostr/metrics.hpp"
#include "ostr/predictor.hpp"
#include "ostr/sampler.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace ostr;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Verdict {
    bool pass = true;
    std::string detail;

    void require(bool ok, const std::string& what)
    {
        if (!ok) pass = false;
        if (!detail.empty()) detail += "; ";
        detail += what + (ok ? "" : " [FAILED]");
    }
};

std::string fmt(const char* f, double v)
{
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

void c_log(const char* line, void*) { std::fprintf(stderr, "  | %s\n", line); }

void must(ostr_status s, const char* what)
{
    if (s != OSTR_OK) throw std::runtime_error(std::string(what) + ": " + ostr_last_error());
}

std::string read_file(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + p.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// ---------------------------------------------------------------------------
// 1. margin constant

Verdict margin_constant(const fs::path& work)
{
    Verdict v;
    const auto t0 = Clock::now();
    double m = 0.0;
    must(ostr_margin_solve(2, 8, 1, 0, nullptr, nullptr, nullptr, &m), "margin n=2");
    v.require(std::abs(m + 1.0) <= 1e-3, "n=2 d=8 -> " + fmt("%.6f", m));
    for (std::size_t d : {2, 3, 8}) {
        must(ostr_margin_solve(d + 1, d, 1, 0, nullptr, nullptr, nullptr, &m), "margin simplex");
        v.require(std::abs(m + 1.0 / static_cast<double>(d)) <= 5e-3,
                  "n=" + std::to_string(d + 1) + " d=" + std::to_string(d) + " -> " + fmt("%.6f", m));
    }
    fs::create_directories(work);
    must(ostr_margin_solve(50000, 512, 1, 0, (work / "margin-50000-512.txt").c_str(), c_log, nullptr, &m),
         "margin 50000x512");
    v.require(std::abs(m - 0.14) <= 0.03, "n=50000 d=512 -> " + fmt("%.4f", m));
    const double s = seconds_since(t0);
    v.require(s <= 1800.0, fmt("%.0f s", s));
    return v;
}

// ---------------------------------------------------------------------------
// 2. gradient suite

Verdict gradient_suite(const fs::path&)
{
    Verdict v;
    const auto t0 = Clock::now();
    const auto cases = gradcheck_suite(1, 20, [](const std::string& s) { std::fprintf(stderr, "  | %s\n", s.c_str()); });
    const double s = seconds_since(t0);
    std::size_t failed = 0, thin = 0;
    bool has_tpt = false;
    for (const auto& c : cases) {
        failed += !c.passed();
        thin += c.instances < 20;
        has_tpt = has_tpt || c.name == "tpt_block";
        if (c.name == "extract") v.require(c.tol <= 1e-3, "extract tol " + fmt("%.0e", c.tol));
        else if (c.tol > 1e-4) v.require(false, c.name + " tol " + fmt("%.0e", c.tol));
    }
    v.require(cases.size() >= 30 && has_tpt, std::to_string(cases.size()) + " cases incl. tpt_block");
    v.require(failed == 0, std::to_string(failed) + " failing");
    v.require(thin == 0, "20+ instances each");
    v.require(s <= 120.0, fmt("%.1f s", s));
    return v;
}

// ---------------------------------------------------------------------------
// 3. topology

Verdict topology_suite(const fs::path&)
{
    Verdict v;
    Rng rng(3);
    std::size_t non_monotone = 0, out_of_range = 0;
    double drift = 0.0;
    for (int k = 0; k < 1000; ++k) {
        const std::size_t H = 1 + rng.index(12), W = 1 + rng.index(48);
        Tensor<double> dx, dy;
        if (k % 2 == 0) {
            // Through the density heads, as the model produces them.
            const std::size_t c = 1 + rng.index(4);
            TptLayer<double> layer{Conv2d<double>::make(c, c, 3, 1, 1, rng), Conv2d<double>::make(c, 1, 1, 1, 0, rng),
                                   Conv2d<double>::make(c, 1, 1, 1, 0, rng)};
            const auto d = density(random_tensor(rng, {c, H, W}, -3, 3, false), layer, rng.uniform(0.05, 1.0));
            dx = d.dx;
            dy = d.dy;
        } else {
            // Raw positive fields spanning several orders of magnitude.
            dx = random_tensor(rng, {H, W}, -6, 3, false);
            dy = random_tensor(rng, {H, W}, -6, 3, false);
            for (auto& x : dx.mutable_data()) x = std::exp(x);
            for (auto& x : dy.mutable_data()) x = std::exp(x);
        }
        const auto I = integrate_density(dx, dy);
        for (std::size_t h = 0; h < H; ++h)
            for (std::size_t w = 0; w < W; ++w) {
                const double x = I[(h * W + w) * 2], y = I[(h * W + w) * 2 + 1];
                if (!(x > 0.0 && x < static_cast<double>(W) && y > 0.0 && y < static_cast<double>(H))) ++out_of_range;
                if (w > 0 && !(x > I[(h * W + w - 1) * 2])) ++non_monotone;
                if (h > 0 && !(y > I[((h - 1) * W + w) * 2 + 1])) ++non_monotone;
            }
        const double c = std::exp(rng.uniform(-5, 5));
        const auto Is = integrate_density(mul_scalar(dx, c), mul_scalar(dy, c));
        for (std::size_t i = 0; i < I.numel(); ++i) drift = std::max(drift, std::abs(I[i] - Is[i]));
    }
    v.require(non_monotone == 0, std::to_string(non_monotone) + " non-monotone steps");
    v.require(out_of_range == 0, std::to_string(out_of_range) + " out of range");
    v.require(drift <= 1e-6, "rescale drift " + fmt("%.1e", drift));

    double id_err = 0.0;
    for (int k = 0; k < 100; ++k) {
        const std::size_t C = 1 + rng.index(4), H = 1 + rng.index(12), W = 1 + rng.index(48);
        const double level = rng.uniform(0.1, 3.0);
        const auto m = random_tensor(rng, {C, H, W}, -1, 1, false);
        const auto I = integrate_density(Tensor<double>::full({H, W}, level), Tensor<double>::full({H, W}, level));
        const auto s = grid_sample(m, I);
        for (std::size_t i = 0; i < m.numel(); ++i) id_err = std::max(id_err, std::abs(m[i] - s[i]));
    }
    v.require(id_err <= 1e-6, "uniform-density sampling error " + fmt("%.1e", id_err));
    return v;
}

// ---------------------------------------------------------------------------
// 4. prototypes

ModelConfig small_model()
{
    ModelConfig c;
    c.input_width = 64;
    c.backbone_channels = {4, 8, 8};
    c.feature_dim = 16;
    c.max_length = 4;
    c.cam_hidden = 4;
    c.encoder_channels = {4, 8, 8, 16};
    return c;
}

double column_norm_error(const PrototypeBank& b)
{
    double worst = 0.0;
    for (std::size_t j = 0; j < b.size(); ++j) {
        double s = 0.0;
        for (float x : b.column(j)) s += static_cast<double>(x) * x;
        worst = std::max(worst, std::abs(std::sqrt(s) - 1.0));
    }
    return worst;
}

Verdict prototype_suite(const fs::path&)
{
    Verdict v;
    const Recognizer<float> model(small_model(), 4);
    const auto pool = render_procedural_alphabet(4, 40, 2);
    std::vector<GlyphTemplate> current(pool.templates().begin(), pool.templates().begin() + 30);
    auto bank = build_bank(model, TemplateAtlas(current));
    double norm_build = column_norm_error(bank), norm_edit = 0.0;

    Rng rng(4);
    for (int e = 0; e < 100; ++e) {
        AtlasDelta delta;
        const bool add = current.size() < 4 || rng.uniform() < 0.5;
        if (add) {
            std::vector<GlyphTemplate> absent;
            for (const auto& t : pool.templates())
                if (std::none_of(current.begin(), current.end(), [&](const auto& c) { return c.key() == t.key(); }))
                    absent.push_back(t);
            const auto n = std::min<std::size_t>(1 + rng.index(3), absent.size());
            rng.shuffle(absent);
            delta.added.assign(absent.begin(), absent.begin() + static_cast<std::ptrdiff_t>(n));
            current.insert(current.end(), delta.added.begin(), delta.added.end());
        } else {
            const auto n = 1 + rng.index(3);
            for (std::size_t i = 0; i < n; ++i) {
                const auto j = rng.index(current.size());
                delta.removed.push_back(current[j].key());
                current.erase(current.begin() + static_cast<std::ptrdiff_t>(j));
            }
        }
        bank = update_bank(bank, model, delta);
        norm_edit = std::max(norm_edit, column_norm_error(bank));
    }
    const auto rebuilt = build_bank(model, TemplateAtlas(current));
    double delta = 0.0;
    bool same_keys = rebuilt.size() == bank.size();
    for (std::size_t j = 0; same_keys && j < bank.size(); ++j) {
        const auto& k = bank.keys()[j];
        const auto it = std::find(rebuilt.keys().begin(), rebuilt.keys().end(), k);
        if (it == rebuilt.keys().end()) {
            same_keys = false;
            break;
        }
        const auto a = bank.column(j), b = rebuilt.column(static_cast<std::size_t>(it - rebuilt.keys().begin()));
        for (std::size_t i = 0; i < a.size(); ++i) delta = std::max(delta, std::abs(double(a[i]) - double(b[i])));
    }
    v.require(norm_build <= 1e-6, "norm after build " + fmt("%.1e", norm_build));
    v.require(norm_edit <= 1e-6, "norm over 100 edits " + fmt("%.1e", norm_edit));
    v.require(same_keys, "same templates as a rebuild");
    v.require(delta < 1e-6, "incremental vs rebuild " + fmt("%.1e", delta));

    // Downstream scores from raw encodings e and 10 e.
    double score_drift = 0.0;
    for (auto metric : {Metric::ScaledDot, Metric::ScaledCosine}) {
        std::vector<Tensor<float>> p1, p10;
        std::vector<CharId> owners;
        for (std::size_t j = 0; j < 12; ++j) {
            const auto raw = model.encoder.encode_raw(glyph_input<float>(pool.at(j).pixels));
            p1.push_back(l2_normalize(raw, NormMode::Strict));
            p10.push_back(l2_normalize(mul_scalar(raw, 10.0f), NormMode::Strict));
            owners.push_back(pool.phi(j));
        }
        const auto groups = group_by_owner(owners);
        for (int k = 0; k < 20; ++k) {
            auto line = synthesize_line(pool, {pool.phi(rng.index(12)), pool.phi(rng.index(12))}, {}, rng.next_u64(),
                                        model.config.max_length, model.config.input_width);
            const auto F = model.backbone.extract(line.image);
            const auto a = score(F, stack_columns(p1), model.eos, groups, model.alpha, model.s_minus, metric);
            const auto b = score(F, stack_columns(p10), model.eos, groups, model.alpha, model.s_minus, metric);
            for (std::size_t i = 0; i < a.numel(); ++i) score_drift = std::max(score_drift, double(std::abs(a[i] - b[i])));
        }
    }
    v.require(score_drift <= 1e-6, "x10 raw-encoding score drift " + fmt("%.1e", score_drift));
    return v;
}

// ---------------------------------------------------------------------------
// 5. predictor

Verdict predictor_suite(const fs::path&)
{
    Verdict v;
    Rng rng(5);
    std::size_t reduce_mismatch = 0;
    for (int k = 0; k < 1000; ++k) {
        const std::size_t L = 1 + rng.index(6), n = 1 + rng.index(20), alphabet = 1 + rng.index(8);
        std::vector<CharId> phi(n);
        for (auto& c : phi) c = U'A' + static_cast<CharId>(rng.index(alphabet));
        const auto S = random_tensor(rng, {L, n}, -5, 5, false);
        const auto groups = group_by_owner(phi);
        const auto R = reduce_cases(S, groups.groups);
        std::vector<CharId> chars(phi);
        std::sort(chars.begin(), chars.end());
        chars.erase(std::unique(chars.begin(), chars.end()), chars.end());
        if (R.dim(0) != L || R.dim(1) != chars.size() || groups.chars != chars) {
            ++reduce_mismatch;
            continue;
        }
        for (std::size_t l = 0; l < L; ++l)
            for (std::size_t c = 0; c < chars.size(); ++c) {
                double best = -INFINITY;
                for (std::size_t j = 0; j < n; ++j)
                    if (phi[j] == chars[c]) best = std::max(best, S[l * n + j]);
                if (R[l * chars.size() + c] != best) ++reduce_mismatch;
            }
    }
    v.require(reduce_mismatch == 0, "reduce_cases vs brute force: " + std::to_string(reduce_mismatch) + " mismatches");

    const Recognizer<float> model(small_model(), 5);
    const auto atlas = render_procedural_alphabet(5, 24, 2);
    const auto bank = build_bank(model, atlas);
    std::size_t mask_mismatch = 0;
    for (int k = 0; k < 100; ++k) {
        std::set<CharId> in_set;
        for (auto c : atlas.charset())
            if (rng.uniform() < 0.5) in_set.insert(c);
        if (in_set.empty()) in_set.insert(atlas.charset().front());
        Label label;
        for (std::size_t i = 0, n = 1 + rng.index(2); i < n; ++i)
            label.push_back(atlas.charset()[rng.index(atlas.charset().size())]);
        const auto line = synthesize_line(atlas, label, {}, rng.next_u64(), model.config.max_length,
                                          model.config.input_width);
        const auto F = model.backbone.extract(line.image);
        for (auto metric : {Metric::ScaledDot, Metric::ScaledCosine}) {
            const auto masked = predict_with_charset(F, bank, model.alpha, model.s_minus, metric, in_set);
            const auto small = bank.restricted(in_set);
            const auto shrunk = predict_with_charset(F, small, model.alpha, model.s_minus, metric, in_set);
            if (masked.labels != shrunk.labels || masked.stopped_at != shrunk.stopped_at) ++mask_mismatch;
        }
    }
    v.require(mask_mismatch == 0, "masking vs shrinking: " + std::to_string(mask_mismatch) + " mismatches");

    // Positive scaling: features under the cosine metric, the whole score row
    // (similarity scale and reject score together) under the dot metric.
    std::size_t argmax_changes = 0;
    std::vector<CharId> owners;
    for (std::size_t j = 0; j < bank.size(); ++j) owners.push_back(bank.phi(j));
    const auto groups = group_by_owner(owners);
    const auto P = bank.matrix();
    for (int k = 0; k < 100; ++k) {
        const auto F = model.backbone.extract(
            synthesize_line(atlas, {atlas.charset()[rng.index(24)]}, {}, rng.next_u64(), 4, 64).image);
        const float c = static_cast<float>(std::exp(rng.uniform(-2, 2)));
        const auto s_minus = Tensor<float>::scalar(static_cast<float>(rng.uniform(-0.5, 0.5)));
        const auto cos1 = score(F, P, bank.eos_tensor(), groups, model.alpha, s_minus, Metric::ScaledCosine);
        const auto cos2 =
            score(mul_scalar(F, c), P, bank.eos_tensor(), groups, model.alpha, s_minus, Metric::ScaledCosine);
        const auto dot1 = score(F, P, bank.eos_tensor(), groups, model.alpha, s_minus, Metric::ScaledDot);
        const auto dot2 = score(mul_scalar(F, c), P, bank.eos_tensor(), groups, model.alpha, mul_scalar(s_minus, c), Metric::ScaledDot);
        if (decode(cos1, groups.chars).labels != decode(cos2, groups.chars).labels) ++argmax_changes;
        if (decode(dot1, groups.chars).labels != decode(dot2, groups.chars).labels) ++argmax_changes;
    }
    v.require(argmax_changes == 0, "decodes changed by positive scaling: " + std::to_string(argmax_changes));
    return v;
}

// ---------------------------------------------------------------------------
// 6. sampler, losses, edit distance

Verdict sampler_loss_suite(const fs::path&)
{
    Verdict v;
    Rng rng(6);
    const auto atlas = render_procedural_alphabet(6, 30, 1);
    std::vector<GlyphTemplate> extra;
    // Uneven template counts exercise the budget.
    const auto more = render_procedural_alphabet(6, 30, 3);
    for (const auto& t : more.templates())
        if (t.case_id > 0 && (t.owner - kProceduralBase) % 2 == 0) extra.push_back(t);
    const auto mixed = atlas.with_added(extra);

    std::size_t violations = 0, idempotence = 0;
    for (int k = 0; k < 1000; ++k) {
        std::set<CharId> train;
        for (auto c : mixed.charset())
            if (rng.uniform() < 0.7) train.insert(c);
        if (train.empty()) train.insert(mixed.charset().front());
        std::vector<Label> labels(1 + rng.index(8));
        for (auto& l : labels) l = random_label(rng, mixed.charset(), 1, 6);
        const double f_s = rng.uniform(0.05, 1.0);
        const std::size_t b_max = 5 + rng.index(60);
        const auto batch = sample_batch_charset(labels, train, f_s, b_max, mixed, rng);

        const auto c_label = label_charset(labels, train);
        std::size_t used = 0;
        for (auto c : batch.pos) {
            violations += !c_label.count(c);
            used += mixed.template_count(c);
        }
        for (auto c : batch.neg) {
            violations += !train.count(c) || c_label.count(c) || batch.pos.count(c);
            used += mixed.template_count(c);
        }
        const auto want = static_cast<std::size_t>(std::floor(f_s * static_cast<double>(c_label.size())));
        violations += used > b_max;
        violations += batch.pos.size() > want;
        // The negative fill stops only at the budget.
        for (auto c : train)
            if (!c_label.count(c) && !batch.neg.count(c) && used + mixed.template_count(c) <= b_max) ++violations;
        const auto all = batch.all();
        violations += !all.count(kEos) || !all.count(kUnk) || all.size() != batch.pos.size() + batch.neg.size() + 2;

        for (const auto& l : labels) {
            const auto once = filter_labels(l, batch);
            idempotence += filter_labels(once, batch) != once;
            violations += once.empty() || once.back() != kEos || once.size() != l.size() + 1;
            for (std::size_t i = 0; i < l.size(); ++i)
                violations += once[i] != (all.count(l[i]) ? l[i] : kUnk);
        }
    }
    v.require(violations == 0, "BatchCharset/filter invariants: " + std::to_string(violations) + " violations");
    v.require(idempotence == 0, "filter_labels idempotence: " + std::to_string(idempotence) + " changes");

    double ce_err = 0.0, emb_err = 0.0, total_err = 0.0;
    for (int k = 0; k < 200; ++k) {
        const std::size_t m = 1 + rng.index(8), n = 2 + rng.index(10);
        const auto A = random_tensor(rng, {m, n}, -8, 8, false);
        std::vector<std::size_t> t(1 + rng.index(m));
        for (auto& x : t) x = rng.index(n);
        long double ce = 0;
        for (std::size_t r = 0; r < t.size(); ++r) {
            long double z = 0;
            for (std::size_t c = 0; c < n; ++c) z += std::exp(static_cast<long double>(A[r * n + c]));
            ce += std::log(z) - A[r * n + t[r]];
        }
        ce /= static_cast<long double>(t.size());
        const auto got = loss_ce(A, std::span<const std::size_t>(t));
        ce_err = std::max(ce_err, static_cast<double>(std::abs(got[0] - ce)));

        const std::size_t d = 2 + rng.index(6), np = 2 + rng.index(8);
        const double m_p = rng.uniform(-0.5, 0.5);
        auto P = random_tensor(rng, {d, np}, -1, 1, false);
        long double emb = 0;
        for (std::size_t i = 0; i < np; ++i)
            for (std::size_t j = 0; j < np; ++j) {
                if (i == j) continue;
                long double dot = 0;
                for (std::size_t r = 0; r < d; ++r) dot += static_cast<long double>(P[r * np + i]) * P[r * np + j];
                emb += std::max<long double>(0, dot - m_p);
            }
        const auto ge = loss_emb(P, m_p);
        emb_err = std::max(emb_err, static_cast<double>(std::abs(ge[0] - emb)));
        const double lambda = rng.uniform(0, 2);
        const auto tot = loss_total(got, ge, lambda);
        total_err = std::max(total_err, static_cast<double>(std::abs(tot[0] - (ce + lambda * emb))));
    }
    v.require(ce_err <= 1e-6, "L_ce vs direct " + fmt("%.1e", ce_err));
    v.require(emb_err <= 1e-6, "L_emb vs direct " + fmt("%.1e", emb_err));
    v.require(total_err <= 1e-6, "L_total vs direct " + fmt("%.1e", total_err));

    // Every string of length <= 6 over 4 symbols, indexed in trie order: the
    // recursive definition on (parent, last symbol) fills a full pair table.
    std::vector<Label> words{Label{}};
    std::vector<std::size_t> parent{0};
    for (std::size_t i = 0; i < words.size(); ++i) {
        if (words[i].size() == 6) continue;
        for (CharId s = 0; s < 4; ++s) {
            auto w = words[i];
            w.push_back(U'a' + s);
            words.push_back(w);
            parent.push_back(i);
        }
    }
    const std::size_t N = words.size();
    std::vector<std::uint8_t> table(N * N);
    for (std::size_t i = 0; i < N; ++i)
        for (std::size_t j = 0; j < N; ++j) {
            if (i == 0 || j == 0) {
                table[i * N + j] = static_cast<std::uint8_t>(words[i].size() + words[j].size());
                continue;
            }
            const auto pi = parent[i], pj = parent[j];
            const int sub = table[pi * N + pj] + (words[i].back() != words[j].back());
            const int del = table[pi * N + j] + 1, ins = table[i * N + pj] + 1;
            table[i * N + j] = static_cast<std::uint8_t>(std::min({sub, del, ins}));
        }
    std::size_t ed_mismatch = 0;
    for (std::size_t i = 0; i < N; ++i)
        for (std::size_t j = 0; j < N; ++j) ed_mismatch += levenshtein(words[i], words[j]) != table[i * N + j];
    v.require(ed_mismatch == 0,
              "edit distance over " + std::to_string(N * N) + " pairs: " + std::to_string(ed_mismatch) + " mismatches");
    return v;
}

// ---------------------------------------------------------------------------
// 7. desk-scale zero-shot

struct ConfigHandle {
    ostr_config* p = nullptr;
    ~ConfigHandle() { ostr_config_free(p); }
};

void set(ostr_config* c, const char* k, const std::string& value) { must(ostr_config_set(c, k, value.c_str()), k); }

fs::path desk_config() { return fs::path(OSTR_SOURCE_DIR) / "configs" / "desk.cfg"; }

Verdict desk_zero_shot(const fs::path& work)
{
    Verdict v;
    fs::remove_all(work);
    fs::create_directories(work);
    ConfigHandle cfg;
    must(ostr_config_load(desk_config().c_str(), &cfg.p), "load desk config");

    const auto t0 = Clock::now();
    ostr_train_result tr{};
    must(ostr_train(cfg.p, (work / "run").c_str(), c_log, nullptr, &tr), "train");
    const double train_s = seconds_since(t0);
    v.require(train_s <= 1800.0, "training " + fmt("%.0f s", train_s));

    // Test lines rendered with seeds disjoint from training.
    const auto make = [&](const char* name, const char* charset, std::uint64_t seed) {
        ConfigHandle c;
        must(ostr_config_load(desk_config().c_str(), &c.p), "load desk config");
        set(c.p, "synth_charset", charset);
        set(c.p, "synth_count", "300");
        set(c.p, "seed", std::to_string(seed));
        std::size_t n = 0;
        must(ostr_synth(c.p, (work / name).c_str(), &n), "synth");
        return work / name;
    };
    const auto seen = make("test-seen", "first:40", 9001);
    const auto novel = make("test-novel", "last:20", 9002);
    const auto mixed = make("test-mixed", "all", 9003);

    const auto ck = work / "run" / "model.ostr";
    ostr_report r{};
    {
        ConfigHandle s;
        must(ostr_config_load(desk_config().c_str(), &s.p), "load desk config");
        set(s.p, "test_charset", "first:40");
        must(ostr_eval(ck.c_str(), nullptr, seen.c_str(), s.p, (work / "eval-seen").c_str(), nullptr, nullptr, &r),
             "eval seen");
        v.require(r.la >= 0.90, "(a) seen LA " + fmt("%.3f", r.la));
    }

    std::size_t templates = 0;
    must(ostr_charset_add(ck.c_str(), nullptr, nullptr, "last:20", &templates), "charset add");
    {
        ConfigHandle s;
        must(ostr_config_load(desk_config().c_str(), &s.p), "load desk config");
        set(s.p, "test_charset", "all");
        must(ostr_eval(ck.c_str(), nullptr, novel.c_str(), s.p, (work / "eval-novel").c_str(), nullptr, nullptr, &r),
             "eval novel");
        v.require(r.ca >= 0.50, "(b) novel CA over 60 classes " + fmt("%.3f", r.ca));

        set(s.p, "split_mode", "OSTR");
        must(ostr_eval(ck.c_str(), nullptr, mixed.c_str(), s.p, (work / "eval-ostr").c_str(), nullptr, nullptr, &r),
             "eval ostr");
        v.require(r.pr >= 0.60, "(c) OSTR PR " + fmt("%.3f", r.pr));
        v.require(r.re >= 0.20, "OSTR RE " + fmt("%.3f", r.re));
    }

    must(ostr_baseline_train(cfg.p, (work / "baseline").c_str(), c_log, nullptr, &tr), "baseline train");
    {
        ConfigHandle s;
        must(ostr_config_load(desk_config().c_str(), &s.p), "load desk config");
        set(s.p, "test_charset", "all");
        must(ostr_eval((work / "baseline" / "model.ostr").c_str(), nullptr, novel.c_str(), s.p,
                       (work / "eval-baseline").c_str(), nullptr, nullptr, &r),
             "eval baseline");
        v.require(r.ca <= 0.10, "(d) baseline novel CA " + fmt("%.3f", r.ca));
    }
    return v;
}

// ---------------------------------------------------------------------------
// 8. determinism

Verdict determinism(const fs::path& work)
{
    Verdict v;
    fs::remove_all(work);
    const auto run = [&](const std::string& name) {
        ConfigHandle c;
        must(ostr_config_load(desk_config().c_str(), &c.p), "load desk config");
        set(c.p, "samples_per_epoch", "96");
        set(c.p, "epochs", "4");
        set(c.p, "checkpoint_every", "6");
        set(c.p, "seed", "77");
        const auto dir = work / name;
        ostr_train_result r{};
        must(ostr_train(c.p, (dir / "run").c_str(), nullptr, nullptr, &r), "train");
        set(c.p, "synth_count", "40");
        std::size_t n = 0;
        must(ostr_synth(c.p, (dir / "data").c_str(), &n), "synth");
        std::size_t templates = 0;
        must(ostr_charset_add((dir / "run" / "model.ostr").c_str(), nullptr, nullptr, "last:20", &templates),
             "charset add");
        set(c.p, "split_mode", "OSTR");
        ostr_report rep{};
        must(ostr_eval((dir / "run" / "model.ostr").c_str(), nullptr, (dir / "data").c_str(), c.p,
                       (dir / "eval").c_str(), nullptr, nullptr, &rep),
             "eval");
        return dir;
    };
    const auto a = run("a"), b = run("b");
    std::size_t compared = 0, differing = 0;
    for (const auto& rel : {"run/model.ostr", "run/bank.ostr", "run/loss.tsv", "run/checkpoint-6.ostr", "run/checkpoint-18.ostr",
                            "eval/report.txt", "eval/report.tsv", "eval/predictions.tsv"}) {
        ++compared;
        if (read_file(a / rel) != read_file(b / rel)) {
            ++differing;
            v.require(false, std::string(rel) + " differs");
        }
    }
    v.require(differing == 0, std::to_string(compared) + " artifacts bit-identical across runs");

    const auto original = read_file(a / "run" / "model.ostr");
    const auto loaded = load_checkpoint(a / "run" / "model.ostr");
    save_checkpoint(work / "resaved.ostr", *loaded.model, loaded.meta);
    v.require(read_file(work / "resaved.ostr") == original, "checkpoint load/save byte-identical");
    const auto bank_bytes = read_file(a / "run" / "bank.ostr");
    save_bank(work / "resaved-bank.ostr", load_bank(a / "run" / "bank.ostr"));
    v.require(read_file(work / "resaved-bank.ostr") == bank_bytes, "bank load/save byte-identical");
    return v;
}

struct Criterion {
    int id;
    const char* name;
    std::function<Verdict(const fs::path&)> run;
};

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"acceptance suite"};
    std::vector<int> only;
    std::string work = "acceptance-work";
    app.add_option("--criterion", only, "run only these criteria (1-8)")->check(CLI::Range(1, 8));
    app.add_option("--work", work, "scratch directory");
    CLI11_PARSE(app, argc, argv);

    const std::vector<Criterion> all{
        {1, "margin constant", margin_constant},
        {2, "gradient suite", gradient_suite},
        {3, "topology suite", topology_suite},
        {4, "prototype suite", prototype_suite},
        {5, "predictor suite", predictor_suite},
        {6, "sampler/loss suite", sampler_loss_suite},
        {7, "desk-scale zero-shot", desk_zero_shot},
        {8, "determinism and persistence", determinism},
    };
    int failed = 0;
    for (const auto& c : all) {
        if (!only.empty() && std::find(only.begin(), only.end(), c.id) == only.end()) continue;
        const auto t0 = Clock::now();
        Verdict v;
        try {
            v = c.run(fs::path(work) / ("criterion-" + std::to_string(c.id)));
        } catch (const std::exception& e) {
            v.pass = false;
            v.detail = std::string("error: ") + e.what();
        }
        failed += !v.pass;
        std::printf("criterion %d %-28s %s  (%.1f s)  %s\n", c.id, c.name, v.pass ? "PASS" : "FAIL", seconds_since(t0),
                    v.detail.c_str());
        std::fflush(stdout);
    }
    return failed;
}
