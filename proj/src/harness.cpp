#include "ostr/harness.hpp"

#include "ostr/errors.hpp"
#include "ostr/predictor.hpp"
#include "ostr/sampler.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>

namespace ostr {

namespace fs = std::filesystem;

namespace {

void say(const LogFn& log, const std::string& s)
{
    if (log) log(s);
}

std::string fixed(double v, int digits = 6)
{
    char buf[48];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

// Yields the lines of one training iteration, either drawn fresh from the
// atlas or read from a dataset directory in per-epoch shuffled order.
class BatchSource {
public:
    BatchSource(const RunConfig& cfg, const TemplateAtlas& atlas, std::vector<CharId> chars)
        : cfg_(cfg), atlas_(atlas), chars_(std::move(chars))
    {
        if (cfg.train_data != "synthetic") {
            data_ = load_dataset(cfg.train_data);
            if (data_.empty()) throw ContractError("training dataset " + cfg.train_data + " is empty");
            for (const auto& e : data_)
                if (e.label.size() + 1 > cfg.model.max_length)
                    throw LengthError("label of " + e.name + " exceeds l_max - 1 = " +
                                      std::to_string(cfg.model.max_length - 1));
        }
        const std::size_t n = data_.empty() ? cfg.samples_per_epoch : data_.size();
        per_epoch_ = (n + cfg.batch_size - 1) / cfg.batch_size;
    }

    std::size_t iterations() const { return per_epoch_ * cfg_.epochs; }

    std::vector<SyntheticSample> batch(std::size_t it)
    {
        std::vector<SyntheticSample> out;
        const std::size_t b = cfg_.batch_size;
        if (data_.empty()) {
            const auto stream = derive_seed(cfg_.seed, 7);
            for (std::size_t k = 0; k < b; ++k) {
                Rng r(derive_seed(stream, it * b + k));
                auto label = random_label(r, chars_, cfg_.min_len, cfg_.max_len);
                out.push_back(synthesize_line(atlas_, label, cfg_.distortion, r.next_u64(), cfg_.model.max_length,
                                              cfg_.model.input_width));
            }
            return out;
        }
        const std::size_t epoch = it / per_epoch_, k = it % per_epoch_;
        if (epoch != order_epoch_ || order_.empty()) {
            order_.resize(data_.size());
            for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
            Rng r(derive_seed(cfg_.seed, 0x5000 + epoch));
            r.shuffle(order_);
            order_epoch_ = epoch;
        }
        for (std::size_t i = k * b; i < std::min(data_.size(), (k + 1) * b); ++i) {
            const auto& e = data_[order_[i]];
            out.push_back({e.image, e.label});
        }
        return out;
    }

private:
    const RunConfig& cfg_;
    const TemplateAtlas& atlas_;
    std::vector<CharId> chars_;
    std::vector<DatasetEntry> data_;
    std::size_t per_epoch_ = 0;
    std::vector<std::size_t> order_;
    std::size_t order_epoch_ = 0;
};

double schedule(const RunConfig& cfg, std::size_t it, std::size_t total)
{
    if (cfg.lr_schedule == "constant") return cfg.lr;
    return cfg.lr * 0.5 * (1.0 + std::cos(3.14159265358979323846 * static_cast<double>(it) / static_cast<double>(total)));
}

class LossLog {
public:
    explicit LossLog(const fs::path& path) : out_(path)
    {
        if (!out_) throw IoError("cannot write " + path.string());
        out_ << "iter\tloss_ce\tloss_emb\ttotal\n";
        out_.flush();
    }
    void row(std::size_t it, double ce, double emb, double total)
    {
        out_ << it << '\t' << fixed(ce) << '\t' << fixed(emb) << '\t' << fixed(total) << '\n';
        out_.flush();
    }

private:
    std::ofstream out_;
};

struct Prepared {
    TemplateAtlas atlas;
    std::vector<CharId> train_chars;
    TemplateAtlas train_atlas;
};

Prepared prepare(const RunConfig& cfg)
{
    cfg.validate();
    Prepared p;
    p.atlas = load_run_atlas(cfg);
    p.train_chars = resolve_charset(cfg.train_charset, p.atlas.charset());
    if (p.train_chars.empty()) throw ConfigError("training charset is empty");
    p.train_atlas = p.atlas.subset(p.train_chars);
    return p;
}

// Backpropagates and applies one momentum step with global-norm clipping.
void step(const RunConfig& cfg, ParameterSet<float>& params, SgdMomentum<float>& opt, const Tensor<float>& total,
          double lr)
{
    params.zero_grad();
    backward(total);
    const double gn = params.grad_norm();
    if (!std::isfinite(gn)) throw OptimizerError("non-finite gradient norm");
    const double scale = cfg.grad_clip > 0 && gn > cfg.grad_clip ? cfg.grad_clip / gn : 1.0;
    opt.step(params, lr, scale);
}

bool finite(double v) { return std::isfinite(v); }

void progress(const LogFn& log, std::size_t it, std::size_t total, double loss,
              std::chrono::steady_clock::time_point t0)
{
    if (!log) return;
    if (it + 1 != total && (it + 1) % 50 != 0) return;
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    log("iter " + std::to_string(it + 1) + "/" + std::to_string(total) + " loss " + fixed(loss, 4) + " (" +
        fixed(s, 1) + " s)");
}

} // namespace

TrainSummary train(const RunConfig& cfg, const fs::path& out_dir, const LogFn& log)
{
    const auto prep = prepare(cfg);
    fs::create_directories(out_dir);
    const double m_p = cfg.margin_file.empty() ? cfg.m_p : read_margin_file(cfg.margin_file).m_p;
    const double lambda = cfg.emb ? cfg.lambda_emb : 0.0;
    const std::set<CharId> train_set(prep.train_chars.begin(), prep.train_chars.end());

    Recognizer<float> model(cfg.model, cfg.seed);
    auto params = model.parameters();
    SgdMomentum<float> opt(cfg.momentum, cfg.weight_decay);
    Rng rng(derive_seed(cfg.seed, 10));
    BatchSource source(cfg, prep.train_atlas, prep.train_chars);
    LossLog loss_log(out_dir / "loss.tsv");
    const std::size_t total_iters = source.iterations();
    say(log, "training " + std::to_string(total_iters) + " iterations on " + std::to_string(prep.train_chars.size()) +
                 " characters (" + std::to_string(prep.train_atlas.size()) + " templates)");

    CheckpointMeta meta;
    meta.config = cfg;
    TrainSummary summary;
    const auto t0 = std::chrono::steady_clock::now();
    for (std::size_t it = 0; it < total_iters; ++it) {
        const auto batch = source.batch(it);
        std::vector<Label> labels;
        for (const auto& s : batch) labels.push_back(s.label);
        const auto bc = sample_batch_charset(labels, train_set, cfg.f_s, cfg.b_max, prep.train_atlas, rng);

        std::vector<Tensor<float>> cols;
        std::vector<CharId> owners;
        for (auto c : bc.active())
            for (auto j : prep.train_atlas.templates_of(c)) {
                cols.push_back(model.encoder.encode(prep.train_atlas.at(j).pixels, NormMode::Training));
                owners.push_back(c);
            }
        const auto P = stack_columns(cols);
        const auto groups = group_by_owner(owners);

        std::vector<Tensor<float>> ce_terms;
        for (const auto& s : batch) {
            const auto F = model.backbone.extract(s.image);
            const auto A = score(F, P, model.eos, groups, model.alpha, model.s_minus, cfg.model.metric);
            const auto target = target_columns(filter_labels(s.label, bc), groups.chars);
            ce_terms.push_back(loss_ce(A, target));
        }
        const auto ce = mul_scalar(add_n(ce_terms), 1.0f / static_cast<float>(ce_terms.size()));
        const auto emb = lambda > 0 ? loss_emb(P, m_p) : Tensor<float>::scalar(0.0f);
        const auto total = loss_total(ce, emb, lambda);

        meta.iteration = it;
        meta.rng_state = rng.serialize();
        if (!finite(total.item())) {
            save_checkpoint(out_dir / "diagnostic.ostr", model, meta);
            throw OptimizerError("non-finite loss at iteration " + std::to_string(it) + "; diagnostic checkpoint in " +
                                 (out_dir / "diagnostic.ostr").string());
        }
        step(cfg, params, opt, total, schedule(cfg, it, total_iters));
        model.renormalize_eos();
        loss_log.row(it, ce.item(), emb.item(), total.item());
        summary.last_loss = total.item();
        progress(log, it, total_iters, total.item(), t0);

        meta.iteration = it + 1;
        meta.rng_state = rng.serialize();
        if (cfg.checkpoint_every && (it + 1) % cfg.checkpoint_every == 0 && it + 1 != total_iters)
            save_checkpoint(out_dir / ("checkpoint-" + std::to_string(it + 1) + ".ostr"), model, meta);
    }
    meta.iteration = total_iters;
    meta.rng_state = rng.serialize();
    summary.iterations = total_iters;
    summary.checkpoint = out_dir / "model.ostr";
    save_checkpoint(summary.checkpoint, model, meta);
    summary.bank = out_dir / "bank.ostr";
    save_bank(summary.bank, build_bank(model, prep.train_atlas));
    return summary;
}

TrainSummary baseline_train(const RunConfig& cfg, const fs::path& out_dir, const LogFn& log)
{
    const auto prep = prepare(cfg);
    fs::create_directories(out_dir);
    const std::set<CharId> vocab(prep.train_chars.begin(), prep.train_chars.end());

    BaselineRecognizer<float> model(cfg.model, prep.train_chars, cfg.seed);
    auto params = model.parameters();
    SgdMomentum<float> opt(cfg.momentum, cfg.weight_decay);
    BatchSource source(cfg, prep.train_atlas, prep.train_chars);
    LossLog loss_log(out_dir / "loss.tsv");
    const std::size_t total_iters = source.iterations();
    say(log, "training baseline for " + std::to_string(total_iters) + " iterations on " +
                 std::to_string(prep.train_chars.size()) + " characters");

    CheckpointMeta meta;
    meta.config = cfg;
    meta.rng_state = Rng(derive_seed(cfg.seed, 10)).serialize();
    TrainSummary summary;
    const auto t0 = std::chrono::steady_clock::now();
    for (std::size_t it = 0; it < total_iters; ++it) {
        const auto batch = source.batch(it);
        std::vector<Tensor<float>> ce_terms;
        for (const auto& s : batch) {
            const auto logits = model.logits(line_input<float>(s.image, cfg.model.input_width));
            const auto target = target_columns(filter_labels(s.label, vocab), model.charset);
            ce_terms.push_back(loss_ce(logits, target));
        }
        const auto ce = mul_scalar(add_n(ce_terms), 1.0f / static_cast<float>(ce_terms.size()));
        meta.iteration = it;
        if (!finite(ce.item())) {
            save_checkpoint(out_dir / "diagnostic.ostr", model, meta);
            throw OptimizerError("non-finite loss at iteration " + std::to_string(it) + "; diagnostic checkpoint in " +
                                 (out_dir / "diagnostic.ostr").string());
        }
        step(cfg, params, opt, ce, schedule(cfg, it, total_iters));
        loss_log.row(it, ce.item(), 0.0, ce.item());
        summary.last_loss = ce.item();
        progress(log, it, total_iters, ce.item(), t0);
        meta.iteration = it + 1;
        if (cfg.checkpoint_every && (it + 1) % cfg.checkpoint_every == 0 && it + 1 != total_iters)
            save_checkpoint(out_dir / ("checkpoint-" + std::to_string(it + 1) + ".ostr"), model, meta);
    }
    meta.iteration = total_iters;
    summary.iterations = total_iters;
    summary.checkpoint = out_dir / "model.ostr";
    save_checkpoint(summary.checkpoint, model, meta);
    return summary;
}

namespace {

fs::path default_bank(const fs::path& checkpoint, const fs::path& bank)
{
    return bank.empty() ? checkpoint.parent_path() / "bank.ostr" : bank;
}

PrototypeBank load_or_build_bank(const Recognizer<float>& model, const RunConfig& cfg, const fs::path& path)
{
    if (fs::exists(path)) {
        auto bank = load_bank(path);
        if (bank.dim() != model.config.feature_dim)
            throw LoadError(path.string() + ": bank dimension " + std::to_string(bank.dim()) +
                            " does not match the model (" + std::to_string(model.config.feature_dim) + ")");
        return bank;
    }
    return build_bank(model, prepare(cfg).train_atlas);
}

Recognizer<float> load_prototype_model(const fs::path& checkpoint, RunConfig* cfg)
{
    auto ck = load_checkpoint(checkpoint);
    if (!ck.model) throw ContractError(checkpoint.string() + " is a baseline checkpoint; it has no prototype bank");
    if (cfg) *cfg = ck.meta.config;
    return std::move(*ck.model);
}

std::string char_list(const std::vector<CharId>& v)
{
    std::string s;
    for (auto c : v) s += (s.empty() ? "" : " ") + to_utf8(c);
    return s;
}

} // namespace

MetricsReport eval(const EvalRequest& req, const LogFn& log)
{
    auto ck = load_checkpoint(req.checkpoint);
    const auto& train_cfg = ck.meta.config;
    const auto& settings = req.settings;
    if (settings.threads == 0) throw ConfigError("threads must be at least 1");
    const auto data = load_dataset(req.dataset);
    if (data.empty()) throw ContractError("evaluation dataset " + req.dataset.string() + " is empty");

    std::vector<CharId> vocab;
    PrototypeBank bank;
    if (ck.model) {
        bank = load_or_build_bank(*ck.model, train_cfg, default_bank(req.checkpoint, req.bank));
        vocab = bank.charset();
    } else {
        vocab = ck.baseline->charset;
    }
    std::set<CharId> universe(vocab.begin(), vocab.end());
    for (const auto& e : data)
        for (auto c : e.label)
            if (!is_special(c)) universe.insert(c);
    const auto c_test = resolve_charset(settings.test_charset, {universe.begin(), universe.end()});

    const auto train_atlas_chars = load_run_atlas(train_cfg).charset();
    const auto train_chars = resolve_charset(train_cfg.train_charset, train_atlas_chars);
    const std::set<CharId> c_train(train_chars.begin(), train_chars.end());
    const auto split = build_split(c_test, c_train, settings.split_mode, settings.split, settings.split_seed);
    if (split.in_set.empty()) throw ContractError("the in-set is empty; nothing can be recognized");

    LinePredictor predict;
    if (ck.model) {
        std::vector<CharId> missing;
        for (auto c : split.in_set)
            if (!std::binary_search(vocab.begin(), vocab.end(), c)) missing.push_back(c);
        if (!missing.empty())
            throw ContractError("in-set characters without glyph templates in the bank: " + char_list(missing) +
                                " (use `charset add`)");
        const auto& model = *ck.model;
        predict = [&](const Image& img) {
            const auto F = model.backbone.extract(img);
            return predict_with_charset(F, bank, model.alpha, model.s_minus, model.config.metric, split.in_set);
        };
    } else {
        const auto& model = *ck.baseline;
        std::vector<std::size_t> cols;
        std::vector<CharId> allowed;
        for (std::size_t k = 0; k < model.charset.size(); ++k)
            if (split.in_set.count(model.charset[k])) {
                cols.push_back(k);
                allowed.push_back(model.charset[k]);
            }
        cols.push_back(model.charset.size());
        cols.push_back(model.charset.size() + 1);
        predict = [&, cols, allowed](const Image& img) {
            const auto logits = model.logits(line_input<float>(img, model.config.input_width));
            return decode(select_columns(logits, std::span<const std::size_t>(cols)), allowed);
        };
    }

    std::vector<PredictionRecord> records;
    const auto t0 = std::chrono::steady_clock::now();
    auto report = evaluate(predict, data, split, settings.threads, &records);
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    say(log, std::string(split_mode_name(report.mode)) + " on " + std::to_string(data.size()) + " lines (" +
                 std::to_string(split.in_set.size()) + " in-set, " + std::to_string(split.out_set.size()) +
                 " out-of-set characters) in " + fixed(s, 1) + " s");
    if (!req.out_dir.empty()) {
        fs::create_directories(req.out_dir);
        write_report(req.out_dir / "report.txt", report);
        write_report_tsv(req.out_dir / "report.tsv", report);
        write_predictions(req.out_dir / "predictions.tsv", records);
    }
    return report;
}

PrototypeBank charset_add(const fs::path& checkpoint, const fs::path& bank_path, const TemplateAtlas& source,
                          const std::vector<CharId>& chars)
{
    RunConfig cfg;
    const auto model = load_prototype_model(checkpoint, &cfg);
    const auto path = default_bank(checkpoint, bank_path);
    const auto bank = load_or_build_bank(model, cfg, path);
    AtlasDelta delta;
    std::vector<CharId> missing;
    for (auto c : chars) {
        if (!source.contains(c)) missing.push_back(c);
        for (auto j : source.templates_of(c)) delta.added.push_back(source.at(j));
    }
    if (!missing.empty()) throw ContractError("no glyph templates for: " + char_list(missing));
    auto updated = update_bank(bank, model, delta);
    save_bank(path, updated);
    return updated;
}

PrototypeBank charset_remove(const fs::path& checkpoint, const fs::path& bank_path, const std::vector<CharId>& chars)
{
    RunConfig cfg;
    const auto model = load_prototype_model(checkpoint, &cfg);
    const auto path = default_bank(checkpoint, bank_path);
    const auto bank = load_or_build_bank(model, cfg, path);
    AtlasDelta delta;
    const std::set<CharId> drop(chars.begin(), chars.end());
    std::vector<CharId> present = bank.charset(), missing;
    for (auto c : drop)
        if (!std::binary_search(present.begin(), present.end(), c)) missing.push_back(c);
    if (!missing.empty()) throw ContractError("characters not in the bank: " + char_list(missing));
    for (const auto& k : bank.keys())
        if (drop.count(k.ch)) delta.removed.push_back(k);
    auto updated = update_bank(bank, model, delta);
    save_bank(path, updated);
    return updated;
}

MarginSpec margin_solve(std::size_t n, std::size_t d, const MarginOptions& opts, const fs::path& out,
                        const LogFn& log)
{
    auto o = opts;
    if (!o.log) o.log = log;
    const auto t0 = std::chrono::steady_clock::now();
    const auto spec = estimate_margin(n, d, o);
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    say(log, "m_p = " + fixed(spec.m_p) + " for n=" + std::to_string(n) + " d=" + std::to_string(d) + " in " +
                 fixed(s, 1) + " s");
    if (!out.empty()) write_margin_file(out, spec);
    return spec;
}

std::size_t synth(const RunConfig& cfg, const fs::path& out_dir)
{
    cfg.validate();
    const auto atlas = load_run_atlas(cfg);
    SynthSpec spec;
    spec.charset = resolve_charset(cfg.synth_charset, atlas.charset());
    spec.count = cfg.synth_count;
    spec.min_len = cfg.min_len;
    spec.max_len = cfg.max_len;
    spec.distortion = cfg.distortion;
    spec.l_max = cfg.model.max_length;
    spec.max_width = cfg.model.input_width;
    const auto data = synthesize_dataset(atlas.subset(spec.charset), spec, cfg.seed);
    write_dataset(out_dir, data);
    return data.size();
}

} // namespace ostr
