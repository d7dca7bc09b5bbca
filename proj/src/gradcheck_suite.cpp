#include "ostr/gradcheck.hpp"
#include "ostr/harness.hpp"
#include "ostr/predictor.hpp"
#include "ostr/sampler.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>

namespace ostr {

namespace {

using TD = Tensor<double>;

struct Instance {
    GradcheckFn fn;
    std::vector<TD> inputs;
};

using Builder = std::function<Instance(Rng&)>;

struct Case {
    const char* name;
    double tol;
    Builder build;
    double eps = 1e-5;
};

std::size_t dim(Rng& rng, std::size_t lo, std::size_t hi) { return lo + rng.index(hi - lo + 1); }

// Entries bounded away from zero so relu kinks stay outside the stencil.
TD away_from_zero(Rng& rng, Shape shape)
{
    auto t = random_tensor(rng, std::move(shape));
    for (auto& v : t.mutable_data()) v = (v < 0 ? -1.0 : 1.0) * (0.1 + std::abs(v));
    return t;
}

// Distinct values with gaps far above the finite-difference step.
TD well_separated(Rng& rng, Shape shape)
{
    auto t = TD::zeros(shape, true);
    std::vector<double> ranks(t.numel());
    for (std::size_t i = 0; i < ranks.size(); ++i) ranks[i] = static_cast<double>(i);
    rng.shuffle(ranks);
    auto d = t.mutable_data();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = 0.1 * ranks[i] + rng.uniform(-0.02, 0.02);
    return t;
}

TD positive(Rng& rng, Shape shape) { return random_tensor(rng, std::move(shape), 0.5, 1.5); }

std::vector<std::size_t> random_targets(Rng& rng, std::size_t rows, std::size_t cols)
{
    std::vector<std::size_t> t(rows);
    for (auto& v : t) v = rng.index(cols);
    return t;
}

std::vector<std::vector<std::size_t>> random_groups(Rng& rng, std::size_t n)
{
    std::vector<std::size_t> cols(n);
    for (std::size_t i = 0; i < n; ++i) cols[i] = i;
    rng.shuffle(cols);
    std::vector<std::vector<std::size_t>> groups;
    std::size_t i = 0;
    while (i < n) {
        const std::size_t take = std::min(n - i, dim(rng, 1, 3));
        groups.emplace_back(cols.begin() + static_cast<std::ptrdiff_t>(i),
                            cols.begin() + static_cast<std::ptrdiff_t>(i + take));
        i += take;
    }
    return groups;
}

Conv2d<double> conv(std::size_t in, std::size_t out, std::size_t k, std::size_t stride, std::size_t pad, Rng& rng)
{
    auto c = Conv2d<double>::make(in, out, k, stride, pad, rng);
    for (auto& v : c.bias.mutable_data()) v = rng.uniform(-0.3, 0.3);
    return c;
}

// Interior sampling positions with fractional parts away from the bilinear kinks.
TD interior_coords(Rng& rng, std::size_t ho, std::size_t wo, std::size_t h, std::size_t w)
{
    auto c = TD::zeros({ho, wo, 2}, true);
    auto d = c.mutable_data();
    for (std::size_t k = 0; k < ho * wo; ++k) {
        d[2 * k] = static_cast<double>(rng.index(w - 1)) + rng.uniform(0.1, 0.9);
        d[2 * k + 1] = static_cast<double>(rng.index(h - 1)) + rng.uniform(0.1, 0.9);
    }
    return c;
}

ModelConfig tiny_model()
{
    ModelConfig c;
    c.input_width = 32;
    c.backbone_channels = {2, 2, 2};
    c.feature_dim = 3;
    c.max_length = 2;
    c.cam_hidden = 2;
    c.encoder_channels = {2, 2, 2, 2};
    return c;
}

// Active heads so the density path carries gradient.
Backbone<double> tiny_backbone(Rng& rng)
{
    Backbone<double> b(tiny_model(), rng);
    b.tpt1.fc_x = conv(2, 1, 1, 1, 0, rng);
    b.tpt1.fc_y = conv(2, 1, 1, 1, 0, rng);
    b.tpt2.fc_x = conv(2, 1, 1, 1, 0, rng);
    b.tpt2.fc_y = conv(2, 1, 1, 1, 0, rng);
    for (auto& v : b.cam.position_bias.mutable_data()) v = rng.uniform(-0.5, 0.5);
    return b;
}

std::vector<Case> cases()
{
    std::vector<Case> all;
    auto unary = [&](const char* name, double tol, std::function<TD(const TD&)> f, bool kinks) {
        all.push_back({name, tol, [f, kinks](Rng& rng) {
                           Shape s{dim(rng, 1, 4), dim(rng, 1, 5)};
                           return Instance{[f](const auto& in) { return f(in[0]); },
                                           {kinks ? away_from_zero(rng, s) : random_tensor(rng, s)}};
                       }});
    };
    unary("sigmoid", 1e-4, [](const TD& x) { return sigmoid(x); }, false);
    unary("relu", 1e-4, [](const TD& x) { return relu(x); }, true);
    unary("add_scalar", 1e-4, [](const TD& x) { return add_scalar(x, 0.7); }, false);
    unary("mul_scalar", 1e-4, [](const TD& x) { return mul_scalar(x, -1.3); }, false);
    unary("sum", 1e-4, [](const TD& x) { return sum(x); }, false);
    unary("mean", 1e-4, [](const TD& x) { return mean(x); }, false);
    unary("transpose", 1e-4, [](const TD& x) { return transpose(x); }, false);
    unary("reshape", 1e-4, [](const TD& x) { return reshape(x, {x.numel()}); }, false);
    unary("softmax_rows", 1e-4, [](const TD& x) { return softmax_rows(x); }, false);
    unary("l2_normalize_rows", 1e-4, [](const TD& x) { return l2_normalize_rows(x); }, false);
    unary("l2_normalize", 1e-4, [](const TD& x) { return l2_normalize(x); }, false);

    auto binary = [&](const char* name, std::function<TD(const TD&, const TD&)> f) {
        all.push_back({name, 1e-4, [f](Rng& rng) {
                           Shape s{dim(rng, 1, 4), dim(rng, 1, 5)};
                           return Instance{[f](const auto& in) { return f(in[0], in[1]); },
                                           {random_tensor(rng, s), random_tensor(rng, s)}};
                       }});
    };
    binary("add", [](const TD& a, const TD& b) { return add(a, b); });
    binary("mul", [](const TD& a, const TD& b) { return mul(a, b); });

    all.push_back({"scale", 1e-4, [](Rng& rng) {
                       return Instance{[](const auto& in) { return scale(in[0], in[1]); },
                                       {random_tensor(rng, {dim(rng, 1, 4), dim(rng, 1, 4)}), random_tensor(rng, {1})}};
                   }});
    all.push_back({"add_n", 1e-4, [](Rng& rng) {
                       Shape s{dim(rng, 1, 3), dim(rng, 1, 4)};
                       std::vector<TD> xs;
                       for (std::size_t k = dim(rng, 1, 4); k > 0; --k) xs.push_back(random_tensor(rng, s));
                       return Instance{[](const auto& in) { return add_n(in); }, xs};
                   }});
    all.push_back({"matmul", 1e-4, [](Rng& rng) {
                       const auto m = dim(rng, 1, 4), k = dim(rng, 1, 5), n = dim(rng, 1, 4);
                       return Instance{[](const auto& in) { return matmul(in[0], in[1]); },
                                       {random_tensor(rng, {m, k}), random_tensor(rng, {k, n})}};
                   }});
    all.push_back({"conv2d", 1e-4, [](Rng& rng) {
                       const auto c = dim(rng, 1, 3), k = dim(rng, 1, 3), h = dim(rng, 3, 6), w = dim(rng, 3, 6);
                       const std::size_t ks = rng.index(2) ? 3 : 1, stride = dim(rng, 1, 2), pad = ks == 3 ? rng.index(2) : 0;
                       return Instance{[=](const auto& in) { return conv2d(in[0], in[1], in[2], stride, pad); },
                                       {random_tensor(rng, {c, h, w}), random_tensor(rng, {k, c, ks, ks}),
                                        random_tensor(rng, {k})}};
                   }});
    all.push_back({"global_avg_pool", 1e-4, [](Rng& rng) {
                       return Instance{[](const auto& in) { return global_avg_pool(in[0]); },
                                       {random_tensor(rng, {dim(rng, 1, 3), dim(rng, 1, 4), dim(rng, 1, 4)})}};
                   }});
    all.push_back({"softmax_cross_entropy", 1e-4, [](Rng& rng) {
                       const auto n = dim(rng, 2, 6);
                       auto onehot = TD::zeros({n});
                       onehot.mutable_data()[rng.index(n)] = 1.0;
                       return Instance{[onehot](const auto& in) { return softmax_cross_entropy(in[0], onehot); },
                                       {random_tensor(rng, {n}, -3, 3)}};
                   }});
    all.push_back({"softmax_cross_entropy_rows", 1e-4, [](Rng& rng) {
                       const auto m = dim(rng, 1, 4), n = dim(rng, 2, 6);
                       const auto t = random_targets(rng, dim(rng, 1, m), n);
                       return Instance{[t](const auto& in) {
                                           return softmax_cross_entropy_rows(in[0], std::span<const std::size_t>(t));
                                       },
                                       {random_tensor(rng, {m, n}, -3, 3)}};
                   }});
    all.push_back({"concat_cols", 1e-4, [](Rng& rng) {
                       const auto m = dim(rng, 1, 4);
                       return Instance{[](const auto& in) { return concat_cols(in[0], in[1]); },
                                       {random_tensor(rng, {m, dim(rng, 1, 3)}), random_tensor(rng, {m, dim(rng, 1, 3)})}};
                   }});
    all.push_back({"stack_columns", 1e-4, [](Rng& rng) {
                       const auto d = dim(rng, 1, 4);
                       std::vector<TD> cols;
                       for (std::size_t k = dim(rng, 1, 4); k > 0; --k) cols.push_back(random_tensor(rng, {d}));
                       return Instance{[](const auto& in) { return stack_columns(in); }, cols};
                   }});
    all.push_back({"select_columns", 1e-4, [](Rng& rng) {
                       const auto n = dim(rng, 2, 5);
                       std::vector<std::size_t> cols;
                       for (std::size_t k = dim(rng, 1, 5); k > 0; --k) cols.push_back(rng.index(n));
                       return Instance{[cols](const auto& in) {
                                           return select_columns(in[0], std::span<const std::size_t>(cols));
                                       },
                                       {random_tensor(rng, {dim(rng, 1, 3), n})}};
                   }});
    all.push_back({"column_group_max", 1e-4, [](Rng& rng) {
                       const auto n = dim(rng, 2, 6);
                       const auto groups = random_groups(rng, n);
                       return Instance{[groups](const auto& in) { return column_group_max(in[0], groups); },
                                       {well_separated(rng, {dim(rng, 1, 3), n})}};
                   }});
    all.push_back({"append_scalar_column", 1e-4, [](Rng& rng) {
                       return Instance{[](const auto& in) { return append_scalar_column(in[0], in[1]); },
                                       {random_tensor(rng, {dim(rng, 1, 4), dim(rng, 1, 4)}), random_tensor(rng, {1})}};
                   }});
    all.push_back({"zero_diagonal", 1e-4, [](Rng& rng) {
                       const auto n = dim(rng, 1, 5);
                       return Instance{[](const auto& in) { return zero_diagonal(in[0]); }, {random_tensor(rng, {n, n})}};
                   }});
    all.push_back({"integrate_density", 1e-4, [](Rng& rng) {
                       Shape s{dim(rng, 1, 5), dim(rng, 1, 6)};
                       return Instance{[](const auto& in) { return integrate_density(in[0], in[1]); },
                                       {positive(rng, s), positive(rng, s)}};
                   }});
    all.push_back({"grid_sample", 1e-4, [](Rng& rng) {
                       const auto h = dim(rng, 2, 5), w = dim(rng, 2, 6);
                       return Instance{[](const auto& in) { return grid_sample(in[0], in[1]); },
                                       {random_tensor(rng, {dim(rng, 1, 3), h, w}),
                                        interior_coords(rng, dim(rng, 1, 4), dim(rng, 1, 4), h, w)}};
                   }});
    all.push_back({"attention_pool", 1e-4, [](Rng& rng) {
                       const auto h = dim(rng, 1, 4), w = dim(rng, 1, 5);
                       return Instance{[](const auto& in) { return attention_pool(in[0], in[1]); },
                                       {random_tensor(rng, {dim(rng, 1, 4), h, w}),
                                        random_tensor(rng, {dim(rng, 1, 3), h, w})}};
                   }});

    // Composed blocks.
    all.push_back({"density", 1e-4, [](Rng& rng) {
                       const auto c = dim(rng, 1, 3);
                       const auto fx = conv(c, 1, 1, 1, 0, rng), fy = conv(c, 1, 1, 1, 0, rng);
                       const double h = rng.uniform(0.2, 1.0);
                       return Instance{[h](const auto& in) {
                                           TptLayer<double> l{{}, {in[1], in[2], 1, 0}, {in[3], in[4], 1, 0}};
                                           auto d = density(in[0], l, h);
                                           return concat_cols(d.dx, d.dy);
                                       },
                                       {random_tensor(rng, {c, dim(rng, 2, 4), dim(rng, 2, 5)}), fx.weight, fx.bias,
                                        fy.weight, fy.bias}};
                   }});
    all.push_back({"tpt_block", 1e-4, [](Rng& rng) {
                       const auto c = dim(rng, 1, 3);
                       const auto local = conv(c, c, 3, 1, 1, rng), fx = conv(c, 1, 1, 1, 0, rng),
                                  fy = conv(c, 1, 1, 1, 0, rng);
                       return Instance{[](const auto& in) {
                                           TptLayer<double> l{{in[1], in[2], 1, 1}, {in[3], in[4], 1, 0},
                                                              {in[5], in[6], 1, 0}};
                                           return tpt_block(in[0], l, 0.5);
                                       },
                                       {random_tensor(rng, {c, dim(rng, 3, 5), dim(rng, 3, 7)}), local.weight,
                                        local.bias, fx.weight, fx.bias, fy.weight, fy.bias}};
                   }});
    all.push_back({"cam_attend", 1e-4, [](Rng& rng) {
                       const auto d = dim(rng, 1, 3), hid = dim(rng, 1, 3), l = dim(rng, 1, 3), h = dim(rng, 2, 4),
                                  w = dim(rng, 2, 5);
                       const auto hidden = conv(d, hid, 3, 1, 1, rng), logits = conv(hid, l, 1, 1, 0, rng);
                       // The logits bias shifts a whole softmax row, so its gradient is identically zero.
                       return Instance{[bias = logits.bias](const auto& in) {
                                           CamHead<double> cam{{in[1], in[2], 1, 1}, {in[3], bias, 1, 0}, in[4]};
                                           return attention_pool(in[0], cam_attend(in[0], cam));
                                       },
                                       {random_tensor(rng, {d, h, w}), hidden.weight, hidden.bias, logits.weight,
                                        random_tensor(rng, {l, h, w})}};
                   }});
    for (auto metric : {Metric::ScaledDot, Metric::ScaledCosine}) {
        all.push_back({metric == Metric::ScaledDot ? "score (scaled-dot)" : "score (scaled-cosine)", 1e-4,
                       [metric](Rng& rng) {
                           const auto d = dim(rng, 2, 4), n = dim(rng, 2, 6), l = dim(rng, 1, 3);
                           std::vector<CharId> owners(n);
                           for (auto& o : owners) o = U'a' + static_cast<CharId>(rng.index(3));
                           const auto groups = group_by_owner(owners);
                           return Instance{[groups, metric](const auto& in) {
                                               return score(in[0], in[1], in[2], groups, in[3], in[4], metric);
                                           },
                                           {random_tensor(rng, {l, d}), random_tensor(rng, {d, n}),
                                            random_tensor(rng, {d}), random_tensor(rng, {1}, 0.5, 2.0),
                                            random_tensor(rng, {1})}};
                       }});
    }
    all.push_back({"loss_ce", 1e-4, [](Rng& rng) {
                       const auto m = dim(rng, 2, 5), n = dim(rng, 2, 6);
                       const auto t = random_targets(rng, dim(rng, 1, m), n);
                       return Instance{[t](const auto& in) { return loss_ce(in[0], std::span<const std::size_t>(t)); },
                                       {random_tensor(rng, {m, n}, -3, 3)}};
                   }});
    all.push_back({"loss_emb", 1e-4, [](Rng& rng) {
                       const auto d = dim(rng, 2, 5), n = dim(rng, 2, 6);
                       const double m_p = rng.uniform(-0.3, 0.3);
                       TD P;
                       for (;;) {
                           P = random_tensor(rng, {d, n});
                           const auto G = matmul(transpose(P), P);
                           bool clear = true;
                           for (auto v : G.data()) clear = clear && std::abs(v - m_p) > 1e-3;
                           if (clear) break;
                       }
                       return Instance{[m_p](const auto& in) { return loss_emb(in[0], m_p); }, {P}};
                   }});
    all.push_back({"loss_total", 1e-4, [](Rng& rng) {
                       const double lambda = rng.uniform(0.0, 1.0);
                       return Instance{[lambda](const auto& in) { return loss_total(in[0], in[1], lambda); },
                                       {random_tensor(rng, {1}), random_tensor(rng, {1})}};
                   }});
    all.push_back({"prototype encoder", 1e-4, [](Rng& rng) {
                       ProtoEncoder<double> enc(tiny_model(), rng);
                       // Positive biases keep several channels alive; a single live channel
                       // normalizes to a constant.
                       for (auto& v : enc.stem.bias.mutable_data()) v = rng.uniform(0.1, 0.4);
                       for (auto& b : enc.blocks)
                           for (auto& v : b.bias.mutable_data()) v = rng.uniform(0.1, 0.4);
                       return Instance{[enc](const auto& in) {
                                           auto e = enc;
                                           e.stem.weight = in[1];
                                           e.blocks[1].weight = in[2];
                                           e.proj.weight = in[3];
                                           return e.encode(in[0], NormMode::Training);
                                       },
                                       {random_tensor(rng, {1, 32, 32}, 0, 1), enc.stem.weight, enc.blocks[1].weight,
                                        enc.proj.weight}};
                   }});
    all.push_back({"prototype encoder (shared)", 1e-4, [](Rng& rng) {
                       auto b = tiny_backbone(rng);
                       for (auto& v : b.cam.position_bias.mutable_data()) v = rng.uniform(-1, 1);
                       ProtoEncoder<double> enc(b.config, b);
                       return Instance{[b, proj = enc.proj](const auto& in) {
                                           auto m = b;
                                           m.head.weight = in[1];
                                           m.cam.position_bias = in[2];
                                           ProtoEncoder<double> e(m.config, m);
                                           e.proj = {in[3], proj.bias};
                                           return e.encode(in[0], NormMode::Training);
                                       },
                                       {random_tensor(rng, {1, 32, 32}, 0, 1), b.head.weight, b.cam.position_bias,
                                        random_tensor(rng, {3, 3})}};
                   },
                   1e-7});
    all.push_back({"extract", 1e-3, [](Rng& rng) {
                       auto b = tiny_backbone(rng);
                       return Instance{[b](const auto& in) {
                                           auto m = b;
                                           m.tpt1.fc_x.weight = in[1];
                                           m.tpt1.local.weight = in[2];
                                           m.tpt2.fc_y.weight = in[3];
                                           m.cam.position_bias = in[4];
                                           m.head.weight = in[5];
                                           m.stem.bias = in[6];
                                           return m.extract(in[0]);
                                       },
                                       {random_tensor(rng, {1, 32, 32}, 0, 1), b.tpt1.fc_x.weight, b.tpt1.local.weight,
                                        b.tpt2.fc_y.weight, b.cam.position_bias, b.head.weight, b.stem.bias}};
                   },
                   1e-7});
    return all;
}

} // namespace

std::vector<GradcheckCase> gradcheck_suite(std::uint64_t seed, std::size_t instances, const LogFn& log)
{
    std::vector<GradcheckCase> out;
    std::uint64_t tag = 0;
    for (const auto& c : cases()) {
        GradcheckCase r{c.name, 0, 0.0, c.tol};
        Rng rng(derive_seed(seed, ++tag));
        const auto t0 = std::chrono::steady_clock::now();
        for (std::size_t k = 0; k < instances; ++k) {
            auto inst = c.build(rng);
            r.worst = std::max(r.worst, gradcheck(inst.fn, inst.inputs, c.eps, c.tol).max_rel_error);
            ++r.instances;
        }
        if (log) {
            const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            char buf[160];
            std::snprintf(buf, sizeof buf, "%-28s %s  worst %.3e  tol %.0e  n=%zu  %.2f s", c.name,
                          r.passed() ? "PASS" : "FAIL", r.worst, r.tol, r.instances, s);
            log(buf);
        }
        out.push_back(r);
    }
    return out;
}

} // namespace ostr
