#include "ostr/model.hpp"

#include "ostr/errors.hpp"

#include <cmath>

namespace ostr {

const char* metric_name(Metric m) { return m == Metric::ScaledCosine ? "scaled-cosine" : "scaled-dot"; }

Metric parse_metric(const std::string& s)
{
    if (s == "scaled-dot") return Metric::ScaledDot;
    if (s == "scaled-cosine") return Metric::ScaledCosine;
    throw ConfigError("metric must be scaled-dot or scaled-cosine, got '" + s + "'");
}

void ModelConfig::validate() const
{
    if (input_width < 32 || input_width > 256 || input_width % 4 != 0)
        throw ConfigError("input_width must be a multiple of 4 in [32, 256]");
    if (backbone_channels.size() != 3) throw ConfigError("backbone_channels needs exactly 3 entries");
    if (encoder_channels.size() != 4) throw ConfigError("encoder_channels needs exactly 4 entries");
    for (auto c : backbone_channels)
        if (c == 0) throw ConfigError("backbone_channels entries must be positive");
    for (auto c : encoder_channels)
        if (c == 0) throw ConfigError("encoder_channels entries must be positive");
    if (feature_dim == 0) throw ConfigError("d must be positive");
    if (max_length < 2) throw ConfigError("l_max must be at least 2");
    if (cam_hidden == 0) throw ConfigError("cam_hidden must be positive");
    density_offset(h);
}

double density_offset(double h)
{
    if (!(h > 0.0 && h <= 1.0)) throw ConfigError("h must lie in (0, 1], got " + std::to_string(h));
    return (1.0 - h) / h;
}

template <typename T>
Tensor<T> line_input(const Image& img, std::size_t width)
{
    if (img.height != 32) throw ContractError("line images must be 32 rows high, got " + std::to_string(img.height));
    if (img.width == 0 || img.width > width)
        throw LengthError("line image width " + std::to_string(img.width) + " does not fit the model canvas of " +
                          std::to_string(width));
    std::vector<T> v(32 * width, T(0));
    for (std::size_t y = 0; y < 32; ++y)
        for (std::size_t x = 0; x < img.width; ++x) v[y * width + x] = static_cast<T>(img.at(y, x));
    return Tensor<T>::from({1, 32, width}, std::move(v));
}

template <typename T>
Tensor<T> glyph_input(const Image& img)
{
    if (img.height != 32 || img.width != 32) throw ContractError("glyph templates must be 32x32");
    std::vector<T> v(img.pixels.begin(), img.pixels.end());
    return Tensor<T>::from({1, 32, 32}, std::move(v));
}

template <typename T>
DensityPair<T> density(const Tensor<T>& m_l, const TptLayer<T>& layer, double h)
{
    const T b = static_cast<T>(density_offset(h));
    const std::size_t H = m_l.dim(1), W = m_l.dim(2);
    auto dx = add_scalar(sigmoid(layer.fc_x(m_l)), b);
    auto dy = add_scalar(sigmoid(layer.fc_y(m_l)), b);
    return {reshape(dx, {H, W}), reshape(dy, {H, W})};
}

template <typename T>
Tensor<T> tpt_block(const Tensor<T>& m_i, const TptLayer<T>& layer, double h)
{
    auto m_l = relu(layer.local(m_i));
    auto d = density(m_l, layer, h);
    return grid_sample(m_l, integrate_density(d.dx, d.dy));
}

template <typename T>
Tensor<T> cam_attend(const Tensor<T>& m, const CamHead<T>& cam)
{
    auto logits = add(cam.logits(relu(cam.hidden(m))), cam.position_bias);
    const std::size_t L = logits.dim(0), H = logits.dim(1), W = logits.dim(2);
    return reshape(softmax_rows(reshape(logits, {L, H * W})), {L, H, W});
}

template <typename T>
Backbone<T>::Backbone(const ModelConfig& cfg, Rng& rng) : config(cfg)
{
    cfg.validate();
    const auto& c = cfg.backbone_channels;
    stem = Conv2d<T>::make(1, c[0], 3, 1, 1, rng);
    down1 = Conv2d<T>::make(c[0], c[1], 3, 2, 1, rng);
    tpt1 = {Conv2d<T>::make(c[1], c[1], 3, 1, 1, rng), Conv2d<T>::zeros(c[1], 1, 1, 1, 0),
            Conv2d<T>::zeros(c[1], 1, 1, 1, 0)};
    down2 = Conv2d<T>::make(c[1], c[2], 3, 2, 1, rng);
    tpt2 = {Conv2d<T>::make(c[2], c[2], 3, 1, 1, rng), Conv2d<T>::zeros(c[2], 1, 1, 1, 0),
            Conv2d<T>::zeros(c[2], 1, 1, 1, 0)};
    head = Conv2d<T>::make(c[2], cfg.feature_dim, 3, 1, 1, rng);
    cam.hidden = Conv2d<T>::make(cfg.feature_dim, cfg.cam_hidden, 3, 1, 1, rng);
    cam.logits = Conv2d<T>::make(cfg.cam_hidden, cfg.max_length, 1, 1, 0, rng);
    cam.position_bias = Tensor<T>::zeros({cfg.max_length, cfg.feature_height(), cfg.feature_width()}, true);
}

template <typename T>
Tensor<T> Backbone<T>::feature_map(const Tensor<T>& x) const
{
    if (x.rank() != 3 || x.dim(0) != 1 || x.dim(1) != 32 || x.dim(2) != config.input_width)
        throw ContractError("backbone input must be [1, 32, " + std::to_string(config.input_width) + "], got " +
                            shape_str(x.shape()));
    return trunk(x);
}

template <typename T>
Tensor<T> Backbone<T>::trunk(const Tensor<T>& x) const
{
    if (x.rank() != 3 || x.dim(0) != 1 || x.dim(1) != 32 || x.dim(2) % 4 != 0)
        throw ContractError("trunk input must be [1, 32, 4k], got " + shape_str(x.shape()));
    auto m = relu(stem(x));
    m = relu(down1(m));
    m = config.tpt ? tpt_block(m, tpt1, config.h) : relu(tpt1.local(m));
    m = relu(down2(m));
    m = config.tpt ? tpt_block(m, tpt2, config.h) : relu(tpt2.local(m));
    return head(m);
}

template <typename T>
Tensor<T> Backbone<T>::extract(const Tensor<T>& x) const
{
    auto m = feature_map(x);
    return attention_pool(m, cam_attend(m, cam));
}

template <typename T>
Tensor<T> Backbone<T>::extract(const Image& line) const
{
    return extract(line_input<T>(line, config.input_width));
}

template <typename T>
void Backbone<T>::collect(ParameterSet<T>& ps, const std::string& prefix) const
{
    ps.add(prefix + "stem", stem);
    ps.add(prefix + "down1", down1);
    ps.add(prefix + "tpt1.local", tpt1.local);
    ps.add(prefix + "down2", down2);
    ps.add(prefix + "tpt2.local", tpt2.local);
    if (config.tpt) {
        ps.add(prefix + "tpt1.fc_x", tpt1.fc_x);
        ps.add(prefix + "tpt1.fc_y", tpt1.fc_y);
        ps.add(prefix + "tpt2.fc_x", tpt2.fc_x);
        ps.add(prefix + "tpt2.fc_y", tpt2.fc_y);
    }
    ps.add(prefix + "head", head);
    ps.add(prefix + "cam.hidden", cam.hidden);
    ps.add(prefix + "cam.logits", cam.logits);
    ps.add(prefix + "cam.position_bias", cam.position_bias);
}

template <typename T>
ProtoEncoder<T>::ProtoEncoder(const ModelConfig& cfg, Rng& rng)
{
    cfg.validate();
    const auto& c = cfg.encoder_channels;
    stem = Conv2d<T>::make(1, c[0], 3, 1, 1, rng);
    std::size_t in = c[0];
    for (auto out : c) {
        blocks.push_back(Conv2d<T>::make(in, out, 3, 2, 1, rng));
        in = out;
    }
    proj = Linear<T>::make(in, cfg.feature_dim, rng);
}

template <typename T>
ProtoEncoder<T>::ProtoEncoder(const ModelConfig& cfg, const Backbone<T>& trunk) : shared(trunk)
{
    cfg.validate();
    const std::size_t d = cfg.feature_dim;
    std::vector<T> eye(d * d, T(0));
    for (std::size_t i = 0; i < d; ++i) eye[i * d + i] = T(1);
    proj.weight = Tensor<T>::from({d, d}, std::move(eye), true);
    proj.bias = Tensor<T>::zeros({d}, true);
}

template <typename T>
Tensor<T> ProtoEncoder<T>::encode_raw(const Tensor<T>& glyph) const
{
    if (shared) {
        // The glyph is read like a one-character line: trunk, then the first
        // attention step restricted to the glyph's columns.
        const auto m = shared->trunk(glyph);
        const auto& pb = shared->cam.position_bias;
        const std::size_t L = pb.dim(0), H = pb.dim(1), W = pb.dim(2), w = m.dim(2);
        std::vector<std::size_t> cols(w);
        for (std::size_t i = 0; i < w; ++i) cols[i] = i;
        const CamHead<T> cam{shared->cam.hidden, shared->cam.logits,
                             reshape(select_columns(reshape(pb, {L * H, W}), std::span<const std::size_t>(cols)),
                                     {L, H, w})};
        const auto F = attention_pool(m, cam_attend(m, cam));
        const std::size_t first[1] = {0};
        return proj(reshape(select_columns(transpose(F), std::span<const std::size_t>(first)), {F.dim(1)}));
    }
    auto m = relu(stem(glyph));
    for (const auto& b : blocks) m = relu(b(m));
    return proj(global_avg_pool(m));
}

template <typename T>
Tensor<T> ProtoEncoder<T>::encode(const Tensor<T>& glyph, NormMode mode) const
{
    return l2_normalize(encode_raw(glyph), mode);
}

template <typename T>
Tensor<T> ProtoEncoder<T>::encode(const Image& glyph, NormMode mode) const
{
    return encode(glyph_input<T>(glyph), mode);
}

template <typename T>
void ProtoEncoder<T>::collect(ParameterSet<T>& ps, const std::string& prefix) const
{
    if (shared) {
        ps.add(prefix + "proj", proj);
        return;
    }
    ps.add(prefix + "stem", stem);
    for (std::size_t i = 0; i < blocks.size(); ++i) ps.add(prefix + "block" + std::to_string(i), blocks[i]);
    ps.add(prefix + "proj", proj);
}

template <typename T>
Recognizer<T>::Recognizer(const ModelConfig& cfg, std::uint64_t seed) : config(cfg)
{
    cfg.validate();
    Rng rb(derive_seed(seed, 1)), re(derive_seed(seed, 2)), rs(derive_seed(seed, 3));
    backbone = Backbone<T>(cfg, rb);
    encoder = cfg.shared_trunk ? ProtoEncoder<T>(cfg, backbone) : ProtoEncoder<T>(cfg, re);
    std::vector<T> e(cfg.feature_dim);
    for (auto& v : e) v = static_cast<T>(rs.normal());
    eos = Tensor<T>::from({cfg.feature_dim}, std::move(e), true);
    renormalize_eos();
    alpha = Tensor<T>::scalar(T(1), true);
    s_minus = Tensor<T>::scalar(T(0), true);
}

template <typename T>
ParameterSet<T> Recognizer<T>::parameters() const
{
    ParameterSet<T> ps;
    backbone.collect(ps, "backbone.");
    encoder.collect(ps, "encoder.");
    ps.add("eos", eos);
    ps.add("alpha", alpha);
    ps.add("s_minus", s_minus);
    return ps;
}

template <typename T>
void Recognizer<T>::renormalize_eos()
{
    auto v = eos.mutable_data();
    double s = 0;
    for (auto x : v) s += static_cast<double>(x) * static_cast<double>(x);
    const double n = std::sqrt(s);
    if (n <= kNormEpsilon) throw DegenerateInputError("EOS prototype collapsed to zero");
    for (auto& x : v) x = static_cast<T>(static_cast<double>(x) / n);
}

template <typename T>
BaselineRecognizer<T>::BaselineRecognizer(const ModelConfig& cfg, std::vector<CharId> cs, std::uint64_t seed)
    : config(cfg), charset(std::move(cs))
{
    cfg.validate();
    if (charset.empty()) throw ContractError("baseline charset must not be empty");
    Rng rb(derive_seed(seed, 1)), rc(derive_seed(seed, 4));
    backbone = Backbone<T>(cfg, rb);
    const std::size_t k = charset.size() + 2;
    const double std = std::sqrt(1.0 / static_cast<double>(cfg.feature_dim));
    std::vector<T> w(cfg.feature_dim * k);
    for (auto& v : w) v = static_cast<T>(rc.normal() * std);
    classifier = Tensor<T>::from({cfg.feature_dim, k}, std::move(w), true);
    bias = Tensor<T>::zeros({1, k}, true);
}

template <typename T>
Tensor<T> BaselineRecognizer<T>::logits(const Tensor<T>& x) const
{
    auto f = backbone.extract(x);
    auto ones = Tensor<T>::full({f.dim(0), 1}, T(1));
    return add(matmul(f, classifier), matmul(ones, bias));
}

template <typename T>
ParameterSet<T> BaselineRecognizer<T>::parameters() const
{
    ParameterSet<T> ps;
    backbone.collect(ps, "backbone.");
    ps.add("classifier", classifier);
    ps.add("classifier_bias", bias);
    return ps;
}

#define OSTR_INSTANTIATE(T)                                                                   \
    template Tensor<T> line_input<T>(const Image&, std::size_t);                              \
    template Tensor<T> glyph_input<T>(const Image&);                                          \
    template DensityPair<T> density<T>(const Tensor<T>&, const TptLayer<T>&, double);         \
    template Tensor<T> tpt_block<T>(const Tensor<T>&, const TptLayer<T>&, double);            \
    template Tensor<T> cam_attend<T>(const Tensor<T>&, const CamHead<T>&);                    \
    template class Backbone<T>;                                                               \
    template class ProtoEncoder<T>;                                                           \
    template class Recognizer<T>;                                                             \
    template class BaselineRecognizer<T>;

OSTR_INSTANTIATE(float)
OSTR_INSTANTIATE(double)

} // namespace ostr
