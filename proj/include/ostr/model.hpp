#pragma once

#include "ostr/image.hpp"
#include "ostr/nn.hpp"
#include "ostr/tensor.hpp"
#include "ostr/text.hpp"

#include <cstdint>
#include <optional>
#include <vector>

namespace ostr {

enum class Metric {
    ScaledDot,    ///< alpha * F . P
    ScaledCosine, ///< alpha * cos(F, P); rows of F normalized first
};

const char* metric_name(Metric m);
Metric parse_metric(const std::string& s);

struct ModelConfig {
    std::size_t input_width = 160;                       ///< canvas width; lines are zero-padded on the right
    std::vector<std::size_t> backbone_channels{16, 32, 64};
    std::size_t feature_dim = 64;                        ///< d
    std::size_t max_length = 10;                         ///< l_max, timestamps including the EOS step
    std::size_t cam_hidden = 32;
    std::vector<std::size_t> encoder_channels{16, 32, 64, 64};
    double h = 0.5;                                      ///< TPT density offset parameter, b = (1 - h) / h
    bool tpt = true;
    Metric metric = Metric::ScaledDot;
    /// Prototype encoder reuses the backbone (trunk and attention) on the glyph
    /// instead of its own conv blocks.
    bool shared_trunk = false;

    /// Throws ConfigError on an unusable combination.
    void validate() const;
    std::size_t feature_height() const { return 8; }
    std::size_t feature_width() const { return input_width / 4; }
};

/// Offset b added to sigmoid densities. Requires 0 < h <= 1.
double density_offset(double h);

/// Right-pads a 32-row line image with zeros to `width` columns -> [1, 32, width].
template <typename T>
Tensor<T> line_input(const Image& img, std::size_t width);
/// A 32x32 glyph as [1, 32, 32].
template <typename T>
Tensor<T> glyph_input(const Image& img);

template <typename T>
struct TptLayer {
    Conv2d<T> local; ///< 3x3, channel preserving
    Conv2d<T> fc_x;  ///< 1x1 -> 1 channel
    Conv2d<T> fc_y;
};

template <typename T>
struct DensityPair {
    Tensor<T> dx; ///< [H, W]
    Tensor<T> dy;
};

/// D = sigmoid(fc(m_l)) + b for both axes.
template <typename T>
DensityPair<T> density(const Tensor<T>& m_l, const TptLayer<T>& layer, double h);

/// Local conv, density heads, cumulative integration and resampling of the
/// block input. Output has the input's shape.
template <typename T>
Tensor<T> tpt_block(const Tensor<T>& m_i, const TptLayer<T>& layer, double h);

template <typename T>
struct CamHead {
    Conv2d<T> hidden;         ///< 3x3, d -> hidden
    Conv2d<T> logits;         ///< 1x1, hidden -> l_max
    Tensor<T> position_bias;  ///< [l_max, H', W']
};

/// Spatially softmaxed attention maps [l_max, H', W'] over features m[d, H', W'].
template <typename T>
Tensor<T> cam_attend(const Tensor<T>& m, const CamHead<T>& cam);

template <typename T>
class Backbone {
public:
    Backbone() = default;
    Backbone(const ModelConfig& cfg, Rng& rng);

    /// Sequence features [l_max, d] of a [1, 32, input_width] input.
    Tensor<T> extract(const Tensor<T>& x) const;
    Tensor<T> extract(const Image& line) const;
    /// Feature map [d, 8, input_width / 4] before attention.
    Tensor<T> feature_map(const Tensor<T>& x) const;
    /// Conv/TPT stack and head on any [1, 32, W] input -> [d, 8, W / 4].
    Tensor<T> trunk(const Tensor<T>& x) const;

    void collect(ParameterSet<T>& ps, const std::string& prefix) const;

    ModelConfig config;
    Conv2d<T> stem, down1, down2, head;
    TptLayer<T> tpt1, tpt2;
    CamHead<T> cam;
};

template <typename T>
class ProtoEncoder {
public:
    ProtoEncoder() = default;
    ProtoEncoder(const ModelConfig& cfg, Rng& rng);
    /// Shared variant: the backbone reads the glyph as a one-character line
    /// and its first attended feature goes through a d x d projection that
    /// starts at the identity. The backbone's tensors are aliased.
    ProtoEncoder(const ModelConfig& cfg, const Backbone<T>& shared);

    /// Unnormalized embedding [d] of a [1, 32, 32] glyph.
    Tensor<T> encode_raw(const Tensor<T>& glyph) const;
    /// Unit-norm embedding; Strict mode raises DegenerateInputError on a null encoding.
    Tensor<T> encode(const Tensor<T>& glyph, NormMode mode) const;
    Tensor<T> encode(const Image& glyph, NormMode mode) const;

    void collect(ParameterSet<T>& ps, const std::string& prefix) const;

    Conv2d<T> stem;
    std::vector<Conv2d<T>> blocks;
    Linear<T> proj;
    std::optional<Backbone<T>> shared;
};

/// Backbone, prototype encoder, latent EOS prototype, and the scalar
/// similarity scale and reject score.
template <typename T>
class Recognizer {
public:
    Recognizer() = default;
    Recognizer(const ModelConfig& cfg, std::uint64_t seed);

    ParameterSet<T> parameters() const;
    /// Projects the latent EOS vector back onto the unit sphere.
    void renormalize_eos();

    ModelConfig config;
    Backbone<T> backbone;
    ProtoEncoder<T> encoder;
    Tensor<T> eos;     ///< [d]
    Tensor<T> alpha;   ///< [1]
    Tensor<T> s_minus; ///< [1]
};

/// Conventional closed-vocabulary recognizer: same backbone, linear classifier
/// over a fixed charset plus EOS and UNK rows.
template <typename T>
class BaselineRecognizer {
public:
    BaselineRecognizer() = default;
    BaselineRecognizer(const ModelConfig& cfg, std::vector<CharId> charset, std::uint64_t seed);

    /// Logits [l_max, |charset| + 2].
    Tensor<T> logits(const Tensor<T>& x) const;
    ParameterSet<T> parameters() const;

    ModelConfig config;
    std::vector<CharId> charset;
    Backbone<T> backbone;
    Tensor<T> classifier; ///< [d, |charset| + 2]
    Tensor<T> bias;       ///< [1, |charset| + 2]
};

} // namespace ostr
