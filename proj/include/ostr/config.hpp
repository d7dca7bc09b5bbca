#pragma once

#include "ostr/atlas.hpp"
#include "ostr/metrics.hpp"
#include "ostr/model.hpp"
#include "ostr/synth.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace ostr {

/// Every tunable of a run. Loaded from a flat key=value file; unknown keys
/// are rejected. Character-set fields accept `all`, `first:N`, `last:N`,
/// `range:A:B` (half-open, indices into the sorted atlas charset) or
/// `chars:<utf8>`.
struct RunConfig {
    ModelConfig model;
    std::uint64_t seed = 1;
    std::size_t threads = 1;

    // Glyph source: `procedural` or a manifest path.
    std::string atlas = "procedural";
    std::uint64_t alphabet_seed = 1;
    std::size_t alphabet_classes = 60;
    std::size_t alphabet_cases = 1;
    std::string train_charset = "all";

    // Training data: `synthetic` (generated on the fly) or a dataset directory.
    std::string train_data = "synthetic";
    std::size_t samples_per_epoch = 3200; ///< synthetic source only
    std::size_t min_len = 1;
    std::size_t max_len = 5;
    Distortion distortion;

    std::size_t epochs = 10;
    std::size_t batch_size = 16;
    double lr = 0.01;
    std::string lr_schedule = "cosine"; ///< cosine | constant
    double momentum = 0.9;
    double weight_decay = 0.0;
    double grad_clip = 5.0; ///< global gradient norm cap, 0 disables
    double f_s = 0.8;
    std::size_t b_max = 512;
    double lambda_emb = 0.3;
    bool emb = true;
    double m_p = 0.14;
    std::string margin_file; ///< overrides m_p when set
    std::size_t checkpoint_every = 0;

    // Evaluation.
    std::string test_charset = "all";
    SplitMode split_mode = SplitMode::GZSL;
    SplitParams split;
    std::uint64_t split_seed = 1;

    // Dataset synthesis.
    std::size_t synth_count = 100;
    std::string synth_charset = "all";

    void validate() const;
};

RunConfig parse_config(const std::string& text, const std::string& origin = "config");
RunConfig load_config(const std::filesystem::path& path);
/// Canonical key=value text; parse_config(serialize_config(c)) reproduces c.
std::string serialize_config(const RunConfig& c);

/// Resolves a character-set expression against the sorted `universe`.
std::vector<CharId> resolve_charset(const std::string& spec, const std::vector<CharId>& universe);

TemplateAtlas load_run_atlas(const RunConfig& c);

} // namespace ostr
