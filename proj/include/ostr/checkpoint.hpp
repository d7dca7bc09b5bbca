#pragma once

#include "ostr/bank.hpp"
#include "ostr/config.hpp"
#include "ostr/model.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace ostr {

/// Ordered named sections, each either a shaped little-endian f32 array or a
/// raw byte string. Serialized as magic "OSTR1", a u32 section count, then per
/// section: u32 name length, name, u8 kind, and the payload.
class Container {
public:
    void put_array(const std::string& name, const Shape& shape, std::span<const float> values);
    void put_bytes(const std::string& name, std::string bytes);

    bool has(const std::string& name) const;
    std::vector<std::string> names() const;
    /// LoadError when missing or of the other kind.
    const Shape& shape(const std::string& name) const;
    const std::vector<float>& array(const std::string& name) const;
    const std::string& bytes(const std::string& name) const;

    std::string encode() const;
    static Container decode(const std::string& blob, const std::string& origin = "container");
    void save(const std::filesystem::path& path) const;
    static Container load(const std::filesystem::path& path);

private:
    struct Section {
        std::string name;
        bool is_array = true;
        Shape shape;
        std::vector<float> values;
        std::string bytes;
    };
    const Section& find(const std::string& name) const;
    std::vector<Section> sections_;
};

struct CheckpointMeta {
    std::string kind = "prototype"; ///< prototype | baseline
    RunConfig config;
    std::string rng_state;
    std::uint64_t iteration = 0;
};

void save_checkpoint(const std::filesystem::path& path, const Recognizer<float>& model, const CheckpointMeta& meta);
void save_checkpoint(const std::filesystem::path& path, const BaselineRecognizer<float>& model,
                     const CheckpointMeta& meta);

struct LoadedCheckpoint {
    CheckpointMeta meta;
    std::optional<Recognizer<float>> model;
    std::optional<BaselineRecognizer<float>> baseline;
};

/// Every parameter of the architecture described by the stored config must be
/// present with a matching shape; stray sections are a LoadError too.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

void save_bank(const std::filesystem::path& path, const PrototypeBank& bank);
PrototypeBank load_bank(const std::filesystem::path& path);

} // namespace ostr
