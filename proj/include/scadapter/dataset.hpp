#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "scadapter/extractor.hpp"
#include "scadapter/image.hpp"
#include "scadapter/training.hpp"

namespace scadapter {

struct StyleTaxonomy {
    static constexpr const char* kVersion = "scadapter.taxonomy/1";
    // The source enumerates fourteen names under a count of fifteen; only the
    // listed names are stored and the gap is reported, not filled.
    static constexpr int kDeclaredCount = 15;

    static const std::vector<std::string>& canonical();
    static const std::vector<std::string>& synthetic();  // "synthetic/..." transforms
    static bool is_synthetic(const std::string& label);
    static bool contains(const std::string& label);
    static int missing_canonical_count() { return kDeclaredCount - static_cast<int>(canonical().size()); }
};

// Deterministic luma-vs-chroma transforms standing in for generated style variants.
//   synthetic/identity, synthetic/hue120, synthetic/hue240 (chroma rotation at fixed luma),
//   synthetic/sepia, synthetic/posterize, synthetic/contrast, synthetic/noise (seeded)
Image apply_synthetic_style(const Image& image, const std::string& style, std::uint64_t seed);

// Procedural content scene with a caption describing it.
struct Scene {
    Image image;
    std::string caption;
};
Scene generate_scene(std::uint64_t seed, int size);

enum class ImageKind { content, style, stylized };
std::string to_string(ImageKind k);
ImageKind image_kind_from_string(const std::string& s);

struct ImageProvenance {
    std::string source_id;  // image the transform was applied to
    std::string transform;  // synthetic style label
    std::uint64_t seed = 0;
};

struct ImageRecord {
    std::string id;
    std::string path;  // relative to the manifest directory
    ImageKind kind = ImageKind::content;
    std::string caption;
    std::optional<ImageProvenance> provenance;
};

struct DatasetManifest {
    static constexpr const char* kFormat = "scadapter.manifest/1";

    std::string taxonomy_version = StyleTaxonomy::kVersion;
    std::vector<ImageRecord> images;
    std::vector<ContentGroup> groups;
    std::vector<TripletRecord> triplets;

    const ImageRecord* find(const std::string& id) const;
    void append(const DatasetManifest& other);
};

// One record per line: a header, then image, group and triplet records.
void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);
// FormatError naming the line on malformed input.
DatasetManifest read_manifest(const std::filesystem::path& path);

struct ManifestViolation {
    std::string row;   // e.g. "image[3]" or "triplet[0]"
    std::string rule;  // short rule name
    std::string message;
};
// Empty iff every invariant holds. base_dir resolves relative image paths.
std::vector<ManifestViolation> validate_manifest(const DatasetManifest& manifest,
                                                 const std::filesystem::path& base_dir);

struct ContentSource {
    std::string id;
    Image image;
    std::string caption;
};

// Writes every content image and its variant in each style below out_dir/images and
// returns the manifest fragment (one group per content).
DatasetManifest build_content_groups(const std::vector<ContentSource>& contents, const std::vector<std::string>& styles,
                                     std::uint64_t seed, const std::filesystem::path& out_dir);

// For each content and each non-identity style in its group, pairs it with the same
// style's variant of another content as the reference: (I_C, I_S, I_T = styled I_C).
std::vector<TripletRecord> build_triplets(const DatasetManifest& manifest, std::uint64_t seed);

struct DatasetConfig {
    int contents = 8;
    int image_size = 16;
    std::vector<std::string> styles = StyleTaxonomy::synthetic();
    std::uint64_t seed = 0;

    json to_json() const;
    static DatasetConfig from_json(const json& j);
};

// Procedural contents, their groups and triplets, written with manifest.jsonl.
DatasetManifest build_dataset(const DatasetConfig& config, const std::filesystem::path& out_dir);

// Loads the images of a manifest (paths relative to base_dir).
Image load_manifest_image(const DatasetManifest& manifest, const std::string& id, const std::filesystem::path& base_dir);

// One-time pretraining of the bundled encoder, standing in for a joint image-text
// encoder: every synthetic variant of a procedural scene is regressed (ridge, closed
// form) onto a caption-like code, content code + style code, with both codes drawn
// at random per content and per synthetic style. Only the final projector is fitted.
struct EncoderPretrainConfig {
    std::uint64_t seed = 0;  // conv weights and codes
    int contents = 128;
    int image_size = 16;
    double ridge = 1.0;
    double style_code_scale = 1.0;
    std::uint64_t scene_seed = 1ULL << 40;  // disjoint from dataset and fixture scenes

    json to_json() const;
};

ToyConvEncoder pretrain_toy_encoder(const EncoderPretrainConfig& config = {});

std::vector<ContentGroupImages> load_content_groups(const DatasetManifest& manifest,
                                                    const std::filesystem::path& base_dir);

}  // namespace scadapter
