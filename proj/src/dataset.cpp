#include "scadapter/dataset.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <set>

#include "scadapter/errors.hpp"
#include "scadapter/rng.hpp"

namespace scadapter {

namespace {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (salt + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

std::uint64_t hash_string(const std::string& s) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

constexpr std::array<double, 3> kLuma{0.299, 0.587, 0.114};

// Rotates the chroma offset (rgb - luma) within the plane orthogonal to the luma
// weights, then shrinks it until the pixel fits the gamut. Luma is unchanged up to
// the final rounding.
Image rotate_hue(const Image& src, double degrees) {
    const Eigen::Vector3d w(kLuma[0], kLuma[1], kLuma[2]);
    const Eigen::Vector3d u1 = Eigen::Vector3d(w.y(), -w.x(), 0.0).normalized();
    const Eigen::Vector3d u2 = w.cross(u1).normalized();
    const double th = degrees * std::numbers::pi / 180.0;
    const double c = std::cos(th), s = std::sin(th);
    Image out(src.width(), src.height());
    for (int y = 0; y < src.height(); ++y)
        for (int x = 0; x < src.width(); ++x) {
            const Eigen::Vector3d rgb(src.at(y, x, 0), src.at(y, x, 1), src.at(y, x, 2));
            const double lum = w.dot(rgb);
            const Eigen::Vector3d d = rgb - Eigen::Vector3d::Constant(lum);
            const double a = d.dot(u1), b = d.dot(u2);
            const Eigen::Vector3d r = (c * a - s * b) * u1 + (s * a + c * b) * u2;
            double k = 1.0;
            for (int ch = 0; ch < 3; ++ch) {
                if (lum + r(ch) > 255.0) k = std::min(k, (255.0 - lum) / r(ch));
                if (lum + r(ch) < 0.0) k = std::min(k, -lum / r(ch));
            }
            for (int ch = 0; ch < 3; ++ch) out.at(y, x, ch) = clamp_to_byte(lum + k * r(ch));
        }
    return out;
}

template <typename F>
Image map_pixels(const Image& src, F f) {
    Image out(src.width(), src.height());
    for (int y = 0; y < src.height(); ++y)
        for (int x = 0; x < src.width(); ++x) {
            const std::array<double, 3> in{double(src.at(y, x, 0)), double(src.at(y, x, 1)), double(src.at(y, x, 2))};
            const std::array<double, 3> v = f(in);
            for (int c = 0; c < 3; ++c) out.at(y, x, c) = clamp_to_byte(v[c]);
        }
    return out;
}

}  // namespace

// ---------------------------------------------------------------- taxonomy

const std::vector<std::string>& StyleTaxonomy::canonical() {
    static const std::vector<std::string> names{"abstract",    "anime",       "cubism", "impressionism", "modern art",
                                                "paint",       "realism",     "romanticism",
                                                "colored sketch", "sketch",   "sunshine", "winter", "autumn", "dusk"};
    return names;
}

const std::vector<std::string>& StyleTaxonomy::synthetic() {
    static const std::vector<std::string> names{"synthetic/identity", "synthetic/hue120",   "synthetic/hue240",
                                                "synthetic/sepia",    "synthetic/posterize", "synthetic/contrast",
                                                "synthetic/noise"};
    return names;
}

bool StyleTaxonomy::is_synthetic(const std::string& label) {
    const auto& s = synthetic();
    return std::find(s.begin(), s.end(), label) != s.end();
}

bool StyleTaxonomy::contains(const std::string& label) {
    const auto& c = canonical();
    return is_synthetic(label) || std::find(c.begin(), c.end(), label) != c.end();
}

Image apply_synthetic_style(const Image& image, const std::string& style, std::uint64_t seed) {
    if (style == "synthetic/identity") return image;
    if (style == "synthetic/hue120") return rotate_hue(image, 120.0);
    if (style == "synthetic/hue240") return rotate_hue(image, 240.0);
    if (style == "synthetic/sepia")
        return map_pixels(image, [](const std::array<double, 3>& p) {
            return std::array<double, 3>{0.393 * p[0] + 0.769 * p[1] + 0.189 * p[2],
                                         0.349 * p[0] + 0.686 * p[1] + 0.168 * p[2],
                                         0.272 * p[0] + 0.534 * p[1] + 0.131 * p[2]};
        });
    if (style == "synthetic/posterize")
        return map_pixels(image, [](const std::array<double, 3>& p) {
            std::array<double, 3> o{};
            for (int c = 0; c < 3; ++c) o[c] = std::floor(p[c] / 64.0) * 85.0;
            return o;
        });
    if (style == "synthetic/contrast")
        return map_pixels(image, [](const std::array<double, 3>& p) {
            std::array<double, 3> o{};
            for (int c = 0; c < 3; ++c) o[c] = 255.0 / (1.0 + std::exp(-(p[c] - 128.0) / 24.0));
            return o;
        });
    if (style == "synthetic/noise") {
        Rng rng(seed);
        Image out(image.width(), image.height());
        for (int y = 0; y < image.height(); ++y)
            for (int x = 0; x < image.width(); ++x)
                for (int c = 0; c < 3; ++c) out.at(y, x, c) = clamp_to_byte(image.at(y, x, c) + 24.0 * rng.normal());
        return out;
    }
    throw InputError("unknown synthetic style '" + style + "'");
}

// ---------------------------------------------------------------- scenes

namespace {

struct NamedColor {
    const char* name;
    std::array<double, 3> rgb;
};

constexpr std::array<NamedColor, 9> kPalette{{{"red", {220, 40, 40}},
                                              {"green", {40, 180, 60}},
                                              {"blue", {40, 70, 220}},
                                              {"yellow", {235, 215, 50}},
                                              {"cyan", {50, 200, 210}},
                                              {"magenta", {200, 50, 190}},
                                              {"orange", {240, 140, 30}},
                                              {"white", {240, 240, 240}},
                                              {"black", {20, 20, 20}}}};

constexpr std::array<const char*, 4> kShapes{"circle", "square", "triangle", "stripe"};

bool inside(int shape, double x, double y, double cx, double cy, double r) {
    switch (shape) {
        case 0: return (x - cx) * (x - cx) + (y - cy) * (y - cy) <= r * r;
        case 1: return std::abs(x - cx) <= r && std::abs(y - cy) <= r;
        case 2: return y <= cy + r && y >= cy - r && std::abs(x - cx) <= (y - (cy - r)) * 0.5;
        default: return std::abs(y - cy) <= r * 0.35;
    }
}

}  // namespace

Scene generate_scene(std::uint64_t seed, int size) {
    if (size < 4) throw InputError("scene size must be at least 4");
    Rng rng(seed);
    const auto bg = rng.below(kPalette.size());
    auto bg2 = rng.below(kPalette.size());
    const bool vertical = rng.bernoulli(0.5);
    const int count = 1 + static_cast<int>(rng.below(2));
    struct Shape {
        int kind;
        std::size_t color;
        double cx, cy, r;
    };
    std::vector<Shape> shapes;
    for (int i = 0; i < count; ++i) {
        Shape s;
        s.kind = static_cast<int>(rng.below(kShapes.size()));
        do s.color = rng.below(kPalette.size());
        while (s.color == bg);
        s.cx = rng.uniform(0.2, 0.8) * size;
        s.cy = rng.uniform(0.2, 0.8) * size;
        s.r = rng.uniform(0.15, 0.3) * size;
        shapes.push_back(s);
    }
    Image img(size, size);
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            const double f = (vertical ? y : x) / static_cast<double>(size - 1) * 0.5;
            std::array<double, 3> px{};
            for (int c = 0; c < 3; ++c) px[c] = (1 - f) * kPalette[bg].rgb[c] + f * kPalette[bg2].rgb[c];
            for (const auto& s : shapes)
                if (inside(s.kind, x + 0.5, y + 0.5, s.cx, s.cy, s.r)) px = kPalette[s.color].rgb;
            for (int c = 0; c < 3; ++c) img.at(y, x, c) = clamp_to_byte(px[c]);
        }
    std::string caption = "a";
    for (std::size_t i = 0; i < shapes.size(); ++i) {
        if (i > 0) caption += " and a";
        caption += std::string(" ") + kPalette[shapes[i].color].name + " " + kShapes[static_cast<std::size_t>(shapes[i].kind)];
    }
    caption += std::string(" on a ") + kPalette[bg].name + " background";
    return {std::move(img), caption};
}

// ---------------------------------------------------------------- manifest

std::string to_string(ImageKind k) {
    switch (k) {
        case ImageKind::content: return "content";
        case ImageKind::style: return "style";
        case ImageKind::stylized: return "stylized";
    }
    return "content";
}

ImageKind image_kind_from_string(const std::string& s) {
    if (s == "content") return ImageKind::content;
    if (s == "style") return ImageKind::style;
    if (s == "stylized") return ImageKind::stylized;
    throw FormatError("unknown image kind '" + s + "'");
}

const ImageRecord* DatasetManifest::find(const std::string& id) const {
    for (const auto& r : images)
        if (r.id == id) return &r;
    return nullptr;
}

void DatasetManifest::append(const DatasetManifest& other) {
    images.insert(images.end(), other.images.begin(), other.images.end());
    groups.insert(groups.end(), other.groups.begin(), other.groups.end());
    triplets.insert(triplets.end(), other.triplets.begin(), other.triplets.end());
}

void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& path) {
    std::string out;
    auto line = [&](const json& j) { out += j.dump() + "\n"; };
    line({{"record", "header"},
          {"format", DatasetManifest::kFormat},
          {"taxonomy_version", manifest.taxonomy_version},
          {"taxonomy_declared_count", StyleTaxonomy::kDeclaredCount},
          {"taxonomy_listed_count", StyleTaxonomy::canonical().size()}});
    for (const auto& r : manifest.images) {
        json j = {{"record", "image"}, {"id", r.id}, {"path", r.path}, {"kind", to_string(r.kind)}};
        if (!r.caption.empty()) j["caption"] = r.caption;
        if (r.provenance)
            j["provenance"] = {{"source_id", r.provenance->source_id},
                               {"transform", r.provenance->transform},
                               {"seed", r.provenance->seed}};
        line(j);
    }
    for (const auto& g : manifest.groups)
        line({{"record", "group"},
              {"group_id", g.group_id},
              {"variant_image_ids", g.variant_image_ids},
              {"style_labels", g.style_labels}});
    for (const auto& t : manifest.triplets)
        line({{"record", "triplet"},
              {"content_image_id", t.content_image_id},
              {"style_image_id", t.style_image_id},
              {"stylized_image_id", t.stylized_image_id},
              {"style_label", t.style_label}});
    write_text_file(out, path);
}

DatasetManifest read_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open manifest " + path.string());
    DatasetManifest m;
    std::string text;
    int line_no = 0;
    bool header = false;
    while (std::getline(in, text)) {
        ++line_no;
        if (text.empty()) continue;
        const std::string where = path.string() + ":" + std::to_string(line_no);
        try {
            const json j = json::parse(text);
            const std::string kind = j.at("record");
            if (kind == "header") {
                if (j.at("format").get<std::string>() != DatasetManifest::kFormat)
                    throw FormatError(where + ": unsupported manifest format");
                m.taxonomy_version = j.at("taxonomy_version");
                header = true;
            } else if (kind == "image") {
                ImageRecord r;
                r.id = j.at("id");
                r.path = j.at("path");
                r.kind = image_kind_from_string(j.at("kind"));
                r.caption = j.value("caption", "");
                if (j.contains("provenance")) {
                    const auto& p = j.at("provenance");
                    r.provenance = ImageProvenance{p.at("source_id"), p.at("transform"), p.at("seed")};
                }
                m.images.push_back(std::move(r));
            } else if (kind == "group") {
                m.groups.push_back({j.at("group_id"), j.at("variant_image_ids"), j.at("style_labels")});
            } else if (kind == "triplet") {
                m.triplets.push_back(
                    {j.at("content_image_id"), j.at("style_image_id"), j.at("stylized_image_id"), j.at("style_label")});
            } else {
                throw FormatError(where + ": unknown record type '" + kind + "'");
            }
        } catch (const json::exception& e) {
            throw FormatError(where + ": " + e.what());
        } catch (const FormatError& e) {
            const std::string msg = e.what();
            throw FormatError(msg.rfind(where, 0) == 0 ? msg : where + ": " + msg);
        }
    }
    if (!header) throw FormatError(path.string() + ":1: missing manifest header");
    return m;
}

std::vector<ManifestViolation> validate_manifest(const DatasetManifest& manifest,
                                                 const std::filesystem::path& base_dir) {
    std::vector<ManifestViolation> out;
    std::map<std::string, std::size_t> first;
    for (std::size_t i = 0; i < manifest.images.size(); ++i) {
        const auto& r = manifest.images[i];
        const std::string row = "image[" + std::to_string(i) + "]";
        if (!first.emplace(r.id, i).second)
            out.push_back({row, "unique-id", "duplicate image id '" + r.id + "' (first at image[" +
                                                 std::to_string(first[r.id]) + "])"});
        if (!std::filesystem::exists(base_dir / r.path))
            out.push_back({row, "path-exists", "missing file " + (base_dir / r.path).string()});
        if (r.provenance && !StyleTaxonomy::contains(r.provenance->transform))
            out.push_back({row, "known-style", "unknown transform '" + r.provenance->transform + "'"});
    }
    auto present = [&](const std::string& id) { return first.count(id) != 0; };
    for (std::size_t i = 0; i < manifest.groups.size(); ++i) {
        const auto& g = manifest.groups[i];
        const std::string row = "group[" + std::to_string(i) + "]";
        try {
            g.validate();
        } catch (const Error& e) {
            out.push_back({row, "group-shape", e.what()});
        }
        for (const auto& id : g.variant_image_ids)
            if (!present(id)) out.push_back({row, "id-present", "unknown variant id '" + id + "'"});
    }
    for (std::size_t i = 0; i < manifest.triplets.size(); ++i) {
        const auto& t = manifest.triplets[i];
        const std::string row = "triplet[" + std::to_string(i) + "]";
        bool ok = true;
        for (const auto* id : {&t.content_image_id, &t.style_image_id, &t.stylized_image_id})
            if (!present(*id)) {
                out.push_back({row, "id-present", "unknown image id '" + *id + "'"});
                ok = false;
            }
        if (!ok) continue;
        const auto& stylized = manifest.images[first[t.stylized_image_id]];
        if (!stylized.provenance || stylized.provenance->transform != t.style_label ||
            stylized.provenance->source_id != t.content_image_id)
            out.push_back({row, "style-provenance",
                           "stylized image '" + t.stylized_image_id + "' was not produced by applying '" +
                               t.style_label + "' to '" + t.content_image_id + "'"});
    }
    return out;
}

// ---------------------------------------------------------------- synthesis

namespace {

std::string slug(const std::string& style) {
    std::string s = style;
    for (auto& c : s)
        if (c == '/' || c == ' ') c = '_';
    return s;
}

}  // namespace

DatasetManifest build_content_groups(const std::vector<ContentSource>& contents, const std::vector<std::string>& styles,
                                     std::uint64_t seed, const std::filesystem::path& out_dir) {
    if (contents.empty()) throw InputError("build_content_groups needs at least one content image");
    if (styles.size() < 2) throw InputError("build_content_groups needs at least two styles");
    for (const auto& s : styles)
        if (!StyleTaxonomy::is_synthetic(s)) throw InputError("unknown synthetic style '" + s + "'");
    DatasetManifest m;
    for (const auto& c : contents) {
        const std::string content_path = "images/" + c.id + ".ppm";
        write_ppm(c.image, out_dir / content_path);
        m.images.push_back({c.id, content_path, ImageKind::content, c.caption, std::nullopt});
        ContentGroup g{c.id, {}, {}};
        for (const auto& style : styles) {
            const std::uint64_t s = mix_seed(seed, hash_string(c.id + "|" + style));
            const std::string id = c.id + "__" + slug(style);
            const std::string path = "images/" + id + ".ppm";
            write_ppm(apply_synthetic_style(c.image, style, s), out_dir / path);
            m.images.push_back({id, path, ImageKind::stylized, c.caption, ImageProvenance{c.id, style, s}});
            g.variant_image_ids.push_back(id);
            g.style_labels.push_back(style);
        }
        m.groups.push_back(std::move(g));
    }
    return m;
}

std::vector<TripletRecord> build_triplets(const DatasetManifest& manifest, std::uint64_t seed) {
    Rng rng(mix_seed(seed, 0x7472));
    std::vector<TripletRecord> out;
    const auto& groups = manifest.groups;
    if (groups.size() < 2) return out;
    for (std::size_t gi = 0; gi < groups.size(); ++gi) {
        const auto& g = groups[gi];
        for (std::size_t v = 0; v < g.style_labels.size(); ++v) {
            const auto& style = g.style_labels[v];
            if (style == "synthetic/identity") continue;
            std::size_t other = rng.below(groups.size() - 1);
            if (other >= gi) ++other;
            const auto& og = groups[other];
            const auto it = std::find(og.style_labels.begin(), og.style_labels.end(), style);
            if (it == og.style_labels.end()) continue;
            out.push_back({g.group_id, og.variant_image_ids[static_cast<std::size_t>(it - og.style_labels.begin())],
                           g.variant_image_ids[v], style});
        }
    }
    return out;
}

json DatasetConfig::to_json() const {
    return {{"contents", contents}, {"image_size", image_size}, {"styles", styles}, {"seed", seed}};
}

DatasetConfig DatasetConfig::from_json(const json& j) {
    DatasetConfig c;
    try {
        c.contents = j.value("contents", c.contents);
        c.image_size = j.value("image_size", c.image_size);
        if (j.contains("styles")) c.styles = j.at("styles").get<std::vector<std::string>>();
        c.seed = j.value("seed", c.seed);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("malformed dataset config: ") + e.what());
    }
    if (c.contents < 1) throw ConfigError("dataset needs at least one content");
    if (c.image_size < 4) throw ConfigError("image_size must be at least 4");
    return c;
}

DatasetManifest build_dataset(const DatasetConfig& config, const std::filesystem::path& out_dir) {
    std::vector<ContentSource> contents;
    for (int i = 0; i < config.contents; ++i) {
        char id[32];
        std::snprintf(id, sizeof id, "content_%03d", i);
        auto scene = generate_scene(mix_seed(config.seed, static_cast<std::uint64_t>(i)), config.image_size);
        contents.push_back({id, std::move(scene.image), std::move(scene.caption)});
    }
    DatasetManifest m = build_content_groups(contents, config.styles, config.seed, out_dir);
    m.triplets = build_triplets(m, config.seed);
    write_manifest(m, out_dir / "manifest.jsonl");
    return m;
}

Image load_manifest_image(const DatasetManifest& manifest, const std::string& id,
                          const std::filesystem::path& base_dir) {
    const auto* r = manifest.find(id);
    if (!r) throw DataError("manifest has no image '" + id + "'");
    return read_ppm(base_dir / r->path);
}

std::vector<ContentGroupImages> load_content_groups(const DatasetManifest& manifest,
                                                    const std::filesystem::path& base_dir) {
    std::vector<ContentGroupImages> out;
    for (const auto& g : manifest.groups) {
        ContentGroupImages gi{g, {}};
        for (const auto& id : g.variant_image_ids) gi.variants.push_back(load_manifest_image(manifest, id, base_dir));
        out.push_back(std::move(gi));
    }
    return out;
}


// ---------------------------------------------------------------- encoder pretraining

json EncoderPretrainConfig::to_json() const {
    return {{"seed", seed},   {"contents", contents},       {"image_size", image_size},
            {"ridge", ridge}, {"style_code_scale", style_code_scale}, {"scene_seed", scene_seed}};
}

ToyConvEncoder pretrain_toy_encoder(const EncoderPretrainConfig& config) {
    if (config.contents < 2 || config.image_size < 4 || config.ridge <= 0.0 || config.style_code_scale < 0.0)
        throw ConfigError("invalid encoder pretraining config");
    ToyConvEncoder enc(config.seed);
    const auto& styles = StyleTaxonomy::synthetic();
    const Eigen::Index d = enc.penultimate_dim(), e = ToyConvEncoder::kEmbedDim;
    const Eigen::Index rows = static_cast<Eigen::Index>(config.contents) * static_cast<Eigen::Index>(styles.size());

    Rng rng(mix_seed(config.seed, 0x70726574ULL));
    std::vector<Eigen::VectorXd> style_codes;
    for (std::size_t s = 0; s < styles.size(); ++s) style_codes.push_back(rng.normal_vector(e, config.style_code_scale));

    // Design matrix with a trailing bias column; targets are the caption codes.
    Eigen::MatrixXd x(rows, d + 1), y(rows, e);
    Eigen::Index r = 0;
    for (int c = 0; c < config.contents; ++c) {
        const std::uint64_t scene_seed = config.scene_seed + static_cast<std::uint64_t>(c);
        const Image base = generate_scene(scene_seed, config.image_size).image;
        const Eigen::VectorXd content_code = rng.normal_vector(e);
        for (std::size_t s = 0; s < styles.size(); ++s, ++r) {
            x.row(r) << enc.penultimate(apply_synthetic_style(base, styles[s], scene_seed)).transpose(), 1.0;
            y.row(r) = (content_code + style_codes[s]).transpose();
        }
    }
    Eigen::MatrixXd gram = x.transpose() * x;
    gram.diagonal().head(d).array() += config.ridge;  // bias is not penalised
    const Eigen::MatrixXd w = gram.ldlt().solve(x.transpose() * y);

    ProjectorWeights p;
    p.matrix = w.topRows(d);
    p.bias = w.row(d).transpose();
    enc.set_final_projector(std::move(p), "/pretrained");
    return enc;
}

}  // namespace scadapter
