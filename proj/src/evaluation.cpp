#include "scadapter/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include "scadapter/errors.hpp"

namespace scadapter {

double content_similarity(const ContentStyleExtractor& extractor, const Image& content, const Image& stylized) {
    return cosine_similarity(extractor.extract_content(content).values, extractor.extract_content(stylized).values);
}

double style_similarity(const ContentStyleExtractor& extractor, const Image& style, const Image& stylized) {
    return cosine_similarity(extractor.extract_style(style).values, extractor.extract_style(stylized).values);
}

double text_alignment(const TextEncoder* encoder, const ImageBackbone& backbone, const std::string& prompt,
                      const Image& image) {
    if (!encoder) throw ConfigError("text alignment requires a text encoder");
    if (encoder->embed_dim() != backbone.embed_dim())
        throw ConfigError("text encoder " + encoder->id() + " does not share the image embedding space");
    return cosine_similarity(encoder->pooled(prompt), embed_image(backbone, image).values);
}

void LabeledEmbeddingSet::validate() const {
    if (vectors.rows() != static_cast<Eigen::Index>(labels.size()))
        throw InputError("embedding set has " + std::to_string(vectors.rows()) + " vectors but " +
                         std::to_string(labels.size()) + " labels");
    if (!vectors.allFinite()) throw InputError("embedding set contains non-finite values");
    std::vector<std::string> names;
    label_indices(&names);
    if (names.size() < 2) throw MetricError("clustering metrics need at least two distinct labels");
}

std::vector<int> LabeledEmbeddingSet::label_indices(std::vector<std::string>* names) const {
    std::map<std::string, int> ids;
    std::vector<int> out;
    out.reserve(labels.size());
    for (const auto& l : labels) {
        auto [it, inserted] = ids.try_emplace(l, static_cast<int>(ids.size()));
        out.push_back(it->second);
    }
    if (names) {
        names->assign(ids.size(), {});
        for (const auto& [name, id] : ids) (*names)[static_cast<std::size_t>(id)] = name;
    }
    return out;
}

double silhouette(const LabeledEmbeddingSet& set) {
    set.validate();
    std::vector<std::string> names;
    const auto label = set.label_indices(&names);
    const auto k = names.size();
    const Eigen::Index m = set.vectors.rows();
    std::vector<int> counts(k, 0);
    for (int l : label) ++counts[static_cast<std::size_t>(l)];

    double total = 0.0;
    std::vector<double> sums(k);
    for (Eigen::Index i = 0; i < m; ++i) {
        std::fill(sums.begin(), sums.end(), 0.0);
        for (Eigen::Index j = 0; j < m; ++j) {
            if (j == i) continue;
            sums[static_cast<std::size_t>(label[j])] += (set.vectors.row(i) - set.vectors.row(j)).norm();
        }
        const auto own = static_cast<std::size_t>(label[i]);
        if (counts[own] < 2) continue;
        const double a = sums[own] / (counts[own] - 1);
        double b = std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < k; ++c)
            if (c != own) b = std::min(b, sums[c] / counts[c]);
        const double denom = std::max(a, b);
        if (denom > 0.0) total += (b - a) / denom;
    }
    return total / static_cast<double>(m);
}

double calinski_harabasz(const LabeledEmbeddingSet& set) {
    set.validate();
    std::vector<std::string> names;
    const auto label = set.label_indices(&names);
    const auto k = static_cast<Eigen::Index>(names.size());
    const Eigen::Index m = set.vectors.rows();
    if (m <= k) throw MetricError("Calinski-Harabasz needs more points than clusters");

    const Eigen::RowVectorXd global = set.vectors.colwise().mean();
    Eigen::MatrixXd centroids = Eigen::MatrixXd::Zero(k, set.vectors.cols());
    Eigen::VectorXd counts = Eigen::VectorXd::Zero(k);
    for (Eigen::Index i = 0; i < m; ++i) {
        centroids.row(label[i]) += set.vectors.row(i);
        counts(label[i]) += 1.0;
    }
    for (Eigen::Index c = 0; c < k; ++c) centroids.row(c) /= counts(c);

    double between = 0.0;
    for (Eigen::Index c = 0; c < k; ++c) between += counts(c) * (centroids.row(c) - global).squaredNorm();
    double within = 0.0;
    for (Eigen::Index i = 0; i < m; ++i) within += (set.vectors.row(i) - centroids.row(label[i])).squaredNorm();
    if (!(within > 0.0)) throw MetricError("Calinski-Harabasz undefined: within-cluster dispersion is zero");
    return (between / static_cast<double>(k - 1)) / (within / static_cast<double>(m - k));
}

Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m) {
    const Eigen::MatrixXd sym = 0.5 * (m + m.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(sym);
    if (eig.info() != Eigen::Success) throw MetricError("eigendecomposition failed");
    Eigen::VectorXd values = eig.eigenvalues();
    const double scale = std::max(1.0, values.cwiseAbs().maxCoeff());
    for (Eigen::Index i = 0; i < values.size(); ++i) {
        if (values(i) < -1e-8 * scale)
            throw MetricError("matrix is not positive semidefinite (eigenvalue " + std::to_string(values(i)) + ")");
        values(i) = std::sqrt(std::max(values(i), 0.0));
    }
    return eig.eigenvectors() * values.asDiagonal() * eig.eigenvectors().transpose();
}

namespace {

void sample_moments(const Eigen::MatrixXd& x, Eigen::VectorXd& mean, Eigen::MatrixXd& cov) {
    if (x.rows() < 2) throw InputError("Frechet distance needs at least two samples per set");
    if (!x.allFinite()) throw InputError("Frechet distance input contains non-finite values");
    mean = x.colwise().mean().transpose();
    const Eigen::MatrixXd centered = x.rowwise() - mean.transpose();
    cov = centered.transpose() * centered / static_cast<double>(x.rows() - 1);
}

}  // namespace

double frechet_distance(const Eigen::MatrixXd& set_a, const Eigen::MatrixXd& set_b) {
    if (set_a.cols() != set_b.cols()) throw InputError("Frechet distance sets differ in dimension");
    Eigen::VectorXd mu_a, mu_b;
    Eigen::MatrixXd cov_a, cov_b;
    sample_moments(set_a, mu_a, cov_a);
    sample_moments(set_b, mu_b, cov_b);
    const Eigen::MatrixXd root_a = psd_sqrt(cov_a);
    const double cross = psd_sqrt(root_a * cov_b * root_a).trace();
    const double d = (mu_a - mu_b).squaredNorm() + cov_a.trace() + cov_b.trace() - 2.0 * cross;
    return std::max(d, 0.0);
}

double perceptual_distance(const ImageBackbone& backbone, const Image& a, const Image& b) {
    const auto fa = backbone.layer_features(a);
    const auto fb = backbone.layer_features(b);
    if (fa.empty() || fa.size() != fb.size()) throw ConfigError("perceptual distance needs encoder layers");
    double total = 0.0;
    for (std::size_t l = 0; l < fa.size(); ++l) {
        const auto& ma = fa[l].map;
        const auto& mb = fb[l].map;
        if (ma.rows() != mb.rows() || ma.cols() != mb.cols())
            throw InputError("perceptual distance: layer shapes differ");
        double layer = 0.0;
        for (Eigen::Index p = 0; p < ma.rows(); ++p) {
            const Eigen::RowVectorXd ua = ma.row(p) / (ma.row(p).norm() + 1e-10);
            const Eigen::RowVectorXd ub = mb.row(p) / (mb.row(p).norm() + 1e-10);
            layer += (ua - ub).squaredNorm();
        }
        total += layer / static_cast<double>(ma.rows());
    }
    return total / static_cast<double>(fa.size());
}

double artfid(double fid, double lpips) {
    if (!(fid >= 0.0) || !(lpips >= 0.0)) throw InputError("artfid inputs must be non-negative");
    return (1.0 + lpips) * (1.0 + fid);
}

namespace {

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::optional<double> optional_from(const json& j, const char* key) {
    if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
    return j.at(key).get<double>();
}

}  // namespace

json MetricReport::to_json() const {
    json pair_rows = json::array();
    for (const auto& p : pairs) {
        json row = {{"content_id", p.content_id},
                    {"style_id", p.style_id},
                    {"stylized_id", p.stylized_id},
                    {"cs", p.cs},
                    {"ss", p.ss},
                    {"ta", optional_json(p.ta)}};
        pair_rows.push_back(row);
    }
    const std::vector<std::pair<std::string, const std::optional<double>*>> fields = {
        {"mean_cs", &mean_cs}, {"mean_ss", &mean_ss}, {"mean_ta", &mean_ta},
        {"fid", &fid},         {lpips_name, &lpips},  {"artfid", &artfid},
        {"silhouette", &silhouette}, {"calinski_harabasz", &calinski_harabasz}};
    json aggregates = json::object();
    json absent = json::array();
    for (const auto& [name, value] : fields) {
        aggregates[name] = optional_json(*value);
        if (!*value) absent.push_back(name);
    }
    return {{"format", kFormat},
            {"backbone_id", backbone_id},
            {"perceptual_metric", lpips_name},
            {"pairs", pair_rows},
            {"aggregates", aggregates},
            {"absent", absent}};
}

MetricReport MetricReport::from_json(const json& j) {
    MetricReport r;
    try {
        if (j.at("format").get<std::string>() != kFormat) throw FormatError("not a metric report");
        r.backbone_id = j.at("backbone_id");
        r.lpips_name = j.at("perceptual_metric");
        for (const auto& row : j.at("pairs")) {
            PairMetrics p;
            p.content_id = row.at("content_id");
            p.style_id = row.at("style_id");
            p.stylized_id = row.at("stylized_id");
            p.cs = row.at("cs");
            p.ss = row.at("ss");
            p.ta = optional_from(row, "ta");
            r.pairs.push_back(std::move(p));
        }
        const auto& a = j.at("aggregates");
        r.mean_cs = optional_from(a, "mean_cs");
        r.mean_ss = optional_from(a, "mean_ss");
        r.mean_ta = optional_from(a, "mean_ta");
        r.fid = optional_from(a, "fid");
        r.lpips = optional_from(a, r.lpips_name.c_str());
        r.artfid = optional_from(a, "artfid");
        r.silhouette = optional_from(a, "silhouette");
        r.calinski_harabasz = optional_from(a, "calinski_harabasz");
    } catch (const json::exception& e) {
        throw FormatError(std::string("malformed metric report: ") + e.what());
    }
    return r;
}

MetricReport evaluate_triples(const ContentStyleExtractor& extractor, std::span<const EvalTriple> triples,
                              const TextEncoder* text_encoder) {
    if (triples.empty()) throw InputError("evaluation needs at least one triple");
    MetricReport report;
    const auto& backbone = extractor.backbone();
    report.backbone_id = backbone.id();

    const Eigen::Index n = static_cast<Eigen::Index>(triples.size());
    Eigen::MatrixXd style_set(n, backbone.embed_dim());
    Eigen::MatrixXd stylized_set(n, backbone.embed_dim());
    double sum_cs = 0.0, sum_ss = 0.0, sum_ta = 0.0, sum_lpips = 0.0;
    int ta_count = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto& t = triples[static_cast<std::size_t>(i)];
        const auto c = extractor.decompose(t.content);
        const auto s = extractor.decompose(t.style);
        const auto x = extractor.decompose(t.stylized);
        PairMetrics p{t.content_id, t.style_id, t.stylized_id,
                      cosine_similarity(c.content.values, x.content.values),
                      cosine_similarity(s.style.values, x.style.values), std::nullopt};
        if (text_encoder && !t.prompt.empty()) {
            p.ta = text_alignment(text_encoder, backbone, t.prompt, t.stylized);
            sum_ta += *p.ta;
            ++ta_count;
        }
        sum_cs += p.cs;
        sum_ss += p.ss;
        sum_lpips += perceptual_distance(backbone, t.content, t.stylized);
        style_set.row(i) = s.embedding.values.transpose();
        stylized_set.row(i) = x.embedding.values.transpose();
        report.pairs.push_back(std::move(p));
    }
    report.mean_cs = sum_cs / static_cast<double>(n);
    report.mean_ss = sum_ss / static_cast<double>(n);
    if (ta_count > 0) report.mean_ta = sum_ta / ta_count;
    report.lpips = sum_lpips / static_cast<double>(n);
    if (n >= 2) {
        report.fid = frechet_distance(style_set, stylized_set);
        report.artfid = artfid(*report.fid, *report.lpips);
    }
    return report;
}

}  // namespace scadapter
