#include "cadapt/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "cadapt/embedding_io.hpp"
#include "cadapt/parallel.hpp"

namespace cadapt {

Tensor feature_matrix(const std::vector<Sample>& samples) {
    if (samples.empty()) throw std::invalid_argument("no samples to stack");
    const std::size_t f = samples.front().feature.size();
    Tensor x = Tensor::matrix(samples.size(), f);
    for (std::size_t i = 0; i < samples.size(); ++i) {
        if (samples[i].feature.size() != f) throw ShapeError("samples have differing feature widths");
        std::copy(samples[i].feature.begin(), samples[i].feature.end(), x.row_span(i).begin());
    }
    return x;
}

Tensor raw_embeddings(const Mlp& backbone, const std::vector<Sample>& samples) {
    return embed(backbone, feature_matrix(samples));
}

EmbeddingResult extract_embeddings(const Mlp& backbone, const std::vector<Sample>& samples) {
    const Tensor raw = raw_embeddings(backbone, samples);
    EmbeddingResult out{l2_normalize_rows_values(raw), 0};
    for (std::size_t r = 0; r < raw.rows(); ++r) {
        const auto row = raw.row_span(r);
        if (std::all_of(row.begin(), row.end(), [](double v) { return v == 0.0; })) ++out.zero_rows;
    }
    return out;
}

std::vector<RetrievalItem> retrieval_items(const std::vector<Sample>& samples) {
    std::vector<RetrievalItem> out;
    out.reserve(samples.size());
    for (const auto& s : samples) out.push_back({s.person_id, s.camera_id});
    return out;
}

double average_precision(const std::vector<bool>& ranked_relevance) {
    double hits = 0.0, total = 0.0;
    for (std::size_t r = 0; r < ranked_relevance.size(); ++r) {
        if (!ranked_relevance[r]) continue;
        hits += 1.0;
        total += hits / static_cast<double>(r + 1);
    }
    return hits > 0.0 ? total / hits : 0.0;
}

CmcResult cmc_map(const Tensor& query, std::span<const RetrievalItem> query_meta, const Tensor& gallery,
                  std::span<const RetrievalItem> gallery_meta) {
    if (query.rows() != query_meta.size() || gallery.rows() != gallery_meta.size()) {
        throw ShapeError("cmc_map: embedding rows do not match metadata");
    }
    if (query.cols() != gallery.cols()) throw ShapeError("cmc_map: query and gallery widths differ");
    const std::size_t nq = query.rows(), ng = gallery.rows();

    struct PerQuery {
        bool valid = false;
        double ap = 0.0;
        std::size_t first_hit = 0;
    };
    std::vector<PerQuery> per(nq);
    parallel_for(nq, [&](std::size_t qi) {
        const auto qrow = query.row_span(qi);
        std::vector<std::pair<double, std::size_t>> ranked;
        ranked.reserve(ng);
        for (std::size_t g = 0; g < ng; ++g) {
            const auto& gm = gallery_meta[g];
            if (gm.person_id == query_meta[qi].person_id && gm.camera_id == query_meta[qi].camera_id) continue;
            const auto grow = gallery.row_span(g);
            double s = 0.0;
            for (std::size_t c = 0; c < qrow.size(); ++c) {
                const double d = qrow[c] - grow[c];
                s += d * d;
            }
            ranked.emplace_back(s, g);
        }
        std::sort(ranked.begin(), ranked.end());
        std::vector<bool> rel(ranked.size());
        bool any = false;
        for (std::size_t r = 0; r < ranked.size(); ++r) {
            rel[r] = gallery_meta[ranked[r].second].person_id == query_meta[qi].person_id;
            if (rel[r] && !any) {
                any = true;
                per[qi].first_hit = r;
            }
        }
        per[qi].valid = any;
        if (any) per[qi].ap = average_precision(rel);
    });

    CmcResult out;
    double ap_sum = 0.0, r1 = 0.0, r5 = 0.0, r10 = 0.0;
    for (const auto& p : per) {
        if (!p.valid) {
            ++out.excluded_queries;
            continue;
        }
        ++out.valid_queries;
        ap_sum += p.ap;
        r1 += p.first_hit < 1 ? 1.0 : 0.0;
        r5 += p.first_hit < 5 ? 1.0 : 0.0;
        r10 += p.first_hit < 10 ? 1.0 : 0.0;
    }
    if (out.valid_queries > 0) {
        const auto n = static_cast<double>(out.valid_queries);
        out.mAP = ap_sum / n;
        out.rank1 = r1 / n;
        out.rank5 = r5 / n;
        out.rank10 = r10 / n;
    }
    return out;
}

namespace {

std::vector<double> column_mean(const Tensor& x) {
    std::vector<double> m(x.cols(), 0.0);
    for (std::size_t r = 0; r < x.rows(); ++r) {
        const auto row = x.row_span(r);
        for (std::size_t c = 0; c < m.size(); ++c) m[c] += row[c];
    }
    for (auto& v : m) v /= static_cast<double>(x.rows());
    return m;
}

double norm_of_difference(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(s);
}

}  // namespace

double inter_domain_distance(const Tensor& source, const Tensor& target) {
    if (source.size() == 0 || target.size() == 0) {
        throw std::invalid_argument("inter-domain distance needs non-empty source and target sets");
    }
    if (source.cols() != target.cols()) throw ShapeError("source and target widths differ");
    return norm_of_difference(column_mean(source), column_mean(target));
}

InterCameraResult inter_camera_distance(const Tensor& target, std::span<const int> camera_ids, int cameras) {
    if (target.rows() != camera_ids.size()) throw ShapeError("camera ids do not match embedding rows");
    if (target.size() == 0) throw std::invalid_argument("inter-camera distance needs target samples");
    const auto global = column_mean(target);
    InterCameraResult out;
    double total = 0.0;
    std::size_t used = 0;
    for (int c = 0; c < cameras; ++c) {
        std::vector<double> m(target.cols(), 0.0);
        std::size_t count = 0;
        for (std::size_t r = 0; r < target.rows(); ++r) {
            if (camera_ids[r] != c) continue;
            const auto row = target.row_span(r);
            for (std::size_t k = 0; k < m.size(); ++k) m[k] += row[k];
            ++count;
        }
        if (count == 0) {
            ++out.empty_cameras;
            continue;
        }
        for (auto& v : m) v /= static_cast<double>(count);
        total += norm_of_difference(m, global);
        ++used;
    }
    out.distance = used ? total / static_cast<double>(used) : 0.0;
    return out;
}

PosteriorUniformity posterior_uniformity(const Tensor& probs, std::span<const Domain> domains,
                                         const CameraLayout& layout) {
    if (probs.rows() != domains.size() || probs.cols() != layout.classes()) {
        throw ShapeError("posterior matrix " + shape_string(probs.shape()) + " does not match layout");
    }
    PosteriorUniformity out;
    if (domains.empty()) return out;
    const auto cs = static_cast<std::size_t>(layout.source_cameras);
    for (std::size_t r = 0; r < probs.rows(); ++r) {
        const bool from_target = domains[r] == Domain::Target;
        const std::size_t begin = from_target ? 0 : cs;
        const std::size_t end = from_target ? cs : probs.cols();
        const double uniform = 1.0 / static_cast<double>(end - begin);
        double mass = 0.0;
        for (std::size_t k = begin; k < end; ++k) mass += probs.at(r, k);
        double worst = 1.0 - uniform;
        if (mass > 0.0) {
            worst = 0.0;
            for (std::size_t k = begin; k < end; ++k) {
                worst = std::max(worst, std::abs(probs.at(r, k) / mass - uniform));
            }
        }
        out.deviation += worst;
        out.opposite_mass += mass;
    }
    out.deviation /= static_cast<double>(probs.rows());
    out.opposite_mass /= static_cast<double>(probs.rows());
    return out;
}

PosteriorUniformity posterior_uniformity(const Model& model, const std::vector<Sample>& samples,
                                         const CameraLayout& layout) {
    const Tensor probs = discriminator_probs(model.discriminator, raw_embeddings(model.backbone, samples));
    std::vector<Domain> domains;
    domains.reserve(samples.size());
    for (const auto& s : samples) domains.push_back(s.domain);
    return posterior_uniformity(probs, domains, layout);
}

MetricsReport evaluate(const Model& model, const Dataset& data, const EvalOptions& options) {
    MetricsReport rep;
    if (!data.target_query.empty() && !data.target_gallery.empty()) {
        const auto q = extract_embeddings(model.backbone, data.target_query);
        const auto g = extract_embeddings(model.backbone, data.target_gallery);
        rep.zero_embeddings = q.zero_rows + g.zero_rows;
        const auto qm = retrieval_items(data.target_query);
        const auto gm = retrieval_items(data.target_gallery);
        rep.retrieval = cmc_map(q.embeddings, qm, g.embeddings, gm);
    }
    auto features = [&](const std::vector<Sample>& s) {
        return options.normalized_discrepancy ? extract_embeddings(model.backbone, s).embeddings
                                              : raw_embeddings(model.backbone, s);
    };
    const Tensor src = features(data.source_train);
    const Tensor tgt = features(data.target_train);
    rep.inter_domain = inter_domain_distance(src, tgt);
    std::vector<int> cams;
    for (const auto& s : data.target_train) cams.push_back(s.camera_id);
    rep.inter_camera = inter_camera_distance(tgt, cams, data.target_cameras).distance;

    CameraLayout layout{data.source_cameras, data.target_cameras};
    if (model.dims.camera_classes == 2 && layout.classes() != 2) layout = CameraLayout{1, 1};
    std::vector<Sample> both = data.source_train;
    both.insert(both.end(), data.target_train.begin(), data.target_train.end());
    if (layout.classes() == model.dims.camera_classes) rep.posterior = posterior_uniformity(model, both, layout);
    return rep;
}

nlohmann::json to_json(const MetricsReport& r) {
    return {{"mAP", r.retrieval.mAP},
            {"rank1", r.retrieval.rank1},
            {"rank5", r.retrieval.rank5},
            {"rank10", r.retrieval.rank10},
            {"valid_queries", r.retrieval.valid_queries},
            {"excluded_queries", r.retrieval.excluded_queries},
            {"inter_domain_distance", r.inter_domain},
            {"inter_camera_distance", r.inter_camera},
            {"posterior_uniformity", r.posterior.deviation},
            {"opposite_domain_mass", r.posterior.opposite_mass},
            {"zero_embeddings", r.zero_embeddings}};
}

void export_embeddings(const Tensor& embeddings, const std::vector<Sample>& meta,
                       const std::filesystem::path& path, bool labels_visible) {
    if (embeddings.rows() != meta.size()) throw ShapeError("export: rows do not match metadata");
    std::vector<Sample> rows = meta;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto r = embeddings.row_span(i);
        rows[i].feature.assign(r.begin(), r.end());
    }
    write_embedding_file(path, rows, static_cast<int>(embeddings.cols()), labels_visible);
}

}  // namespace cadapt
