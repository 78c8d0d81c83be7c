#ifndef CADAPT_METRICS_HPP
#define CADAPT_METRICS_HPP

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "cadapt/losses.hpp"
#include "cadapt/model.hpp"
#include "cadapt/world.hpp"

namespace cadapt {

struct EmbeddingResult {
    Tensor embeddings;
    std::size_t zero_rows = 0;  // left as zeros instead of normalized
};

/// Backbone features of `samples` with each row scaled to unit norm.
EmbeddingResult extract_embeddings(const Mlp& backbone, const std::vector<Sample>& samples);

/// Raw (unnormalized) backbone features.
Tensor raw_embeddings(const Mlp& backbone, const std::vector<Sample>& samples);

Tensor feature_matrix(const std::vector<Sample>& samples);

struct RetrievalItem {
    int person_id = -1;
    int camera_id = 0;
};

std::vector<RetrievalItem> retrieval_items(const std::vector<Sample>& samples);

struct CmcResult {
    double mAP = 0.0;
    double rank1 = 0.0;
    double rank5 = 0.0;
    double rank10 = 0.0;
    std::size_t valid_queries = 0;
    std::size_t excluded_queries = 0;
};

/// Average precision for one ranked list of relevance flags: the mean of
/// precision@rank over the relevant positions.
double average_precision(const std::vector<bool>& ranked_relevance);

/// Single-query protocol: gallery entries sharing both person and camera
/// with the query are dropped before ranking by Euclidean distance.
CmcResult cmc_map(const Tensor& query, std::span<const RetrievalItem> query_meta, const Tensor& gallery,
                  std::span<const RetrievalItem> gallery_meta);

/// || mean(source) - mean(target) ||_2
double inter_domain_distance(const Tensor& source, const Tensor& target);

struct InterCameraResult {
    double distance = 0.0;
    std::size_t empty_cameras = 0;
};

/// Mean over non-empty cameras of || mean(camera) - mean(all) ||_2.
InterCameraResult inter_camera_distance(const Tensor& target, std::span<const int> camera_ids, int cameras);

struct PosteriorUniformity {
    /// Mean over samples of max_j | p_j / mass - 1 / C_opp | over the
    /// opposite-domain classes j.
    double deviation = 0.0;
    /// Mean over samples of the posterior mass on opposite-domain classes.
    double opposite_mass = 0.0;
};

PosteriorUniformity posterior_uniformity(const Tensor& probs, std::span<const Domain> domains,
                                         const CameraLayout& layout);

PosteriorUniformity posterior_uniformity(const Model& model, const std::vector<Sample>& samples,
                                         const CameraLayout& layout);

struct MetricsReport {
    CmcResult retrieval;
    double inter_domain = 0.0;
    double inter_camera = 0.0;
    PosteriorUniformity posterior;
    std::size_t zero_embeddings = 0;
};

struct EvalOptions {
    /// Compute discrepancy distances on L2-normalized instead of raw embeddings.
    bool normalized_discrepancy = false;
};

MetricsReport evaluate(const Model& model, const Dataset& data, const EvalOptions& options = {});

nlohmann::json to_json(const MetricsReport& report);

/// Writes embeddings with the samples' metadata in the embedding dump format.
void export_embeddings(const Tensor& embeddings, const std::vector<Sample>& meta,
                       const std::filesystem::path& path, bool labels_visible);

}  // namespace cadapt

#endif
