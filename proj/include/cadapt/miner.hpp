#ifndef CADAPT_MINER_HPP
#define CADAPT_MINER_HPP

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "cadapt/rng.hpp"
#include "cadapt/tape.hpp"

namespace cadapt {

/// Squared distances below this are clamped before the square root.
inline constexpr double kDistanceFloor = 1e-12;

/// p disjoint windows of q temporally consecutive samples from one camera.
/// Batch-local position i belongs to fragment i / q; fragments are stored in
/// timeline order.
struct FragmentBatch {
    int camera_id = 0;
    std::size_t p = 0;
    std::size_t q = 0;
    std::vector<std::vector<std::size_t>> fragments;  // sample indices

    std::size_t size() const noexcept { return p * q; }
    std::size_t fragment_of(std::size_t local) const noexcept { return local / q; }
    /// Sample indices in batch-local order.
    std::vector<std::size_t> members() const;
};

/// Raised when a camera cannot supply a fragment batch.
class InsufficientSamples : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Chooses p non-overlapping windows of length q uniformly among all valid
/// placements on `timeline` (sample indices sorted by frame).
FragmentBatch build_fragment_batch(std::span<const std::size_t> timeline, int camera_id, std::size_t p,
                                   std::size_t q, Rng& rng);

/// Same contract, but fragments are contiguous blocks of positions 0..p*q-1.
/// Used for tests and for batches assembled elsewhere.
FragmentBatch contiguous_batch(std::size_t p, std::size_t q);

/// n x n, zero diagonal, symmetric, non-negative, finite.
class DistanceMatrix {
public:
    explicit DistanceMatrix(Tensor values);

    std::size_t size() const noexcept { return values_.rows(); }
    double operator()(std::size_t i, std::size_t j) const { return values_.at(i, j); }
    const Tensor& values() const noexcept { return values_; }

private:
    Tensor values_;
};

enum class DistanceMetric { Euclidean, KReciprocal };

struct RerankParams {
    std::size_t k1 = 20;
    std::size_t k2 = 6;
    double lambda = 0.3;

    /// Clips k1 to n/2 (and k2 to k1) so small batches stay valid.
    RerankParams clipped_for(std::size_t n) const;
};

DistanceMatrix euclidean_distances(const Tensor& embeddings);

DistanceMatrix compute_distance_matrix(const Tensor& embeddings, DistanceMetric metric,
                                       const RerankParams& rerank = {});

/// k-reciprocal re-ranking: Jaccard distance between Gaussian-weighted,
/// locally expanded k-reciprocal neighbour sets, blended with the input as
/// (1 - lambda) d_J + lambda d, then symmetrized.
DistanceMatrix kreciprocal_rerank(const DistanceMatrix& dist, std::size_t k1, std::size_t k2, double lambda);

/// Batch positions other than `anchor`, ascending by distance, ties by index.
std::vector<std::size_t> sorted_neighbours(const DistanceMatrix& dist, std::size_t anchor);

std::vector<std::size_t> select_positives(std::size_t anchor, const DistanceMatrix& dist,
                                          const FragmentBatch& batch, std::size_t k);
std::vector<std::size_t> select_negatives(std::size_t anchor, const DistanceMatrix& dist,
                                          const FragmentBatch& batch, std::size_t k_n);

struct AnchorTriplets {
    std::size_t anchor = 0;
    bool valid = false;  // w_a
    std::vector<std::size_t> positives;
    std::vector<std::size_t> negatives;

    friend bool operator==(const AnchorTriplets&, const AnchorTriplets&) = default;
};

/// Per-anchor triplets in batch-local positions.
struct TripletSet {
    int camera_id = 0;
    std::vector<AnchorTriplets> anchors;

    std::size_t valid_count() const;
};

/// Applies the positive and negative rules to every anchor of the batch.
TripletSet mine_triplets(const DistanceMatrix& dist, const FragmentBatch& batch, std::size_t k,
                         std::size_t k_n);

/// sum_a w_a [mean d(a, pos) - mean d(a, neg) + margin]_+ with Euclidean
/// distances on the live embeddings. Anchors flagged valid but lacking
/// negatives contribute nothing; their count goes to *skipped.
Var triplet_loss(Var embeddings, const TripletSet& triplets, double margin,
                 std::size_t* skipped = nullptr);

/// Same sum evaluated on a fixed distance matrix (no gradient path).
double triplet_loss_value(const DistanceMatrix& dist, const TripletSet& triplets, double margin);

}  // namespace cadapt

#endif
