#include "cadapt/miner.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace cadapt {

std::vector<std::size_t> FragmentBatch::members() const {
    std::vector<std::size_t> out;
    out.reserve(size());
    for (const auto& f : fragments) out.insert(out.end(), f.begin(), f.end());
    return out;
}

FragmentBatch build_fragment_batch(std::span<const std::size_t> timeline, int camera_id, std::size_t p,
                                   std::size_t q, Rng& rng) {
    if (p < 2 || q < 2) {
        throw std::invalid_argument("fragment batches need p >= 2 and q >= 2, got p=" + std::to_string(p) +
                                    " q=" + std::to_string(q));
    }
    const std::size_t n = timeline.size();
    if (n < p * q) {
        throw InsufficientSamples("camera " + std::to_string(camera_id) + " has " + std::to_string(n) +
                                  " samples; a fragment batch needs p*q = " + std::to_string(p * q));
    }
    // Placements of p windows of length q on n slots correspond one-to-one
    // with p-subsets of {0, ..., n - p*q + p - 1}: start_i = c_i + i*(q-1).
    const std::size_t slack = n - p * q;
    const auto chosen = rng.sample_sorted(slack + p, p);
    FragmentBatch batch;
    batch.camera_id = camera_id;
    batch.p = p;
    batch.q = q;
    for (std::size_t i = 0; i < p; ++i) {
        const std::size_t start = chosen[i] + i * (q - 1);
        batch.fragments.emplace_back(timeline.begin() + static_cast<std::ptrdiff_t>(start),
                                     timeline.begin() + static_cast<std::ptrdiff_t>(start + q));
    }
    return batch;
}

FragmentBatch contiguous_batch(std::size_t p, std::size_t q) {
    FragmentBatch b;
    b.p = p;
    b.q = q;
    for (std::size_t f = 0; f < p; ++f) {
        std::vector<std::size_t> idx(q);
        std::iota(idx.begin(), idx.end(), f * q);
        b.fragments.push_back(std::move(idx));
    }
    return b;
}

DistanceMatrix::DistanceMatrix(Tensor values) : values_(std::move(values)) {
    const std::size_t n = values_.rows();
    if (values_.rank() != 2 || values_.cols() != n) {
        throw ShapeError("distance matrix must be square, got " + shape_string(values_.shape()));
    }
    for (std::size_t i = 0; i < n; ++i) {
        if (values_.at(i, i) != 0.0) throw std::invalid_argument("distance matrix diagonal must be zero");
        for (std::size_t j = 0; j < n; ++j) {
            const double v = values_.at(i, j);
            if (!std::isfinite(v) || v < 0.0) {
                throw std::invalid_argument("distance matrix entries must be finite and non-negative");
            }
            if (v != values_.at(j, i)) throw std::invalid_argument("distance matrix must be symmetric");
        }
    }
}

RerankParams RerankParams::clipped_for(std::size_t n) const {
    RerankParams out = *this;
    out.k1 = std::max<std::size_t>(1, std::min(k1, n / 2));
    out.k2 = std::max<std::size_t>(1, std::min(k2, out.k1));
    return out;
}

DistanceMatrix euclidean_distances(const Tensor& embeddings) {
    if (!embeddings.all_finite()) throw std::invalid_argument("non-finite embedding");
    Tensor d = pairwise_sqdist_values(embeddings);
    for (auto& v : d.values()) v = std::sqrt(v);
    return DistanceMatrix(std::move(d));
}

DistanceMatrix compute_distance_matrix(const Tensor& embeddings, DistanceMetric metric,
                                       const RerankParams& rerank) {
    if (embeddings.rows() < 2) throw std::invalid_argument("distance matrix needs at least two rows");
    DistanceMatrix base = euclidean_distances(embeddings);
    if (metric == DistanceMetric::Euclidean) return base;
    const auto r = rerank.clipped_for(base.size());
    return kreciprocal_rerank(base, r.k1, r.k2, r.lambda);
}

namespace {

std::vector<std::vector<std::size_t>> full_ranking(const DistanceMatrix& d) {
    const std::size_t n = d.size();
    std::vector<std::vector<std::size_t>> rank(n, std::vector<std::size_t>(n));
    for (std::size_t i = 0; i < n; ++i) {
        auto& r = rank[i];
        std::iota(r.begin(), r.end(), 0);
        std::stable_sort(r.begin(), r.end(), [&](std::size_t a, std::size_t b) { return d(i, a) < d(i, b); });
    }
    return rank;
}

/// Members g of the first k+1 ranked entries of `p` whose own first k+1
/// entries contain p.
std::vector<std::size_t> reciprocal_set(const std::vector<std::vector<std::size_t>>& rank, std::size_t p,
                                        std::size_t k) {
    std::vector<std::size_t> out;
    for (std::size_t a = 0; a <= k; ++a) {
        const std::size_t g = rank[p][a];
        const auto& back = rank[g];
        if (std::find(back.begin(), back.begin() + static_cast<std::ptrdiff_t>(k + 1), p) !=
            back.begin() + static_cast<std::ptrdiff_t>(k + 1)) {
            out.push_back(g);
        }
    }
    return out;
}

std::size_t round_half_even_half(std::size_t k) {
    const std::size_t h = k / 2;
    if (k % 2 == 0) return h;
    return h % 2 == 0 ? h : h + 1;
}

}  // namespace

DistanceMatrix kreciprocal_rerank(const DistanceMatrix& dist, std::size_t k1, std::size_t k2, double lambda) {
    const std::size_t n = dist.size();
    if (k1 >= n) {
        throw std::invalid_argument("k1 = " + std::to_string(k1) + " must be smaller than n = " + std::to_string(n));
    }
    if (k2 < 1 || k2 > k1) throw std::invalid_argument("re-ranking needs 1 <= k2 <= k1");
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw std::invalid_argument("re-ranking lambda must lie in [0, 1]");
    if (lambda == 1.0) return dist;

    const auto rank = full_ranking(dist);
    const std::size_t half = round_half_even_half(k1);

    Tensor v = Tensor::matrix(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto base = reciprocal_set(rank, i, k1);
        std::vector<std::size_t> expanded = base;
        for (auto c : base) {
            const auto cand = reciprocal_set(rank, c, half);
            std::size_t shared = 0;
            for (auto g : cand) {
                if (std::find(base.begin(), base.end(), g) != base.end()) ++shared;
            }
            if (3 * shared > 2 * cand.size()) expanded.insert(expanded.end(), cand.begin(), cand.end());
        }
        std::sort(expanded.begin(), expanded.end());
        expanded.erase(std::unique(expanded.begin(), expanded.end()), expanded.end());
        double total = 0.0;
        for (auto j : expanded) total += std::exp(-dist(i, j));
        for (auto j : expanded) v.at(i, j) = std::exp(-dist(i, j)) / total;
    }

    if (k2 != 1) {
        Tensor qe = Tensor::matrix(n, n);
        for (std::size_t i = 0; i < n; ++i) {
            auto out = qe.row_span(i);
            for (std::size_t a = 0; a < k2; ++a) {
                auto src = v.row_span(rank[i][a]);
                for (std::size_t j = 0; j < n; ++j) out[j] += src[j];
            }
            for (auto& x : out) x /= static_cast<double>(k2);
        }
        v = std::move(qe);
    }

    // Inverted index: for each column, the rows with non-zero weight.
    std::vector<std::vector<std::size_t>> holders(n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            if (v.at(i, j) != 0.0) holders[j].push_back(i);
        }
    }
    Tensor out = Tensor::matrix(n, n);
    std::vector<double> overlap(n);
    for (std::size_t i = 0; i < n; ++i) {
        std::fill(overlap.begin(), overlap.end(), 0.0);
        for (std::size_t l = 0; l < n; ++l) {
            const double vi = v.at(i, l);
            if (vi == 0.0) continue;
            for (auto j : holders[l]) overlap[j] += std::min(vi, v.at(j, l));
        }
        for (std::size_t j = 0; j < n; ++j) {
            const double jaccard = 1.0 - overlap[j] / (2.0 - overlap[j]);
            out.at(i, j) = (1.0 - lambda) * jaccard + lambda * dist(i, j);
        }
    }
    for (std::size_t i = 0; i < n; ++i) {
        out.at(i, i) = 0.0;
        for (std::size_t j = i + 1; j < n; ++j) {
            const double s = std::max(0.0, 0.5 * (out.at(i, j) + out.at(j, i)));
            out.at(i, j) = s;
            out.at(j, i) = s;
        }
    }
    return DistanceMatrix(std::move(out));
}

std::vector<std::size_t> sorted_neighbours(const DistanceMatrix& dist, std::size_t anchor) {
    std::vector<std::size_t> order;
    order.reserve(dist.size() - 1);
    for (std::size_t j = 0; j < dist.size(); ++j) {
        if (j != anchor) order.push_back(j);
    }
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return dist(anchor, a) < dist(anchor, b); });
    return order;
}

std::vector<std::size_t> select_positives(std::size_t anchor, const DistanceMatrix& dist,
                                          const FragmentBatch& batch, std::size_t k) {
    if (k < 1) throw std::invalid_argument("positive selection needs k >= 1");
    const auto order = sorted_neighbours(dist, anchor);
    const std::size_t own = batch.fragment_of(anchor);
    std::vector<std::size_t> out;
    for (std::size_t pos = 0; pos < std::min(k, order.size()); ++pos) {
        if (batch.fragment_of(order[pos]) == own) out.push_back(order[pos]);
    }
    return out;
}

std::vector<std::size_t> select_negatives(std::size_t anchor, const DistanceMatrix& dist,
                                          const FragmentBatch& batch, std::size_t k_n) {
    if (k_n < 1) throw std::invalid_argument("negative selection needs k_n >= 1");
    const std::size_t own = batch.fragment_of(anchor);
    std::vector<bool> used(batch.p, false);
    std::vector<std::size_t> out;
    for (auto j : sorted_neighbours(dist, anchor)) {
        const std::size_t f = batch.fragment_of(j);
        if (f == own || used[f]) continue;
        used[f] = true;
        out.push_back(j);
        if (out.size() == k_n) break;
    }
    return out;
}

std::size_t TripletSet::valid_count() const {
    return static_cast<std::size_t>(
        std::count_if(anchors.begin(), anchors.end(), [](const AnchorTriplets& a) { return a.valid; }));
}

TripletSet mine_triplets(const DistanceMatrix& dist, const FragmentBatch& batch, std::size_t k,
                         std::size_t k_n) {
    if (dist.size() != batch.size()) {
        throw ShapeError("distance matrix of size " + std::to_string(dist.size()) + " for batch of " +
                         std::to_string(batch.size()));
    }
    TripletSet set;
    set.camera_id = batch.camera_id;
    set.anchors.resize(batch.size());
    for (std::size_t a = 0; a < batch.size(); ++a) {
        auto& t = set.anchors[a];
        t.anchor = a;
        t.positives = select_positives(a, dist, batch, k);
        t.valid = !t.positives.empty();
        if (t.valid) t.negatives = select_negatives(a, dist, batch, k_n);
    }
    return set;
}

namespace {

struct TripletWeights {
    Tensor pos;
    Tensor neg;
    Tensor active;
    std::size_t skipped = 0;
};

TripletWeights triplet_weights(std::size_t n, const TripletSet& triplets) {
    TripletWeights w{Tensor::matrix(n, n), Tensor::matrix(n, n), Tensor::matrix(n, 1), 0};
    for (const auto& t : triplets.anchors) {
        if (!t.valid) continue;
        if (t.anchor >= n) throw std::out_of_range("triplet anchor outside batch");
        if (t.negatives.empty()) {
            ++w.skipped;
            continue;
        }
        for (auto p : t.positives) w.pos.at(t.anchor, p) += 1.0 / static_cast<double>(t.positives.size());
        for (auto q : t.negatives) w.neg.at(t.anchor, q) += 1.0 / static_cast<double>(t.negatives.size());
        w.active[t.anchor] = 1.0;
    }
    return w;
}

}  // namespace

Var triplet_loss(Var embeddings, const TripletSet& triplets, double margin, std::size_t* skipped) {
    if (!(margin > 0.0)) throw std::invalid_argument("triplet margin must be positive");
    const std::size_t n = embeddings.value().rows();
    auto w = triplet_weights(n, triplets);
    if (skipped) *skipped = w.skipped;
    Var dist = sqrt(clamp_min(pairwise_sqdist(embeddings), kDistanceFloor));
    Var dp = sum_rows(mul_const(dist, std::move(w.pos)));
    Var dn = sum_rows(mul_const(dist, std::move(w.neg)));
    Var h = hinge(add_scalar(sub(dp, dn), margin));
    return sum(mul_const(h, std::move(w.active)));
}

double triplet_loss_value(const DistanceMatrix& dist, const TripletSet& triplets, double margin) {
    auto w = triplet_weights(dist.size(), triplets);
    double total = 0.0;
    for (std::size_t a = 0; a < dist.size(); ++a) {
        if (w.active[a] == 0.0) continue;
        double dp = 0.0, dn = 0.0;
        for (std::size_t j = 0; j < dist.size(); ++j) {
            dp += w.pos.at(a, j) * dist(a, j);
            dn += w.neg.at(a, j) * dist(a, j);
        }
        total += std::max(0.0, dp - dn + margin);
    }
    return total;
}

}  // namespace cadapt
