#include "cadapt/world.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

#include "cadapt/rng.hpp"

namespace cadapt {

const char* domain_name(Domain d) noexcept { return d == Domain::Source ? "source" : "target"; }

int HiddenLabels::read(std::size_t i) const {
    reads_.fetch_add(1);
    return ids_.at(i);
}

void WorldConfig::validate() const {
    auto fail = [](const std::string& what) { throw std::invalid_argument("world config: " + what); };
    if (source_cameras < 1 || target_cameras < 1) fail("camera counts must be >= 1");
    if (identities < 1) fail("identities must be >= 1");
    if (test_identities < 0) fail("test_identities must be >= 0");
    if (feature_dim < 1) fail("feature_dim must be >= 1");
    if (track_min < 1 || track_max < track_min) fail("track lengths need 1 <= track_min <= track_max");
    if (!(reappear_prob >= 0.0 && reappear_prob <= 1.0)) fail("reappear_prob must lie in [0, 1]");
    if (!(noise_sigma >= 0.0)) fail("noise_sigma must be >= 0");
    if (min_cameras_per_identity < 1) fail("min_cameras_per_identity must be >= 1");
    if (!(query_fraction > 0.0 && query_fraction < 1.0)) fail("query_fraction must lie in (0, 1)");
    if (required_camera_samples < 0) fail("required_camera_samples must be >= 0");
}

namespace {

struct Style {
    std::vector<double> matrix;  // F x F row-major
    std::vector<double> offset;
};

struct Track {
    int person_id;
    int camera;
    bool held_out;
    std::vector<std::vector<double>> frames;
};

Rng keyed_rng(std::uint64_t seed, std::string_view purpose, std::uint64_t a, std::uint64_t b) {
    return Rng(seed ^ splitmix64(fnv1a(purpose) + (a << 32) + b));
}

std::vector<double> gaussian(Rng& rng, std::size_t n, double s) {
    std::vector<double> v(n);
    for (auto& x : v) x = s * rng.normal();
    return v;
}

std::vector<std::vector<Style>> make_styles(const WorldConfig& cfg, std::uint64_t seed) {
    const auto f = static_cast<std::size_t>(cfg.feature_dim);
    const double inv_sqrt_f = 1.0 / std::sqrt(static_cast<double>(f));
    Rng rng = Rng::stream(seed, "style");
    std::vector<std::vector<Style>> out(2);
    for (int d = 0; d < 2; ++d) {
        const auto g_domain = gaussian(rng, f * f, cfg.domain_matrix_scale * inv_sqrt_f);
        const auto u_domain = gaussian(rng, f, cfg.domain_offset_scale);
        const int cams = d == 0 ? cfg.source_cameras : cfg.target_cameras;
        for (int c = 0; c < cams; ++c) {
            const auto g_cam = gaussian(rng, f * f, cfg.camera_matrix_scale * inv_sqrt_f);
            const auto u_cam = gaussian(rng, f, cfg.camera_offset_scale);
            Style s;
            s.matrix.resize(f * f);
            s.offset.resize(f);
            for (std::size_t i = 0; i < f; ++i) {
                for (std::size_t j = 0; j < f; ++j) {
                    s.matrix[i * f + j] = (i == j ? 1.0 : 0.0) + g_domain[i * f + j] + g_cam[i * f + j];
                }
                s.offset[i] = u_domain[i] + u_cam[i];
            }
            out[d].push_back(std::move(s));
        }
    }
    return out;
}

std::vector<double> observe(const Style& s, const std::vector<double>& z, double sigma, Rng& rng) {
    const std::size_t f = z.size();
    std::vector<double> x(s.offset);
    for (std::size_t i = 0; i < f; ++i) {
        for (std::size_t j = 0; j < f; ++j) x[i] += s.matrix[i * f + j] * z[j];
    }
    if (sigma > 0.0) {
        for (auto& v : x) v += sigma * rng.normal();
    }
    return x;
}

/// All tracks of one identity. Uses its own stream so identities are
/// independent of each other and of generation order.
std::vector<Track> identity_tracks(const WorldConfig& cfg, const std::vector<Style>& styles,
                                   std::uint64_t seed, int domain, int local_id, int person_id,
                                   bool held_out) {
    Rng rng = keyed_rng(seed, "identity", static_cast<std::uint64_t>(domain),
                        static_cast<std::uint64_t>(local_id));
    const auto f = static_cast<std::size_t>(cfg.feature_dim);
    const auto z = gaussian(rng, f, 1.0);
    const int cams = static_cast<int>(styles.size());
    const int lo = std::min(cfg.min_cameras_per_identity, cams);
    const auto chosen = static_cast<std::size_t>(rng.integer(lo, cams));
    std::vector<Track> tracks;
    for (auto cam : rng.sample_sorted(static_cast<std::size_t>(cams), chosen)) {
        int appearances = 1;
        while (appearances < 4 && rng.bernoulli(cfg.reappear_prob)) ++appearances;
        for (int a = 0; a < appearances; ++a) {
            Track t{person_id, static_cast<int>(cam), held_out, {}};
            const auto len = rng.integer(cfg.track_min, cfg.track_max);
            for (long long k = 0; k < len; ++k) {
                t.frames.push_back(observe(styles[cam], z, cfg.noise_sigma, rng));
            }
            tracks.push_back(std::move(t));
        }
    }
    return tracks;
}

bool by_camera_then_frame(const Sample& a, const Sample& b) {
    if (a.camera_id != b.camera_id) return a.camera_id < b.camera_id;
    return a.frame_index < b.frame_index;
}

}  // namespace

Dataset generate_world(const WorldConfig& config, std::uint64_t seed) {
    config.validate();
    const auto styles = make_styles(config, seed);

    Dataset data;
    data.feature_dim = config.feature_dim;
    data.source_cameras = config.source_cameras;
    data.target_cameras = config.target_cameras;

    std::vector<Sample> held_out;
    std::vector<int> target_truth;
    int next_person = 0;
    for (int d = 0; d < 2; ++d) {
        const Domain domain = d == 0 ? Domain::Source : Domain::Target;
        const int ids = config.identities + (d == 1 ? config.test_identities : 0);
        std::vector<std::vector<Track>> per_camera(styles[d].size());
        for (int k = 0; k < ids; ++k) {
            const bool test = d == 1 && k >= config.identities;
            for (auto& t : identity_tracks(config, styles[d], seed, d, k, next_person + k, test)) {
                per_camera[t.camera].push_back(std::move(t));
            }
        }
        next_person += ids;

        for (std::size_t c = 0; c < per_camera.size(); ++c) {
            auto& tracks = per_camera[c];
            Rng order = keyed_rng(seed, "timeline", static_cast<std::uint64_t>(d), c);
            order.shuffle(tracks);
            long long frame = 0;
            for (auto& t : tracks) {
                for (auto& feat : t.frames) {
                    Sample s{std::move(feat), domain, static_cast<int>(c), frame++, t.person_id};
                    if (domain == Domain::Source) {
                        data.source_train.push_back(std::move(s));
                    } else if (t.held_out) {
                        held_out.push_back(std::move(s));
                    } else {
                        target_truth.push_back(s.person_id);
                        s.person_id = -1;
                        data.target_train.push_back(std::move(s));
                    }
                }
            }
        }
    }
    data.target_train_labels = HiddenLabels(std::move(target_truth));

    if (!held_out.empty()) {
        auto split = split_query_gallery(held_out, config.query_fraction, seed);
        data.target_query = std::move(split.query);
        data.target_gallery = std::move(split.gallery);
        data.warnings = std::move(split.warnings);
    }

    if (config.required_camera_samples > 0) {
        for (int c = 0; c < config.target_cameras; ++c) {
            const auto n = camera_timeline(data.target_train, c).size();
            if (n < static_cast<std::size_t>(config.required_camera_samples)) {
                data.warnings.push_back("target camera " + std::to_string(c) + " has " +
                                        std::to_string(n) + " samples, fewer than the " +
                                        std::to_string(config.required_camera_samples) +
                                        " needed for a fragment batch");
            }
        }
    }
    return data;
}

QueryGallerySplit split_query_gallery(const std::vector<Sample>& samples, double fraction,
                                      std::uint64_t seed) {
    if (!(fraction > 0.0 && fraction < 1.0)) {
        throw std::invalid_argument("query fraction must lie in (0, 1), got " + std::to_string(fraction));
    }
    std::map<int, std::vector<std::size_t>> by_id;
    for (std::size_t i = 0; i < samples.size(); ++i) by_id[samples[i].person_id].push_back(i);

    QueryGallerySplit out;
    Rng rng = Rng::stream(seed, "query-gallery");
    for (const auto& [pid, rows] : by_id) {
        if (rows.size() < 2) {
            out.warnings.push_back("identity " + std::to_string(pid) +
                                   " has a single sample; kept in gallery only");
            out.gallery.push_back(samples[rows[0]]);
            continue;
        }
        const auto count = static_cast<long long>(rows.size());
        const auto nq = std::clamp(std::llround(fraction * static_cast<double>(count)), 1LL, count - 1);
        std::vector<bool> is_query(rows.size(), false);
        for (auto k : rng.sample_sorted(rows.size(), static_cast<std::size_t>(nq))) is_query[k] = true;
        for (std::size_t k = 0; k < rows.size(); ++k) {
            (is_query[k] ? out.query : out.gallery).push_back(samples[rows[k]]);
        }
    }
    std::stable_sort(out.query.begin(), out.query.end(), by_camera_then_frame);
    std::stable_sort(out.gallery.begin(), out.gallery.end(), by_camera_then_frame);
    return out;
}

std::vector<std::size_t> camera_timeline(const std::vector<Sample>& samples, int camera_id) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        if (samples[i].camera_id == camera_id) idx.push_back(i);
    }
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        return samples[a].frame_index < samples[b].frame_index;
    });
    return idx;
}

SourceClasses source_classes(const Dataset& data) {
    SourceClasses out;
    std::map<int, int> dense;
    for (const auto& s : data.source_train) dense.emplace(s.person_id, 0);
    int next = 0;
    for (auto& [pid, idx] : dense) {
        idx = next++;
        out.person_ids.push_back(pid);
    }
    out.label_of_row.reserve(data.source_train.size());
    for (const auto& s : data.source_train) out.label_of_row.push_back(dense.at(s.person_id));
    return out;
}

}  // namespace cadapt
