#ifndef CADAPT_WORLD_HPP
#define CADAPT_WORLD_HPP

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace cadapt {

enum class Domain : std::uint8_t { Source, Target };

const char* domain_name(Domain d) noexcept;

/// One observation. Target training samples carry person_id = -1; their
/// ground truth lives in HiddenLabels.
struct Sample {
    std::vector<double> feature;
    Domain domain = Domain::Source;
    int camera_id = 0;
    long long frame_index = 0;
    int person_id = -1;

    friend bool operator==(const Sample&, const Sample&) = default;
};

/// Ground-truth identities for target training samples. Every read is
/// counted so runs can prove they never looked.
class HiddenLabels {
public:
    HiddenLabels() = default;
    explicit HiddenLabels(std::vector<int> ids) : ids_(std::move(ids)) {}
    HiddenLabels(const HiddenLabels& other) : ids_(other.ids_), reads_(other.reads()) {}
    HiddenLabels& operator=(const HiddenLabels& other) {
        ids_ = other.ids_;
        reads_.store(other.reads());
        return *this;
    }

    bool available() const noexcept { return !ids_.empty(); }
    std::size_t size() const noexcept { return ids_.size(); }
    int read(std::size_t i) const;
    std::size_t reads() const noexcept { return reads_.load(); }
    void reset_reads() noexcept { reads_.store(0); }

private:
    std::vector<int> ids_;
    mutable std::atomic<std::size_t> reads_{0};
};

struct WorldConfig {
    int source_cameras = 4;
    int target_cameras = 4;
    int identities = 32;          // training identities per domain
    int test_identities = 16;     // held-out target identities for query/gallery
    int feature_dim = 16;
    // Style model: A_c = I + (domain_matrix * G_d + camera_matrix * G_c) / sqrt(F),
    // b_c = domain_offset * u_d + camera_offset * u_c.
    double domain_matrix_scale = 0.5;
    double domain_offset_scale = 1.5;
    double camera_matrix_scale = 0.3;
    double camera_offset_scale = 1.0;
    double noise_sigma = 0.3;
    int track_min = 4;
    int track_max = 8;
    double reappear_prob = 0.2;
    int min_cameras_per_identity = 2;
    double query_fraction = 0.25;
    /// Minimum samples per target camera expected by downstream fragment
    /// batches; smaller cameras produce a warning. 0 disables the check.
    int required_camera_samples = 0;

    void validate() const;
};

struct Dataset {
    int feature_dim = 0;
    int source_cameras = 0;
    int target_cameras = 0;
    std::vector<Sample> source_train;
    std::vector<Sample> target_train;
    std::vector<Sample> target_query;
    std::vector<Sample> target_gallery;
    HiddenLabels target_train_labels;
    std::vector<std::string> warnings;
};

Dataset generate_world(const WorldConfig& config, std::uint64_t seed);

struct QueryGallerySplit {
    std::vector<Sample> query;
    std::vector<Sample> gallery;
    std::vector<std::string> warnings;
};

/// Per identity, round(fraction * count) samples (at least one, leaving at
/// least one) go to the query side. Single-sample identities stay in the
/// gallery with a warning.
QueryGallerySplit split_query_gallery(const std::vector<Sample>& samples, double fraction,
                                      std::uint64_t seed);

/// Target training sample indices for one camera, sorted by frame_index.
std::vector<std::size_t> camera_timeline(const std::vector<Sample>& samples, int camera_id);

/// Number of distinct source identities and the dense class index of each.
struct SourceClasses {
    std::vector<int> person_ids;     // dense index -> person_id
    std::vector<int> label_of_row;   // source_train row -> dense index
};
SourceClasses source_classes(const Dataset& data);

}  // namespace cadapt

#endif
