#ifndef CADAPT_TRAINER_HPP
#define CADAPT_TRAINER_HPP

#include <cstddef>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "cadapt/config.hpp"
#include "cadapt/losses.hpp"
#include "cadapt/metrics.hpp"
#include "cadapt/miner.hpp"
#include "cadapt/model.hpp"
#include "cadapt/rng.hpp"
#include "cadapt/sgd.hpp"
#include "cadapt/world.hpp"

namespace cadapt {

enum class TripletMode { None, Uot, UotEuclid, Sot, Offline };

std::string triplet_mode_name(TripletMode m);
TripletMode parse_triplet_mode(const std::string& name);

struct TrainConfig {
    std::size_t epochs = 100;
    std::size_t iterations_per_epoch = 0;  // 0: ceil(|target train| / (p * q))
    std::size_t cal_source_batch = 64;
    std::size_t cal_target_batch = 64;
    std::size_t p = 12;
    std::size_t q = 10;
    std::size_t k = 5;
    std::size_t k_n = 2;
    double margin = 0.3;
    double lambda1 = 1.0;  // triplet weight
    double lambda2 = 1.0;  // camera-adversarial weight
    double lr_backbone = 0.1;
    double lr_new = 0.01;  // classifier and discriminator
    double momentum = 0.9;
    double weight_decay = 0.0;
    double lr_decay_fraction = 0.8;
    double lr_decay_factor = 0.1;
    SchemeKind scheme = SchemeKind::Cce;
    TripletMode triplets = TripletMode::Uot;
    double grl_lambda = 1.0;
    /// Scale the reversal by 2 / (1 + exp(-10 t)) - 1 over training progress t.
    bool grl_ramp = false;
    RerankParams rerank{};
    /// Mine and apply the triplet loss on unit-norm embeddings.
    bool normalize_triplet_embeddings = true;
    /// Evaluate the triplet term on the mining distances as constants. The
    /// term is then reported but sends no gradient into the backbone.
    bool rerank_loss_constant = false;
    std::size_t offline_triplets_per_batch = 40;
    std::size_t offline_baseline_epochs = 0;  // 0: same as epochs
    std::vector<std::size_t> backbone_hidden = {64};
    std::size_t embed_dim = 32;
    std::size_t disc_hidden = 128;
    std::size_t eval_every = 0;  // 0: no evaluation during training
    std::uint64_t seed = 0;

    void validate() const;
};

const FieldTable<TrainConfig>& train_config_fields();
const FieldTable<WorldConfig>& world_config_fields();

TrainConfig parse_train_config(const KeyValues& kv);
WorldConfig parse_world_config(const KeyValues& kv);

/// Canonical text of every field, used for config hashes.
std::string dump_train_config(const TrainConfig& cfg);
std::string dump_world_config(const WorldConfig& cfg);

/// Model shape implied by a dataset and a training config.
ModelDims model_dims_for(const Dataset& data, const TrainConfig& cfg);

struct CalBatch {
    std::vector<std::size_t> source_rows;   // into source_train
    std::vector<std::size_t> target_rows;   // into target_train
    std::vector<std::size_t> camera_labels; // global camera class, sources first
    bool with_replacement = false;
};

/// Uniform draw of source and target rows. Falls back to sampling with
/// replacement for a domain smaller than the request.
CalBatch build_cal_batch(const Dataset& data, std::size_t source_size, std::size_t target_size, Rng& rng);

/// Batch-hard triplets on a batch with known identities: the farthest
/// same-id sample is the positive, the k_n closest different-id samples are
/// negatives. Anchors missing either side get w_a = 0.
TripletSet sot_triplets(const FragmentBatch& batch, std::span<const int> person_ids,
                        const DistanceMatrix& dist, std::size_t k_n);

struct OfflineTriplet {
    std::size_t anchor, positive, negative;  // target_train rows
    friend bool operator==(const OfflineTriplet&, const OfflineTriplet&) = default;
};

/// Mines every target camera once with the given model's embeddings, using
/// consecutive q-sample fragments. Throws if the pool comes out empty.
std::vector<OfflineTriplet> offline_triplets(const Dataset& data, const Model& model, const TrainConfig& cfg);

struct StepLosses {
    double disc = 0.0;
    double cross = 0.0;
    double triplet = 0.0;
    double cal_b = 0.0;
    double total = 0.0;  // cross + lambda1 * triplet + lambda2 * cal_b
    std::size_t valid_anchors = 0;
    std::size_t skipped_anchors = 0;
};

/// Optimizer state for the three parameter groups.
struct Optimizers {
    SgdState backbone;
    SgdState classifier;
    SgdState discriminator;

    explicit Optimizers(const TrainConfig& cfg);
    void set_rates(double backbone_lr, double new_lr);
};

/// Embedding rows used by the triplet term of one step.
struct TripletBatch {
    Tensor features;
    TripletSet triplets;
    std::optional<DistanceMatrix> mining_distances;
};

/// One alternating iteration: (i) update D with B frozen, (ii) update B and
/// the classifier with D frozen.
StepLosses train_step(Model& model, Optimizers& opt, const Dataset& data, const std::vector<int>& source_labels,
                      const CalBatch& cal, const std::optional<TripletBatch>& triplet_batch,
                      const TrainConfig& cfg, double grl_lambda);

struct EpochRecord {
    std::size_t epoch = 0;
    double lr_backbone = 0.0;
    double lr_new = 0.0;
    double grl_lambda = 0.0;
    std::size_t iterations = 0;
    StepLosses mean;  // valid and skipped anchors are totals, not means
    std::optional<MetricsReport> metrics;
    std::string rng_fingerprint;
};

struct RunHistory {
    std::string config_hash;
    std::optional<MetricsReport> initial_metrics;
    std::vector<EpochRecord> epochs;
    std::vector<std::string> warnings;
    std::size_t target_label_reads = 0;
    std::string halted;  // diagnostic when training stopped early
};

nlohmann::json to_json(const RunHistory& history);

struct TrainResult {
    Model model;
    RunHistory history;
};

/// Raised when a loss or gradient turns non-finite. Carries the history up
/// to the failing step.
class TrainingHalted : public std::runtime_error {
public:
    TrainingHalted(const std::string& what, RunHistory history)
        : std::runtime_error(what), history_(std::move(history)) {}
    const RunHistory& history() const noexcept { return history_; }

private:
    RunHistory history_;
};

/// Full training run. Offline mode first trains a baseline (no adversary,
/// no triplets) to build its triplet pool.
TrainResult run_training(const TrainConfig& cfg, const Dataset& data);

/// Training from an explicit starting model.
TrainResult run_training(const TrainConfig& cfg, const Dataset& data, Model init,
                         const std::vector<OfflineTriplet>* offline_pool = nullptr);

}  // namespace cadapt

#endif
