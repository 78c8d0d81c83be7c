#include "cadapt/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "cadapt/parallel.hpp"

namespace cadapt {

std::string triplet_mode_name(TripletMode m) {
    switch (m) {
        case TripletMode::None: return "none";
        case TripletMode::Uot: return "uot";
        case TripletMode::UotEuclid: return "uot-euclid";
        case TripletMode::Sot: return "sot";
        case TripletMode::Offline: return "offline";
    }
    return "none";
}

TripletMode parse_triplet_mode(const std::string& name) {
    for (auto m : {TripletMode::None, TripletMode::Uot, TripletMode::UotEuclid, TripletMode::Sot,
                   TripletMode::Offline}) {
        if (triplet_mode_name(m) == name) return m;
    }
    throw ConfigError("unknown triplet mode '" + name + "'; expected none, uot, uot-euclid, sot or offline");
}

void TrainConfig::validate() const {
    auto fail = [](const std::string& what) { throw ConfigError("train config: " + what); };
    if (cal_source_batch < 1 || cal_target_batch < 1) fail("cal batch sizes must be >= 1");
    if (p < 2 || q < 2) fail("p and q must be >= 2");
    if (k < 1 || k_n < 1) fail("k and k_n must be >= 1");
    if (!(margin > 0.0)) fail("margin must be positive");
    if (!(lambda1 >= 0.0 && lambda2 >= 0.0)) fail("lambda1 and lambda2 must be >= 0");
    if (!(lr_backbone > 0.0 && lr_new > 0.0)) fail("learning rates must be positive");
    if (!(momentum >= 0.0 && momentum < 1.0)) fail("momentum must lie in [0, 1)");
    if (!(weight_decay >= 0.0)) fail("weight_decay must be >= 0");
    if (!(lr_decay_fraction > 0.0 && lr_decay_fraction <= 1.0)) fail("lr_decay_fraction must lie in (0, 1]");
    if (!(lr_decay_factor > 0.0 && lr_decay_factor <= 1.0)) fail("lr_decay_factor must lie in (0, 1]");
    if (!(grl_lambda >= 0.0)) fail("grl_lambda must be >= 0");
    if (rerank.k2 < 1 || rerank.k1 < rerank.k2) fail("rerank needs 1 <= k2 <= k1");
    if (!(rerank.lambda >= 0.0 && rerank.lambda <= 1.0)) fail("rerank_lambda must lie in [0, 1]");
    if (offline_triplets_per_batch < 1) fail("offline_triplets_per_batch must be >= 1");
    if (embed_dim < 1 || disc_hidden < 1) fail("layer widths must be >= 1");
    for (auto w : backbone_hidden) {
        if (w < 1) fail("layer widths must be >= 1");
    }
}

namespace {

template <typename C>
void add_size(FieldTable<C>& t, const char* name, std::size_t C::*m) {
    t.add(name, [m](C& c, const std::string& v) { c.*m = parse_size(v); },
          [m](const C& c) { return std::to_string(c.*m); });
}

template <typename C>
void add_int(FieldTable<C>& t, const char* name, int C::*m) {
    t.add(name, [m](C& c, const std::string& v) { c.*m = parse_int(v); },
          [m](const C& c) { return std::to_string(c.*m); });
}

template <typename C>
void add_double(FieldTable<C>& t, const char* name, double C::*m) {
    t.add(name, [m](C& c, const std::string& v) { c.*m = parse_double(v); },
          [m](const C& c) { return format_double(c.*m); });
}

template <typename C>
void add_bool(FieldTable<C>& t, const char* name, bool C::*m) {
    t.add(name, [m](C& c, const std::string& v) { c.*m = parse_bool(v); },
          [m](const C& c) { return std::string(c.*m ? "true" : "false"); });
}

std::vector<std::size_t> parse_size_list(const std::string& s) {
    std::vector<std::size_t> out;
    std::size_t start = 0;
    while (start <= s.size()) {
        auto comma = s.find(',', start);
        if (comma == std::string::npos) comma = s.size();
        const std::string item = s.substr(start, comma - start);
        if (item.find_first_not_of(" \t") != std::string::npos) out.push_back(parse_size(item));
        start = comma + 1;
    }
    return out;
}

FieldTable<TrainConfig> make_train_fields() {
    using T = TrainConfig;
    FieldTable<T> t;
    add_size(t, "epochs", &T::epochs);
    add_size(t, "iterations_per_epoch", &T::iterations_per_epoch);
    add_size(t, "cal_source_batch", &T::cal_source_batch);
    add_size(t, "cal_target_batch", &T::cal_target_batch);
    add_size(t, "p", &T::p);
    add_size(t, "q", &T::q);
    add_size(t, "k", &T::k);
    add_size(t, "k_n", &T::k_n);
    add_double(t, "margin", &T::margin);
    add_double(t, "lambda1", &T::lambda1);
    add_double(t, "lambda2", &T::lambda2);
    add_double(t, "lr_backbone", &T::lr_backbone);
    add_double(t, "lr_new", &T::lr_new);
    add_double(t, "momentum", &T::momentum);
    add_double(t, "weight_decay", &T::weight_decay);
    add_double(t, "lr_decay_fraction", &T::lr_decay_fraction);
    add_double(t, "lr_decay_factor", &T::lr_decay_factor);
    t.add("scheme", [](T& c, const std::string& v) { c.scheme = parse_scheme(v); },
          [](const T& c) { return scheme_name(c.scheme); });
    t.add("triplets", [](T& c, const std::string& v) { c.triplets = parse_triplet_mode(v); },
          [](const T& c) { return triplet_mode_name(c.triplets); });
    add_double(t, "grl_lambda", &T::grl_lambda);
    add_bool(t, "grl_ramp", &T::grl_ramp);
    t.add("rerank_k1", [](T& c, const std::string& v) { c.rerank.k1 = parse_size(v); },
          [](const T& c) { return std::to_string(c.rerank.k1); });
    t.add("rerank_k2", [](T& c, const std::string& v) { c.rerank.k2 = parse_size(v); },
          [](const T& c) { return std::to_string(c.rerank.k2); });
    t.add("rerank_lambda", [](T& c, const std::string& v) { c.rerank.lambda = parse_double(v); },
          [](const T& c) { return format_double(c.rerank.lambda); });
    add_bool(t, "normalize_triplet_embeddings", &T::normalize_triplet_embeddings);
    add_bool(t, "rerank_loss_constant", &T::rerank_loss_constant);
    add_size(t, "offline_triplets_per_batch", &T::offline_triplets_per_batch);
    add_size(t, "offline_baseline_epochs", &T::offline_baseline_epochs);
    t.add("backbone_hidden", [](T& c, const std::string& v) { c.backbone_hidden = parse_size_list(v); },
          [](const T& c) {
              std::string s;
              for (std::size_t i = 0; i < c.backbone_hidden.size(); ++i) {
                  if (i) s += ",";
                  s += std::to_string(c.backbone_hidden[i]);
              }
              return s;
          });
    add_size(t, "embed_dim", &T::embed_dim);
    add_size(t, "disc_hidden", &T::disc_hidden);
    add_size(t, "eval_every", &T::eval_every);
    t.add("seed", [](T& c, const std::string& v) { c.seed = parse_size(v); },
          [](const T& c) { return std::to_string(c.seed); });
    return t;
}

FieldTable<WorldConfig> make_world_fields() {
    using W = WorldConfig;
    FieldTable<W> t;
    add_int(t, "source_cameras", &W::source_cameras);
    add_int(t, "target_cameras", &W::target_cameras);
    add_int(t, "identities", &W::identities);
    add_int(t, "test_identities", &W::test_identities);
    add_int(t, "feature_dim", &W::feature_dim);
    add_double(t, "domain_matrix_scale", &W::domain_matrix_scale);
    add_double(t, "domain_offset_scale", &W::domain_offset_scale);
    add_double(t, "camera_matrix_scale", &W::camera_matrix_scale);
    add_double(t, "camera_offset_scale", &W::camera_offset_scale);
    add_double(t, "sigma", &W::noise_sigma);
    add_int(t, "track_min", &W::track_min);
    add_int(t, "track_max", &W::track_max);
    add_double(t, "reappear_prob", &W::reappear_prob);
    add_int(t, "min_cameras_per_identity", &W::min_cameras_per_identity);
    add_double(t, "query_fraction", &W::query_fraction);
    add_int(t, "required_camera_samples", &W::required_camera_samples);
    return t;
}

}  // namespace

const FieldTable<TrainConfig>& train_config_fields() {
    static const FieldTable<TrainConfig> table = make_train_fields();
    return table;
}

const FieldTable<WorldConfig>& world_config_fields() {
    static const FieldTable<WorldConfig> table = make_world_fields();
    return table;
}

TrainConfig parse_train_config(const KeyValues& kv) {
    TrainConfig cfg;
    train_config_fields().apply(cfg, kv);
    cfg.validate();
    return cfg;
}

WorldConfig parse_world_config(const KeyValues& kv) {
    WorldConfig cfg;
    world_config_fields().apply(cfg, kv);
    cfg.validate();
    return cfg;
}

std::string dump_train_config(const TrainConfig& cfg) { return train_config_fields().dump(cfg); }
std::string dump_world_config(const WorldConfig& cfg) { return world_config_fields().dump(cfg); }

ModelDims model_dims_for(const Dataset& data, const TrainConfig& cfg) {
    ModelDims d;
    d.feature_dim = static_cast<std::size_t>(data.feature_dim);
    d.backbone_hidden = cfg.backbone_hidden;
    d.embed_dim = cfg.embed_dim;
    d.disc_hidden = cfg.disc_hidden;
    d.camera_classes = cfg.scheme == SchemeKind::Dal
                           ? 2
                           : static_cast<std::size_t>(data.source_cameras + data.target_cameras);
    d.person_classes = source_classes(data).person_ids.size();
    d.validate();
    return d;
}

namespace {

std::vector<std::size_t> draw_rows(std::size_t available, std::size_t wanted, Rng& rng, bool& replaced) {
    if (wanted <= available) return rng.sample_sorted(available, wanted);
    replaced = true;
    std::vector<std::size_t> rows(wanted);
    for (auto& r : rows) r = rng.index(available);
    return rows;
}

Tensor gather_features(const std::vector<Sample>& samples, std::span<const std::size_t> rows) {
    const std::size_t f = samples.at(rows.front()).feature.size();
    Tensor x = Tensor::matrix(rows.size(), f);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto& feat = samples.at(rows[i]).feature;
        std::copy(feat.begin(), feat.end(), x.row_span(i).begin());
    }
    return x;
}

void check_finite(double v, const char* what) {
    if (!std::isfinite(v)) throw NonFiniteError(std::string("non-finite ") + what + " loss");
}

std::vector<Tensor> grads_of(const Gradients& g, const BoundMlp& net) {
    std::vector<Tensor> out;
    out.reserve(net.params.size());
    for (const auto& p : net.params) out.push_back(g.of(p));
    return out;
}

}  // namespace

CalBatch build_cal_batch(const Dataset& data, std::size_t source_size, std::size_t target_size, Rng& rng) {
    if (data.source_train.empty() || data.target_train.empty()) {
        throw std::invalid_argument("cal batch needs non-empty source and target training sets");
    }
    CalBatch b;
    b.source_rows = draw_rows(data.source_train.size(), source_size, rng, b.with_replacement);
    b.target_rows = draw_rows(data.target_train.size(), target_size, rng, b.with_replacement);
    const CameraLayout layout{data.source_cameras, data.target_cameras};
    for (auto r : b.source_rows) b.camera_labels.push_back(layout.index(Domain::Source, data.source_train[r].camera_id));
    for (auto r : b.target_rows) b.camera_labels.push_back(layout.index(Domain::Target, data.target_train[r].camera_id));
    return b;
}

TripletSet sot_triplets(const FragmentBatch& batch, std::span<const int> person_ids, const DistanceMatrix& dist,
                        std::size_t k_n) {
    const std::size_t n = batch.size();
    if (person_ids.size() != n || dist.size() != n) {
        throw ShapeError("sot_triplets: batch, labels and distances disagree in size");
    }
    TripletSet out;
    out.camera_id = batch.camera_id;
    for (std::size_t a = 0; a < n; ++a) {
        AnchorTriplets t;
        t.anchor = a;
        for (std::size_t j : sorted_neighbours(dist, a)) {
            if (person_ids[j] == person_ids[a]) {
                t.positives.assign(1, j);  // keeps the farthest
            } else if (t.negatives.size() < k_n) {
                t.negatives.push_back(j);
            }
        }
        t.valid = !t.positives.empty() && !t.negatives.empty();
        out.anchors.push_back(std::move(t));
    }
    return out;
}

std::vector<OfflineTriplet> offline_triplets(const Dataset& data, const Model& model, const TrainConfig& cfg) {
    std::vector<OfflineTriplet> pool;
    for (int cam = 0; cam < data.target_cameras; ++cam) {
        const auto timeline = camera_timeline(data.target_train, cam);
        const std::size_t nf = timeline.size() / cfg.q;
        if (nf < 2) continue;
        FragmentBatch batch;
        batch.camera_id = cam;
        batch.p = nf;
        batch.q = cfg.q;
        for (std::size_t f = 0; f < nf; ++f) {
            batch.fragments.emplace_back(timeline.begin() + static_cast<std::ptrdiff_t>(f * cfg.q),
                                         timeline.begin() + static_cast<std::ptrdiff_t>((f + 1) * cfg.q));
        }
        const auto members = batch.members();
        Tensor emb = embed(model.backbone, gather_features(data.target_train, members));
        if (cfg.normalize_triplet_embeddings) emb = l2_normalize_rows_values(emb);
        const auto dist = compute_distance_matrix(emb, DistanceMetric::KReciprocal, cfg.rerank.clipped_for(members.size()));
        const auto set = mine_triplets(dist, batch, cfg.k, cfg.k_n);
        for (const auto& a : set.anchors) {
            if (!a.valid) continue;
            for (auto p : a.positives) {
                for (auto n : a.negatives) pool.push_back({members[a.anchor], members[p], members[n]});
            }
        }
    }
    if (pool.empty()) throw std::invalid_argument("offline triplet pool is empty");
    return pool;
}

Optimizers::Optimizers(const TrainConfig& cfg)
    : backbone(cfg.lr_backbone, cfg.momentum, cfg.weight_decay),
      classifier(cfg.lr_new, cfg.momentum, cfg.weight_decay),
      discriminator(cfg.lr_new, cfg.momentum, cfg.weight_decay) {}

void Optimizers::set_rates(double backbone_lr, double new_lr) {
    backbone.set_learning_rate(backbone_lr);
    classifier.set_learning_rate(new_lr);
    discriminator.set_learning_rate(new_lr);
}

StepLosses train_step(Model& model, Optimizers& opt, const Dataset& data, const std::vector<int>& source_labels,
                      const CalBatch& cal, const std::optional<TripletBatch>& triplet_batch,
                      const TrainConfig& cfg, double grl_lambda) {
    const std::size_t ns = cal.source_rows.size();
    Tensor x = Tensor::matrix(ns + cal.target_rows.size(), static_cast<std::size_t>(data.feature_dim));
    std::vector<Domain> domains;
    for (std::size_t i = 0; i < ns; ++i) {
        const auto& f = data.source_train.at(cal.source_rows[i]).feature;
        std::copy(f.begin(), f.end(), x.row_span(i).begin());
        domains.push_back(Domain::Source);
    }
    for (std::size_t i = 0; i < cal.target_rows.size(); ++i) {
        const auto& f = data.target_train.at(cal.target_rows[i]).feature;
        std::copy(f.begin(), f.end(), x.row_span(ns + i).begin());
        domains.push_back(Domain::Target);
    }
    std::vector<std::size_t> person_labels;
    for (auto r : cal.source_rows) person_labels.push_back(static_cast<std::size_t>(source_labels.at(r)));
    const CameraLayout layout{data.source_cameras, data.target_cameras};
    const bool dal = cfg.scheme == SchemeKind::Dal;
    auto disc_loss = [&](Var probs) { return dal ? dal_losses(probs, domains).first : cal_d_loss(probs, cal.camera_labels); };

    StepLosses out;
    {
        // (i) discriminator update, backbone frozen
        Tape tape;
        const auto b = bind(tape, model.backbone, false);
        const auto d = bind(tape, model.discriminator, true);
        const Var loss = disc_loss(forward_discriminator(d, forward_backbone(b, tape.constant(x)), std::nullopt));
        out.disc = loss.value().item();
        check_finite(out.disc, "discriminator");
        const auto g = tape.backward(loss);
        opt.discriminator.step(model.discriminator.params, grads_of(g, d));
    }

    // (ii) backbone and classifier update, discriminator frozen
    Tape tape;
    const auto b = bind(tape, model.backbone, true);
    const auto c = bind(tape, model.classifier, true);
    const auto d = bind(tape, model.discriminator, false);
    const Var emb = forward_backbone(b, tape.constant(x));
    const Var cross = source_cross_entropy(forward_classifier(c, slice_rows(emb, 0, ns)), person_labels);
    out.cross = cross.value().item();
    Var root = cross;

    if (cfg.scheme != SchemeKind::None) {
        const bool reversed = cfg.scheme == SchemeKind::Grl || dal;
        if (reversed) {
            // The reversal node turns descent on the discriminator loss into
            // ascent for the backbone; the reported value is the negation.
            const bool live = cfg.lambda2 > 0.0 && grl_lambda > 0.0;
            const Var probs = forward_discriminator(d, emb, live ? std::optional<double>(grl_lambda) : std::nullopt);
            const Var ld = disc_loss(probs);
            out.cal_b = -ld.value().item();
            if (live) root = add(root, scale(ld, cfg.lambda2));
        } else {
            const Var probs = forward_discriminator(d, emb, std::nullopt);
            const Var lb = cfg.scheme == SchemeKind::Cce ? cce_loss(probs, domains, layout)
                                                         : aoe_loss(probs, cal.camera_labels);
            out.cal_b = lb.value().item();
            if (cfg.lambda2 > 0.0) root = add(root, scale(lb, cfg.lambda2));
        }
    }

    if (triplet_batch && cfg.lambda1 > 0.0 && cfg.rerank_loss_constant && triplet_batch->mining_distances) {
        out.triplet = triplet_loss_value(*triplet_batch->mining_distances, triplet_batch->triplets, cfg.margin);
        out.valid_anchors = triplet_batch->triplets.valid_count();
    } else if (triplet_batch && cfg.lambda1 > 0.0) {
        Var fe = forward_backbone(b, tape.constant(triplet_batch->features));
        if (cfg.normalize_triplet_embeddings) fe = l2_normalize_rows(fe);
        const Var lt = triplet_loss(fe, triplet_batch->triplets, cfg.margin, &out.skipped_anchors);
        out.triplet = lt.value().item();
        out.valid_anchors = triplet_batch->triplets.valid_count();
        root = add(root, scale(lt, cfg.lambda1));
    }
    out.total = out.cross + cfg.lambda1 * out.triplet + cfg.lambda2 * out.cal_b;
    check_finite(out.total, "backbone");

    const auto g = tape.backward(root);
    opt.backbone.step(model.backbone.params, grads_of(g, b));
    opt.classifier.step(model.classifier.params, grads_of(g, c));
    return out;
}

nlohmann::json to_json(const RunHistory& h) {
    nlohmann::json epochs = nlohmann::json::array();
    for (const auto& e : h.epochs) {
        nlohmann::json j = {{"epoch", e.epoch},
                            {"lr_backbone", e.lr_backbone},
                            {"lr_new", e.lr_new},
                            {"grl_lambda", e.grl_lambda},
                            {"iterations", e.iterations},
                            {"loss_disc", e.mean.disc},
                            {"loss_cross", e.mean.cross},
                            {"loss_triplet", e.mean.triplet},
                            {"loss_cal_b", e.mean.cal_b},
                            {"loss_total", e.mean.total},
                            {"valid_anchors", e.mean.valid_anchors},
                            {"skipped_anchors", e.mean.skipped_anchors},
                            {"rng", e.rng_fingerprint}};
        if (e.metrics) j["metrics"] = to_json(*e.metrics);
        epochs.push_back(std::move(j));
    }
    nlohmann::json out = {{"config_hash", h.config_hash},
                          {"epochs", std::move(epochs)},
                          {"warnings", h.warnings},
                          {"target_label_reads", h.target_label_reads}};
    if (h.initial_metrics) out["initial_metrics"] = to_json(*h.initial_metrics);
    if (!h.halted.empty()) out["halted"] = h.halted;
    return out;
}

namespace {

struct Streams {
    Rng cal, camera, fragments, offline;

    explicit Streams(std::uint64_t seed)
        : cal(Rng::stream(seed, "cal-batch")),
          camera(Rng::stream(seed, "camera")),
          fragments(Rng::stream(seed, "fragments")),
          offline(Rng::stream(seed, "offline")) {}

    std::string fingerprint() const {
        std::string s;
        for (const Rng* r : {&cal, &camera, &fragments, &offline}) s += std::to_string(r->fingerprint()) + ";";
        return hash_text(s);
    }
};

bool online_mode(TripletMode m) {
    return m == TripletMode::Uot || m == TripletMode::UotEuclid || m == TripletMode::Sot;
}

std::optional<TripletBatch> next_triplet_batch(const Model& model, const Dataset& data, const TrainConfig& cfg,
                                               const std::vector<int>& cameras, const std::vector<OfflineTriplet>* pool,
                                               Streams& rng) {
    if (cfg.lambda1 <= 0.0 || cfg.triplets == TripletMode::None) return std::nullopt;
    if (cfg.triplets == TripletMode::Offline) {
        const std::size_t t = std::min(cfg.offline_triplets_per_batch, pool->size());
        const auto picks = rng.offline.sample_sorted(pool->size(), t);
        std::vector<std::size_t> rows;
        TripletSet set;
        for (std::size_t i = 0; i < picks.size(); ++i) {
            const auto& tr = (*pool)[picks[i]];
            rows.insert(rows.end(), {tr.anchor, tr.positive, tr.negative});
            set.anchors.push_back({3 * i, true, {3 * i + 1}, {3 * i + 2}});
            set.anchors.push_back({3 * i + 1, false, {}, {}});
            set.anchors.push_back({3 * i + 2, false, {}, {}});
        }
        return TripletBatch{gather_features(data.target_train, rows), std::move(set), std::nullopt};
    }

    const int cam = cameras[rng.camera.index(cameras.size())];
    const auto timeline = camera_timeline(data.target_train, cam);
    const auto batch = build_fragment_batch(timeline, cam, cfg.p, cfg.q, rng.fragments);
    const auto members = batch.members();
    Tensor features = gather_features(data.target_train, members);
    Tensor emb = embed(model.backbone, features);
    if (cfg.normalize_triplet_embeddings) emb = l2_normalize_rows_values(emb);
    if (cfg.triplets == TripletMode::Sot) {
        std::vector<int> ids;
        for (auto m : members) ids.push_back(data.target_train_labels.read(m));
        auto dist = euclidean_distances(emb);
        auto set = sot_triplets(batch, ids, dist, cfg.k_n);
        return TripletBatch{std::move(features), std::move(set), std::move(dist)};
    }
    const auto metric = cfg.triplets == TripletMode::Uot ? DistanceMetric::KReciprocal : DistanceMetric::Euclidean;
    auto dist = compute_distance_matrix(emb, metric, cfg.rerank.clipped_for(members.size()));
    auto set = mine_triplets(dist, batch, cfg.k, cfg.k_n);
    return TripletBatch{std::move(features), std::move(set), std::move(dist)};
}

}  // namespace

TrainResult run_training(const TrainConfig& cfg, const Dataset& data, Model init,
                         const std::vector<OfflineTriplet>* offline_pool) {
    cfg.validate();
    if (data.source_train.empty() || data.target_train.empty()) {
        throw std::invalid_argument("training needs non-empty source and target training sets");
    }
    if (init.dims != model_dims_for(data, cfg)) throw ShapeError("initial model does not match data and config");
    if (cfg.triplets == TripletMode::Offline && (offline_pool == nullptr || offline_pool->empty())) {
        throw std::invalid_argument("offline triplet mode needs a non-empty triplet pool");
    }
    if (cfg.triplets == TripletMode::Sot && !data.target_train_labels.available()) {
        throw std::invalid_argument("semi-supervised triplets need target training labels");
    }

    TrainResult res{std::move(init), {}};
    RunHistory& hist = res.history;
    hist.config_hash = hash_text(dump_train_config(cfg));
    const std::size_t reads_before = data.target_train_labels.reads();

    std::vector<int> cameras;
    if (online_mode(cfg.triplets) && cfg.lambda1 > 0.0) {
        for (int c = 0; c < data.target_cameras; ++c) {
            if (camera_timeline(data.target_train, c).size() >= cfg.p * cfg.q) cameras.push_back(c);
        }
        if (cameras.empty()) {
            throw InsufficientSamples("no target camera holds p*q = " + std::to_string(cfg.p * cfg.q) + " samples");
        }
        if (cameras.size() < static_cast<std::size_t>(data.target_cameras)) {
            hist.warnings.push_back(std::to_string(data.target_cameras - static_cast<int>(cameras.size())) +
                                    " target camera(s) hold fewer than p*q samples and are never mined");
        }
    }

    const auto source_labels = source_classes(data).label_of_row;
    const std::size_t iters = cfg.iterations_per_epoch > 0
                                  ? cfg.iterations_per_epoch
                                  : std::max<std::size_t>(1, (data.target_train.size() + cfg.p * cfg.q - 1) / (cfg.p * cfg.q));
    const auto decay_epoch = static_cast<std::size_t>(std::ceil(cfg.lr_decay_fraction * static_cast<double>(cfg.epochs)));
    const double total_steps = static_cast<double>(cfg.epochs * iters);

    Optimizers opt(cfg);
    Streams rng(cfg.seed);
    bool replacement_warned = false;
    bool skip_warned = false;
    if (cfg.eval_every > 0) hist.initial_metrics = evaluate(res.model, data);

    for (std::size_t e = 0; e < cfg.epochs; ++e) {
        const double factor = e >= decay_epoch ? cfg.lr_decay_factor : 1.0;
        opt.set_rates(cfg.lr_backbone * factor, cfg.lr_new * factor);
        EpochRecord rec;
        rec.epoch = e;
        rec.lr_backbone = cfg.lr_backbone * factor;
        rec.lr_new = cfg.lr_new * factor;
        rec.iterations = iters;
        for (std::size_t it = 0; it < iters; ++it) {
            double grl = cfg.grl_lambda;
            if (cfg.grl_ramp) {
                const double t = static_cast<double>(e * iters + it) / total_steps;
                grl *= 2.0 / (1.0 + std::exp(-10.0 * t)) - 1.0;
            }
            rec.grl_lambda = grl;
            StepLosses s;
            try {
                const auto cal = build_cal_batch(data, cfg.cal_source_batch, cfg.cal_target_batch, rng.cal);
                if (cal.with_replacement && !replacement_warned) {
                    replacement_warned = true;
                    hist.warnings.push_back("cal batch larger than a training domain; sampling with replacement");
                }
                const auto tb = next_triplet_batch(res.model, data, cfg, cameras, offline_pool, rng);
                s = train_step(res.model, opt, data, source_labels, cal, tb, cfg, grl);
            } catch (const NonFiniteError& err) {
                hist.halted = "epoch " + std::to_string(e) + " iteration " + std::to_string(it) + ": " + err.what();
                hist.target_label_reads = data.target_train_labels.reads() - reads_before;
                throw TrainingHalted(hist.halted, hist);
            } catch (const DomainError& err) {
                hist.halted = "epoch " + std::to_string(e) + " iteration " + std::to_string(it) + ": " + err.what();
                hist.target_label_reads = data.target_train_labels.reads() - reads_before;
                throw TrainingHalted(hist.halted, hist);
            }
            if (s.skipped_anchors > 0 && !skip_warned) {
                skip_warned = true;
                hist.warnings.push_back("anchors with positives but no negatives contributed nothing to the triplet loss");
            }
            rec.mean.disc += s.disc;
            rec.mean.cross += s.cross;
            rec.mean.triplet += s.triplet;
            rec.mean.cal_b += s.cal_b;
            rec.mean.total += s.total;
            rec.mean.valid_anchors += s.valid_anchors;
            rec.mean.skipped_anchors += s.skipped_anchors;
        }
        const auto n = static_cast<double>(iters);
        rec.mean.disc /= n;
        rec.mean.cross /= n;
        rec.mean.triplet /= n;
        rec.mean.cal_b /= n;
        rec.mean.total /= n;
        rec.rng_fingerprint = rng.fingerprint();
        if (cfg.eval_every > 0 && ((e + 1) % cfg.eval_every == 0 || e + 1 == cfg.epochs)) {
            rec.metrics = evaluate(res.model, data);
        }
        hist.epochs.push_back(std::move(rec));
    }
    hist.target_label_reads = data.target_train_labels.reads() - reads_before;
    return res;
}

TrainResult run_training(const TrainConfig& cfg, const Dataset& data) {
    cfg.validate();
    Model init = init_params(model_dims_for(data, cfg), splitmix64(cfg.seed ^ fnv1a("init")));
    if (cfg.triplets != TripletMode::Offline) return run_training(cfg, data, std::move(init));

    TrainConfig base = cfg;
    base.scheme = SchemeKind::None;
    base.triplets = TripletMode::None;
    base.eval_every = 0;
    if (cfg.offline_baseline_epochs > 0) base.epochs = cfg.offline_baseline_epochs;
    Model base_init = init_params(model_dims_for(data, base), splitmix64(cfg.seed ^ fnv1a("init")));
    const auto baseline = run_training(base, data, std::move(base_init));
    const auto pool = offline_triplets(data, baseline.model, cfg);
    auto res = run_training(cfg, data, std::move(init), &pool);
    res.history.warnings.insert(res.history.warnings.begin(), baseline.history.warnings.begin(),
                                baseline.history.warnings.end());
    return res;
}

}  // namespace cadapt
