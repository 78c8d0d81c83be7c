#include "cadapt/cli.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <fstream>
#include <optional>
#include <sstream>

#include "cadapt/config.hpp"
#include "cadapt/embedding_io.hpp"
#include "cadapt/metrics.hpp"
#include "cadapt/miner.hpp"
#include "cadapt/parallel.hpp"
#include "cadapt/trainer.hpp"
#include "cadapt/world.hpp"

namespace fs = std::filesystem;

namespace cadapt {

namespace {

struct CommandError : std::runtime_error {
    CommandError(std::string kind, const std::string& what) : std::runtime_error(what), kind(std::move(kind)) {}
    std::string kind;
};

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CommandError("io", "cannot read " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out || !(out << text)) throw CommandError("io", "cannot write " + path.string());
}

void write_json(const fs::path& path, const nlohmann::json& j) { write_file(path, j.dump(2) + "\n"); }

class Manifest {
public:
    Manifest(std::string command, std::uint64_t seed, std::string config_hash)
        : command_(std::move(command)), seed_(seed), hash_(std::move(config_hash)),
          start_(std::chrono::steady_clock::now()) {}

    void artifact(const fs::path& path) { artifacts_.push_back(path); }

    /// Writes manifest.json next to the artifacts.
    void write(const fs::path& dir) const {
        nlohmann::json arts = nlohmann::json::array();
        for (const auto& p : artifacts_) {
            const std::string body = read_file(p);
            arts.push_back({{"path", p.filename().string()}, {"bytes", body.size()}, {"fnv1a", hash_text(body)}});
        }
        const std::chrono::duration<double> wall = std::chrono::steady_clock::now() - start_;
        write_json(dir / "manifest.json", {{"command", command_},
                                           {"seed", seed_},
                                           {"config_hash", hash_},
                                           {"artifacts", std::move(arts)},
                                           {"wall_clock_seconds", wall.count()},
                                           {"version", kVersion}});
    }

private:
    std::string command_;
    std::uint64_t seed_;
    std::string hash_;
    std::chrono::steady_clock::time_point start_;
    std::vector<fs::path> artifacts_;
};

KeyValues load_config(const std::string& path) {
    if (path.empty()) return {};
    return read_key_values(path);
}

Dataset load_data(const std::string& dir) {
    if (dir.empty()) throw CommandError("usage", "--data is required");
    for (const char* f : {kSourceTrainFile, kTargetTrainFile, kTargetQueryFile, kTargetGalleryFile}) {
        if (!fs::exists(fs::path(dir) / f)) throw CommandError("missing-data", "missing " + (fs::path(dir) / f).string());
    }
    return load_dataset_dir(dir);
}

std::vector<std::vector<double>> read_csv_matrix(const fs::path& path) {
    std::istringstream in(read_file(path));
    std::vector<std::vector<double>> rows;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::vector<double> row;
        std::stringstream ls(line);
        std::string cell;
        while (std::getline(ls, cell, ',')) {
            try {
                row.push_back(parse_double(cell));
            } catch (const ConfigError&) {
                throw FormatError(path.string(), lineno, "bad number '" + cell + "'");
            }
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

std::string csv_matrix(const Tensor& m) {
    std::string out;
    for (std::size_t r = 0; r < m.rows(); ++r) {
        for (std::size_t c = 0; c < m.cols(); ++c) {
            if (c) out += ",";
            out += format_double(m.at(r, c));
        }
        out += "\n";
    }
    return out;
}

struct Common {
    std::string config;
    std::string data;
    std::string out;
    std::optional<std::uint64_t> seed;
    std::size_t threads = 1;
};

int gen_data(const Common& c, bool reveal, std::ostream& os) {
    if (c.out.empty()) throw CommandError("usage", "--out is required");
    const WorldConfig cfg = parse_world_config(load_config(c.config));
    const std::uint64_t seed = c.seed.value_or(0);
    Manifest man("gen-data", seed, hash_text(dump_world_config(cfg)));
    const Dataset data = generate_world(cfg, seed);
    for (const auto& p : save_dataset_dir(data, c.out, reveal)) man.artifact(p);
    const fs::path warn = fs::path(c.out) / "warnings.json";
    write_json(warn, data.warnings);
    man.artifact(warn);
    man.write(c.out);
    os << "wrote " << data.source_train.size() << " source, " << data.target_train.size() << " target train, "
       << data.target_query.size() << " query, " << data.target_gallery.size() << " gallery samples to " << c.out
       << "\n";
    return 0;
}

int train(const Common& c, std::ostream& os) {
    if (c.out.empty()) throw CommandError("usage", "--out is required");
    TrainConfig cfg = parse_train_config(load_config(c.config));
    if (c.seed) cfg.seed = *c.seed;
    const Dataset data = load_data(c.data);
    const std::string hash = hash_text(dump_train_config(cfg));
    Manifest man("train", cfg.seed, hash);
    const fs::path out(c.out);
    try {
        const auto res = run_training(cfg, data);
        save_checkpoint(out / "checkpoint.json", res.model, hash);
        write_json(out / "history.json", to_json(res.history));
        man.artifact(out / "checkpoint.json");
        man.artifact(out / "history.json");
        man.write(out);
        os << "trained " << cfg.epochs << " epochs; checkpoint at " << (out / "checkpoint.json").string() << "\n";
        return 0;
    } catch (const TrainingHalted& h) {
        write_json(out / "history.json", to_json(h.history()));
        throw CommandError("non-finite", h.what());
    }
}

int eval(const Common& c, const std::string& checkpoint, bool export_emb, std::ostream& os) {
    if (checkpoint.empty()) throw CommandError("usage", "--checkpoint is required");
    const auto ck = load_checkpoint(checkpoint);
    const Dataset data = load_data(c.data);
    if (ck.model.dims.feature_dim != static_cast<std::size_t>(data.feature_dim)) {
        throw CommandError("shape", "checkpoint expects " + std::to_string(ck.model.dims.feature_dim) +
                                        "-d features, data has " + std::to_string(data.feature_dim));
    }
    const auto report = to_json(evaluate(ck.model, data));
    if (c.out.empty()) {
        os << report.dump(2) << "\n";
        return 0;
    }
    const fs::path out(c.out);
    Manifest man("eval", c.seed.value_or(0), ck.config_hash);
    write_json(out / "metrics.json", report);
    man.artifact(out / "metrics.json");
    if (export_emb) {
        const auto q = extract_embeddings(ck.model.backbone, data.target_query);
        const auto g = extract_embeddings(ck.model.backbone, data.target_gallery);
        export_embeddings(q.embeddings, data.target_query, out / "query_embeddings.emb", true);
        export_embeddings(g.embeddings, data.target_gallery, out / "gallery_embeddings.emb", true);
        man.artifact(out / "query_embeddings.emb");
        man.artifact(out / "gallery_embeddings.emb");
    }
    man.write(out);
    os << report.dump(2) << "\n";
    return 0;
}

int mine(const Common& c, const std::string& checkpoint, int camera, std::ostream& os) {
    if (checkpoint.empty()) throw CommandError("usage", "--checkpoint is required");
    if (c.out.empty()) throw CommandError("usage", "--out is required");
    TrainConfig cfg = parse_train_config(load_config(c.config));
    if (c.seed) cfg.seed = *c.seed;
    const auto ck = load_checkpoint(checkpoint);
    const Dataset data = load_data(c.data);
    if (camera < 0 || camera >= data.target_cameras) {
        throw CommandError("usage", "camera " + std::to_string(camera) + " outside [0, " +
                                        std::to_string(data.target_cameras) + ")");
    }
    const auto timeline = camera_timeline(data.target_train, camera);
    Rng rng = Rng::stream(cfg.seed, "mine");
    const auto batch = build_fragment_batch(timeline, camera, cfg.p, cfg.q, rng);
    const auto members = batch.members();
    std::vector<Sample> rows;
    for (auto m : members) rows.push_back(data.target_train[m]);
    Tensor emb = raw_embeddings(ck.model.backbone, rows);
    if (cfg.normalize_triplet_embeddings) emb = l2_normalize_rows_values(emb);
    const auto metric = cfg.triplets == TripletMode::UotEuclid ? DistanceMetric::Euclidean : DistanceMetric::KReciprocal;
    const auto set = mine_triplets(compute_distance_matrix(emb, metric, cfg.rerank.clipped_for(members.size())), batch,
                                   cfg.k, cfg.k_n);
    auto to_rows = [&](const std::vector<std::size_t>& local) {
        std::vector<std::size_t> out;
        for (auto l : local) out.push_back(members[l]);
        return out;
    };
    std::string lines;
    for (const auto& a : set.anchors) {
        nlohmann::json j = {{"camera_id", camera},
                            {"anchor", members[a.anchor]},
                            {"w", a.valid ? 1 : 0},
                            {"positives", to_rows(a.positives)},
                            {"negatives", to_rows(a.negatives)}};
        lines += j.dump() + "\n";
    }
    const fs::path out(c.out);
    Manifest man("mine", cfg.seed, ck.config_hash);
    write_file(out / "triplets.jsonl", lines);
    man.artifact(out / "triplets.jsonl");
    man.write(out);
    os << set.valid_count() << " of " << set.anchors.size() << " anchors valid\n";
    return 0;
}

int rerank(const Common& c, const std::string& embeddings, const std::string& distances, std::size_t k1,
           std::size_t k2, double lambda, std::ostream& os) {
    if (c.out.empty()) throw CommandError("usage", "--out is required");
    if (embeddings.empty() == distances.empty()) {
        throw CommandError("usage", "give exactly one of --embeddings or --distances");
    }
    std::optional<DistanceMatrix> input;
    std::string source;
    if (!embeddings.empty()) {
        const auto file = read_embedding_file(embeddings);
        if (file.samples.size() < 2) throw CommandError("usage", "re-ranking needs at least two embeddings");
        input.emplace(euclidean_distances(feature_matrix(file.samples)));
        source = read_file(embeddings);
    } else {
        const auto rows = read_csv_matrix(distances);
        if (rows.empty()) throw CommandError("usage", "empty distance matrix");
        Tensor m = Tensor::matrix(rows.size(), rows.size());
        for (std::size_t r = 0; r < rows.size(); ++r) {
            if (rows[r].size() != rows.size()) throw CommandError("shape", "distance matrix is not square");
            std::copy(rows[r].begin(), rows[r].end(), m.row_span(r).begin());
        }
        input.emplace(std::move(m));
        source = read_file(distances);
    }
    const auto result = kreciprocal_rerank(*input, k1, k2, lambda);
    const fs::path out(c.out);
    Manifest man("rerank", 0,
                 hash_text(source + "|k1=" + std::to_string(k1) + "|k2=" + std::to_string(k2) +
                           "|lambda=" + format_double(lambda)));
    write_file(out / "distances.csv", csv_matrix(result.values()));
    man.artifact(out / "distances.csv");
    man.write(out);
    os << "wrote " << result.size() << "x" << result.size() << " matrix\n";
    return 0;
}

void print_error(std::ostream& err, const std::string& command, const std::string& kind, const std::string& message) {
    err << nlohmann::json{{"error", {{"command", command}, {"kind", kind}, {"message", message}}}}.dump() << "\n";
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Camera-aware domain adaptation lab", "cadapt"};
    app.require_subcommand(1);
    app.set_version_flag("--version", kVersion);

    Common common;
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", common.config, "flat key = value config file");
        sub->add_option("--data", common.data, "dataset directory");
        sub->add_option("--out", common.out, "output directory");
        sub->add_option("--seed", common.seed, "random seed");
        sub->add_option("--threads", common.threads, "worker threads")->check(CLI::PositiveNumber);
    };

    auto* gen = app.add_subcommand("gen-data", "generate a synthetic multi-camera world");
    add_common(gen);
    bool reveal = false;
    gen->add_flag("--reveal-target-labels", reveal, "write target training identities (semi-supervised runs)");

    auto* tr = app.add_subcommand("train", "train a model");
    add_common(tr);

    std::string checkpoint;
    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
    add_common(ev);
    ev->add_option("--checkpoint", checkpoint, "checkpoint file");
    bool export_emb = false;
    ev->add_flag("--export", export_emb, "also write query and gallery embeddings");

    auto* mn = app.add_subcommand("mine", "mine triplets on one target camera");
    add_common(mn);
    mn->add_option("--checkpoint", checkpoint, "checkpoint file");
    int camera = 0;
    mn->add_option("--camera", camera, "target camera id")->required();

    auto* rr = app.add_subcommand("rerank", "k-reciprocal re-ranking of a distance matrix");
    add_common(rr);
    std::string emb_path, dist_path;
    std::size_t k1 = 20, k2 = 6;
    double lambda = 0.3;
    rr->add_option("--embeddings", emb_path, "embedding dump; distances are Euclidean");
    rr->add_option("--distances", dist_path, "square distance matrix as CSV");
    rr->add_option("--k1", k1, "k-reciprocal neighbourhood size");
    rr->add_option("--k2", k2, "query expansion size");
    rr->add_option("--lambda", lambda, "weight of the original distance");

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::CallForVersion&) {
        out << kVersion << "\n";
        return 0;
    } catch (const CLI::ParseError& e) {
        print_error(err, args.empty() ? "" : args.front(), "usage", e.what());
        return 2;
    }

    const std::string name = app.get_subcommands().front()->get_name();
    try {
        set_thread_count(common.threads);
        if (!common.out.empty()) fs::create_directories(common.out);
        if (name == "gen-data") return gen_data(common, reveal, out);
        if (name == "train") return train(common, out);
        if (name == "eval") return eval(common, checkpoint, export_emb, out);
        if (name == "mine") return mine(common, checkpoint, camera, out);
        return rerank(common, emb_path, dist_path, k1, k2, lambda, out);
    } catch (const CommandError& e) {
        print_error(err, name, e.kind, e.what());
        return e.kind == "usage" ? 2 : 1;
    } catch (const ConfigError& e) {
        print_error(err, name, "config", e.what());
        return 2;
    } catch (const InsufficientSamples& e) {
        print_error(err, name, "insufficient-samples", e.what());
        return 1;
    } catch (const FormatError& e) {
        print_error(err, name, "format", e.what());
        return 1;
    } catch (const std::exception& e) {
        print_error(err, name, "error", e.what());
        return 1;
    }
}

}  // namespace cadapt
