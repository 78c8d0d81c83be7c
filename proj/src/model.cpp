#include "cadapt/model.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "cadapt/rng.hpp"

namespace cadapt {

std::vector<std::size_t> Mlp::widths() const {
    std::vector<std::size_t> w{input_dim()};
    for (std::size_t l = 0; l < layers(); ++l) w.push_back(params[2 * l].cols());
    return w;
}

Mlp init_mlp(const std::vector<std::size_t>& widths, std::uint64_t seed) {
    if (widths.size() < 2) throw std::invalid_argument("an MLP needs at least input and output widths");
    for (auto w : widths) {
        if (w == 0) throw std::invalid_argument("zero-width layer in MLP");
    }
    Rng rng(seed);
    Mlp net;
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
        Tensor w = Tensor::matrix(widths[l], widths[l + 1]);
        const double sd = std::sqrt(2.0 / static_cast<double>(widths[l]));
        for (auto& v : w.values()) v = sd * rng.normal();
        net.params.push_back(std::move(w));
        net.params.push_back(Tensor::matrix(1, widths[l + 1]));
    }
    return net;
}

void ModelDims::validate() const {
    if (feature_dim == 0 || embed_dim == 0 || disc_hidden == 0 || camera_classes == 0 ||
        person_classes == 0) {
        throw std::invalid_argument("model dimensions must be positive");
    }
    for (auto h : backbone_hidden) {
        if (h == 0) throw std::invalid_argument("zero-width hidden layer in backbone");
    }
}

Model init_params(const ModelDims& dims, std::uint64_t seed) {
    dims.validate();
    std::vector<std::size_t> bb{dims.feature_dim};
    bb.insert(bb.end(), dims.backbone_hidden.begin(), dims.backbone_hidden.end());
    bb.push_back(dims.embed_dim);
    Model m;
    m.dims = dims;
    m.backbone = init_mlp(bb, splitmix64(seed ^ fnv1a("backbone")));
    m.classifier = init_mlp({dims.embed_dim, dims.person_classes}, splitmix64(seed ^ fnv1a("classifier")));
    m.discriminator = init_mlp({dims.embed_dim, dims.disc_hidden, dims.camera_classes},
                               splitmix64(seed ^ fnv1a("discriminator")));
    return m;
}

BoundMlp bind(Tape& tape, const Mlp& net, bool trainable) {
    BoundMlp out;
    out.params.reserve(net.params.size());
    for (const auto& p : net.params) {
        out.params.push_back(trainable ? tape.parameter(p) : tape.constant(p));
    }
    return out;
}

Var forward_mlp(const BoundMlp& net, Var x) {
    const std::size_t layers = net.params.size() / 2;
    for (std::size_t l = 0; l < layers; ++l) {
        x = add_bias(matmul(x, net.params[2 * l]), net.params[2 * l + 1]);
        if (l + 1 < layers) x = relu(x);
    }
    return x;
}

Var forward_backbone(const BoundMlp& backbone, Var features) { return forward_mlp(backbone, features); }

Var forward_discriminator(const BoundMlp& disc, Var embeddings, std::optional<double> grl_lambda) {
    if (grl_lambda) {
        if (!(*grl_lambda > 0.0)) throw std::invalid_argument("grl_lambda must be positive");
        embeddings = grad_reverse(embeddings, *grl_lambda);
    }
    return softmax_rows(forward_mlp(disc, embeddings));
}

Var forward_classifier(const BoundMlp& classifier, Var embeddings) {
    return softmax_rows(forward_mlp(classifier, embeddings));
}

namespace {

Tensor mlp_values(const Mlp& net, const Tensor& x) {
    Tensor h = x;
    for (std::size_t l = 0; l < net.layers(); ++l) {
        if (h.cols() != net.params[2 * l].rows()) {
            throw ShapeError("input width " + std::to_string(h.cols()) + " does not match layer input " +
                             std::to_string(net.params[2 * l].rows()));
        }
        h = matmul_values(h, net.params[2 * l]);
        const Tensor& b = net.params[2 * l + 1];
        const bool last = l + 1 == net.layers();
        for (std::size_t r = 0; r < h.rows(); ++r) {
            auto row = h.row_span(r);
            for (std::size_t c = 0; c < row.size(); ++c) {
                row[c] += b[c];
                if (!last && row[c] < 0.0) row[c] = 0.0;
            }
        }
    }
    return h;
}

nlohmann::json tensor_json(const Tensor& t) {
    return {{"shape", t.shape()}, {"values", std::vector<double>(t.values().begin(), t.values().end())}};
}

Tensor tensor_from_json(const nlohmann::json& j) {
    return Tensor(j.at("shape").get<Shape>(), j.at("values").get<std::vector<double>>());
}

nlohmann::json mlp_json(const Mlp& m) {
    auto arr = nlohmann::json::array();
    for (const auto& p : m.params) arr.push_back(tensor_json(p));
    return arr;
}

Mlp mlp_from_json(const nlohmann::json& j) {
    Mlp m;
    for (const auto& p : j) m.params.push_back(tensor_from_json(p));
    if (m.params.empty() || m.params.size() % 2 != 0) {
        throw std::runtime_error("checkpoint network must hold weight/bias pairs");
    }
    return m;
}

constexpr int kCheckpointVersion = 1;

}  // namespace

Tensor embed(const Mlp& backbone, const Tensor& features) { return mlp_values(backbone, features); }

Tensor discriminator_probs(const Mlp& disc, const Tensor& embeddings) {
    return softmax_rows_values(mlp_values(disc, embeddings));
}

void save_checkpoint(const std::filesystem::path& path, const Model& model, const std::string& config_hash) {
    nlohmann::json j;
    j["format"] = "cadapt-checkpoint";
    j["version"] = kCheckpointVersion;
    j["config_hash"] = config_hash;
    j["dims"] = {{"feature_dim", model.dims.feature_dim},
                 {"backbone_hidden", model.dims.backbone_hidden},
                 {"embed_dim", model.dims.embed_dim},
                 {"disc_hidden", model.dims.disc_hidden},
                 {"camera_classes", model.dims.camera_classes},
                 {"person_classes", model.dims.person_classes}};
    j["backbone"] = mlp_json(model.backbone);
    j["classifier"] = mlp_json(model.classifier);
    j["discriminator"] = mlp_json(model.discriminator);
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write checkpoint " + path.string());
    os << j.dump() << '\n';
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open checkpoint " + path.string());
    nlohmann::json j;
    try {
        is >> j;
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("malformed checkpoint " + path.string() + ": " + e.what());
    }
    if (j.value("format", "") != "cadapt-checkpoint" || j.value("version", 0) != kCheckpointVersion) {
        throw std::runtime_error("unsupported checkpoint format in " + path.string());
    }
    Checkpoint c;
    const auto& d = j.at("dims");
    c.model.dims.feature_dim = d.at("feature_dim");
    c.model.dims.backbone_hidden = d.at("backbone_hidden").get<std::vector<std::size_t>>();
    c.model.dims.embed_dim = d.at("embed_dim");
    c.model.dims.disc_hidden = d.at("disc_hidden");
    c.model.dims.camera_classes = d.at("camera_classes");
    c.model.dims.person_classes = d.at("person_classes");
    c.model.backbone = mlp_from_json(j.at("backbone"));
    c.model.classifier = mlp_from_json(j.at("classifier"));
    c.model.discriminator = mlp_from_json(j.at("discriminator"));
    c.config_hash = j.at("config_hash");
    return c;
}

}  // namespace cadapt
