#ifndef CADAPT_MODEL_HPP
#define CADAPT_MODEL_HPP

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cadapt/tape.hpp"

namespace cadapt {

/// Fully connected stack with ReLU between layers (none after the last).
/// params holds W0, b0, W1, b1, ...; W is in x out, b is 1 x out.
struct Mlp {
    std::vector<Tensor> params;

    std::size_t layers() const noexcept { return params.size() / 2; }
    std::size_t input_dim() const { return params.at(0).rows(); }
    std::size_t output_dim() const { return params.at(params.size() - 1).cols(); }
    std::vector<std::size_t> widths() const;
};

/// He-normal weights (variance 2 / fan_in), zero biases.
Mlp init_mlp(const std::vector<std::size_t>& widths, std::uint64_t seed);

struct ModelDims {
    std::size_t feature_dim = 16;
    std::vector<std::size_t> backbone_hidden = {64};
    std::size_t embed_dim = 32;
    std::size_t disc_hidden = 128;
    std::size_t camera_classes = 8;  // C = C_s + C_t, or 2 for the domain-only head
    std::size_t person_classes = 32;

    void validate() const;
    friend bool operator==(const ModelDims&, const ModelDims&) = default;
};

/// Backbone B, source identity classifier, and camera discriminator D.
struct Model {
    ModelDims dims;
    Mlp backbone;
    Mlp classifier;
    Mlp discriminator;
};

Model init_params(const ModelDims& dims, std::uint64_t seed);

/// Network parameters recorded on a tape, either trainable or frozen.
struct BoundMlp {
    std::vector<Var> params;
};
BoundMlp bind(Tape& tape, const Mlp& net, bool trainable);

/// Plain MLP forward on the tape.
Var forward_mlp(const BoundMlp& net, Var x);

Var forward_backbone(const BoundMlp& backbone, Var features);
/// Camera posteriors. With grl_lambda set, a gradient reversal node sits
/// between the embeddings and D.
Var forward_discriminator(const BoundMlp& disc, Var embeddings, std::optional<double> grl_lambda);
Var forward_classifier(const BoundMlp& classifier, Var embeddings);

/// Untaped backbone evaluation for inference paths.
Tensor embed(const Mlp& backbone, const Tensor& features);
Tensor discriminator_probs(const Mlp& disc, const Tensor& embeddings);

void save_checkpoint(const std::filesystem::path& path, const Model& model,
                     const std::string& config_hash);
struct Checkpoint {
    Model model;
    std::string config_hash;
};
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace cadapt

#endif
