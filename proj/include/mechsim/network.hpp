#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace mechsim {

using Index = Eigen::Index;

enum class Activation { ReLU, Identity };

std::string to_string(Activation a);
Activation parse_activation(const std::string &name);

/// One fully connected layer: y = act(W x + b), W is out x in.
struct DenseLayer {
    Eigen::MatrixXd weights;
    Eigen::VectorXd bias;
    Activation activation = Activation::Identity;

    Index in_dim() const { return weights.cols(); }
    Index out_dim() const { return weights.rows(); }
};

/// Post-activation vector of every layer, indexed by layer.
using LayerActivations = std::vector<Eigen::VectorXd>;

/// Small feed-forward network of dense layers. Immutable after construction;
/// the constructor enforces that layer dimensions chain.
class ToyNetwork {
  public:
    ToyNetwork(Index input_dim, std::vector<DenseLayer> layers);

    Index input_dim() const { return input_dim_; }
    Index output_dim() const { return layers_.back().out_dim(); }
    Index num_layers() const { return static_cast<Index>(layers_.size()); }
    Index layer_width(Index layer) const;
    const DenseLayer &layer(Index l) const;
    std::span<const DenseLayer> layers() const { return layers_; }

  private:
    Index input_dim_;
    std::vector<DenseLayer> layers_;
};

struct ForwardResult {
    Eigen::VectorXd logits;
    LayerActivations acts;
};

/// Applies layer l to x (pre-activation is W x + b).
Eigen::VectorXd apply_layer(const DenseLayer &layer, const Eigen::Ref<const Eigen::VectorXd> &x);

ForwardResult forward(const ToyNetwork &net, const Eigen::Ref<const Eigen::VectorXd> &input);

/// Runs layers (from_layer, num_layers) on the post-activation of from_layer.
/// from_layer == num_layers - 1 returns the activation unchanged.
Eigen::VectorXd forward_from(const ToyNetwork &net, Index from_layer,
                             const Eigen::Ref<const Eigen::VectorXd> &activation);

/// Forward pass in which the post-activation of `layer` is replaced by
/// `patched` before downstream layers consume it.
Eigen::VectorXd forward_with_intervention(const ToyNetwork &net,
                                          const Eigen::Ref<const Eigen::VectorXd> &input,
                                          Index layer,
                                          const Eigen::Ref<const Eigen::VectorXd> &patched);

ToyNetwork load_network(const std::filesystem::path &path);
ToyNetwork parse_network(const std::string &text);
std::string serialize_network(const ToyNetwork &net);
void save_network(const ToyNetwork &net, const std::filesystem::path &path);

/// Seeded Gaussian network with dims {input, hidden..., output}. Weights are
/// N(0, 1/fan_in), biases N(0, bias_scale^2). Hidden layers use `hidden`, the
/// last layer is always Identity.
ToyNetwork random_network(std::span<const Index> dims, Activation hidden, std::uint64_t seed,
                          double bias_scale = 0.1);

} // namespace mechsim
