#pragma once

#include <compare>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mechsim/network.hpp"

namespace mechsim {

/// A neuron: coordinate `neuron` of the post-activation of `layer`.
struct NodeId {
    Index layer = 0;
    Index neuron = 0;

    auto operator<=>(const NodeId &) const = default;
};

/// "L{layer}:N{neuron}"
std::string node_label(const NodeId &node);
NodeId parse_node_label(const std::string &label);

struct CircuitEdge {
    NodeId src;
    NodeId dst;
    double effect = 0.0;
};

/// DAG of important neurons for one (class, domain) group. Nodes are sorted
/// by (layer, neuron); edges only go from a lower to a strictly higher layer.
struct Circuit {
    std::string class_label;
    std::string domain_label;
    /// Widths of the layers nodes are drawn from (the hidden layers). Empty
    /// when loaded from a file that does not record topology.
    std::vector<Index> layer_widths;
    std::vector<NodeId> nodes;
    std::map<NodeId, double> node_scores;
    std::vector<CircuitEdge> edges;

    bool contains(const NodeId &node) const;

    /// Throws ValidationError on a non-DAG edge, a dangling endpoint, or more
    /// than `max_in_edges` incoming edges on a node (<= 0 disables the cap).
    void validate(int max_in_edges = 0) const;
};

struct AttributionConfig {
    int ig_steps = 10;
    double node_keep_fraction = 0.10;
    int edges_per_node = 3;

    void validate() const;
};

/// Value of a^{to_layer}[unit] computed from the post-activation of
/// from_layer, plus its gradient with respect to that activation. The ReLU
/// subgradient at 0 is taken as 0.
struct DownstreamGradient {
    double value = 0.0;
    Eigen::VectorXd grad;
};

DownstreamGradient downstream_gradient(const ToyNetwork &net, Index from_layer,
                                       const Eigen::Ref<const Eigen::VectorXd> &activation,
                                       Index to_layer, Index unit);

/// logit[target] with neuron (layer, neuron) set to patch_value, minus the
/// clean logit[target].
double indirect_effect_exact(const ToyNetwork &net, const Eigen::Ref<const Eigen::VectorXd> &input,
                             Index layer, Index neuron, double patch_value, Index target_logit);

/// Integrated-gradients approximation of the per-neuron indirect effect.
/// The whole layer is interpolated jointly, a(alpha) = alpha*clean + (1-alpha)*patch
/// for alpha in {0, 1/N, ..., (N-1)/N}; the result is
///   attribution[n] = (1/N) sum_alpha d logit_target / d a_n (a(alpha)) * (patch_n - clean_n).
Eigen::VectorXd indirect_effect_ig(const ToyNetwork &net,
                                   const Eigen::Ref<const Eigen::VectorXd> &input, Index layer,
                                   const Eigen::Ref<const Eigen::VectorXd> &patch, int steps,
                                   Index target_logit);

/// |IG attribution| of neuron `src` onto the scalar activation at `dst`,
/// interpolating only src towards zero (other neurons stay clean).
double edge_effect_ig(const ToyNetwork &net, const Eigen::Ref<const Eigen::VectorXd> &input,
                      const NodeId &src, const NodeId &dst, int steps);

/// Two-stage discovery over a group of inputs (one per row):
///  1. per hidden layer keep the ceil(fraction * width) neurons with the
///     largest mean |IG indirect effect| on target_logit;
///  2. per kept node keep the edges_per_node kept predecessors with the
///     largest mean edge effect.
/// Ties break by ascending (layer, neuron).
Circuit discover_circuit(const ToyNetwork &net, const Eigen::MatrixXd &inputs, Index target_logit,
                         const AttributionConfig &cfg, std::string class_label = {},
                         std::string domain_label = {});

/// Number of nodes kept from a layer of the given width.
Index nodes_to_keep(double fraction, Index width);

std::string circuit_to_json(const Circuit &circuit);
Circuit circuit_from_json(const std::string &text);
void save_circuit(const Circuit &circuit, const std::filesystem::path &path);
Circuit load_circuit(const std::filesystem::path &path);
std::string circuit_to_dot(const Circuit &circuit);

} // namespace mechsim
