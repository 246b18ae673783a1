#include "mechsim/circuits.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <regex>
#include <sstream>

#include <fmt/format.h>
#include <json.hpp>

#include "mechsim/error.hpp"
#include "mechsim/parallel.hpp"

namespace mechsim {

using json = nlohmann::json;

std::string node_label(const NodeId &node)
{
    return fmt::format("L{}:N{}", node.layer, node.neuron);
}

NodeId parse_node_label(const std::string &label)
{
    static const std::regex re(R"(L(\d+):N(\d+))");
    std::smatch m;
    if (!std::regex_match(label, m, re))
        throw FormatError(fmt::format("bad node label '{}' (expected L<layer>:N<neuron>)", label));
    return {std::stol(m[1].str()), std::stol(m[2].str())};
}

bool Circuit::contains(const NodeId &node) const
{
    return std::binary_search(nodes.begin(), nodes.end(), node);
}

void Circuit::validate(int max_in_edges) const
{
    if (!std::is_sorted(nodes.begin(), nodes.end()) ||
        std::adjacent_find(nodes.begin(), nodes.end()) != nodes.end())
        throw ValidationError("circuit nodes must be sorted and unique");
    std::map<NodeId, int> in_degree;
    for (const auto &e : edges) {
        if (e.src.layer >= e.dst.layer)
            throw ValidationError(fmt::format("edge {} -> {} does not go to a higher layer",
                                              node_label(e.src), node_label(e.dst)));
        if (!contains(e.src) || !contains(e.dst))
            throw ValidationError(fmt::format("edge {} -> {} has an endpoint outside the circuit",
                                              node_label(e.src), node_label(e.dst)));
        if (max_in_edges > 0 && ++in_degree[e.dst] > max_in_edges)
            throw ValidationError(fmt::format("node {} has more than {} incoming edges",
                                              node_label(e.dst), max_in_edges));
    }
    if (!layer_widths.empty())
        for (const auto &n : nodes)
            if (n.layer >= static_cast<Index>(layer_widths.size()) ||
                n.neuron >= layer_widths[static_cast<std::size_t>(n.layer)])
                throw ValidationError(
                    fmt::format("node {} outside the recorded topology", node_label(n)));
}

void AttributionConfig::validate() const
{
    if (ig_steps < 1)
        throw ValidationError(fmt::format("ig_steps must be >= 1, got {}", ig_steps));
    if (!(node_keep_fraction > 0.0 && node_keep_fraction <= 1.0))
        throw ValidationError(
            fmt::format("node_keep_fraction must be in (0, 1], got {}", node_keep_fraction));
    if (edges_per_node < 1)
        throw ValidationError(fmt::format("edges_per_node must be >= 1, got {}", edges_per_node));
}

DownstreamGradient downstream_gradient(const ToyNetwork &net, Index from_layer,
                                       const Eigen::Ref<const Eigen::VectorXd> &activation,
                                       Index to_layer, Index unit)
{
    if (from_layer < 0 || to_layer >= net.num_layers() || from_layer > to_layer)
        throw ValidationError(
            fmt::format("downstream_gradient: need 0 <= from ({}) <= to ({}) < {}", from_layer,
                        to_layer, net.num_layers()));
    if (activation.size() != net.layer_width(from_layer))
        throw ValidationError(fmt::format("activation length {} does not match layer {} width {}",
                                          activation.size(), from_layer,
                                          net.layer_width(from_layer)));
    if (unit < 0 || unit >= net.layer_width(to_layer))
        throw ValidationError(fmt::format("unit {} out of range for layer {} (width {})", unit,
                                          to_layer, net.layer_width(to_layer)));

    std::vector<Eigen::VectorXd> pre;
    Eigen::VectorXd x = activation;
    for (Index l = from_layer + 1; l <= to_layer; ++l) {
        const auto &layer = net.layer(l);
        pre.push_back(layer.weights * x + layer.bias);
        x = layer.activation == Activation::ReLU ? pre.back().cwiseMax(0.0) : pre.back();
    }

    DownstreamGradient out;
    out.value = x(unit);
    Eigen::VectorXd g = Eigen::VectorXd::Zero(x.size());
    g(unit) = 1.0;
    for (Index l = to_layer; l > from_layer; --l) {
        const auto &layer = net.layer(l);
        if (layer.activation == Activation::ReLU) {
            const auto &z = pre[static_cast<std::size_t>(l - from_layer - 1)];
            g = (z.array() > 0.0).select(g, 0.0);
        }
        g = layer.weights.transpose() * g;
    }
    out.grad = std::move(g);
    return out;
}

namespace {

void check_target(const ToyNetwork &net, Index target_logit)
{
    if (target_logit < 0 || target_logit >= net.output_dim())
        throw ValidationError(fmt::format("target logit {} out of range [0, {})", target_logit,
                                          net.output_dim()));
}

void check_node(const ToyNetwork &net, const NodeId &node)
{
    if (node.layer < 0 || node.layer >= net.num_layers())
        throw ValidationError(
            fmt::format("layer {} out of range [0, {})", node.layer, net.num_layers()));
    if (node.neuron < 0 || node.neuron >= net.layer_width(node.layer))
        throw ValidationError(fmt::format("neuron {} out of range for layer {} (width {})",
                                          node.neuron, node.layer, net.layer_width(node.layer)));
}

} // namespace

double indirect_effect_exact(const ToyNetwork &net, const Eigen::Ref<const Eigen::VectorXd> &input,
                             Index layer, Index neuron, double patch_value, Index target_logit)
{
    check_node(net, {layer, neuron});
    check_target(net, target_logit);
    const auto clean = forward(net, input);
    Eigen::VectorXd patched = clean.acts[static_cast<std::size_t>(layer)];
    patched(neuron) = patch_value;
    const Eigen::VectorXd logits = forward_with_intervention(net, input, layer, patched);
    return logits(target_logit) - clean.logits(target_logit);
}

Eigen::VectorXd indirect_effect_ig(const ToyNetwork &net,
                                   const Eigen::Ref<const Eigen::VectorXd> &input, Index layer,
                                   const Eigen::Ref<const Eigen::VectorXd> &patch, int steps,
                                   Index target_logit)
{
    if (steps < 1)
        throw ValidationError(fmt::format("integrated gradients need N >= 1 steps, got {}", steps));
    check_node(net, {layer, 0});
    check_target(net, target_logit);
    if (patch.size() != net.layer_width(layer))
        throw ValidationError(fmt::format("patch length {} does not match layer {} width {}",
                                          patch.size(), layer, net.layer_width(layer)));

    const auto clean = forward(net, input);
    const Eigen::VectorXd &a_clean = clean.acts[static_cast<std::size_t>(layer)];
    const Index last = net.num_layers() - 1;

    Eigen::VectorXd grad_sum = Eigen::VectorXd::Zero(a_clean.size());
    for (int k = 0; k < steps; ++k) {
        const double alpha = static_cast<double>(k) / steps;
        const Eigen::VectorXd a = alpha * a_clean + (1.0 - alpha) * patch;
        grad_sum += downstream_gradient(net, layer, a, last, target_logit).grad;
    }
    return (grad_sum / steps).cwiseProduct(patch - a_clean);
}

double edge_effect_ig(const ToyNetwork &net, const Eigen::Ref<const Eigen::VectorXd> &input,
                      const NodeId &src, const NodeId &dst, int steps)
{
    if (steps < 1)
        throw ValidationError(fmt::format("integrated gradients need N >= 1 steps, got {}", steps));
    check_node(net, src);
    check_node(net, dst);
    if (src.layer >= dst.layer)
        throw ValidationError(fmt::format("edge source {} must precede destination {}",
                                          node_label(src), node_label(dst)));

    const auto clean = forward(net, input);
    const Eigen::VectorXd &a_clean = clean.acts[static_cast<std::size_t>(src.layer)];
    const double clean_value = a_clean(src.neuron);

    Eigen::VectorXd a = a_clean;
    double grad_sum = 0.0;
    for (int k = 0; k < steps; ++k) {
        const double alpha = static_cast<double>(k) / steps;
        a(src.neuron) = alpha * clean_value;
        grad_sum += downstream_gradient(net, src.layer, a, dst.layer, dst.neuron).grad(src.neuron);
    }
    return std::abs(grad_sum / steps * (0.0 - clean_value));
}

Index nodes_to_keep(double fraction, Index width)
{
    // The epsilon keeps products like 0.1 * 30 = 3.0000000000000004 at 3.
    const auto k = static_cast<Index>(std::ceil(fraction * static_cast<double>(width) - 1e-9));
    return std::clamp<Index>(k, 1, width);
}

namespace {

// Indices of the k largest values; ties break by ascending index.
std::vector<Index> top_k_indices(const Eigen::VectorXd &values, Index k)
{
    std::vector<Index> idx(static_cast<std::size_t>(values.size()));
    std::iota(idx.begin(), idx.end(), Index{0});
    std::stable_sort(idx.begin(), idx.end(),
                     [&](Index a, Index b) { return values(a) > values(b); });
    idx.resize(static_cast<std::size_t>(std::min(k, values.size())));
    return idx;
}

} // namespace

Circuit discover_circuit(const ToyNetwork &net, const Eigen::MatrixXd &inputs, Index target_logit,
                         const AttributionConfig &cfg, std::string class_label,
                         std::string domain_label)
{
    cfg.validate();
    check_target(net, target_logit);
    if (inputs.rows() == 0)
        throw MissingDataError(fmt::format("no inputs for (domain '{}', class '{}')", domain_label,
                                           class_label));
    if (inputs.cols() != net.input_dim())
        throw ValidationError(fmt::format("inputs have {} columns, network expects {}",
                                          inputs.cols(), net.input_dim()));
    if (net.num_layers() < 2)
        throw ValidationError("circuit discovery needs at least one hidden layer");

    const Index hidden = net.num_layers() - 1;
    const auto n_inputs = static_cast<std::size_t>(inputs.rows());

    Circuit circuit;
    circuit.class_label = std::move(class_label);
    circuit.domain_label = std::move(domain_label);
    for (Index l = 0; l < hidden; ++l)
        circuit.layer_widths.push_back(net.layer_width(l));

    // Stage 1: node attribution, one job per input, reduced in input order.
    std::vector<std::vector<Eigen::VectorXd>> per_input(n_inputs);
    parallel_for(n_inputs, [&](std::size_t i) {
        const Eigen::VectorXd x = inputs.row(static_cast<Index>(i)).transpose();
        auto &out = per_input[i];
        for (Index l = 0; l < hidden; ++l) {
            const Eigen::VectorXd zeros = Eigen::VectorXd::Zero(net.layer_width(l));
            out.push_back(indirect_effect_ig(net, x, l, zeros, cfg.ig_steps, target_logit));
        }
    });

    for (Index l = 0; l < hidden; ++l) {
        Eigen::VectorXd mean_signed = Eigen::VectorXd::Zero(net.layer_width(l));
        Eigen::VectorXd mean_abs = Eigen::VectorXd::Zero(net.layer_width(l));
        for (const auto &attr : per_input) {
            mean_signed += attr[static_cast<std::size_t>(l)];
            mean_abs += attr[static_cast<std::size_t>(l)].cwiseAbs();
        }
        mean_signed /= static_cast<double>(n_inputs);
        mean_abs /= static_cast<double>(n_inputs);
        for (Index n : top_k_indices(mean_abs, nodes_to_keep(cfg.node_keep_fraction,
                                                             net.layer_width(l)))) {
            const NodeId node{l, n};
            circuit.nodes.push_back(node);
            circuit.node_scores[node] = mean_signed(n);
        }
    }
    std::sort(circuit.nodes.begin(), circuit.nodes.end());

    // Stage 2: incoming edges from kept nodes in earlier layers.
    struct EdgeJob {
        NodeId src, dst;
    };
    std::vector<EdgeJob> jobs;
    for (const auto &dst : circuit.nodes)
        for (const auto &src : circuit.nodes)
            if (src.layer < dst.layer)
                jobs.push_back({src, dst});

    std::vector<double> effects(jobs.size(), 0.0);
    parallel_for(jobs.size(), [&](std::size_t j) {
        double sum = 0.0;
        for (Index i = 0; i < inputs.rows(); ++i)
            sum += edge_effect_ig(net, inputs.row(i).transpose(), jobs[j].src, jobs[j].dst,
                                  cfg.ig_steps);
        effects[j] = sum / static_cast<double>(n_inputs);
    });

    // Jobs are grouped by dst and, within a dst, ordered by ascending src.
    std::size_t begin = 0;
    while (begin < jobs.size()) {
        std::size_t end = begin;
        while (end < jobs.size() && jobs[end].dst == jobs[begin].dst)
            ++end;
        std::vector<std::size_t> order(end - begin);
        std::iota(order.begin(), order.end(), begin);
        std::stable_sort(order.begin(), order.end(),
                         [&](std::size_t a, std::size_t b) { return effects[a] > effects[b]; });
        int kept = 0;
        for (std::size_t j : order) {
            if (kept == cfg.edges_per_node || !(effects[j] > 0.0))
                break;
            circuit.edges.push_back({jobs[j].src, jobs[j].dst, effects[j]});
            ++kept;
        }
        begin = end;
    }
    return circuit;
}

std::string circuit_to_json(const Circuit &circuit)
{
    json doc;
    doc["class"] = circuit.class_label;
    doc["domain"] = circuit.domain_label;
    doc["layer_widths"] = circuit.layer_widths;
    doc["nodes"] = json::array();
    for (const auto &n : circuit.nodes) {
        const auto it = circuit.node_scores.find(n);
        doc["nodes"].push_back({{"label", node_label(n)},
                                {"layer", n.layer},
                                {"neuron", n.neuron},
                                {"score", it == circuit.node_scores.end() ? 0.0 : it->second}});
    }
    doc["edges"] = json::array();
    for (const auto &e : circuit.edges)
        doc["edges"].push_back(
            {{"src", node_label(e.src)}, {"dst", node_label(e.dst)}, {"effect", e.effect}});
    return doc.dump(2) + "\n";
}

Circuit circuit_from_json(const std::string &text)
{
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error &e) {
        throw FormatError(fmt::format("circuit file: {}", e.what()));
    }
    Circuit c;
    try {
        c.class_label = doc.at("class").get<std::string>();
        c.domain_label = doc.at("domain").get<std::string>();
        if (doc.contains("layer_widths"))
            c.layer_widths = doc["layer_widths"].get<std::vector<Index>>();
        for (const auto &n : doc.at("nodes")) {
            const NodeId id{n.at("layer").get<Index>(), n.at("neuron").get<Index>()};
            if (n.contains("label") && parse_node_label(n["label"].get<std::string>()) != id)
                throw FormatError(fmt::format("node label '{}' disagrees with layer/neuron fields",
                                              n["label"].get<std::string>()));
            c.nodes.push_back(id);
            c.node_scores[id] = n.value("score", 0.0);
        }
        for (const auto &e : doc.at("edges"))
            c.edges.push_back({parse_node_label(e.at("src").get<std::string>()),
                               parse_node_label(e.at("dst").get<std::string>()),
                               e.value("effect", 0.0)});
    } catch (const json::exception &e) {
        throw FormatError(fmt::format("circuit file: {}", e.what()));
    }
    std::sort(c.nodes.begin(), c.nodes.end());
    c.validate();
    return c;
}

void save_circuit(const Circuit &circuit, const std::filesystem::path &path)
{
    std::ofstream out(path);
    if (!out)
        throw FormatError(fmt::format("cannot write circuit file '{}'", path.string()));
    out << circuit_to_json(circuit);
}

Circuit load_circuit(const std::filesystem::path &path)
{
    std::ifstream in(path);
    if (!in)
        throw FormatError(fmt::format("cannot open circuit file '{}'", path.string()));
    std::ostringstream buf;
    buf << in.rdbuf();
    return circuit_from_json(buf.str());
}

std::string circuit_to_dot(const Circuit &circuit)
{
    std::string out = fmt::format("digraph \"{}/{}\" {{\n  rankdir=LR;\n", circuit.class_label,
                                  circuit.domain_label);
    for (const auto &n : circuit.nodes)
        out += fmt::format("  \"{}\";\n", node_label(n));
    for (const auto &e : circuit.edges)
        out += fmt::format("  \"{}\" -> \"{}\" [label=\"{:.4g}\"];\n", node_label(e.src),
                           node_label(e.dst), e.effect);
    out += "}\n";
    return out;
}

} // namespace mechsim
