#include "mechsim/network.hpp"

#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include <fmt/format.h>
#include <json.hpp>

#include "mechsim/error.hpp"

namespace mechsim {

using json = nlohmann::json;

std::string to_string(Activation a)
{
    return a == Activation::ReLU ? "relu" : "identity";
}

Activation parse_activation(const std::string &name)
{
    if (name == "relu" || name == "ReLU")
        return Activation::ReLU;
    if (name == "identity" || name == "Identity")
        return Activation::Identity;
    throw FormatError(fmt::format("unknown activation '{}'", name));
}

ToyNetwork::ToyNetwork(Index input_dim, std::vector<DenseLayer> layers)
    : input_dim_{input_dim}, layers_{std::move(layers)}
{
    if (input_dim_ <= 0)
        throw ValidationError(fmt::format("network input_dim must be positive, got {}", input_dim_));
    if (layers_.empty())
        throw ValidationError("network must have at least one layer");
    Index expected_in = input_dim_;
    for (std::size_t k = 0; k < layers_.size(); ++k) {
        const auto &layer = layers_[k];
        if (layer.out_dim() <= 0)
            throw ValidationError(fmt::format("layer {}: output dimension must be positive", k));
        if (layer.in_dim() != expected_in)
            throw ValidationError(fmt::format("layer {}: input dimension {} does not match previous "
                                              "output dimension {}",
                                              k, layer.in_dim(), expected_in));
        if (layer.bias.size() != layer.out_dim())
            throw ValidationError(fmt::format("layer {}: bias length {} does not match {} rows", k,
                                              layer.bias.size(), layer.out_dim()));
        expected_in = layer.out_dim();
    }
}

Index ToyNetwork::layer_width(Index layer) const
{
    return this->layer(layer).out_dim();
}

const DenseLayer &ToyNetwork::layer(Index l) const
{
    if (l < 0 || l >= num_layers())
        throw ValidationError(fmt::format("layer index {} out of range [0, {})", l, num_layers()));
    return layers_[static_cast<std::size_t>(l)];
}

Eigen::VectorXd apply_layer(const DenseLayer &layer, const Eigen::Ref<const Eigen::VectorXd> &x)
{
    Eigen::VectorXd y = layer.weights * x + layer.bias;
    if (layer.activation == Activation::ReLU)
        y = y.cwiseMax(0.0);
    return y;
}

ForwardResult forward(const ToyNetwork &net, const Eigen::Ref<const Eigen::VectorXd> &input)
{
    if (input.size() != net.input_dim())
        throw ValidationError(fmt::format("input length {} does not match network input_dim {}",
                                          input.size(), net.input_dim()));
    ForwardResult out;
    out.acts.reserve(static_cast<std::size_t>(net.num_layers()));
    Eigen::VectorXd x = input;
    for (const auto &layer : net.layers()) {
        x = apply_layer(layer, x);
        out.acts.push_back(x);
    }
    out.logits = out.acts.back();
    return out;
}

Eigen::VectorXd forward_from(const ToyNetwork &net, Index from_layer,
                             const Eigen::Ref<const Eigen::VectorXd> &activation)
{
    if (activation.size() != net.layer_width(from_layer))
        throw ValidationError(fmt::format("activation length {} does not match layer {} width {}",
                                          activation.size(), from_layer,
                                          net.layer_width(from_layer)));
    Eigen::VectorXd x = activation;
    for (Index l = from_layer + 1; l < net.num_layers(); ++l)
        x = apply_layer(net.layer(l), x);
    return x;
}

Eigen::VectorXd forward_with_intervention(const ToyNetwork &net,
                                          const Eigen::Ref<const Eigen::VectorXd> &input,
                                          Index layer,
                                          const Eigen::Ref<const Eigen::VectorXd> &patched)
{
    if (layer < 0 || layer >= net.num_layers())
        throw ValidationError(
            fmt::format("intervention layer {} out of range [0, {})", layer, net.num_layers()));
    if (input.size() != net.input_dim())
        throw ValidationError(fmt::format("input length {} does not match network input_dim {}",
                                          input.size(), net.input_dim()));
    if (patched.size() != net.layer_width(layer))
        throw ValidationError(fmt::format("patched length {} does not match layer {} width {}",
                                          patched.size(), layer, net.layer_width(layer)));
    // Upstream layers do not influence the result once the layer is replaced.
    return forward_from(net, layer, patched);
}

namespace {

template <typename T>
T require(const json &obj, const std::string &key, const std::string &context)
{
    if (!obj.contains(key))
        throw FormatError(fmt::format("{}: missing field '{}'", context, key));
    try {
        return obj.at(key).get<T>();
    } catch (const json::exception &e) {
        throw FormatError(fmt::format("{}.{}: {}", context, key, e.what()));
    }
}

} // namespace

ToyNetwork parse_network(const std::string &text)
{
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error &e) {
        throw FormatError(fmt::format("network file: {}", e.what()));
    }
    if (!doc.is_object())
        throw FormatError("network file: top level must be an object");

    const auto input_dim = require<Index>(doc, "input_dim", "network");
    if (!doc.contains("layers") || !doc["layers"].is_array())
        throw FormatError("network: missing array field 'layers'");

    std::vector<DenseLayer> layers;
    const auto &arr = doc["layers"];
    for (std::size_t k = 0; k < arr.size(); ++k) {
        const auto ctx = fmt::format("layers[{}]", k);
        const auto &entry = arr[k];
        if (!entry.is_object())
            throw FormatError(ctx + ": expected an object");
        const auto rows = require<Index>(entry, "rows", ctx);
        const auto cols = require<Index>(entry, "cols", ctx);
        if (rows <= 0 || cols <= 0)
            throw FormatError(fmt::format("{}: rows and cols must be positive", ctx));
        const auto act = parse_activation(require<std::string>(entry, "activation", ctx));
        const auto w = require<std::vector<double>>(entry, "weights", ctx);
        const auto b = require<std::vector<double>>(entry, "bias", ctx);
        if (static_cast<Index>(w.size()) != rows * cols)
            throw FormatError(fmt::format("{}.weights: expected {} values (rows*cols), got {}", ctx,
                                          rows * cols, w.size()));
        if (static_cast<Index>(b.size()) != rows)
            throw FormatError(
                fmt::format("{}.bias: expected {} values, got {}", ctx, rows, b.size()));

        DenseLayer layer;
        layer.weights = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                                       Eigen::RowMajor>>(w.data(), rows, cols);
        layer.bias = Eigen::Map<const Eigen::VectorXd>(b.data(), rows);
        layer.activation = act;
        layers.push_back(std::move(layer));
    }
    return ToyNetwork(input_dim, std::move(layers));
}

ToyNetwork load_network(const std::filesystem::path &path)
{
    std::ifstream in(path);
    if (!in)
        throw FormatError(fmt::format("cannot open network file '{}'", path.string()));
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_network(buf.str());
}

std::string serialize_network(const ToyNetwork &net)
{
    json doc;
    doc["input_dim"] = net.input_dim();
    doc["layers"] = json::array();
    for (const auto &layer : net.layers()) {
        std::vector<double> w;
        w.reserve(static_cast<std::size_t>(layer.weights.size()));
        for (Index r = 0; r < layer.out_dim(); ++r)
            for (Index c = 0; c < layer.in_dim(); ++c)
                w.push_back(layer.weights(r, c));
        doc["layers"].push_back({{"rows", layer.out_dim()},
                                 {"cols", layer.in_dim()},
                                 {"activation", to_string(layer.activation)},
                                 {"weights", w},
                                 {"bias", std::vector<double>(layer.bias.begin(), layer.bias.end())}});
    }
    return doc.dump(2) + "\n";
}

void save_network(const ToyNetwork &net, const std::filesystem::path &path)
{
    std::ofstream out(path);
    if (!out)
        throw FormatError(fmt::format("cannot write network file '{}'", path.string()));
    out << serialize_network(net);
}

ToyNetwork random_network(std::span<const Index> dims, Activation hidden, std::uint64_t seed,
                          double bias_scale)
{
    if (dims.size() < 2)
        throw ValidationError("random_network needs at least input and output dimensions");
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<DenseLayer> layers;
    for (std::size_t k = 1; k < dims.size(); ++k) {
        DenseLayer layer;
        const double scale = 1.0 / std::sqrt(static_cast<double>(dims[k - 1]));
        layer.weights = Eigen::MatrixXd::NullaryExpr(dims[k], dims[k - 1],
                                                     [&] { return scale * normal(rng); });
        layer.bias =
            Eigen::VectorXd::NullaryExpr(dims[k], [&] { return bias_scale * normal(rng); });
        layer.activation = (k + 1 == dims.size()) ? Activation::Identity : hidden;
        layers.push_back(std::move(layer));
    }
    return ToyNetwork(dims[0], std::move(layers));
}

} // namespace mechsim
