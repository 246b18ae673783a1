#include "mechsim/scenario.hpp"

#include <random>

#include <fmt/format.h>

#include "mechsim/error.hpp"
#include "mechsim/rsa.hpp"

namespace mechsim {

SharedPathwayScenario make_shared_pathway_scenario(const ScenarioOptions &o)
{
    if (o.num_classes < 4 || o.hidden_layers < 1 || o.samples_per_group < 1)
        throw ValidationError("scenario needs >= 4 classes, >= 1 hidden layer, >= 1 sample");

    std::mt19937_64 rng(o.seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    auto gaussian = [&](Index r, Index c, double scale) {
        return Eigen::MatrixXd(
            Eigen::MatrixXd::NullaryExpr(r, c, [&] { return scale * normal(rng); }));
    };

    const Index k = o.prototype_dim;
    const Index w = o.pathway_width;
    const Index c = o.num_classes;

    const Eigen::MatrixXd shared_protos = gaussian(c, k, 1.0);
    const Eigen::MatrixXd test_protos = gaussian(c, k, 1.0);

    // Hidden layers: block diagonal, shared pathway first, no biases so an
    // idle pathway stays exactly zero.
    std::vector<DenseLayer> layers;
    {
        DenseLayer l0;
        l0.weights = Eigen::MatrixXd::Zero(2 * w, 2 * k);
        l0.weights.topLeftCorner(w, k) = gaussian(w, k, 1.0 / std::sqrt(double(k)));
        l0.weights.bottomRightCorner(w, k) = gaussian(w, k, 1.0 / std::sqrt(double(k)));
        l0.bias = Eigen::VectorXd::Zero(2 * w);
        l0.activation = Activation::ReLU;
        layers.push_back(std::move(l0));
    }
    for (Index l = 1; l < o.hidden_layers; ++l) {
        DenseLayer layer;
        layer.weights = Eigen::MatrixXd::Zero(2 * w, 2 * w);
        layer.weights.topLeftCorner(w, w) = gaussian(w, w, std::sqrt(2.0 / double(w)));
        layer.weights.bottomRightCorner(w, w) = gaussian(w, w, std::sqrt(2.0 / double(w)));
        layer.bias = Eigen::VectorXd::Zero(2 * w);
        layer.activation = Activation::ReLU;
        layers.push_back(std::move(layer));
    }

    SharedPathwayScenario s{ToyNetwork(2 * k, layers), {}, {"A", "B", "C", "Q"}, {}, "Q",
                            std::min<Index>(1, o.hidden_layers - 1)};
    for (Index i = 0; i < c; ++i)
        s.classes.push_back(fmt::format("class{}", i));

    // Inputs.
    const Index per_group = o.samples_per_group;
    const auto total = static_cast<Index>(s.domains.size()) * c * per_group;
    s.inputs.data = Eigen::MatrixXd::Zero(total, 2 * k);
    Index row = 0;
    for (const auto &d : s.domains) {
        const bool is_test = d == s.test_domain;
        const Eigen::RowVectorXd shift = gaussian(1, k, o.domain_shift);
        for (Index cls = 0; cls < c; ++cls)
            for (Index r = 0; r < per_group; ++r, ++row) {
                const Eigen::RowVectorXd x =
                    (is_test ? test_protos.row(cls) : shared_protos.row(cls)) + shift +
                    gaussian(1, k, o.noise);
                s.inputs.data.block(row, is_test ? k : 0, 1, k) = x;
                s.inputs.sample_ids.push_back(fmt::format("{}_{}_{}", d, cls, r));
                s.inputs.domains.push_back(d);
                s.inputs.classes.push_back(s.classes[static_cast<std::size_t>(cls)]);
            }
    }

    // Readout: per pathway, least squares from the last hidden layer of every
    // sample routed through that pathway to one-hot logits.
    const ToyNetwork hidden_only(2 * k, layers);
    const ActivationSet last = activations_at_layer(hidden_only, s.inputs, o.hidden_layers - 1);
    auto fit = [&](bool test_pathway) {
        std::vector<Index> rows;
        for (Index r = 0; r < last.rows(); ++r)
            if ((last.domains[static_cast<std::size_t>(r)] == s.test_domain) == test_pathway)
                rows.push_back(r);
        Eigen::MatrixXd a(static_cast<Index>(rows.size()), w);
        Eigen::MatrixXd y = Eigen::MatrixXd::Zero(a.rows(), c);
        for (Index i = 0; i < a.rows(); ++i) {
            const auto r = rows[static_cast<std::size_t>(i)];
            a.row(i) = last.data.block(r, test_pathway ? w : 0, 1, w);
            const auto &name = last.classes[static_cast<std::size_t>(r)];
            y(i, std::find(s.classes.begin(), s.classes.end(), name) - s.classes.begin()) = 1.0;
        }
        return Eigen::MatrixXd(a.completeOrthogonalDecomposition().solve(y).transpose());
    };
    DenseLayer out;
    out.weights.resize(c, 2 * w);
    out.weights.leftCols(w) = fit(false);
    out.weights.rightCols(w) = fit(true);
    out.bias = Eigen::VectorXd::Zero(c);
    out.activation = Activation::Identity;
    layers.push_back(std::move(out));

    s.network = ToyNetwork(2 * k, std::move(layers));
    return s;
}

ScenarioReport run_scenario_pipeline(const SharedPathwayScenario &s, const AttributionConfig &cfg,
                                     int wl_iterations)
{
    ScenarioReport report;
    for (const auto &d : s.domains)
        for (std::size_t cls = 0; cls < s.classes.size(); ++cls) {
            const auto rows = group_rows(s.inputs, d, s.classes[cls]);
            const ActivationSet group = select_rows(s.inputs, rows);
            report.circuits.push_back(discover_circuit(s.network, group.data,
                                                       static_cast<Index>(cls), cfg,
                                                       s.classes[cls], d));
        }
    report.circuit_similarity = compare_circuits(report.circuits, wl_iterations);

    const ActivationSet reps = activations_at_layer(s.network, s.inputs, s.representation_layer);
    report.cka = cross_domain_cka(reps, s.domains, s.classes);

    report.jaccard_test = report.circuit_similarity.jaccard.test_vs_others(s.test_domain);
    report.jaccard_others = report.circuit_similarity.jaccard.others_vs_others(s.test_domain);
    report.wl_test = report.circuit_similarity.wl.test_vs_others(s.test_domain);
    report.wl_others = report.circuit_similarity.wl.others_vs_others(s.test_domain);
    report.cka_test = report.cka.test_vs_others(s.test_domain);
    report.cka_others = report.cka.others_vs_others(s.test_domain);
    return report;
}

} // namespace mechsim
