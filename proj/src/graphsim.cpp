#include "mechsim/graphsim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <fmt/format.h>

#include "mechsim/error.hpp"

namespace mechsim {

void LabeledGraph::add_edge(const std::string &src, const std::string &dst)
{
    nodes.insert(src);
    nodes.insert(dst);
    edges.emplace(src, dst);
}

void LabeledGraph::validate() const
{
    for (const auto &[src, dst] : edges) {
        if (src == dst)
            throw ValidationError(fmt::format("self-loop on node '{}'", src));
        if (!nodes.count(src) || !nodes.count(dst))
            throw ValidationError(fmt::format("edge {} -> {} has an unknown endpoint", src, dst));
    }
}

LabeledGraph LabeledGraph::from_circuit(const Circuit &circuit)
{
    LabeledGraph g;
    for (const auto &n : circuit.nodes)
        g.nodes.insert(node_label(n));
    for (const auto &e : circuit.edges)
        g.edges.emplace(node_label(e.src), node_label(e.dst));
    g.validate();
    return g;
}

int WlDictionary::raw(const std::string &label)
{
    const auto [it, inserted] = raw_ids_.try_emplace(label, static_cast<int>(raw_names_.size()));
    if (inserted)
        raw_names_.push_back(label);
    return it->second;
}

int WlDictionary::compress(int iteration, int label, std::vector<int> sorted_neighbors)
{
    if (iteration < 1)
        throw ValidationError("WlDictionary::compress: iteration must be >= 1");
    const auto slot = static_cast<std::size_t>(iteration - 1);
    if (ids_.size() <= slot) {
        ids_.resize(slot + 1);
        sigs_.resize(slot + 1);
    }
    Signature sig{label, std::move(sorted_neighbors)};
    const auto [it, inserted] =
        ids_[slot].try_emplace(sig, static_cast<int>(sigs_[slot].size()));
    if (inserted)
        sigs_[slot].push_back(std::move(sig));
    return it->second;
}

std::string WlDictionary::render(int iteration, int id) const
{
    if (iteration == 0)
        return raw_names_.at(static_cast<std::size_t>(id));
    const auto &[label, neighbors] =
        sigs_.at(static_cast<std::size_t>(iteration - 1)).at(static_cast<std::size_t>(id));
    std::string out = "(" + render(iteration - 1, label) + ",[";
    for (std::size_t i = 0; i < neighbors.size(); ++i) {
        if (i)
            out += ",";
        out += render(iteration - 1, neighbors[i]);
    }
    return out + "])";
}

int WlDictionary::size(int iteration) const
{
    if (iteration == 0)
        return static_cast<int>(raw_names_.size());
    const auto slot = static_cast<std::size_t>(iteration - 1);
    return slot < sigs_.size() ? static_cast<int>(sigs_[slot].size()) : 0;
}

WlFeatureVector wl_features(const LabeledGraph &g, int h, WlDictionary &dict)
{
    if (h < 0)
        throw ValidationError(fmt::format("WL iterations must be >= 0, got {}", h));
    g.validate();

    const std::vector<std::string> order(g.nodes.begin(), g.nodes.end());
    std::map<std::string, std::size_t> position;
    for (std::size_t i = 0; i < order.size(); ++i)
        position[order[i]] = i;
    std::vector<std::vector<std::size_t>> preds(order.size());
    for (const auto &[src, dst] : g.edges)
        preds[position[dst]].push_back(position[src]);

    WlFeatureVector features;
    std::vector<int> labels(order.size());
    features.counts.emplace_back();
    for (std::size_t i = 0; i < order.size(); ++i) {
        labels[i] = dict.raw(order[i]);
        ++features.counts.back()[labels[i]];
    }

    for (int it = 1; it <= h; ++it) {
        std::vector<int> next(order.size());
        features.counts.emplace_back();
        for (std::size_t i = 0; i < order.size(); ++i) {
            std::vector<int> neigh;
            neigh.reserve(preds[i].size());
            for (auto p : preds[i])
                neigh.push_back(labels[p]);
            std::sort(neigh.begin(), neigh.end());
            next[i] = dict.compress(it, labels[i], std::move(neigh));
            ++features.counts.back()[next[i]];
        }
        labels = std::move(next);
    }
    return features;
}

WlFeatureVector wl_features(const LabeledGraph &g, int h)
{
    WlDictionary dict;
    return wl_features(g, h, dict);
}

double wl_kernel(const WlFeatureVector &a, const WlFeatureVector &b)
{
    const auto iters = std::min(a.counts.size(), b.counts.size());
    double k = 0.0;
    for (std::size_t it = 0; it < iters; ++it)
        for (const auto &[label, count] : a.counts[it]) {
            const auto found = b.counts[it].find(label);
            if (found != b.counts[it].end())
                k += static_cast<double>(count) * found->second;
        }
    return k;
}

Eigen::MatrixXd wl_similarity_matrix(const std::vector<LabeledGraph> &graphs, int h)
{
    WlDictionary dict;
    std::vector<WlFeatureVector> features;
    for (const auto &g : graphs) {
        if (g.nodes.empty())
            throw ValidationError("WL similarity is undefined for an empty graph");
        features.push_back(wl_features(g, h, dict));
    }
    const auto n = static_cast<Index>(graphs.size());
    Eigen::VectorXd self(n);
    for (Index i = 0; i < n; ++i)
        self(i) = wl_kernel(features[static_cast<std::size_t>(i)],
                            features[static_cast<std::size_t>(i)]);
    Eigen::MatrixXd m(n, n);
    for (Index i = 0; i < n; ++i)
        for (Index j = i; j < n; ++j) {
            const double k = wl_kernel(features[static_cast<std::size_t>(i)],
                                       features[static_cast<std::size_t>(j)]);
            m(i, j) = m(j, i) = k / std::sqrt(self(i) * self(j));
        }
    return m;
}

double wl_similarity(const LabeledGraph &g1, const LabeledGraph &g2, int h)
{
    return wl_similarity_matrix({g1, g2}, h)(0, 1);
}

JaccardResult jaccard_nodes(const Circuit &a, const Circuit &b)
{
    if (!a.layer_widths.empty() && !b.layer_widths.empty() && a.layer_widths != b.layer_widths)
        throw ValidationError(fmt::format("circuits {}/{} and {}/{} come from different network "
                                          "topologies",
                                          a.class_label, a.domain_label, b.class_label,
                                          b.domain_label));
    Index layers = static_cast<Index>(std::max(a.layer_widths.size(), b.layer_widths.size()));
    for (const auto *c : {&a, &b})
        for (const auto &n : c->nodes)
            layers = std::max(layers, n.layer + 1);

    std::vector<std::set<Index>> sa(static_cast<std::size_t>(layers));
    std::vector<std::set<Index>> sb(static_cast<std::size_t>(layers));
    for (const auto &n : a.nodes)
        sa[static_cast<std::size_t>(n.layer)].insert(n.neuron);
    for (const auto &n : b.nodes)
        sb[static_cast<std::size_t>(n.layer)].insert(n.neuron);

    JaccardResult out;
    double sum = 0.0;
    for (Index l = 0; l < layers; ++l) {
        const auto &x = sa[static_cast<std::size_t>(l)];
        const auto &y = sb[static_cast<std::size_t>(l)];
        std::size_t inter = 0;
        for (auto v : x)
            inter += y.count(v);
        const std::size_t uni = x.size() + y.size() - inter;
        const double j = uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
        out.per_layer[l] = j;
        sum += j;
    }
    out.overall = layers == 0 ? 1.0 : sum / static_cast<double>(layers);
    return out;
}

CircuitSimilarityReport compare_circuits(const std::vector<Circuit> &circuits, int h)
{
    CircuitSimilarityReport report;
    std::vector<std::string> domains;
    for (const auto &c : circuits)
        if (std::find(domains.begin(), domains.end(), c.domain_label) == domains.end())
            domains.push_back(c.domain_label);

    const auto nd = static_cast<Index>(domains.size());
    Eigen::MatrixXd jac_sum = Eigen::MatrixXd::Zero(nd, nd);
    Eigen::MatrixXd wl_sum = Eigen::MatrixXd::Zero(nd, nd);
    Eigen::MatrixXi count = Eigen::MatrixXi::Zero(nd, nd);
    auto domain_index = [&](const std::string &d) {
        return static_cast<Index>(std::find(domains.begin(), domains.end(), d) - domains.begin());
    };

    for (std::size_t i = 0; i < circuits.size(); ++i)
        for (std::size_t j = i + 1; j < circuits.size(); ++j) {
            const auto &a = circuits[i];
            const auto &b = circuits[j];
            if (a.class_label != b.class_label)
                continue;
            CircuitPairScore s;
            s.class_label = a.class_label;
            s.domain_a = a.domain_label;
            s.domain_b = b.domain_label;
            s.jaccard = jaccard_nodes(a, b);
            s.wl = wl_similarity(LabeledGraph::from_circuit(a), LabeledGraph::from_circuit(b), h);
            const auto da = domain_index(a.domain_label);
            const auto db = domain_index(b.domain_label);
            if (da != db) {
                jac_sum(da, db) += s.jaccard.overall;
                jac_sum(db, da) += s.jaccard.overall;
                wl_sum(da, db) += s.wl;
                wl_sum(db, da) += s.wl;
                ++count(da, db);
                ++count(db, da);
            }
            report.pairs.push_back(std::move(s));
        }

    report.jaccard.domains = domains;
    report.wl.domains = domains;
    report.jaccard.scores.resize(nd, nd);
    report.wl.scores.resize(nd, nd);
    const double nan = std::numeric_limits<double>::quiet_NaN();
    for (Index i = 0; i < nd; ++i)
        for (Index j = 0; j < nd; ++j) {
            if (i == j) {
                report.jaccard.scores(i, j) = report.wl.scores(i, j) = 1.0;
            } else if (count(i, j) == 0) {
                report.jaccard.scores(i, j) = report.wl.scores(i, j) = nan;
            } else {
                report.jaccard.scores(i, j) = jac_sum(i, j) / count(i, j);
                report.wl.scores(i, j) = wl_sum(i, j) / count(i, j);
            }
        }
    return report;
}

std::string circuit_pairs_csv(const CircuitSimilarityReport &report)
{
    std::string out = "class,domain_a,domain_b,jaccard_overall,wl_similarity\n";
    for (const auto &p : report.pairs)
        out += fmt::format("{},{},{},{:.12g},{:.12g}\n", p.class_label, p.domain_a, p.domain_b,
                           p.jaccard.overall, p.wl);
    return out;
}

std::string circuit_layers_csv(const CircuitSimilarityReport &report)
{
    std::string out = "class,domain_a,domain_b,layer,jaccard\n";
    for (const auto &p : report.pairs)
        for (const auto &[layer, j] : p.jaccard.per_layer)
            out += fmt::format("{},{},{},{},{:.12g}\n", p.class_label, p.domain_a, p.domain_b,
                               layer, j);
    return out;
}

std::string circuit_summary_csv(const CircuitSimilarityReport &report)
{
    std::string out = "domain_a,domain_b,jaccard_overall,wl_similarity\n";
    const auto nd = static_cast<Index>(report.jaccard.domains.size());
    for (Index i = 0; i < nd; ++i)
        for (Index j = i + 1; j < nd; ++j)
            out += fmt::format("{},{},{:.12g},{:.12g}\n",
                               report.jaccard.domains[static_cast<std::size_t>(i)],
                               report.jaccard.domains[static_cast<std::size_t>(j)],
                               report.jaccard.scores(i, j), report.wl.scores(i, j));
    return out;
}

} // namespace mechsim
