#pragma once

#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "mechsim/circuits.hpp"
#include "mechsim/report.hpp"

namespace mechsim {

/// Directed graph with string-labelled nodes; labels are also node identities.
struct LabeledGraph {
    std::set<std::string> nodes;
    std::set<std::pair<std::string, std::string>> edges;

    void add_edge(const std::string &src, const std::string &dst);
    void validate() const;

    /// Nodes labelled "L{layer}:N{neuron}"; edge effects are dropped.
    static LabeledGraph from_circuit(const Circuit &circuit);
};

/// Label compression table shared by all graphs in one comparison. Iteration 0
/// maps raw labels, iteration i > 0 maps (label, sorted predecessor labels)
/// signatures. Ids are assigned in first-seen order and never collide.
class WlDictionary {
  public:
    int raw(const std::string &label);
    int compress(int iteration, int label, std::vector<int> sorted_neighbors);

    /// Human-readable signature, e.g. "(A,[B,C])" for iteration 1.
    std::string render(int iteration, int id) const;

    int size(int iteration) const;

  private:
    using Signature = std::pair<int, std::vector<int>>;
    std::map<std::string, int> raw_ids_;
    std::vector<std::string> raw_names_;
    std::vector<std::map<Signature, int>> ids_;  // per iteration >= 1
    std::vector<std::vector<Signature>> sigs_;
};

/// Per-iteration (0..h) histograms of compressed labels.
struct WlFeatureVector {
    std::vector<std::map<int, int>> counts;

    int iterations() const { return static_cast<int>(counts.size()) - 1; }
};

inline constexpr int kDefaultWlIterations = 3;

/// Weisfeiler-Lehman subtree features using predecessor neighbourhoods.
WlFeatureVector wl_features(const LabeledGraph &g, int h, WlDictionary &dict);
WlFeatureVector wl_features(const LabeledGraph &g, int h);

/// sum over iterations of the histogram dot products.
double wl_kernel(const WlFeatureVector &a, const WlFeatureVector &b);

/// K(G1,G2) / sqrt(K(G1,G1) K(G2,G2)) with a dictionary shared by both graphs.
double wl_similarity(const LabeledGraph &g1, const LabeledGraph &g2,
                     int h = kDefaultWlIterations);

/// Normalised WL kernel matrix over a set of graphs (one shared dictionary).
Eigen::MatrixXd wl_similarity_matrix(const std::vector<LabeledGraph> &graphs,
                                     int h = kDefaultWlIterations);

struct JaccardResult {
    std::map<Index, double> per_layer;
    double overall = 0.0;
};

/// Layer-wise Jaccard index of the node sets; 1 for a layer empty in both.
JaccardResult jaccard_nodes(const Circuit &a, const Circuit &b);

struct CircuitPairScore {
    std::string class_label;
    std::string domain_a;
    std::string domain_b;
    JaccardResult jaccard;
    double wl = 0.0;
};

struct CircuitSimilarityReport {
    std::vector<CircuitPairScore> pairs;
    /// Class-averaged scores per domain pair; NaN where no class has both
    /// circuits. Diagonal is 1.
    DomainPairScores jaccard;
    DomainPairScores wl;
};

/// Compares every pair of circuits that share a class label, then averages
/// the per-class scores over classes for each domain pair.
CircuitSimilarityReport compare_circuits(const std::vector<Circuit> &circuits,
                                         int h = kDefaultWlIterations);

/// `class,domain_a,domain_b,jaccard_overall,wl_similarity`
std::string circuit_pairs_csv(const CircuitSimilarityReport &report);
/// `class,domain_a,domain_b,layer,jaccard`
std::string circuit_layers_csv(const CircuitSimilarityReport &report);
/// `domain_a,domain_b,jaccard_overall,wl_similarity`, class-averaged.
std::string circuit_summary_csv(const CircuitSimilarityReport &report);

} // namespace mechsim
