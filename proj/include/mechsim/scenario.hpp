#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mechsim/activations.hpp"
#include "mechsim/circuits.hpp"
#include "mechsim/graphsim.hpp"
#include "mechsim/network.hpp"
#include "mechsim/report.hpp"

namespace mechsim {

/// Desk-scale setting with one network and two disjoint pathways. Domains
/// A, B and C drive the shared pathway with a common set of class prototypes
/// (plus a per-domain shift); the test domain Q drives a separate pathway with
/// its own prototypes. The readout of each pathway is fitted by least squares
/// so every class logit is recoverable from either pathway.
struct SharedPathwayScenario {
    ToyNetwork network;
    ActivationSet inputs;
    std::vector<std::string> domains;
    std::vector<std::string> classes;
    std::string test_domain;
    Index representation_layer = 1;
};

struct ScenarioOptions {
    std::uint64_t seed = 7;
    Index num_classes = 6;
    Index prototype_dim = 6;
    Index pathway_width = 10;
    Index hidden_layers = 3;
    Index samples_per_group = 8;
    double domain_shift = 0.3;
    double noise = 0.1;
};

SharedPathwayScenario make_shared_pathway_scenario(const ScenarioOptions &options = {});

struct ScenarioReport {
    std::vector<Circuit> circuits;
    CircuitSimilarityReport circuit_similarity;
    DomainPairScores cka;

    double jaccard_test = 0.0, jaccard_others = 0.0;
    double wl_test = 0.0, wl_others = 0.0;
    double cka_test = 0.0, cka_others = 0.0;
};

/// Discovers one circuit per (domain, class) with target logit = class index,
/// compares circuits across domains, and runs linear CKA on the
/// representation layer. Summaries are "test vs others" and "others vs others".
ScenarioReport run_scenario_pipeline(const SharedPathwayScenario &scenario,
                                     const AttributionConfig &cfg = {},
                                     int wl_iterations = kDefaultWlIterations);

} // namespace mechsim
