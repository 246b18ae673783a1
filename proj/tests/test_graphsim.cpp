#include <doctest.h>

#include <Eigen/Eigenvalues>

#include "mechsim/error.hpp"
#include "mechsim/graphsim.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace mechsim;
using testing::Rng;

namespace {

Circuit make_circuit(std::string cls, std::string domain, std::vector<NodeId> nodes,
                     std::vector<Index> widths = {6, 6, 6})
{
    Circuit c;
    c.class_label = std::move(cls);
    c.domain_label = std::move(domain);
    c.layer_widths = std::move(widths);
    std::sort(nodes.begin(), nodes.end());
    c.nodes = std::move(nodes);
    return c;
}

/// Random DAG over layered labels "L{l}:N{n}" drawn from a small label pool,
/// so that different graphs share some labels.
LabeledGraph random_dag(Rng &rng, int n_nodes)
{
    LabeledGraph g;
    std::vector<NodeId> ids;
    while (static_cast<int>(ids.size()) < n_nodes) {
        const NodeId id{static_cast<Index>(rng.below(3)), static_cast<Index>(rng.below(4))};
        if (std::find(ids.begin(), ids.end(), id) == ids.end())
            ids.push_back(id);
    }
    for (const auto &id : ids)
        g.nodes.insert(node_label(id));
    for (const auto &a : ids)
        for (const auto &b : ids)
            if (a.layer < b.layer && rng.uniform() < 0.5)
                g.add_edge(node_label(a), node_label(b));
    return g;
}

oracle::Graph to_oracle(const LabeledGraph &g) { return {g.nodes, g.edges}; }

} // namespace

TEST_SUITE("graphsim")
{
    TEST_CASE("jaccard examples")
    {
        const auto a = make_circuit("c", "A", {{0, 1}, {0, 2}, {0, 3}, {1, 0}});
        const auto b = make_circuit("c", "B", {{0, 2}, {0, 3}, {0, 4}, {1, 5}});
        const auto r = jaccard_nodes(a, b);
        CHECK(r.per_layer.at(0) == 0.5);
        CHECK(r.per_layer.at(1) == 0.0);
        CHECK(r.per_layer.at(2) == 1.0); // empty in both
        CHECK(r.overall == doctest::Approx(0.5));

        const auto self = jaccard_nodes(a, a);
        for (const auto &[layer, v] : self.per_layer)
            CHECK(v == 1.0);
        CHECK(self.overall == 1.0);

        const auto other = make_circuit("c", "B", {{0, 1}}, {6, 6});
        CHECK_THROWS_AS(jaccard_nodes(a, other), ValidationError);
    }

    TEST_CASE("wl features of tiny graphs")
    {
        LabeledGraph single;
        single.nodes = {"A"};
        WlDictionary dict;
        const auto f = wl_features(single, 1, dict);
        REQUIRE(f.counts.size() == 2);
        REQUIRE(f.counts[0].size() == 1);
        CHECK(dict.render(0, f.counts[0].begin()->first) == "A");
        CHECK(f.counts[0].begin()->second == 1);
        CHECK(dict.render(1, f.counts[1].begin()->first) == "(A,[])");
        CHECK(f.counts[1].begin()->second == 1);
    }

    TEST_CASE("wl features of a 4-node path, h = 2")
    {
        // a -> b -> c -> d, enumerated by hand:
        //   it0: a b c d
        //   it1: (a,[]) (b,[a]) (c,[b]) (d,[c])
        //   it2: ((a,[]),[]) ((b,[a]),[(a,[])]) ((c,[b]),[(b,[a])]) ((d,[c]),[(c,[b])])
        LabeledGraph g;
        g.nodes = {"a", "b", "c", "d"};
        g.add_edge("a", "b");
        g.add_edge("b", "c");
        g.add_edge("c", "d");
        WlDictionary dict;
        const auto f = wl_features(g, 2, dict);
        const std::vector<std::set<std::string>> expected = {
            {"a", "b", "c", "d"},
            {"(a,[])", "(b,[a])", "(c,[b])", "(d,[c])"},
            {"((a,[]),[])", "((b,[a]),[(a,[])])", "((c,[b]),[(b,[a])])", "((d,[c]),[(c,[b])])"}};
        REQUIRE(f.counts.size() == 3);
        for (int it = 0; it <= 2; ++it) {
            std::set<std::string> got;
            for (const auto &[id, count] : f.counts[static_cast<std::size_t>(it)]) {
                CHECK(count == 1);
                got.insert(dict.render(it, id));
            }
            CHECK(got == expected[static_cast<std::size_t>(it)]);
        }
    }

    TEST_CASE("wl signatures list sorted predecessors")
    {
        // Predecessor labels are sorted inside the signature.
        LabeledGraph g;
        g.nodes = {"a", "b", "c"};
        g.add_edge("a", "c");
        g.add_edge("b", "c");
        WlDictionary dict;
        const auto f = wl_features(g, 1, dict);
        std::map<std::string, int> it1;
        for (const auto &[id, count] : f.counts[1])
            it1[dict.render(1, id)] = count;
        CHECK(it1 == std::map<std::string, int>{{"(a,[])", 1}, {"(b,[])", 1}, {"(c,[a,b])", 1}});
    }

    TEST_CASE("wl similarity basics")
    {
        Rng rng(1);
        const auto g = random_dag(rng, 6);
        CHECK(wl_similarity(g, g, 3) == 1.0);

        LabeledGraph x, y;
        x.nodes = {"L0:N0", "L1:N0"};
        x.add_edge("L0:N0", "L1:N0");
        y.nodes = {"L0:N1", "L1:N1"};
        y.add_edge("L0:N1", "L1:N1");
        CHECK(wl_similarity(x, y, 3) == 0.0);

        LabeledGraph empty;
        CHECK_THROWS_AS(wl_similarity(empty, x, 3), ValidationError);
        LabeledGraph loop;
        loop.nodes = {"a"};
        loop.edges = {{"a", "a"}};
        CHECK_THROWS_AS(wl_similarity(loop, x), ValidationError);
    }

    TEST_CASE("wl similarity matches the uncompressed-string oracle")
    {
        Rng rng(2);
        for (int t = 0; t < 20; ++t) {
            const auto a = random_dag(rng, 6);
            const auto b = random_dag(rng, 6);
            const double got = wl_similarity(a, b, 3);
            const double ref = oracle::wl_similarity_strings(to_oracle(a), to_oracle(b), 3);
            CHECK(got == doctest::Approx(ref).epsilon(1e-14));
            CHECK(got == wl_similarity(b, a, 3));
            CHECK(got >= 0.0);
            CHECK(got <= 1.0);
        }
    }

    TEST_CASE("isomorphic relabelled copies have similarity 1")
    {
        Rng rng(3);
        const auto a = random_dag(rng, 6);
        LabeledGraph b; // same labels, edges inserted in reverse order
        for (auto it = a.nodes.rbegin(); it != a.nodes.rend(); ++it)
            b.nodes.insert(*it);
        for (auto it = a.edges.rbegin(); it != a.edges.rend(); ++it)
            b.add_edge(it->first, it->second);
        CHECK(wl_similarity(a, b) == 1.0);
    }

    TEST_CASE("wl kernel matrix is positive semi-definite")
    {
        Rng rng(4);
        for (int t = 0; t < 20; ++t) {
            std::vector<LabeledGraph> gs;
            for (int i = 0; i < 5; ++i)
                gs.push_back(random_dag(rng, 3 + static_cast<int>(rng.below(5))));
            const Eigen::MatrixXd k = wl_similarity_matrix(gs, 3);
            CHECK(k.diagonal() == Eigen::VectorXd::Ones(5));
            Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(k);
            CHECK(es.eigenvalues().minCoeff() >= -1e-9);
        }
    }

    TEST_CASE("graph from circuit")
    {
        auto c = make_circuit("c", "A", {{0, 1}, {1, 2}});
        c.edges = {{{0, 1}, {1, 2}, 0.7}};
        const auto g = LabeledGraph::from_circuit(c);
        CHECK(g.nodes == std::set<std::string>{"L0:N1", "L1:N2"});
        CHECK(g.edges.count({"L0:N1", "L1:N2"}) == 1);
    }

    TEST_CASE("compare circuits aggregates per class then per pair")
    {
        std::vector<Circuit> cs;
        cs.push_back(make_circuit("x", "A", {{0, 1}, {1, 1}}));
        cs.push_back(make_circuit("x", "B", {{0, 1}, {1, 1}}));
        cs.push_back(make_circuit("x", "Q", {{0, 4}, {1, 5}}));
        cs.push_back(make_circuit("y", "A", {{0, 2}}));
        cs.push_back(make_circuit("y", "B", {{0, 3}}));
        cs.push_back(make_circuit("y", "Q", {{0, 2}}));
        const auto rep = compare_circuits(cs, 3);
        CHECK(rep.pairs.size() == 6);
        const auto ia = rep.jaccard.index_of("A");
        const auto ib = rep.jaccard.index_of("B");
        const auto iq = rep.jaccard.index_of("Q");
        // class x: A-B = 1, class y: A-B layer0 = 0, layers 1,2 empty -> 2/3
        CHECK(rep.jaccard.scores(ia, ib) == doctest::Approx((1.0 + 2.0 / 3.0) / 2));
        CHECK(rep.jaccard.scores(ia, iq) == doctest::Approx((1.0 / 3.0 + 1.0) / 2));
        CHECK(rep.wl.scores(ia, ib) == doctest::Approx(0.5));
        CHECK(rep.wl.scores(ia, iq) == doctest::Approx(0.5));
        CHECK(rep.wl.scores(ib, iq) == doctest::Approx(0.0));
        CHECK(rep.jaccard.scores(ia, ia) == 1.0);

        const auto csv = circuit_pairs_csv(rep);
        CHECK(csv.rfind("class,domain_a,domain_b,jaccard_overall,wl_similarity\n", 0) == 0);
        CHECK(circuit_layers_csv(rep).rfind("class,domain_a,domain_b,layer,jaccard\n", 0) == 0);
        CHECK(circuit_summary_csv(rep).rfind("domain_a,domain_b,jaccard_overall,wl_similarity\n", 0) == 0);
    }
}
