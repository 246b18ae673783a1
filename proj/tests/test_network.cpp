#include <doctest.h>

#include <fstream>

#include "mechsim/activations.hpp"
#include "mechsim/error.hpp"
#include "mechsim/network.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace mechsim;
using testing::Rng;

namespace {

const char *kTwoLayerNet = R"({
  "input_dim": 3,
  "layers": [
    {"rows": 4, "cols": 3, "activation": "relu",
     "weights": [1, 0, 0,  0, 1, 0,  0, 0, 1,  1, 1, 1], "bias": [0, 0, 0, -1]},
    {"rows": 2, "cols": 4, "activation": "identity",
     "weights": [1, 2, 3, 4,  -1, 0, 1, 0], "bias": [0.5, -0.5]}
  ]
})";

DenseLayer layer(Eigen::MatrixXd w, Eigen::VectorXd b, Activation a)
{
    return DenseLayer{std::move(w), std::move(b), a};
}

} // namespace

TEST_SUITE("model-core")
{
    TEST_CASE("parse a 3-4-2 description")
    {
        const auto net = parse_network(kTwoLayerNet);
        CHECK(net.input_dim() == 3);
        CHECK(net.num_layers() == 2);
        CHECK(net.output_dim() == 2);
        CHECK(net.layer(0).activation == Activation::ReLU);
        CHECK(net.layer(1).weights(0, 3) == 4.0);
    }

    TEST_CASE("chaining mismatch names the layer")
    {
        std::string text = kTwoLayerNet;
        text.replace(text.find("\"rows\": 2, \"cols\": 4"), 20, "\"rows\": 2, \"cols\": 3");
        text.replace(text.find("[1, 2, 3, 4,  -1, 0, 1, 0]"), 26, "[1, 2, 3, -1, 0, 1]");
        try {
            parse_network(text);
            FAIL("expected a validation error");
        } catch (const ValidationError &e) {
            CHECK(std::string(e.what()).find("layer 1") != std::string::npos);
        }
    }

    TEST_CASE("empty layer list is rejected")
    {
        CHECK_THROWS_AS(parse_network(R"({"input_dim": 3, "layers": []})"), ValidationError);
    }

    TEST_CASE("malformed files report field context")
    {
        CHECK_THROWS_AS(parse_network("{not json"), FormatError);
        std::string text = kTwoLayerNet;
        text.replace(text.find("[1, 2, 3, 4,"), 12, "[1, 2, 3,");
        try {
            parse_network(text);
            FAIL("expected a format error");
        } catch (const FormatError &e) {
            CHECK(std::string(e.what()).find("layers[1].weights") != std::string::npos);
        }
    }

    TEST_CASE("network file round trip")
    {
        const auto net = testing::net_from_dims({3, 5, 4, 2}, Activation::ReLU, 11);
        const auto back = parse_network(serialize_network(net));
        REQUIRE(back.num_layers() == net.num_layers());
        for (Index l = 0; l < net.num_layers(); ++l) {
            CHECK(back.layer(l).weights == net.layer(l).weights);
            CHECK(back.layer(l).bias == net.layer(l).bias);
            CHECK(back.layer(l).activation == net.layer(l).activation);
        }
    }

    TEST_CASE("identity network passes the input through")
    {
        const ToyNetwork net(2, {layer(Eigen::MatrixXd::Identity(2, 2), Eigen::VectorXd::Zero(2),
                                       Activation::Identity)});
        const auto r = forward(net, Eigen::Vector2d(1, 2));
        CHECK(r.logits == Eigen::Vector2d(1, 2));
    }

    TEST_CASE("all-zero ReLU network gives zeros everywhere")
    {
        const ToyNetwork net(3, {layer(Eigen::MatrixXd::Zero(4, 3), Eigen::VectorXd::Zero(4),
                                       Activation::ReLU),
                                 layer(Eigen::MatrixXd::Zero(2, 4), Eigen::VectorXd::Zero(2),
                                       Activation::ReLU)});
        const auto r = forward(net, Eigen::Vector3d(1, -2, 3));
        for (const auto &a : r.acts)
            CHECK(a.isZero(0.0));
    }

    TEST_CASE("forward matches the naive matrix-multiply oracle")
    {
        Rng rng(5);
        for (std::uint64_t seed = 1; seed <= 5; ++seed) {
            const auto net = testing::net_from_dims({3, 4, 2}, Activation::ReLU, seed);
            const Eigen::VectorXd x = testing::gaussian_vector(rng, 3);
            const auto r = forward(net, x);
            const auto ref = oracle::forward(net, oracle::to_std(x));
            for (std::size_t l = 0; l < ref.size(); ++l)
                for (std::size_t i = 0; i < ref[l].size(); ++i)
                    CHECK(r.acts[l](static_cast<Index>(i)) == doctest::Approx(ref[l][i]).epsilon(1e-12));
            CHECK(r.logits == r.acts.back());
        }
    }

    TEST_CASE("intervention with the clean activation is a no-op")
    {
        Rng rng(6);
        const auto net = testing::net_from_dims({3, 6, 6, 2}, Activation::ReLU, 3);
        for (int t = 0; t < 10; ++t) {
            const Eigen::VectorXd x = testing::gaussian_vector(rng, 3);
            const auto clean = forward(net, x);
            for (Index l = 0; l < net.num_layers(); ++l)
                CHECK(forward_with_intervention(net, x, l, clean.acts[static_cast<std::size_t>(l)]) ==
                      clean.logits);
        }
    }

    TEST_CASE("patching the last layer returns the patch")
    {
        const auto net = testing::net_from_dims({3, 4, 2}, Activation::ReLU, 2);
        const Eigen::Vector2d patch(0.25, -7.0);
        CHECK(forward_with_intervention(net, Eigen::Vector3d(1, 2, 3), 1, patch) == patch);
    }

    TEST_CASE("zero patch of the hidden layer matches manual recomputation")
    {
        const auto net = testing::net_from_dims({3, 4, 2}, Activation::ReLU, 9);
        const Eigen::VectorXd got =
            forward_with_intervention(net, Eigen::Vector3d(0.3, -1.2, 2.0), 0, Eigen::VectorXd::Zero(4));
        // Zero hidden state leaves only the output bias.
        const auto expected = oracle::layer(net.layer(1), std::vector<double>(4, 0.0));
        CHECK(got(0) == doctest::Approx(expected[0]).epsilon(1e-15));
        CHECK(got(1) == doctest::Approx(expected[1]).epsilon(1e-15));
        CHECK(got == net.layer(1).bias);
    }

    TEST_CASE("intervention index errors")
    {
        const auto net = testing::net_from_dims({3, 4, 2}, Activation::ReLU, 1);
        CHECK_THROWS_AS(forward_with_intervention(net, Eigen::Vector3d(1, 2, 3), 2, Eigen::Vector2d(0, 0)),
                        ValidationError);
        CHECK_THROWS_AS(forward_with_intervention(net, Eigen::Vector3d(1, 2, 3), 0, Eigen::Vector2d(0, 0)),
                        ValidationError);
        CHECK_THROWS_AS(forward(net, Eigen::Vector2d(1, 2)), ValidationError);
    }

    TEST_CASE("ReLU outputs are non-negative and forward is deterministic")
    {
        Rng rng(17);
        const auto net = testing::net_from_dims({4, 8, 8, 3}, Activation::ReLU, 4);
        for (int t = 0; t < 200; ++t) {
            const Eigen::VectorXd x = testing::gaussian_vector(rng, 4, 3.0);
            const auto a = forward(net, x);
            const auto b = forward(net, x);
            CHECK(a.logits == b.logits);
            for (Index l = 0; l + 1 < net.num_layers(); ++l)
                CHECK(a.acts[static_cast<std::size_t>(l)].minCoeff() >= 0.0);
        }
    }
}

TEST_SUITE("activations")
{
    TEST_CASE("ACTS round trip of a 2x3 set")
    {
        testing::TempDir dir("acts_rt");
        ActivationSet s;
        s.data.resize(2, 3);
        s.data << 1.5, -2.25, 3.0, 0.125, 1e-3f, -4.0;
        s.sample_ids = {"a", "b"};
        s.domains = {"real", "sketch"};
        s.classes = {"dog", "cat"};
        save_activations(s, dir / "s.acts");
        const auto back = load_activations(dir / "s.acts");
        CHECK(back.data == s.data);
        CHECK(back.sample_ids == s.sample_ids);
        CHECK(back.domains == s.domains);
        CHECK(back.classes == s.classes);
    }

    TEST_CASE("ACTS payload bytes survive load and save")
    {
        testing::TempDir dir("acts_bytes");
        Rng rng(3);
        auto s = testing::random_set(rng, {"A", "B"}, {"x", "y"}, 3, 5);
        save_activations(s, dir / "a.acts");
        save_activations(load_activations(dir / "a.acts"), dir / "b.acts");
        CHECK(testing::slurp(dir / "a.acts") == testing::slurp(dir / "b.acts"));
        CHECK(testing::slurp(dir / "a.acts").substr(0, 4) == "ACTS");
        CHECK(testing::slurp(dir / "a.acts").size() == 4 + 4 + 8 + 8 + 12 * 5 * 4);
    }

    TEST_CASE("sidecar with more samples than rows is a format error")
    {
        testing::TempDir dir("acts_side");
        ActivationSet s;
        s.data = Eigen::MatrixXd::Ones(2, 3);
        s.sample_ids = {"a", "b"};
        s.domains = {"d", "d"};
        s.classes = {"c", "c"};
        save_activations(s, dir / "s.acts");
        testing::spit(dir / "s.acts.meta.json",
                      R"({"sample_ids":["a","b","c"],"domains":["d","d","d"],"classes":["c","c","c"]})");
        try {
            load_activations(dir / "s.acts");
            FAIL("expected a format error");
        } catch (const FormatError &e) {
            CHECK(std::string(e.what()).find("3 samples") != std::string::npos);
        }
    }

    TEST_CASE("truncated payload reports expected and actual bytes")
    {
        testing::TempDir dir("acts_trunc");
        ActivationSet s;
        s.data = Eigen::MatrixXd::Ones(2, 3);
        s.sample_ids = {"a", "b"};
        s.domains = {"d", "d"};
        s.classes = {"c", "c"};
        save_activations(s, dir / "s.acts");
        auto bytes = testing::slurp(dir / "s.acts");
        bytes.resize(bytes.size() - 5);
        testing::spit(dir / "s.acts", bytes);
        try {
            load_activations(dir / "s.acts");
            FAIL("expected a format error");
        } catch (const FormatError &e) {
            const std::string msg = e.what();
            CHECK(msg.find("expected 24 bytes") != std::string::npos);
            CHECK(msg.find("got 19") != std::string::npos);
        }
    }

    TEST_CASE("bad magic and version are format errors")
    {
        testing::TempDir dir("acts_magic");
        ActivationSet s;
        s.data = Eigen::MatrixXd::Ones(1, 1);
        s.sample_ids = {"a"};
        s.domains = {"d"};
        s.classes = {"c"};
        save_activations(s, dir / "s.acts");
        auto bytes = testing::slurp(dir / "s.acts");
        auto bad = bytes;
        bad[0] = 'X';
        testing::spit(dir / "s.acts", bad);
        CHECK_THROWS_AS(load_activations(dir / "s.acts"), FormatError);
        bad = bytes;
        bad[4] = 2;
        testing::spit(dir / "s.acts", bad);
        CHECK_THROWS_AS(load_activations(dir / "s.acts"), FormatError);
    }

    TEST_CASE("mean class embeddings")
    {
        ActivationSet s;
        s.data.resize(4, 2);
        s.data << 1, 2, 3, 4, 1, 2, 3, 4;
        s.sample_ids = {"0", "1", "2", "3"};
        s.domains = {"d", "d", "d", "d"};
        s.classes = {"a", "b", "a", "b"};
        const auto m = mean_class_embeddings(s, "d", {"b", "a"});
        CHECK(m.row(0) == Eigen::RowVector2d(3, 4));
        CHECK(m.row(1) == Eigen::RowVector2d(1, 2));
    }

    TEST_CASE("mean class embeddings match a per-group sum")
    {
        Rng rng(12);
        const auto s = testing::random_set(rng, {"A", "B"}, {"x", "y", "z"}, 3, 4);
        const std::vector<std::string> classes = {"z", "x", "y"};
        const auto m = mean_class_embeddings(s, "B", classes);
        for (std::size_t c = 0; c < classes.size(); ++c)
            for (Index j = 0; j < 4; ++j) {
                double sum = 0.0;
                int count = 0;
                for (Index r = 0; r < s.rows(); ++r)
                    if (s.domains[static_cast<std::size_t>(r)] == "B" &&
                        s.classes[static_cast<std::size_t>(r)] == classes[c]) {
                        sum += s.data(r, j);
                        ++count;
                    }
                CHECK(m(static_cast<Index>(c), j) == doctest::Approx(sum / count).epsilon(1e-14));
            }
    }

    TEST_CASE("empty group names the pair")
    {
        Rng rng(1);
        const auto s = testing::random_set(rng, {"A"}, {"x"}, 2, 3);
        try {
            mean_class_embeddings(s, "A", {"x", "missing"});
            FAIL("expected a missing-data error");
        } catch (const MissingDataError &e) {
            const std::string msg = e.what();
            CHECK(msg.find("A") != std::string::npos);
            CHECK(msg.find("missing") != std::string::npos);
        }
    }

    TEST_CASE("grouping partitions the rows")
    {
        Rng rng(2);
        const auto s = testing::random_set(rng, {"A", "B"}, {"x", "y", "z"}, 4, 2);
        const auto idx = group_by_domain_class(s);
        CHECK(idx.size() == 6);
        std::vector<int> seen(static_cast<std::size_t>(s.rows()), 0);
        for (const auto &[key, rows] : idx) {
            CHECK_FALSE(rows.empty());
            for (auto r : rows)
                ++seen[static_cast<std::size_t>(r)];
        }
        for (int v : seen)
            CHECK(v == 1);
    }
}
