#include <doctest.h>

#include <cmath>

#include "mechsim/error.hpp"
#include "mechsim/rsa.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace mechsim;
using testing::Rng;
using Eigen::MatrixXd;

TEST_SUITE("rsa")
{
    TEST_CASE("linear gram")
    {
        CHECK(gram_linear(MatrixXd::Identity(4, 4)).values == MatrixXd::Identity(4, 4));

        Rng rng(1);
        const MatrixXd x = testing::gaussian_matrix(rng, 5, 3);
        const auto g = gram_linear(x);
        CHECK(g.kind == KernelKind::Linear);
        CHECK((g.values - oracle::gram_loop(x)).cwiseAbs().maxCoeff() < 1e-13);
        CHECK(g.values == g.values.transpose());
        const auto scaled = gram_linear((2.5 * x).eval());
        CHECK((scaled.values - 6.25 * g.values).cwiseAbs().maxCoeff() < 1e-12);
    }

    TEST_CASE("float gram is supported")
    {
        const Eigen::MatrixXf x = Eigen::MatrixXf::Identity(4, 2);
        const auto g = gram_linear(x);
        static_assert(std::is_same_v<decltype(g.values)::Scalar, float>);
        CHECK(g.values(0, 0) == 1.0f);
    }

    TEST_CASE("rbf gram")
    {
        Rng rng(2);
        const MatrixXd x = testing::gaussian_matrix(rng, 5, 3);
        const auto g = gram_rbf(x, 1.0);
        CHECK(g.values.diagonal() == Eigen::VectorXd::Ones(5));
        CHECK((g.values - oracle::rbf_loop(x, 1.0)).cwiseAbs().maxCoeff() < 1e-14);

        const auto med = gram_rbf(x);
        CHECK(med.values.diagonal() == Eigen::VectorXd::Ones(5));
        CHECK(med.bandwidth == median_pairwise_distance(x));

        MatrixXd two(2, 2);
        two << 0, 0, 3, 4;
        const auto g2 = gram_rbf(two, 5.0);
        CHECK(g2.values(0, 1) == doctest::Approx(std::exp(-0.5)).epsilon(1e-15));
    }

    TEST_CASE("rbf with identical rows and median bandwidth is degenerate")
    {
        CHECK_THROWS_AS(gram_rbf(MatrixXd::Ones(4, 3)), DegenerateInputError);
        CHECK_THROWS_AS(gram_rbf(MatrixXd::Ones(4, 3), -1.0), ValidationError);
    }

    TEST_CASE("hsic needs four items")
    {
        CHECK_THROWS_AS(hsic_unbiased(MatrixXd::Identity(3, 3), MatrixXd::Identity(3, 3)),
                        ValidationError);
        CHECK_NOTHROW(hsic_unbiased(MatrixXd::Identity(4, 4), MatrixXd::Identity(4, 4)));
    }

    TEST_CASE("hsic matches the term-by-term oracle")
    {
        Rng rng(3);
        for (int t = 0; t < 20; ++t) {
            const MatrixXd k = testing::random_kernel(rng, 6);
            const MatrixXd l = testing::random_kernel(rng, 6);
            CHECK(std::abs(hsic_unbiased(k, l) - oracle::hsic_terms(k, l)) < 1e-10);
        }
    }

    TEST_CASE("hsic is symmetric and permutation invariant")
    {
        Rng rng(4);
        for (int t = 0; t < 10; ++t) {
            const MatrixXd k = testing::random_kernel(rng, 7);
            const MatrixXd l = testing::random_kernel(rng, 7);
            CHECK(std::abs(hsic_unbiased(k, l) - hsic_unbiased(l, k)) < 1e-12);

            Eigen::PermutationMatrix<Eigen::Dynamic> perm(7);
            perm.setIdentity();
            for (Index i = 6; i > 0; --i)
                std::swap(perm.indices()(i), perm.indices()(static_cast<Index>(rng.below(static_cast<std::uint64_t>(i + 1)))));
            const MatrixXd kp = perm * k * perm.transpose();
            const MatrixXd lp = perm * l * perm.transpose();
            CHECK(std::abs(hsic_unbiased(kp, lp) - hsic_unbiased(k, l)) <
                  1e-10 * std::max(1.0, std::abs(hsic_unbiased(k, l))));
        }
    }

    TEST_CASE("hsic is close to zero on average for independent data")
    {
        Rng rng(5);
        const int trials = 200;
        std::vector<double> v;
        for (int t = 0; t < trials; ++t) {
            const MatrixXd x = testing::gaussian_matrix(rng, 16, 4);
            const MatrixXd y = testing::gaussian_matrix(rng, 16, 4);
            v.push_back(hsic_unbiased(gram_linear(x), gram_linear(y)));
        }
        double mean = 0.0;
        for (double x : v)
            mean += x;
        mean /= trials;
        double var = 0.0;
        for (double x : v)
            var += (x - mean) * (x - mean);
        const double se = std::sqrt(var / (trials - 1) / trials);
        CHECK(std::abs(mean) < 3.0 * se);
    }

    TEST_CASE("cka examples")
    {
        Rng rng(6);
        const MatrixXd x = testing::gaussian_matrix(rng, 8, 5);
        const MatrixXd y = testing::gaussian_matrix(rng, 8, 5);
        const auto k = gram_linear(x);
        CHECK(cka(k, k) == 1.0);

        const MatrixXd q = testing::random_orthogonal(rng, 5);
        const auto kq = gram_linear((x * q).eval());
        CHECK((kq.values - k.values).cwiseAbs().maxCoeff() < 1e-12);
        CHECK(std::abs(cka(kq, gram_linear(y)) - cka(k, gram_linear(y))) < 1e-10);

        const auto ka = gram_linear((-3.0 * x).eval());
        CHECK(std::abs(cka(ka, gram_linear(y)) - cka(k, gram_linear(y))) < 1e-10);
        CHECK(std::abs(cka(k.values, gram_linear(y).values) -
                       oracle::cka_terms(k.values, gram_linear(y).values)) < 1e-10);
    }

    TEST_CASE("cka is invariant to positive kernel scaling")
    {
        Rng rng(7);
        for (int t = 0; t < 10; ++t) {
            const MatrixXd k = testing::random_kernel(rng, 8);
            const MatrixXd l = testing::random_kernel(rng, 8);
            const double a = rng.uniform(0.1, 10.0), b = rng.uniform(0.1, 10.0);
            CHECK(std::abs(cka((a * k).eval(), (b * l).eval()) - cka(k, l)) < 1e-10);
        }
    }

    TEST_CASE("cka rejects non-positive self-hsic")
    {
        const MatrixXd zero = MatrixXd::Zero(5, 5);
        CHECK_THROWS_AS(cka(zero, MatrixXd::Identity(5, 5)), DegenerateInputError);
    }

    TEST_CASE("cross-domain cka")
    {
        Rng rng(8);
        const std::vector<std::string> classes = {"a", "b", "c", "d", "e"};
        auto s = testing::random_set(rng, {"A", "B", "C"}, classes, 3, 4);

        SUBCASE("identical mean-class matrices score 1")
        {
            auto t = s;
            for (Index r = 0; r < t.rows(); ++r)
                if (t.domains[static_cast<std::size_t>(r)] == "B")
                    t.data.row(r) = t.data.row(r - 15);
            const auto rep = cross_domain_cka(t, {"A", "B"}, classes);
            CHECK(rep.scores(0, 1) == doctest::Approx(1.0).epsilon(1e-12));
            CHECK(rep.scores(0, 0) == 1.0);
        }
        SUBCASE("rotated domain scores 1")
        {
            auto t = s;
            const MatrixXd q = testing::random_orthogonal(rng, 4);
            for (Index r = 0; r < t.rows(); ++r)
                if (t.domains[static_cast<std::size_t>(r)] == "B")
                    t.data.row(r) = t.data.row(r - 15) * q;
            const auto rep = cross_domain_cka(t, {"A", "B"}, classes);
            CHECK(rep.scores(0, 1) == doctest::Approx(1.0).epsilon(1e-10));
        }
        SUBCASE("matches composition by hand")
        {
            const std::vector<std::string> domains = {"A", "B", "C"};
            const auto rep = cross_domain_cka(s, domains, classes);
            for (std::size_t i = 0; i < 3; ++i)
                for (std::size_t j = 0; j < 3; ++j) {
                    if (i == j) {
                        CHECK(rep.scores(static_cast<Index>(i), static_cast<Index>(j)) == 1.0);
                        continue;
                    }
                    const MatrixXd mi = mean_class_embeddings(s, domains[i], classes);
                    const MatrixXd mj = mean_class_embeddings(s, domains[j], classes);
                    const double expected =
                        oracle::cka_terms(oracle::gram_loop(mi), oracle::gram_loop(mj));
                    CHECK(std::abs(rep.scores(static_cast<Index>(i), static_cast<Index>(j)) -
                                   expected) < 1e-10);
                }
            CHECK(rep.scores == rep.scores.transpose());
            const auto means = rep.partner_means();
            CHECK(means(0) == doctest::Approx((rep.scores(0, 1) + rep.scores(0, 2)) / 2));
        }
        SUBCASE("rbf kernel runs and is symmetric")
        {
            const auto rep = cross_domain_cka(s, {"A", "B", "C"}, classes, {KernelKind::RBF, {}});
            CHECK(rep.scores == rep.scores.transpose());
        }
        SUBCASE("errors")
        {
            CHECK_THROWS_AS(cross_domain_cka(s, {"A", "B"}, {"a", "b", "c"}), ValidationError);
            CHECK_THROWS_AS(cross_domain_cka(s, {"A", "Z"}, classes), MissingDataError);
        }
    }

    TEST_CASE("cka csv layout")
    {
        DomainPairScores s{{"A", "B", "C"}, MatrixXd::Identity(3, 3)};
        s.scores(0, 1) = s.scores(1, 0) = 0.5;
        s.scores(0, 2) = s.scores(2, 0) = 0.25;
        s.scores(1, 2) = s.scores(2, 1) = -0.125;
        CHECK(cka_csv(s, KernelKind::Linear) ==
              "domain_a,domain_b,kernel,score\nA,B,linear,0.5\nA,C,linear,0.25\nB,C,linear,-0.125\n");
    }
}
