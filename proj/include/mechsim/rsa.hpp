#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <fmt/format.h>

#include "mechsim/activations.hpp"
#include "mechsim/error.hpp"
#include "mechsim/report.hpp"

namespace mechsim {

enum class KernelKind { Linear, RBF };

std::string to_string(KernelKind k);
KernelKind parse_kernel(const std::string &name);

/// Symmetric C x C kernel matrix over C items.
template <typename Scalar>
struct GramMatrix {
    Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> values;
    KernelKind kind = KernelKind::Linear;
    Scalar bandwidth = Scalar(0); // RBF only

    Index size() const { return values.rows(); }
};

/// K = X X^T.
template <typename Derived>
GramMatrix<typename Derived::Scalar> gram_linear(const Eigen::MatrixBase<Derived> &x)
{
    using Scalar = typename Derived::Scalar;
    if (x.rows() < 1)
        throw ValidationError("gram_linear: need at least one row");
    GramMatrix<Scalar> g;
    g.values = x * x.transpose();
    // Symmetrise exactly; the product can differ in the last ulp across triangles.
    g.values = (g.values + g.values.transpose().eval()) / Scalar(2);
    g.kind = KernelKind::Linear;
    return g;
}

/// Median of the C(C-1)/2 pairwise Euclidean distances between rows.
template <typename Derived>
typename Derived::Scalar median_pairwise_distance(const Eigen::MatrixBase<Derived> &x)
{
    using Scalar = typename Derived::Scalar;
    std::vector<Scalar> d;
    for (Index i = 0; i < x.rows(); ++i)
        for (Index j = i + 1; j < x.rows(); ++j)
            d.push_back((x.row(i) - x.row(j)).norm());
    if (d.empty())
        throw ValidationError("median_pairwise_distance: need at least two rows");
    std::sort(d.begin(), d.end());
    const auto m = d.size();
    return m % 2 == 1 ? d[m / 2] : (d[m / 2 - 1] + d[m / 2]) / Scalar(2);
}

/// K_ij = exp(-|x_i - x_j|^2 / (2 sigma^2)); sigma defaults to the median
/// pairwise distance.
template <typename Derived>
GramMatrix<typename Derived::Scalar>
gram_rbf(const Eigen::MatrixBase<Derived> &x,
         std::optional<typename Derived::Scalar> bandwidth = std::nullopt)
{
    using Scalar = typename Derived::Scalar;
    if (x.rows() < 1)
        throw ValidationError("gram_rbf: need at least one row");
    Scalar sigma;
    if (bandwidth) {
        if (!(*bandwidth > Scalar(0)))
            throw ValidationError("gram_rbf: bandwidth must be positive");
        sigma = *bandwidth;
    } else {
        if (x.rows() < 2)
            throw ValidationError("gram_rbf: median bandwidth needs at least two rows");
        sigma = median_pairwise_distance(x);
        if (!(sigma > Scalar(0)))
            throw DegenerateInputError(
                "gram_rbf: median pairwise distance is zero, cannot pick a bandwidth");
    }
    const Index c = x.rows();
    GramMatrix<Scalar> g;
    g.values.resize(c, c);
    const Scalar denom = Scalar(2) * sigma * sigma;
    for (Index i = 0; i < c; ++i) {
        g.values(i, i) = Scalar(1);
        for (Index j = i + 1; j < c; ++j) {
            const Scalar v = std::exp(-(x.row(i) - x.row(j)).squaredNorm() / denom);
            g.values(i, j) = v;
            g.values(j, i) = v;
        }
    }
    g.kind = KernelKind::RBF;
    g.bandwidth = sigma;
    return g;
}

/// Unbiased HSIC estimator on kernel matrices with the diagonals zeroed:
///   1/(C(C-3)) [ tr(K~L~) + 1'K~1 1'L~1 / ((C-1)(C-2)) - 2/(C-2) 1'K~L~1 ].
/// Can be negative.
template <typename DerivedK, typename DerivedL>
typename DerivedK::Scalar hsic_unbiased(const Eigen::MatrixBase<DerivedK> &k,
                                        const Eigen::MatrixBase<DerivedL> &l)
{
    using Scalar = typename DerivedK::Scalar;
    using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
    const Index c = k.rows();
    if (k.cols() != c || l.rows() != c || l.cols() != c)
        throw ValidationError(fmt::format("hsic_unbiased: kernels must be square and equal size, "
                                          "got {}x{} and {}x{}",
                                          k.rows(), k.cols(), l.rows(), l.cols()));
    if (c < 4)
        throw ValidationError(fmt::format("hsic_unbiased: need at least 4 items, got {}", c));

    Mat kt = k;
    Mat lt = l;
    kt.diagonal().setZero();
    lt.diagonal().setZero();

    const Scalar n = static_cast<Scalar>(c);
    const Scalar trace_kl = (kt.array() * lt.transpose().array()).sum();
    const Scalar sum_k = kt.sum();
    const Scalar sum_l = lt.sum();
    const Scalar cross = (kt.transpose() * Eigen::Matrix<Scalar, Eigen::Dynamic, 1>::Ones(c))
                             .dot(lt * Eigen::Matrix<Scalar, Eigen::Dynamic, 1>::Ones(c));

    return (trace_kl + sum_k * sum_l / ((n - 1) * (n - 2)) - Scalar(2) / (n - 2) * cross) /
           (n * (n - 3));
}

template <typename Scalar>
Scalar hsic_unbiased(const GramMatrix<Scalar> &k, const GramMatrix<Scalar> &l)
{
    return hsic_unbiased(k.values, l.values);
}

/// HSIC(K,L) / sqrt(HSIC(K,K) HSIC(L,L)). Raw value, not clamped.
template <typename DerivedK, typename DerivedL>
typename DerivedK::Scalar cka(const Eigen::MatrixBase<DerivedK> &k,
                              const Eigen::MatrixBase<DerivedL> &l)
{
    using Scalar = typename DerivedK::Scalar;
    const Scalar kk = hsic_unbiased(k, k);
    const Scalar ll = hsic_unbiased(l, l);
    if (!(kk > Scalar(0)) || !(ll > Scalar(0)))
        throw DegenerateInputError(fmt::format(
            "cka: self-HSIC must be positive (HSIC(K,K)={}, HSIC(L,L)={})", kk, ll));
    return hsic_unbiased(k, l) / std::sqrt(kk * ll);
}

template <typename Scalar>
Scalar cka(const GramMatrix<Scalar> &k, const GramMatrix<Scalar> &l)
{
    return cka(k.values, l.values);
}

struct CkaOptions {
    KernelKind kernel = KernelKind::Linear;
    std::optional<double> bandwidth; // RBF; median heuristic when empty
};

/// CKA between every pair of domains over their C x p mean-class matrices.
/// Self-pairs are 1 by definition.
DomainPairScores cross_domain_cka(const ActivationSet &set, const std::vector<std::string> &domains,
                                  const std::vector<std::string> &classes,
                                  const CkaOptions &options = {});

/// CSV with header `domain_a,domain_b,kernel,score`, one row per unordered pair.
std::string cka_csv(const DomainPairScores &scores, KernelKind kernel);

} // namespace mechsim
