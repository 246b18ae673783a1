#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>
#include <fmt/format.h>

#include "mechsim/error.hpp"

namespace mechsim {

/// Symmetric domain x domain score matrix (CKA, Jaccard, WL, ...).
struct DomainPairScores {
    std::vector<std::string> domains;
    Eigen::MatrixXd scores;

    Eigen::Index index_of(const std::string &domain) const
    {
        for (std::size_t i = 0; i < domains.size(); ++i)
            if (domains[i] == domain)
                return static_cast<Eigen::Index>(i);
        throw MissingDataError(fmt::format("domain '{}' not in report", domain));
    }

    /// Mean over partners j != i, per domain.
    Eigen::VectorXd partner_means() const
    {
        const auto d = scores.rows();
        Eigen::VectorXd out = Eigen::VectorXd::Zero(d);
        if (d < 2)
            return out;
        for (Eigen::Index i = 0; i < d; ++i) {
            double s = 0.0;
            for (Eigen::Index j = 0; j < d; ++j)
                if (j != i)
                    s += scores(i, j);
            out(i) = s / static_cast<double>(d - 1);
        }
        return out;
    }

    /// Mean score between `test` and every other domain.
    double test_vs_others(const std::string &test) const
    {
        const auto t = index_of(test);
        if (scores.rows() < 2)
            throw ValidationError("test_vs_others needs at least two domains");
        double s = 0.0;
        for (Eigen::Index j = 0; j < scores.rows(); ++j)
            if (j != t)
                s += scores(t, j);
        return s / static_cast<double>(scores.rows() - 1);
    }

    /// Mean score over unordered pairs that exclude `test`.
    double others_vs_others(const std::string &test) const
    {
        const auto t = index_of(test);
        double s = 0.0;
        int count = 0;
        for (Eigen::Index i = 0; i < scores.rows(); ++i)
            for (Eigen::Index j = i + 1; j < scores.rows(); ++j)
                if (i != t && j != t) {
                    s += scores(i, j);
                    ++count;
                }
        if (count == 0)
            throw ValidationError("others_vs_others needs at least two non-test domains");
        return s / count;
    }
};

} // namespace mechsim
