#include "mechsim/rsa.hpp"

#include <fmt/format.h>

#include "mechsim/parallel.hpp"

namespace mechsim {

std::string to_string(KernelKind k)
{
    return k == KernelKind::Linear ? "linear" : "rbf";
}

KernelKind parse_kernel(const std::string &name)
{
    if (name == "linear")
        return KernelKind::Linear;
    if (name == "rbf")
        return KernelKind::RBF;
    throw ValidationError(fmt::format("unknown kernel '{}' (expected linear or rbf)", name));
}

DomainPairScores cross_domain_cka(const ActivationSet &set, const std::vector<std::string> &domains,
                                  const std::vector<std::string> &classes,
                                  const CkaOptions &options)
{
    if (classes.size() < 4)
        throw ValidationError(
            fmt::format("cross_domain_cka: need at least 4 classes, got {}", classes.size()));
    if (domains.empty())
        throw ValidationError("cross_domain_cka: no domains given");

    std::vector<GramMatrix<double>> grams;
    grams.reserve(domains.size());
    for (const auto &d : domains) {
        const Eigen::MatrixXd means = mean_class_embeddings(set, d, classes);
        grams.push_back(options.kernel == KernelKind::Linear ? gram_linear(means)
                                                             : gram_rbf(means, options.bandwidth));
    }

    const auto nd = static_cast<Index>(domains.size());
    DomainPairScores out;
    out.domains = domains;
    out.scores = Eigen::MatrixXd::Identity(nd, nd);

    std::vector<std::pair<Index, Index>> pairs;
    for (Index i = 0; i < nd; ++i)
        for (Index j = i + 1; j < nd; ++j)
            pairs.emplace_back(i, j);
    std::vector<double> values(pairs.size());
    parallel_for(pairs.size(), [&](std::size_t p) {
        const auto [i, j] = pairs[p];
        values[p] = cka(grams[static_cast<std::size_t>(i)], grams[static_cast<std::size_t>(j)]);
    });
    for (std::size_t p = 0; p < pairs.size(); ++p) {
        const auto [i, j] = pairs[p];
        out.scores(i, j) = values[p];
        out.scores(j, i) = values[p];
    }
    return out;
}

std::string cka_csv(const DomainPairScores &scores, KernelKind kernel)
{
    std::string out = "domain_a,domain_b,kernel,score\n";
    const auto nd = static_cast<Index>(scores.domains.size());
    for (Index i = 0; i < nd; ++i)
        for (Index j = i + 1; j < nd; ++j)
            out += fmt::format("{},{},{},{:.12g}\n", scores.domains[static_cast<std::size_t>(i)],
                               scores.domains[static_cast<std::size_t>(j)], to_string(kernel),
                               scores.scores(i, j));
    return out;
}

} // namespace mechsim
