#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "mechsim/network.hpp"

namespace mechsim {

/// n x p matrix of sample embeddings with per-row (id, domain, class) labels.
struct ActivationSet {
    Eigen::MatrixXd data;
    std::vector<std::string> sample_ids;
    std::vector<std::string> domains;
    std::vector<std::string> classes;

    Index rows() const { return data.rows(); }
    Index dim() const { return data.cols(); }

    /// Throws ValidationError unless all label arrays have n entries and p >= 1.
    void validate() const;

    /// Distinct domains / classes in order of first appearance.
    std::vector<std::string> domain_list() const;
    std::vector<std::string> class_list() const;
};

using DomainClass = std::pair<std::string, std::string>;

/// (domain, class) -> row indices, ascending.
using ClassDomainIndex = std::map<DomainClass, std::vector<Index>>;

ClassDomainIndex group_by_domain_class(const ActivationSet &set);

/// Rows of one (domain, class) group; MissingDataError if the group is empty.
std::vector<Index> group_rows(const ActivationSet &set, const std::string &domain,
                              const std::string &cls);

/// C x p matrix whose row c is the mean of the (domain, classes[c]) group.
Eigen::MatrixXd mean_class_embeddings(const ActivationSet &set, const std::string &domain,
                                      const std::vector<std::string> &classes);

/// Subset of rows, keeping labels aligned.
ActivationSet select_rows(const ActivationSet &set, const std::vector<Index> &rows);

/// Runs every row of `inputs` through `net` and keeps the post-activation of
/// `layer`; labels are copied over.
ActivationSet activations_at_layer(const ToyNetwork &net, const ActivationSet &inputs, Index layer);

// ACTS binary: "ACTS", u32 version, u64 n, u64 p, n*p f32, all little-endian.
// Labels live in a sidecar "<path>.meta.json".
inline constexpr std::uint32_t kActsVersion = 1;

std::filesystem::path sidecar_path(const std::filesystem::path &acts_path);

void write_acts_matrix(std::ostream &out, const Eigen::MatrixXd &m);
Eigen::MatrixXd read_acts_matrix(std::istream &in, const std::string &context);

void save_activations(const ActivationSet &set, const std::filesystem::path &path);
ActivationSet load_activations(const std::filesystem::path &path);

} // namespace mechsim
