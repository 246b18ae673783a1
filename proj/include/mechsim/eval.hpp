#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mechsim/activations.hpp"

namespace mechsim {

// ---------------------------------------------------------------------------
// Zero-shot classification

/// C x p matrix of unit-norm class weight rows.
struct ZeroShotWeights {
    Eigen::MatrixXd weights;

    Index num_classes() const { return weights.rows(); }
};

/// w_c = normalize(mean_t g(t_c)). per_class[c] is T_c x p, rows unit-norm.
ZeroShotWeights zero_shot_weights(const std::vector<Eigen::MatrixXd> &per_class);

/// Per sample, class indices by descending cosine score; ties by ascending index.
using Rankings = std::vector<std::vector<Index>>;

Rankings classify(const Eigen::Ref<const Eigen::MatrixXd> &images, const ZeroShotWeights &w);

struct BalancedAccuracy {
    double value = 0.0;
    std::map<Index, double> recall; // per class present in labels
};

/// Mean over labelled classes of per-class top-k recall.
BalancedAccuracy balanced_topk_report(const Rankings &rankings, const std::vector<Index> &labels,
                                      Index k);
double balanced_topk_accuracy(const Rankings &rankings, const std::vector<Index> &labels, Index k);

/// Plain (sample-weighted) top-k accuracy.
double topk_accuracy(const Rankings &rankings, const std::vector<Index> &labels, Index k);

/// Unweighted mean of per-class F1 over every class seen in labels or
/// predictions; F1 is 0 when precision + recall = 0.
double macro_f1(const std::vector<Index> &predictions, const std::vector<Index> &labels);

/// Per-class, per-template text embeddings as exported for zero-shot use.
struct TextEmbeddings {
    std::vector<std::string> classes;
    std::vector<std::string> templates;
    std::vector<Eigen::MatrixXd> embeddings; // per class, T x p
};

TextEmbeddings load_text_embeddings(const std::filesystem::path &path);

// ---------------------------------------------------------------------------
// Caption templates

/// Templates with a `{class}` and optional `{domain}` placeholder plus the term
/// pools used to fill `{domain}`.
struct TemplateSet {
    std::vector<std::string> templates;
    std::map<std::string, std::vector<std::string>> domain_terms;
    std::vector<std::string> generic_terms;

    void validate() const;

    /// Training-caption templates and term table shipped with the toolkit.
    static TemplateSet defaults();
};

/// Extra zero-shot prompts for domains missing from the standard prompt list.
std::vector<std::string> default_eval_templates();

TemplateSet parse_templates(const std::string &text);
TemplateSet load_templates(const std::filesystem::path &path);

struct CaptionDraw {
    std::size_t template_index = 0;
    bool generic = false;
    std::size_t term_index = 0;
};

/// Uniform template, then a fair coin between the generic and domain pools,
/// then a uniform term within the chosen pool.
CaptionDraw draw_caption(const TemplateSet &ts, const std::string &domain, std::uint64_t seed);

/// Replaces every `{class}` and `{domain}` occurrence verbatim.
std::string fill_template(const std::string &tmpl, const std::string &class_name,
                          const std::string &domain_term);

std::string render_caption(const TemplateSet &ts, const std::string &class_name,
                           const std::string &domain, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Mixture planning

using CountTable = std::map<DomainClass, std::int64_t>;

struct MixturePlan {
    CountTable keep;

    std::int64_t total() const;
    std::int64_t domain_total(const std::string &domain) const;
};

/// Hamilton apportionment of `budget` over `weights`; ties in the remainder go
/// to the lower index.
std::vector<std::int64_t> largest_remainder(const std::vector<std::int64_t> &weights,
                                            std::int64_t budget);

/// Apportions the budget over domains, then over classes within each domain,
/// proportional to the available counts.
MixturePlan plan_mixture(const CountTable &available, std::int64_t budget);

CountTable parse_counts_csv(const std::string &text);
/// `domain,class,available,keep`
std::string mixture_csv(const CountTable &available, const MixturePlan &plan);

} // namespace mechsim
