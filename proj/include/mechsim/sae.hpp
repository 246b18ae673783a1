#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mechsim/activations.hpp"

namespace mechsim {

/// latent = ReLU(encoder^T a + encoder_bias), reconstruction = decoder^T latent + decoder_bias.
/// encoder is p x h, decoder is h x p.
struct SaeModel {
    Eigen::MatrixXd encoder;
    Eigen::VectorXd encoder_bias;
    Eigen::MatrixXd decoder;
    Eigen::VectorXd decoder_bias;

    Index input_dim() const { return encoder.rows(); }
    Index hidden_dim() const { return encoder.cols(); }

    void validate() const;
    static SaeModel zeros(Index p, Index h);
};

struct SaeOutput {
    Eigen::VectorXd latent;
    Eigen::VectorXd reconstruction;
};

SaeOutput sae_forward(const SaeModel &m, const Eigen::Ref<const Eigen::VectorXd> &a);

/// Latents for every row of `batch` (n x h).
Eigen::MatrixXd sae_encode(const SaeModel &m, const Eigen::Ref<const Eigen::MatrixXd> &batch);

/// Mean over rows of |a - SAE(a)|^2 + lambda |latent|_1.
double sae_loss(const SaeModel &m, const Eigen::Ref<const Eigen::MatrixXd> &batch, double lambda);

/// Loss together with its gradient, laid out like SaeModel.
struct SaeGradient {
    double loss = 0.0;
    SaeModel grad;
};

SaeGradient sae_loss_gradient(const SaeModel &m, const Eigen::Ref<const Eigen::MatrixXd> &batch,
                              double lambda);

struct SaeTrainConfig {
    double lambda = 1e-4;
    int epochs = 200;
    Index batch_size = 4096;
    Index hidden = 0; // 0 selects 4 * p
    std::int64_t resample_interval = 500'000; // in optimiser steps; <= 0 disables
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    std::uint64_t seed = 0;

    void validate() const;
};

struct SaeTrainResult {
    SaeModel model;
    std::int64_t steps = 0;
    int resample_events = 0;    // interval boundaries reached
    int resampled_latents = 0;  // total latents reinitialised
    double initial_loss = 0.0;  // full-data loss of the initial model
    double final_loss = 0.0;
};

/// Seeded initial model: unit-norm random decoder rows, encoder = decoder^T,
/// zero encoder bias, decoder bias = data mean.
SaeModel sae_init(const Eigen::Ref<const Eigen::MatrixXd> &data, Index hidden, std::uint64_t seed);

/// Adam on minibatches of shuffled rows. Latents that stay at 0 for a whole
/// resample window are reinitialised with resample_dead.
SaeTrainResult sae_train(const ActivationSet &data, const SaeTrainConfig &cfg);

struct ResampleResult {
    SaeModel model;
    /// Source row for each dead latent, in ascending latent order.
    std::vector<std::pair<Index, Index>> sources; // (latent, data row)
};

/// Reinitialises each dead latent from an input drawn with probability
/// proportional to its squared reconstruction loss: decoder row = unit input,
/// encoder column = unit input scaled to the mean live encoder norm, bias 0.
ResampleResult resample_dead(const SaeModel &m, const Eigen::Ref<const Eigen::MatrixXd> &data,
                             const std::vector<bool> &dead_mask, std::uint64_t seed);

inline constexpr Index kTopActivating = 20;

/// Indices of the `count` largest latent values, ties by ascending index.
std::vector<Index> top_activating(const Eigen::Ref<const Eigen::VectorXd> &latent,
                                  Index count = kTopActivating);

/// Per-feature count of how often it is among a sample's top-20 latents.
struct FeatureHistogram {
    Eigen::VectorXi counts;
};

FeatureHistogram feature_histogram(const ActivationSet &set, const SaeModel &m,
                                   const std::string &domain, const std::string &cls);

/// The k most frequent top-20 features of a (domain, class) group, ties by
/// ascending feature index.
std::vector<Index> get_topk_features(const ActivationSet &set, const SaeModel &m,
                                     const std::string &domain, const std::string &cls, Index k);

struct SharingTriple {
    Index k = 0;
    std::string class_label;
    std::string other_domain;
    double overlap = 0.0;
};

struct FeatureSharingReport {
    double mean = 0.0;
    std::vector<SharingTriple> triples;
};

inline const std::vector<Index> kSharingKs = {5, 10, 15, 20};

/// Mean top-k overlap |F_test ∩ F_other| / k over k, classes and other domains.
FeatureSharingReport measure_feature_sharing(const ActivationSet &set, const SaeModel &m,
                                             const std::string &test_domain,
                                             const std::vector<std::string> &classes,
                                             const std::vector<Index> &ks = kSharingKs);

/// `k,class,domain_other,overlap`
std::string feature_sharing_csv(const FeatureSharingReport &report);

struct SaeCheckpointInfo {
    std::uint64_t seed = 0;
    std::int64_t steps = 0;
    double lambda = 0.0;
};

/// One JSON header line (p, h, seed, steps, lambda) followed by four ACTS
/// blocks: encoder, encoder bias, decoder, decoder bias. Values are stored as f32.
void save_sae(const SaeModel &m, const SaeCheckpointInfo &info, const std::filesystem::path &path);
SaeModel load_sae(const std::filesystem::path &path, SaeCheckpointInfo *info = nullptr);

} // namespace mechsim
