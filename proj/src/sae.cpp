#include "mechsim/sae.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <set>

#include <fmt/format.h>
#include <json.hpp>

#include "mechsim/error.hpp"

namespace mechsim {

using json = nlohmann::json;

void SaeModel::validate() const
{
    const Index p = encoder.rows();
    const Index h = encoder.cols();
    if (p < 1 || h < 1)
        throw ValidationError("SAE must have positive input and hidden dimensions");
    if (encoder_bias.size() != h || decoder.rows() != h || decoder.cols() != p ||
        decoder_bias.size() != p)
        throw ValidationError(fmt::format("inconsistent SAE shapes: encoder {}x{}, encoder bias {}, "
                                          "decoder {}x{}, decoder bias {}",
                                          p, h, encoder_bias.size(), decoder.rows(),
                                          decoder.cols(), decoder_bias.size()));
}

SaeModel SaeModel::zeros(Index p, Index h)
{
    return {Eigen::MatrixXd::Zero(p, h), Eigen::VectorXd::Zero(h), Eigen::MatrixXd::Zero(h, p),
            Eigen::VectorXd::Zero(p)};
}

SaeOutput sae_forward(const SaeModel &m, const Eigen::Ref<const Eigen::VectorXd> &a)
{
    m.validate();
    if (a.size() != m.input_dim())
        throw ValidationError(
            fmt::format("SAE input length {} does not match p = {}", a.size(), m.input_dim()));
    SaeOutput out;
    out.latent = (m.encoder.transpose() * a + m.encoder_bias).cwiseMax(0.0);
    out.reconstruction = m.decoder.transpose() * out.latent + m.decoder_bias;
    return out;
}

Eigen::MatrixXd sae_encode(const SaeModel &m, const Eigen::Ref<const Eigen::MatrixXd> &batch)
{
    m.validate();
    if (batch.cols() != m.input_dim())
        throw ValidationError(
            fmt::format("batch has {} columns, SAE expects {}", batch.cols(), m.input_dim()));
    return ((batch * m.encoder).rowwise() + m.encoder_bias.transpose()).cwiseMax(0.0);
}

double sae_loss(const SaeModel &m, const Eigen::Ref<const Eigen::MatrixXd> &batch, double lambda)
{
    if (batch.rows() == 0)
        throw ValidationError("sae_loss: empty batch");
    const Eigen::MatrixXd z = sae_encode(m, batch);
    const Eigen::MatrixXd recon = (z * m.decoder).rowwise() + m.decoder_bias.transpose();
    const double n = static_cast<double>(batch.rows());
    return ((recon - batch).squaredNorm() + lambda * z.sum()) / n;
}

SaeGradient sae_loss_gradient(const SaeModel &m, const Eigen::Ref<const Eigen::MatrixXd> &batch,
                              double lambda)
{
    if (batch.rows() == 0)
        throw ValidationError("sae_loss_gradient: empty batch");
    m.validate();
    if (batch.cols() != m.input_dim())
        throw ValidationError(
            fmt::format("batch has {} columns, SAE expects {}", batch.cols(), m.input_dim()));
    const double n = static_cast<double>(batch.rows());

    const Eigen::MatrixXd pre = (batch * m.encoder).rowwise() + m.encoder_bias.transpose();
    const Eigen::MatrixXd z = pre.cwiseMax(0.0);
    const Eigen::MatrixXd err = ((z * m.decoder).rowwise() + m.decoder_bias.transpose()) - batch;

    SaeGradient g;
    g.loss = (err.squaredNorm() + lambda * z.sum()) / n;

    const Eigen::MatrixXd d_recon = (2.0 / n) * err;
    g.grad.decoder = z.transpose() * d_recon;
    g.grad.decoder_bias = d_recon.colwise().sum().transpose();
    Eigen::MatrixXd d_pre = (d_recon * m.decoder.transpose()).array() + lambda / n;
    d_pre = (pre.array() > 0.0).select(d_pre, 0.0);
    g.grad.encoder = batch.transpose() * d_pre;
    g.grad.encoder_bias = d_pre.colwise().sum().transpose();
    return g;
}

void SaeTrainConfig::validate() const
{
    if (epochs < 1)
        throw ValidationError("epochs must be >= 1");
    if (batch_size < 1)
        throw ValidationError("batch_size must be >= 1");
    if (hidden < 0)
        throw ValidationError("hidden must be >= 0");
    if (!(learning_rate > 0.0))
        throw ValidationError("learning_rate must be positive");
    if (!(lambda >= 0.0))
        throw ValidationError("lambda must be non-negative");
}

SaeModel sae_init(const Eigen::Ref<const Eigen::MatrixXd> &data, Index hidden, std::uint64_t seed)
{
    const Index p = data.cols();
    if (data.rows() == 0 || p == 0)
        throw ValidationError("sae_init: empty data");
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    SaeModel m;
    m.decoder.resize(hidden, p);
    for (Index j = 0; j < hidden; ++j) {
        for (Index c = 0; c < p; ++c)
            m.decoder(j, c) = normal(rng);
        m.decoder.row(j).normalize();
    }
    m.encoder = m.decoder.transpose();
    m.encoder_bias = Eigen::VectorXd::Zero(hidden);
    m.decoder_bias = data.colwise().mean().transpose();
    return m;
}

namespace {

struct AdamSlot {
    Eigen::MatrixXd m, v;

    explicit AdamSlot(const Eigen::MatrixXd &like)
        : m(Eigen::MatrixXd::Zero(like.rows(), like.cols())),
          v(Eigen::MatrixXd::Zero(like.rows(), like.cols()))
    {
    }

    template <typename Param, typename Grad>
    void step(Param &param, const Grad &grad, const SaeTrainConfig &cfg, double bc1, double bc2)
    {
        m = cfg.beta1 * m + (1.0 - cfg.beta1) * grad;
        v = cfg.beta2 * v + (1.0 - cfg.beta2) * grad.cwiseAbs2();
        param.array() -= cfg.learning_rate * (m.array() / bc1) /
                         ((v.array() / bc2).sqrt() + cfg.epsilon);
    }
};

} // namespace

SaeTrainResult sae_train(const ActivationSet &data, const SaeTrainConfig &cfg)
{
    cfg.validate();
    data.validate();
    const Index n = data.rows();
    if (n == 0)
        throw ValidationError("sae_train: no training rows");
    const Index p = data.dim();
    const Index h = cfg.hidden > 0 ? cfg.hidden : 4 * p;

    SaeTrainResult result;
    result.model = sae_init(data.data, h, cfg.seed);
    result.initial_loss = sae_loss(result.model, data.data, cfg.lambda);

    std::mt19937_64 rng(cfg.seed ^ 0x9E3779B97F4A7C15ull);
    const Index batch = std::min(cfg.batch_size, n);

    SaeModel &model = result.model;
    AdamSlot enc(model.encoder), enc_b(model.encoder_bias), dec(model.decoder),
        dec_b(model.decoder_bias);
    double bc1 = 1.0;
    double bc2 = 1.0;

    std::vector<bool> fired(static_cast<std::size_t>(h), false);
    std::vector<Index> perm(static_cast<std::size_t>(n));
    std::iota(perm.begin(), perm.end(), Index{0});
    Eigen::MatrixXd mb;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(perm.begin(), perm.end(), rng);
        for (Index start = 0; start < n; start += batch) {
            const Index len = std::min(batch, n - start);
            mb.resize(len, p);
            for (Index r = 0; r < len; ++r)
                mb.row(r) = data.data.row(perm[static_cast<std::size_t>(start + r)]);

            const auto g = sae_loss_gradient(model, mb, cfg.lambda);
            ++result.steps;
            if (!std::isfinite(g.loss))
                throw TrainingDivergenceError(
                    fmt::format("SAE loss became non-finite at step {}", result.steps));

            bc1 *= cfg.beta1;
            bc2 *= cfg.beta2;
            enc.step(model.encoder, g.grad.encoder, cfg, 1.0 - bc1, 1.0 - bc2);
            enc_b.step(model.encoder_bias, g.grad.encoder_bias, cfg, 1.0 - bc1, 1.0 - bc2);
            dec.step(model.decoder, g.grad.decoder, cfg, 1.0 - bc1, 1.0 - bc2);
            dec_b.step(model.decoder_bias, g.grad.decoder_bias, cfg, 1.0 - bc1, 1.0 - bc2);

            const Eigen::MatrixXd z = sae_encode(model, mb);
            for (Index j = 0; j < h; ++j)
                if (!fired[static_cast<std::size_t>(j)] && (z.col(j).array() > 0.0).any())
                    fired[static_cast<std::size_t>(j)] = true;

            if (cfg.resample_interval > 0 && result.steps % cfg.resample_interval == 0) {
                ++result.resample_events;
                std::vector<bool> dead(fired.size());
                std::transform(fired.begin(), fired.end(), dead.begin(),
                               [](bool f) { return !f; });
                auto res = resample_dead(model, data.data, dead, rng());
                for (const auto &[latent, row] : res.sources) {
                    (void)row;
                    // Fresh optimiser state for the reinitialised parameters.
                    enc.m.col(latent).setZero();
                    enc.v.col(latent).setZero();
                    enc_b.m(latent, 0) = enc_b.v(latent, 0) = 0.0;
                    dec.m.row(latent).setZero();
                    dec.v.row(latent).setZero();
                }
                result.resampled_latents += static_cast<int>(res.sources.size());
                model = std::move(res.model);
                std::fill(fired.begin(), fired.end(), false);
            }
        }
    }

    result.final_loss = sae_loss(model, data.data, cfg.lambda);
    if (!std::isfinite(result.final_loss))
        throw TrainingDivergenceError(
            fmt::format("SAE loss became non-finite at step {}", result.steps));
    return result;
}

ResampleResult resample_dead(const SaeModel &m, const Eigen::Ref<const Eigen::MatrixXd> &data,
                             const std::vector<bool> &dead_mask, std::uint64_t seed)
{
    m.validate();
    const Index h = m.hidden_dim();
    if (static_cast<Index>(dead_mask.size()) != h)
        throw ValidationError(fmt::format("dead mask has {} entries, SAE has {} latents",
                                          dead_mask.size(), h));
    ResampleResult out{m, {}};
    if (std::none_of(dead_mask.begin(), dead_mask.end(), [](bool d) { return d; }))
        return out;
    if (data.rows() == 0)
        throw ValidationError("resample_dead: no data to draw replacement directions from");
    if (data.cols() != m.input_dim())
        throw ValidationError(
            fmt::format("data has {} columns, SAE expects {}", data.cols(), m.input_dim()));

    const Eigen::MatrixXd z = sae_encode(m, data);
    const Eigen::MatrixXd recon = (z * m.decoder).rowwise() + m.decoder_bias.transpose();
    const Eigen::VectorXd loss = (recon - data).rowwise().squaredNorm();
    const Eigen::VectorXd norms = data.rowwise().norm();

    std::vector<double> weights(static_cast<std::size_t>(data.rows()));
    for (Index r = 0; r < data.rows(); ++r)
        weights[static_cast<std::size_t>(r)] = norms(r) > 0.0 ? loss(r) * loss(r) : 0.0;
    if (std::all_of(weights.begin(), weights.end(), [](double w) { return w == 0.0; }))
        for (Index r = 0; r < data.rows(); ++r)
            weights[static_cast<std::size_t>(r)] = norms(r) > 0.0 ? 1.0 : 0.0;
    if (std::all_of(weights.begin(), weights.end(), [](double w) { return w == 0.0; }))
        throw DegenerateInputError("resample_dead: every data row is zero");

    double live_norm = 0.0;
    int live = 0;
    for (Index j = 0; j < h; ++j)
        if (!dead_mask[static_cast<std::size_t>(j)]) {
            live_norm += m.encoder.col(j).norm();
            ++live;
        }
    const double scale = live > 0 && live_norm > 0.0 ? live_norm / live : 1.0;

    std::mt19937_64 rng(seed);
    std::discrete_distribution<Index> pick(weights.begin(), weights.end());
    for (Index j = 0; j < h; ++j) {
        if (!dead_mask[static_cast<std::size_t>(j)])
            continue;
        const Index r = pick(rng);
        const Eigen::VectorXd u = data.row(r).transpose() / norms(r);
        out.model.decoder.row(j) = u.transpose();
        out.model.encoder.col(j) = scale * u;
        out.model.encoder_bias(j) = 0.0;
        out.sources.emplace_back(j, r);
    }
    return out;
}

std::vector<Index> top_activating(const Eigen::Ref<const Eigen::VectorXd> &latent, Index count)
{
    std::vector<Index> idx(static_cast<std::size_t>(latent.size()));
    std::iota(idx.begin(), idx.end(), Index{0});
    const auto keep = static_cast<std::size_t>(std::min(count, latent.size()));
    std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(keep), idx.end(),
                      [&](Index a, Index b) {
                          return latent(a) > latent(b) || (latent(a) == latent(b) && a < b);
                      });
    idx.resize(keep);
    return idx;
}

FeatureHistogram feature_histogram(const ActivationSet &set, const SaeModel &m,
                                   const std::string &domain, const std::string &cls)
{
    const auto rows = group_rows(set, domain, cls);
    FeatureHistogram hist{Eigen::VectorXi::Zero(m.hidden_dim())};
    for (Index r : rows) {
        const auto out = sae_forward(m, set.data.row(r).transpose());
        for (Index f : top_activating(out.latent))
            ++hist.counts(f);
    }
    return hist;
}

std::vector<Index> get_topk_features(const ActivationSet &set, const SaeModel &m,
                                     const std::string &domain, const std::string &cls, Index k)
{
    if (k < 1 || k > m.hidden_dim())
        throw ValidationError(
            fmt::format("k must be in [1, {}], got {}", m.hidden_dim(), k));
    const auto hist = feature_histogram(set, m, domain, cls);
    std::vector<Index> idx(static_cast<std::size_t>(m.hidden_dim()));
    std::iota(idx.begin(), idx.end(), Index{0});
    std::stable_sort(idx.begin(), idx.end(),
                     [&](Index a, Index b) { return hist.counts(a) > hist.counts(b); });
    idx.resize(static_cast<std::size_t>(k));
    return idx;
}

FeatureSharingReport measure_feature_sharing(const ActivationSet &set, const SaeModel &m,
                                             const std::string &test_domain,
                                             const std::vector<std::string> &classes,
                                             const std::vector<Index> &ks)
{
    const auto all = set.domain_list();
    if (std::find(all.begin(), all.end(), test_domain) == all.end())
        throw MissingDataError(fmt::format("test domain '{}' has no samples", test_domain));
    std::vector<std::string> others;
    for (const auto &d : all)
        if (d != test_domain)
            others.push_back(d);
    if (others.empty())
        throw ValidationError("feature sharing needs at least one domain besides the test domain");
    if (classes.empty())
        throw ValidationError("feature sharing needs at least one class");
    if (ks.empty())
        throw ValidationError("feature sharing needs at least one k");

    std::map<std::tuple<std::string, std::string, Index>, std::vector<Index>> cache;
    auto topk = [&](const std::string &d, const std::string &c, Index k) -> const auto & {
        auto key = std::make_tuple(d, c, k);
        auto it = cache.find(key);
        if (it == cache.end())
            it = cache.emplace(key, get_topk_features(set, m, d, c, k)).first;
        return it->second;
    };

    FeatureSharingReport report;
    double sum = 0.0;
    for (Index k : ks)
        for (const auto &c : classes) {
            const auto &fi = topk(test_domain, c, k);
            const std::set<Index> fi_set(fi.begin(), fi.end());
            for (const auto &d : others) {
                const auto &fj = topk(d, c, k);
                Index inter = 0;
                for (Index f : fj)
                    inter += static_cast<Index>(fi_set.count(f));
                const double s = static_cast<double>(inter) / static_cast<double>(k);
                report.triples.push_back({k, c, d, s});
                sum += s;
            }
        }
    report.mean = sum / static_cast<double>(report.triples.size());
    return report;
}

std::string feature_sharing_csv(const FeatureSharingReport &report)
{
    std::string out = "k,class,domain_other,overlap\n";
    for (const auto &t : report.triples)
        out += fmt::format("{},{},{},{:.12g}\n", t.k, t.class_label, t.other_domain, t.overlap);
    return out;
}

void save_sae(const SaeModel &m, const SaeCheckpointInfo &info, const std::filesystem::path &path)
{
    m.validate();
    json header;
    header["format"] = "mechsim-sae";
    header["version"] = 1;
    header["p"] = m.input_dim();
    header["h"] = m.hidden_dim();
    header["seed"] = info.seed;
    header["steps"] = info.steps;
    header["lambda"] = info.lambda;

    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw FormatError(fmt::format("cannot write SAE checkpoint '{}'", path.string()));
    out << header.dump() << "\n";
    write_acts_matrix(out, m.encoder);
    write_acts_matrix(out, m.encoder_bias.transpose());
    write_acts_matrix(out, m.decoder);
    write_acts_matrix(out, m.decoder_bias.transpose());
}

SaeModel load_sae(const std::filesystem::path &path, SaeCheckpointInfo *info)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw FormatError(fmt::format("cannot open SAE checkpoint '{}'", path.string()));
    std::string line;
    if (!std::getline(in, line))
        throw FormatError(fmt::format("{}: missing header line", path.string()));
    json header;
    Index p = 0;
    Index h = 0;
    try {
        header = json::parse(line);
        if (header.at("format").get<std::string>() != "mechsim-sae")
            throw FormatError(fmt::format("{}: not an SAE checkpoint", path.string()));
        p = header.at("p").get<Index>();
        h = header.at("h").get<Index>();
        if (info) {
            info->seed = header.value("seed", std::uint64_t{0});
            info->steps = header.value("steps", std::int64_t{0});
            info->lambda = header.value("lambda", 0.0);
        }
    } catch (const json::exception &e) {
        throw FormatError(fmt::format("{}: bad header: {}", path.string(), e.what()));
    }

    auto block = [&](const char *name, Index rows, Index cols) {
        Eigen::MatrixXd b = read_acts_matrix(in, fmt::format("{} [{}]", path.string(), name));
        if (b.rows() != rows || b.cols() != cols)
            throw FormatError(fmt::format("{}: block '{}' is {}x{}, expected {}x{}", path.string(),
                                          name, b.rows(), b.cols(), rows, cols));
        return b;
    };
    SaeModel m;
    m.encoder = block("encoder", p, h);
    m.encoder_bias = block("encoder_bias", 1, h).transpose();
    m.decoder = block("decoder", h, p);
    m.decoder_bias = block("decoder_bias", 1, p).transpose();
    m.validate();
    return m;
}

} // namespace mechsim
