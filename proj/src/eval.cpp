#include "mechsim/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <json.hpp>

#include "mechsim/error.hpp"

namespace mechsim {

using json = nlohmann::json;

ZeroShotWeights zero_shot_weights(const std::vector<Eigen::MatrixXd> &per_class)
{
    if (per_class.empty())
        throw ValidationError("zero_shot_weights: no classes");
    const Index p = per_class.front().cols();
    ZeroShotWeights w;
    w.weights.resize(static_cast<Index>(per_class.size()), p);
    for (std::size_t c = 0; c < per_class.size(); ++c) {
        const auto &t = per_class[c];
        if (t.rows() < 1)
            throw ValidationError(fmt::format("class {} has no template embeddings", c));
        if (t.cols() != p)
            throw ValidationError(
                fmt::format("class {} embeddings have dimension {}, expected {}", c, t.cols(), p));
        for (Index r = 0; r < t.rows(); ++r)
            if (std::abs(t.row(r).norm() - 1.0) > 1e-6)
                throw ValidationError(fmt::format(
                    "class {} template {} embedding is not unit-norm (|g| = {})", c, r,
                    t.row(r).norm()));
        const Eigen::RowVectorXd mean = t.colwise().mean();
        const double norm = mean.norm();
        if (norm < 1e-12)
            throw DegenerateInputError(
                fmt::format("class {}: mean template embedding has zero norm", c));
        w.weights.row(static_cast<Index>(c)) = mean / norm;
    }
    return w;
}

Rankings classify(const Eigen::Ref<const Eigen::MatrixXd> &images, const ZeroShotWeights &w)
{
    if (images.cols() != w.weights.cols())
        throw ValidationError(fmt::format("image embeddings have dimension {}, weights have {}",
                                          images.cols(), w.weights.cols()));
    Rankings out;
    out.reserve(static_cast<std::size_t>(images.rows()));
    std::vector<Index> base(static_cast<std::size_t>(w.num_classes()));
    std::iota(base.begin(), base.end(), Index{0});
    for (Index i = 0; i < images.rows(); ++i) {
        Eigen::VectorXd x = images.row(i).transpose();
        const double norm = x.norm();
        if (norm > 0.0)
            x /= norm;
        const Eigen::VectorXd scores = w.weights * x;
        auto order = base;
        std::stable_sort(order.begin(), order.end(),
                         [&](Index a, Index b) { return scores(a) > scores(b); });
        out.push_back(std::move(order));
    }
    return out;
}

namespace {

void check_rankings(const Rankings &rankings, const std::vector<Index> &labels, Index k)
{
    if (labels.empty())
        throw ValidationError("metrics need at least one labelled sample");
    if (rankings.size() != labels.size())
        throw ValidationError(fmt::format("{} rankings but {} labels", rankings.size(),
                                          labels.size()));
    if (k < 1)
        throw ValidationError(fmt::format("k must be >= 1, got {}", k));
}

bool in_top_k(const std::vector<Index> &ranking, Index label, Index k)
{
    const auto end = ranking.begin() + std::min<std::ptrdiff_t>(k, ranking.size());
    return std::find(ranking.begin(), end, label) != end;
}

} // namespace

BalancedAccuracy balanced_topk_report(const Rankings &rankings, const std::vector<Index> &labels,
                                      Index k)
{
    check_rankings(rankings, labels, k);
    std::map<Index, std::pair<int, int>> hits; // class -> (hits, total)
    for (std::size_t i = 0; i < labels.size(); ++i) {
        auto &h = hits[labels[i]];
        ++h.second;
        if (in_top_k(rankings[i], labels[i], k))
            ++h.first;
    }
    BalancedAccuracy out;
    double sum = 0.0;
    for (const auto &[cls, h] : hits) {
        const double r = static_cast<double>(h.first) / h.second;
        out.recall[cls] = r;
        sum += r;
    }
    out.value = sum / static_cast<double>(hits.size());
    return out;
}

double balanced_topk_accuracy(const Rankings &rankings, const std::vector<Index> &labels, Index k)
{
    return balanced_topk_report(rankings, labels, k).value;
}

double topk_accuracy(const Rankings &rankings, const std::vector<Index> &labels, Index k)
{
    check_rankings(rankings, labels, k);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < labels.size(); ++i)
        hits += in_top_k(rankings[i], labels[i], k);
    return static_cast<double>(hits) / static_cast<double>(labels.size());
}

double macro_f1(const std::vector<Index> &predictions, const std::vector<Index> &labels)
{
    if (labels.empty())
        throw ValidationError("macro_f1: no labels");
    if (predictions.size() != labels.size())
        throw ValidationError(fmt::format("macro_f1: {} predictions but {} labels",
                                          predictions.size(), labels.size()));
    std::set<Index> classes(labels.begin(), labels.end());
    classes.insert(predictions.begin(), predictions.end());
    double sum = 0.0;
    for (Index c : classes) {
        int tp = 0, fp = 0, fn = 0;
        for (std::size_t i = 0; i < labels.size(); ++i) {
            const bool pred = predictions[i] == c;
            const bool truth = labels[i] == c;
            tp += pred && truth;
            fp += pred && !truth;
            fn += !pred && truth;
        }
        const double precision = tp + fp > 0 ? static_cast<double>(tp) / (tp + fp) : 0.0;
        const double recall = tp + fn > 0 ? static_cast<double>(tp) / (tp + fn) : 0.0;
        if (precision + recall > 0.0)
            sum += 2.0 * precision * recall / (precision + recall);
    }
    return sum / static_cast<double>(classes.size());
}

TextEmbeddings load_text_embeddings(const std::filesystem::path &path)
{
    std::ifstream in(path);
    if (!in)
        throw FormatError(fmt::format("cannot open text embedding file '{}'", path.string()));
    TextEmbeddings out;
    try {
        const json doc = json::parse(in);
        out.classes = doc.at("classes").get<std::vector<std::string>>();
        out.templates = doc.value("templates", std::vector<std::string>{});
        const auto &emb = doc.at("embeddings");
        if (emb.size() != out.classes.size())
            throw FormatError(fmt::format("{}: {} classes but {} embedding groups", path.string(),
                                          out.classes.size(), emb.size()));
        for (std::size_t c = 0; c < emb.size(); ++c) {
            const auto rows = emb[c].get<std::vector<std::vector<double>>>();
            if (rows.empty())
                throw FormatError(fmt::format("{}: class '{}' has no embeddings", path.string(),
                                              out.classes[c]));
            Eigen::MatrixXd m(static_cast<Index>(rows.size()),
                              static_cast<Index>(rows.front().size()));
            for (std::size_t r = 0; r < rows.size(); ++r) {
                if (rows[r].size() != rows.front().size())
                    throw FormatError(fmt::format("{}: ragged embeddings for class '{}'",
                                                  path.string(), out.classes[c]));
                for (std::size_t j = 0; j < rows[r].size(); ++j)
                    m(static_cast<Index>(r), static_cast<Index>(j)) = rows[r][j];
            }
            out.embeddings.push_back(std::move(m));
        }
    } catch (const json::exception &e) {
        throw FormatError(fmt::format("{}: {}", path.string(), e.what()));
    }
    return out;
}

void TemplateSet::validate() const
{
    if (templates.empty())
        throw ValidationError("template set has no templates");
    for (const auto &t : templates)
        if (t.find("{class}") == std::string::npos)
            throw ValidationError(fmt::format("template '{}' lacks a {{class}} placeholder", t));
    if (generic_terms.empty())
        throw ValidationError("generic term list is empty");
    for (const auto &[domain, terms] : domain_terms)
        if (terms.empty())
            throw ValidationError(fmt::format("domain '{}' has no terms", domain));
}

TemplateSet TemplateSet::defaults()
{
    TemplateSet ts;
    ts.templates = {
        "a {domain} of a {class}.",        "a {class} {domain}.",
        "a {domain} depicting a {class}.", "a {class} depicted in a {domain}.",
        "a {domain} showing a {class}.",   "a {class} is visible in a {domain}.",
    };
    ts.generic_terms = {"image", "picture"};
    ts.domain_terms = {
        {"clipart", {"clipart", "illustration"}},
        {"infograph", {"infograph", "informational chart"}},
        {"painting", {"painting", "art"}},
        {"quickdraw", {"quickdraw", "doodle"}},
        {"real", {"photo", "snapshot"}},
        {"sketch", {"sketch", "drawing"}},
    };
    return ts;
}

std::vector<std::string> default_eval_templates()
{
    return {
        "a clipart of the {class}.",   "a clipart of a {class}.",
        "an infograph of the {class}.", "an infograph of a {class}.",
        "a quickdraw of the {class}.", "a quickdraw of a {class}.",
    };
}

TemplateSet parse_templates(const std::string &text)
{
    TemplateSet ts;
    try {
        const json doc = json::parse(text);
        ts.templates = doc.at("templates").get<std::vector<std::string>>();
        ts.generic_terms = doc.at("generic_terms").get<std::vector<std::string>>();
        ts.domain_terms =
            doc.value("domain_terms", std::map<std::string, std::vector<std::string>>{});
    } catch (const json::exception &e) {
        throw FormatError(fmt::format("template file: {}", e.what()));
    }
    ts.validate();
    return ts;
}

TemplateSet load_templates(const std::filesystem::path &path)
{
    std::ifstream in(path);
    if (!in)
        throw FormatError(fmt::format("cannot open template file '{}'", path.string()));
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_templates(buf.str());
}

CaptionDraw draw_caption(const TemplateSet &ts, const std::string &domain, std::uint64_t seed)
{
    ts.validate();
    const auto it = ts.domain_terms.find(domain);
    if (it == ts.domain_terms.end())
        throw ValidationError(fmt::format("unknown domain '{}' for caption templates", domain));
    std::mt19937_64 rng(seed);
    CaptionDraw d;
    d.template_index = std::uniform_int_distribution<std::size_t>(0, ts.templates.size() - 1)(rng);
    d.generic = std::uniform_int_distribution<int>(0, 1)(rng) == 0;
    const auto &pool = d.generic ? ts.generic_terms : it->second;
    d.term_index = std::uniform_int_distribution<std::size_t>(0, pool.size() - 1)(rng);
    return d;
}

std::string fill_template(const std::string &tmpl, const std::string &class_name,
                          const std::string &domain_term)
{
    std::string out;
    std::size_t pos = 0;
    while (pos < tmpl.size()) {
        if (tmpl.compare(pos, 7, "{class}") == 0) {
            out += class_name;
            pos += 7;
        } else if (tmpl.compare(pos, 8, "{domain}") == 0) {
            out += domain_term;
            pos += 8;
        } else {
            out += tmpl[pos++];
        }
    }
    return out;
}

std::string render_caption(const TemplateSet &ts, const std::string &class_name,
                           const std::string &domain, std::uint64_t seed)
{
    const auto d = draw_caption(ts, domain, seed);
    const auto &pool = d.generic ? ts.generic_terms : ts.domain_terms.at(domain);
    return fill_template(ts.templates[d.template_index], class_name, pool[d.term_index]);
}

std::int64_t MixturePlan::total() const
{
    std::int64_t s = 0;
    for (const auto &[key, n] : keep)
        s += n;
    return s;
}

std::int64_t MixturePlan::domain_total(const std::string &domain) const
{
    std::int64_t s = 0;
    for (const auto &[key, n] : keep)
        if (key.first == domain)
            s += n;
    return s;
}

std::vector<std::int64_t> largest_remainder(const std::vector<std::int64_t> &weights,
                                            std::int64_t budget)
{
    if (budget < 0)
        throw ValidationError("budget must be non-negative");
    __int128 total = 0;
    for (auto w : weights) {
        if (w < 0)
            throw ValidationError("apportionment weights must be non-negative");
        total += w;
    }
    if (budget > total)
        throw ValidationError(fmt::format("budget {} exceeds the {} available samples", budget,
                                          static_cast<std::int64_t>(total)));
    std::vector<std::int64_t> out(weights.size(), 0);
    if (total == 0)
        return out;

    std::vector<__int128> remainder(weights.size());
    std::int64_t assigned = 0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        const __int128 q = static_cast<__int128>(budget) * weights[i];
        out[i] = static_cast<std::int64_t>(q / total);
        remainder[i] = q % total;
        assigned += out[i];
    }
    std::vector<std::size_t> order(weights.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return remainder[a] > remainder[b]; });
    for (std::size_t i = 0; assigned < budget; ++i, ++assigned)
        ++out[order[i]];
    return out;
}

MixturePlan plan_mixture(const CountTable &available, std::int64_t budget)
{
    std::vector<std::string> domains;
    std::map<std::string, std::vector<std::pair<std::string, std::int64_t>>> by_domain;
    for (const auto &[key, n] : available) {
        if (n < 0)
            throw ValidationError(fmt::format("negative count for ({}, {})", key.first,
                                              key.second));
        if (by_domain.find(key.first) == by_domain.end())
            domains.push_back(key.first);
        by_domain[key.first].emplace_back(key.second, n);
    }
    std::vector<std::int64_t> domain_totals;
    for (const auto &d : domains) {
        std::int64_t s = 0;
        for (const auto &[cls, n] : by_domain[d])
            s += n;
        domain_totals.push_back(s);
    }

    const auto domain_alloc = largest_remainder(domain_totals, budget);
    MixturePlan plan;
    for (std::size_t i = 0; i < domains.size(); ++i) {
        const auto &cells = by_domain[domains[i]];
        std::vector<std::int64_t> w;
        for (const auto &[cls, n] : cells)
            w.push_back(n);
        const auto alloc = largest_remainder(w, domain_alloc[i]);
        for (std::size_t j = 0; j < cells.size(); ++j)
            plan.keep[{domains[i], cells[j].first}] = alloc[j];
    }
    return plan;
}

CountTable parse_counts_csv(const std::string &text)
{
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line))
        throw FormatError("counts file is empty");
    if (!line.empty() && line.back() == '\r')
        line.pop_back();
    if (line != "domain,class,count")
        throw FormatError(
            fmt::format("counts file: expected header 'domain,class,count', got '{}'", line));
    CountTable table;
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r')
            line.pop_back();
        if (line.empty())
            continue;
        const auto a = line.find(',');
        const auto b = a == std::string::npos ? a : line.find(',', a + 1);
        if (b == std::string::npos)
            throw FormatError(fmt::format("counts file line {}: expected 3 fields", lineno));
        const std::string domain = line.substr(0, a);
        const std::string cls = line.substr(a + 1, b - a - 1);
        std::int64_t count = 0;
        try {
            std::size_t used = 0;
            count = std::stoll(line.substr(b + 1), &used);
            if (used != line.size() - b - 1)
                throw std::invalid_argument("trailing characters");
        } catch (const std::exception &) {
            throw FormatError(fmt::format("counts file line {}: bad count '{}'", lineno,
                                          line.substr(b + 1)));
        }
        if (count < 0)
            throw FormatError(fmt::format("counts file line {}: negative count", lineno));
        if (!table.emplace(DomainClass{domain, cls}, count).second)
            throw FormatError(
                fmt::format("counts file line {}: duplicate ({}, {})", lineno, domain, cls));
    }
    return table;
}

std::string mixture_csv(const CountTable &available, const MixturePlan &plan)
{
    std::string out = "domain,class,available,keep\n";
    for (const auto &[key, n] : available)
        out += fmt::format("{},{},{},{}\n", key.first, key.second, n, plan.keep.at(key));
    return out;
}

} // namespace mechsim
