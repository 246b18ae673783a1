#include "mechsim/activations.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <fstream>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <json.hpp>

#include "mechsim/error.hpp"

namespace mechsim {

using json = nlohmann::json;

void ActivationSet::validate() const
{
    const auto n = static_cast<std::size_t>(data.rows());
    if (data.cols() < 1)
        throw ValidationError("activation set must have at least one column");
    if (sample_ids.size() != n || domains.size() != n || classes.size() != n)
        throw ValidationError(fmt::format("activation set has {} rows but {} ids, {} domains, {} "
                                          "classes",
                                          n, sample_ids.size(), domains.size(), classes.size()));
}

namespace {

std::vector<std::string> first_seen(const std::vector<std::string> &labels)
{
    std::vector<std::string> out;
    std::set<std::string> seen;
    for (const auto &l : labels)
        if (seen.insert(l).second)
            out.push_back(l);
    return out;
}

} // namespace

std::vector<std::string> ActivationSet::domain_list() const
{
    return first_seen(domains);
}

std::vector<std::string> ActivationSet::class_list() const
{
    return first_seen(classes);
}

ClassDomainIndex group_by_domain_class(const ActivationSet &set)
{
    set.validate();
    ClassDomainIndex index;
    for (Index i = 0; i < set.rows(); ++i) {
        const auto k = static_cast<std::size_t>(i);
        index[{set.domains[k], set.classes[k]}].push_back(i);
    }
    return index;
}

std::vector<Index> group_rows(const ActivationSet &set, const std::string &domain,
                              const std::string &cls)
{
    set.validate();
    std::vector<Index> rows;
    for (Index i = 0; i < set.rows(); ++i) {
        const auto k = static_cast<std::size_t>(i);
        if (set.domains[k] == domain && set.classes[k] == cls)
            rows.push_back(i);
    }
    if (rows.empty())
        throw MissingDataError(
            fmt::format("no samples for (domain '{}', class '{}')", domain, cls));
    return rows;
}

Eigen::MatrixXd mean_class_embeddings(const ActivationSet &set, const std::string &domain,
                                      const std::vector<std::string> &classes)
{
    Eigen::MatrixXd means(static_cast<Index>(classes.size()), set.dim());
    for (std::size_t c = 0; c < classes.size(); ++c) {
        const auto rows = group_rows(set, domain, classes[c]);
        Eigen::VectorXd sum = Eigen::VectorXd::Zero(set.dim());
        for (Index r : rows)
            sum += set.data.row(r).transpose();
        means.row(static_cast<Index>(c)) = sum.transpose() / static_cast<double>(rows.size());
    }
    return means;
}

ActivationSet select_rows(const ActivationSet &set, const std::vector<Index> &rows)
{
    ActivationSet out;
    out.data.resize(static_cast<Index>(rows.size()), set.dim());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto r = rows[i];
        if (r < 0 || r >= set.rows())
            throw ValidationError(fmt::format("row index {} out of range", r));
        out.data.row(static_cast<Index>(i)) = set.data.row(r);
        const auto k = static_cast<std::size_t>(r);
        out.sample_ids.push_back(set.sample_ids[k]);
        out.domains.push_back(set.domains[k]);
        out.classes.push_back(set.classes[k]);
    }
    return out;
}

ActivationSet activations_at_layer(const ToyNetwork &net, const ActivationSet &inputs, Index layer)
{
    inputs.validate();
    const Index width = net.layer_width(layer);
    ActivationSet out;
    out.data.resize(inputs.rows(), width);
    for (Index i = 0; i < inputs.rows(); ++i) {
        const auto res = forward(net, inputs.data.row(i).transpose());
        out.data.row(i) = res.acts[static_cast<std::size_t>(layer)].transpose();
    }
    out.sample_ids = inputs.sample_ids;
    out.domains = inputs.domains;
    out.classes = inputs.classes;
    return out;
}

std::filesystem::path sidecar_path(const std::filesystem::path &acts_path)
{
    return std::filesystem::path(acts_path.string() + ".meta.json");
}

namespace {

template <typename T>
void put_le(std::ostream &out, T value)
{
    static_assert(std::is_unsigned_v<T>);
    std::array<char, sizeof(T)> bytes{};
    for (std::size_t i = 0; i < sizeof(T); ++i)
        bytes[i] = static_cast<char>((value >> (8 * i)) & 0xFF);
    out.write(bytes.data(), bytes.size());
}

template <typename T>
T get_le(const unsigned char *p)
{
    T value = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i)
        value |= static_cast<T>(p[i]) << (8 * i);
    return value;
}

constexpr std::size_t kHeaderBytes = 4 + 4 + 8 + 8;

} // namespace

void write_acts_matrix(std::ostream &out, const Eigen::MatrixXd &m)
{
    out.write("ACTS", 4);
    put_le<std::uint32_t>(out, kActsVersion);
    put_le<std::uint64_t>(out, static_cast<std::uint64_t>(m.rows()));
    put_le<std::uint64_t>(out, static_cast<std::uint64_t>(m.cols()));
    for (Index i = 0; i < m.rows(); ++i)
        for (Index j = 0; j < m.cols(); ++j)
            put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(static_cast<float>(m(i, j))));
}

Eigen::MatrixXd read_acts_matrix(std::istream &in, const std::string &context)
{
    std::array<unsigned char, kHeaderBytes> header{};
    in.read(reinterpret_cast<char *>(header.data()), header.size());
    if (static_cast<std::size_t>(in.gcount()) != header.size())
        throw FormatError(fmt::format("{}: truncated header ({} of {} bytes)", context, in.gcount(),
                                      header.size()));
    if (std::string(header.begin(), header.begin() + 4) != "ACTS")
        throw FormatError(fmt::format("{}: bad magic, expected 'ACTS'", context));
    const auto version = get_le<std::uint32_t>(header.data() + 4);
    if (version != kActsVersion)
        throw FormatError(
            fmt::format("{}: unsupported version {} (expected {})", context, version, kActsVersion));
    const auto n = get_le<std::uint64_t>(header.data() + 8);
    const auto p = get_le<std::uint64_t>(header.data() + 16);
    // Guard against absurd headers before allocating.
    if (n > (1ull << 40) || p > (1ull << 40) || (p != 0 && n > (1ull << 60) / p / 4))
        throw FormatError(fmt::format("{}: implausible shape {} x {}", context, n, p));

    const std::size_t expected = n * p * 4;
    std::vector<unsigned char> payload(expected);
    in.read(reinterpret_cast<char *>(payload.data()), static_cast<std::streamsize>(expected));
    const auto got = static_cast<std::size_t>(in.gcount());
    if (got != expected)
        throw FormatError(fmt::format("{}: truncated payload, expected {} bytes, got {}", context,
                                      expected, got));

    Eigen::MatrixXd m(static_cast<Index>(n), static_cast<Index>(p));
    const unsigned char *cur = payload.data();
    for (Index i = 0; i < m.rows(); ++i)
        for (Index j = 0; j < m.cols(); ++j, cur += 4)
            m(i, j) = static_cast<double>(std::bit_cast<float>(get_le<std::uint32_t>(cur)));
    return m;
}

void save_activations(const ActivationSet &set, const std::filesystem::path &path)
{
    set.validate();
    {
        std::ofstream out(path, std::ios::binary);
        if (!out)
            throw FormatError(fmt::format("cannot write '{}'", path.string()));
        write_acts_matrix(out, set.data);
    }
    json meta;
    meta["sample_ids"] = set.sample_ids;
    meta["domains"] = set.domains;
    meta["classes"] = set.classes;
    std::ofstream out(sidecar_path(path));
    if (!out)
        throw FormatError(fmt::format("cannot write '{}'", sidecar_path(path).string()));
    out << meta.dump(2) << "\n";
}

ActivationSet load_activations(const std::filesystem::path &path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw FormatError(fmt::format("cannot open activation file '{}'", path.string()));
    ActivationSet set;
    set.data = read_acts_matrix(in, path.string());
    if (in.peek() != std::char_traits<char>::eof())
        throw FormatError(fmt::format("{}: trailing bytes after payload", path.string()));

    const auto meta_path = sidecar_path(path);
    std::ifstream meta_in(meta_path);
    if (!meta_in)
        throw FormatError(fmt::format("missing sidecar '{}'", meta_path.string()));
    json meta;
    try {
        meta = json::parse(meta_in);
    } catch (const json::parse_error &e) {
        throw FormatError(fmt::format("{}: {}", meta_path.string(), e.what()));
    }
    const auto n = static_cast<std::size_t>(set.data.rows());
    auto field = [&](const char *key) {
        if (!meta.contains(key) || !meta[key].is_array())
            throw FormatError(fmt::format("{}: missing array '{}'", meta_path.string(), key));
        std::vector<std::string> v;
        try {
            v = meta[key].get<std::vector<std::string>>();
        } catch (const json::exception &e) {
            throw FormatError(fmt::format("{}.{}: {}", meta_path.string(), key, e.what()));
        }
        if (v.size() != n)
            throw FormatError(fmt::format("{}: '{}' lists {} samples but the matrix has {} rows",
                                          meta_path.string(), key, v.size(), n));
        return v;
    };
    set.sample_ids = field("sample_ids");
    set.domains = field("domains");
    set.classes = field("classes");
    if (set.data.cols() < 1)
        throw FormatError(fmt::format("{}: matrix has zero columns", path.string()));
    return set;
}

} // namespace mechsim
