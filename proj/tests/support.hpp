#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mechsim/activations.hpp"
#include "mechsim/network.hpp"

namespace testing {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

/// splitmix64; portable across standard libraries so fixtures are stable.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next()
    {
        std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ull);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }
    double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    std::uint64_t below(std::uint64_t n) { return next() % n; }
    double gaussian()
    {
        const double u1 = 1.0 - uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

  private:
    std::uint64_t state_;
};

inline MatrixXd gaussian_matrix(Rng &rng, Index rows, Index cols, double scale = 1.0)
{
    MatrixXd m(rows, cols);
    for (Index i = 0; i < rows; ++i)
        for (Index j = 0; j < cols; ++j)
            m(i, j) = scale * rng.gaussian();
    return m;
}

inline VectorXd gaussian_vector(Rng &rng, Index n, double scale = 1.0)
{
    return gaussian_matrix(rng, n, 1, scale).col(0);
}

inline MatrixXd random_orthogonal(Rng &rng, Index n)
{
    Eigen::HouseholderQR<MatrixXd> qr(gaussian_matrix(rng, n, n));
    return qr.householderQ();
}

/// Random symmetric PSD kernel X X^T with X of shape c x (c + 2).
inline MatrixXd random_kernel(Rng &rng, Index c)
{
    const MatrixXd x = gaussian_matrix(rng, c, c + 2);
    return x * x.transpose();
}

inline std::vector<Index> dims(std::initializer_list<Index> d) { return d; }

inline mechsim::ToyNetwork net_from_dims(std::initializer_list<Index> d,
                                         mechsim::Activation hidden, std::uint64_t seed)
{
    const std::vector<Index> v = d;
    return mechsim::random_network(v, hidden, seed);
}

/// Labelled set with `per_group` rows per (domain, class), rows drawn from
/// N(0,1) in domain-major, class-minor order.
inline mechsim::ActivationSet random_set(Rng &rng, const std::vector<std::string> &domains,
                                         const std::vector<std::string> &classes,
                                         Index per_group, Index p)
{
    mechsim::ActivationSet s;
    const auto n = static_cast<Index>(domains.size() * classes.size()) * per_group;
    s.data = gaussian_matrix(rng, n, p);
    for (const auto &d : domains)
        for (const auto &c : classes)
            for (Index r = 0; r < per_group; ++r) {
                s.sample_ids.push_back(d + "_" + c + "_" + std::to_string(r));
                s.domains.push_back(d);
                s.classes.push_back(c);
            }
    return s;
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
  public:
    explicit TempDir(const std::string &tag)
    {
        Rng rng(std::hash<std::string>{}(tag) ^
                static_cast<std::uint64_t>(reinterpret_cast<std::uintptr_t>(this)));
        path_ = std::filesystem::temp_directory_path() /
                ("mechsim_" + tag + "_" + std::to_string(rng.next() % 1000000007ull));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() { std::filesystem::remove_all(path_); }
    TempDir(const TempDir &) = delete;
    TempDir &operator=(const TempDir &) = delete;

    const std::filesystem::path &path() const { return path_; }
    std::filesystem::path operator/(const std::string &name) const { return path_ / name; }

  private:
    std::filesystem::path path_;
};

inline std::string slurp(const std::filesystem::path &p)
{
    std::ifstream in(p, std::ios::binary);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

inline void spit(const std::filesystem::path &p, const std::string &content)
{
    std::ofstream out(p, std::ios::binary);
    out << content;
}

} // namespace testing
