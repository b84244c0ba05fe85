#pragma once

// Generators and straight-line oracles shared by the test suites. The oracles
// deliberately avoid the library so they can check it.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "switokd/switokd.hpp"

namespace testing_support {

using switokd::Matrix;
using switokd::ProbDist;
using switokd::Vector;

struct Gen {
  std::mt19937_64 rng;
  explicit Gen(std::uint64_t seed) : rng(seed) {}

  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }
  double normal(double sd = 1.0) { return std::normal_distribution<double>(0.0, sd)(rng); }
  std::size_t index(std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng); }
  std::size_t classes(std::size_t lo = 2, std::size_t hi = 8) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
  }

  Vector logits(std::size_t k, double scale = 2.0) {
    Vector z(static_cast<Eigen::Index>(k));
    for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = scale * normal();
    return z;
  }

  /// Uniform point on the simplex (normalized exponentials), with an occasional
  /// exact zero so clamping paths get exercised.
  ProbDist simplex(std::size_t k) {
    Vector p(static_cast<Eigen::Index>(k));
    for (Eigen::Index i = 0; i < p.size(); ++i) p(i) = -std::log(uniform(1e-12, 1.0));
    if (k > 2 && uniform(0.0, 1.0) < 0.1) p(static_cast<Eigen::Index>(index(k))) = 0.0;
    return {p / p.sum(), 1.0};
  }

  Matrix matrix(Eigen::Index rows, Eigen::Index cols, double sd = 1.0) {
    Matrix m(rows, cols);
    for (Eigen::Index c = 0; c < cols; ++c)
      for (Eigen::Index r = 0; r < rows; ++r) m(r, c) = normal(sd);
    return m;
  }
};

// --- straight-line oracles ---------------------------------------------------

inline std::vector<double> oracle_softmax(const Vector& z, double tau) {
  double mx = z(0);
  for (Eigen::Index i = 1; i < z.size(); ++i) mx = std::max(mx, z(i));
  std::vector<double> p(static_cast<std::size_t>(z.size()));
  double sum = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) sum += p[i] = std::exp((z(static_cast<Eigen::Index>(i)) - mx) / tau);
  for (auto& v : p) v /= sum;
  return p;
}

/// sum_k a_k (log a_k - log b_k), skipping a_k = 0.
inline double oracle_kl(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i] > 0) s += a[i] * (std::log(a[i]) - std::log(b[i]));
  return s;
}

inline double oracle_ce(const std::vector<double>& y, const std::vector<double>& p) {
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i)
    if (y[i] > 0) s -= y[i] * std::log(p[i]);
  return s;
}

inline std::vector<double> as_std(const Vector& v) { return {v.data(), v.data() + v.size()}; }

/// ce_weight * CE(y, softmax(z)) + tau^2 * sum_j w_j KL(t_j || softmax(z / tau)).
inline double oracle_composite(const Vector& z, const std::vector<double>& y, double ce_weight,
                               const std::vector<std::pair<std::vector<double>, double>>& terms,
                               double tau) {
  double total = ce_weight * oracle_ce(y, oracle_softmax(z, 1.0));
  const auto soft = oracle_softmax(z, tau);
  for (const auto& [t, w] : terms) total += tau * tau * w * oracle_kl(t, soft);
  return total;
}

/// Fourth-order central difference of f along each coordinate of z.
template <class F>
Vector oracle_gradient(const Vector& z, F&& f, double h = 1e-3) {
  Vector g(z.size());
  for (Eigen::Index c = 0; c < z.size(); ++c) {
    const auto at = [&](double s) {
      Vector w = z;
      w(c) += s;
      return f(w);
    };
    g(c) = (-at(2 * h) + 8 * at(h) - 8 * at(-h) + at(-2 * h)) / (12 * h);
  }
  return g;
}

/// max_i |a_i - b_i| / max(|a_i|, |b_i|, floor)
inline double max_relative_error(const Vector& a, const Vector& b, double floor = 1e-6) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i)
    worst = std::max(worst, std::abs(a(i) - b(i)) / std::max({std::abs(a(i)), std::abs(b(i)), floor}));
  return worst;
}

// --- files -------------------------------------------------------------------

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
  explicit TempDir(const std::string& tag) {
    static std::uint64_t counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("switokd-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
  std::filesystem::path path_;
};

inline void write_bytes(const std::filesystem::path& p, const std::vector<unsigned char>& bytes) {
  std::ofstream out(p, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

inline void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p);
  out << text;
}

inline std::string read_text(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void put_be32(std::vector<unsigned char>& b, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) b.push_back(static_cast<unsigned char>((v >> s) & 0xFF));
}

} // namespace testing_support
