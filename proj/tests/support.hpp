#pragma once

#include <filesystem>
#include <fstream>
#include <random>
#include <string>

#include "softood/error.hpp"
#include "softood/numerics.hpp"
#include "softood/rng.hpp"

namespace testing {

/// Kind of the softood::Error thrown by f, or "" when nothing is thrown.
template <typename F>
std::string error_kind(F&& f) {
  try {
    f();
  } catch (const softood::Error& e) {
    return e.kind();
  }
  return "";
}

template <typename F>
std::string error_message(F&& f) {
  try {
    f();
  } catch (const std::exception& e) {
    return e.what();
  }
  return "";
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("softood-" + tag + "-" + std::to_string(rd()));
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

inline void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p);
  out << text;
}

inline std::string read_text(const std::filesystem::path& p) {
  std::ifstream in(p);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline softood::Vector random_vector(softood::Rng& rng, std::size_t n, double scale = 1.0) {
  softood::Vector v(n);
  for (double& x : v) x = scale * rng.normal();
  return v;
}

inline softood::Vector random_unit(softood::Rng& rng, std::size_t n) {
  return softood::l2_normalize(random_vector(rng, n));
}

/// Random probability vector; some entries may be exactly zero.
inline softood::Vector random_distribution(softood::Rng& rng, std::size_t n) {
  softood::Vector v(n);
  double s = 0.0;
  for (double& x : v) {
    x = rng.uniform() < 0.2 ? 0.0 : rng.uniform();
    s += x;
  }
  if (s == 0.0) {
    v[rng.index(n)] = 1.0;
    return v;
  }
  for (double& x : v) x /= s;
  return v;
}

inline double sum(const softood::Vector& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s;
}

inline bool is_distribution(const softood::Vector& v, double tol) {
  for (double x : v)
    if (!(x >= -tol) || !(x <= 1.0 + tol)) return false;
  return std::abs(sum(v) - 1.0) <= tol;
}

}  // namespace testing
