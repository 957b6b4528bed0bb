#pragma once

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <string>
#include <unistd.h>

#include "attrseg/autodiff.hpp"
#include "attrseg/rng.hpp"

namespace attrseg::testutil {

inline ad::Mat random_mat(Rng& rng, long rows, long cols, double scale = 1.0) {
    ad::Mat m(rows, cols);
    for (long i = 0; i < rows; ++i)
        for (long j = 0; j < cols; ++j) m(i, j) = scale * rng.normal();
    return m;
}

inline double max_abs_diff(const ad::Mat& a, const ad::Mat& b) {
    return (a - b).cwiseAbs().maxCoeff();
}

inline bool bitwise_equal(const ad::Mat& a, const ad::Mat& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
    for (long i = 0; i < a.rows(); ++i)
        for (long j = 0; j < a.cols(); ++j)
            if (std::memcmp(&a(i, j), &b(i, j), sizeof(double)) != 0) return false;
    return true;
}

// Relative error with an absolute floor so near-zero pairs compare sanely.
inline double rel_err(double got, double want, double floor_ = 1e-6) {
    return std::abs(got - want) / std::max({std::abs(got), std::abs(want), floor_});
}

// Central finite difference of scalar() with respect to p.value(i, j).
template <typename F>
double central_diff(ad::Param& p, long i, long j, F&& scalar, double h = 1e-5) {
    const double orig = p.value(i, j);
    p.value(i, j) = orig + h;
    const double fp = scalar();
    p.value(i, j) = orig - h;
    const double fm = scalar();
    p.value(i, j) = orig;
    return (fp - fm) / (2.0 * h);
}

// Unique scratch directory under the test binary's working directory.
class TempDir {
  public:
    explicit TempDir(const std::string& tag) {
        static int counter = 0;
        path_ = std::filesystem::temp_directory_path() /
                ("attrseg_test_" + tag + "_" + std::to_string(::getpid()) + "_" +
                 std::to_string(counter++));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    const std::filesystem::path& path() const { return path_; }
    std::string str(const std::string& leaf = "") const {
        return leaf.empty() ? path_.string() : (path_ / leaf).string();
    }

  private:
    std::filesystem::path path_;
};

}  // namespace attrseg::testutil
