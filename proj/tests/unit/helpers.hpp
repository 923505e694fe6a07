#pragma once

#include <doctest.h>

#include <filesystem>
#include <string>

#include "resid/core.hpp"
#include "resid/rng.hpp"

namespace testutil {

/// Fresh directory under the build tree, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& name)
        : path_(std::filesystem::temp_directory_path() / ("resid_test_" + name)) {
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() { std::filesystem::remove_all(path_); }
    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
};

inline double rel_err(const resid::Matrix& a, const resid::Matrix& b) {
    return (a - b).norm() / std::max(b.norm(), 1e-300);
}

/// Matrix with orthonormal rows.
inline resid::Matrix orthonormal_rows(resid::Rng& rng, Eigen::Index k, Eigen::Index d) {
    return rng.orthogonal(d).topRows(k);
}

}  // namespace testutil

#define CHECK_THROWS_WITH_SUBSTR(expr, type, substr)                              \
    do {                                                                          \
        bool caught_ = false;                                                     \
        try {                                                                     \
            (void)(expr);                                                         \
        } catch (const type& e_) {                                                \
            caught_ = true;                                                       \
            CHECK_MESSAGE(std::string(e_.what()).find(substr) != std::string::npos, e_.what()); \
        }                                                                         \
        CHECK_MESSAGE(caught_, "expected " #type);                                \
    } while (0)
