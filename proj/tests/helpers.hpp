#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "tdlm/autodiff.hpp"
#include "tdlm/random.hpp"

namespace tdlm::test {

inline Tensor uniform_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0, bool grad = false)
{
    std::vector<double> v(shape_size(shape));
    for (double& x : v) x = lo + (hi - lo) * rng.uniform();
    return Tensor(std::move(shape), std::move(v), grad);
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag)
    {
        std::random_device rd;
        path_ = std::filesystem::temp_directory_path() / ("tdlm_" + tag + "_" + std::to_string(rd()));
        std::filesystem::create_directories(path_);
    }
    ~TempDir()
    {
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

} // namespace tdlm::test
