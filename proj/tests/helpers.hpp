#pragma once
// Small fixtures shared by the unit suites.

#include "svseg/image.hpp"

#include <atomic>
#include <chrono>
#include <filesystem>
#include <string>

namespace svseg::test {

/// Self-deleting scratch directory under the system temp dir.
class TempDir {
public:
    TempDir() {
        static std::atomic<int> counter{0};
        const auto stamp = std::chrono::steady_clock::now().time_since_epoch().count();
        path_ = std::filesystem::temp_directory_path() /
                ("svseg_test_" + std::to_string(stamp) + "_" + std::to_string(counter++));
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

inline RasterVolume random_volume(Dims d, std::uint64_t seed, int levels = 256) {
    Rng rng(seed);
    RasterVolume v(d);
    for (auto& b : v.mutable_data()) {
        b = static_cast<std::uint8_t>(rng.uniform_index(static_cast<std::uint64_t>(levels)) * (256 / levels));
    }
    return v;
}

}  // namespace svseg::test
