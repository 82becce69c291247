#pragma once

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>

#include <unistd.h>

#include "cogsem/synthetic.hpp"

namespace testutil {

namespace fs = std::filesystem;

/// Fresh scratch directory, removed on destruction.
class TempDir {
public:
    TempDir() {
        static std::atomic<int> counter{0};
        path_ = fs::temp_directory_path() /
                ("cogsem-unit-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
        fs::remove_all(path_);
        fs::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const fs::path& path() const { return path_; }
    fs::path operator/(const std::string& name) const { return path_ / name; }

private:
    fs::path path_;
};

inline std::string slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Small two-category dataset written to disk.
inline fs::path tiny_dataset(const fs::path& root, int64_t per_category = 5, int64_t size = 32, uint64_t seed = 3) {
    namespace syn = cogsem::synthetic;
    return syn::write_dataset(root, {syn::squares_and_circles(), per_category, 0, size, 2, seed, "img"});
}

} // namespace testutil
