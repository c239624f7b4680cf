#ifndef ALIGNMAP_TEST_UTILS_HPP
#define ALIGNMAP_TEST_UTILS_HPP

#include <filesystem>
#include <fstream>
#include <random>
#include <string>

#include "alignmap/matrix.hpp"

namespace test_utils {

class TempDir {
public:
    explicit TempDir(const std::string& prefix = "alignmap") {
        static int counter = 0;
        std::random_device rd;
        my_path = std::filesystem::temp_directory_path() /
            (prefix + "-" + std::to_string(rd()) + "-" + std::to_string(++counter));
        std::filesystem::create_directories(my_path);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(my_path, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return my_path; }
    std::filesystem::path operator/(const std::string& child) const { return my_path / child; }

private:
    std::filesystem::path my_path;
};

template<typename Value_ = float>
alignmap::Matrix<Value_> random_matrix(std::size_t nrow, std::size_t ncol, unsigned seed, double sd = 1.0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> dist(0.0, sd);
    alignmap::Matrix<Value_> out(nrow, ncol);
    for (auto& x : out.values()) {
        x = static_cast<Value_>(dist(rng));
    }
    return out;
}

inline std::string slurp(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
}

inline void spit(const std::filesystem::path& path, const std::string& contents) {
    std::ofstream out(path, std::ios::binary);
    out << contents;
}

}

#endif
