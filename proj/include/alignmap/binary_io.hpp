#ifndef ALIGNMAP_BINARY_IO_HPP
#define ALIGNMAP_BINARY_IO_HPP

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "error.hpp"

namespace alignmap::io {

namespace detail {

template<typename T>
T byteswap_value(T value) {
    unsigned char bytes[sizeof(T)];
    std::memcpy(bytes, &value, sizeof(T));
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) {
        std::swap(bytes[i], bytes[sizeof(T) - 1 - i]);
    }
    std::memcpy(&value, bytes, sizeof(T));
    return value;
}

}

/**
 * Read a headerless little-endian array of `T`. Throws `FormatError` if the
 * file is missing or its size is not exactly `expected_count * sizeof(T)`.
 */
template<typename T>
std::vector<T> read_le_array(const std::filesystem::path& path, std::size_t expected_count) {
    std::error_code ec;
    auto size = std::filesystem::file_size(path, ec);
    if (ec) {
        throw FormatError("cannot open '" + path.string() + "': " + ec.message());
    }
    std::size_t expected_bytes = expected_count * sizeof(T);
    if (size != expected_bytes) {
        throw FormatError("'" + path.string() + "' has " + std::to_string(size) + " bytes, expected " + std::to_string(expected_bytes));
    }

    std::vector<T> out(expected_count);
    std::ifstream in(path, std::ios::binary);
    if (!in || !in.read(reinterpret_cast<char*>(out.data()), static_cast<std::streamsize>(expected_bytes))) {
        throw FormatError("failed to read '" + path.string() + "'");
    }
    if constexpr (std::endian::native == std::endian::big) {
        for (auto& x : out) {
            x = detail::byteswap_value(x);
        }
    }
    return out;
}

template<typename T>
void write_le_array(const std::filesystem::path& path, const std::vector<T>& values) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw FormatError("cannot create '" + path.string() + "'");
    }
    if constexpr (std::endian::native == std::endian::big) {
        std::vector<T> swapped(values);
        for (auto& x : swapped) {
            x = detail::byteswap_value(x);
        }
        out.write(reinterpret_cast<const char*>(swapped.data()), static_cast<std::streamsize>(swapped.size() * sizeof(T)));
    } else {
        out.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(T)));
    }
    if (!out) {
        throw FormatError("failed to write '" + path.string() + "'");
    }
}

inline std::string read_text(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw FormatError("cannot open '" + path.string() + "'");
    }
    return std::string(std::istreambuf_iterator<char>(in), {});
}

/** Write via a temporary file and rename, so readers never see a partial file. */
inline void write_text_atomic(const std::filesystem::path& path, const std::string& text) {
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out || !out.write(text.data(), static_cast<std::streamsize>(text.size()))) {
            throw FormatError("cannot write '" + tmp.string() + "'");
        }
    }
    std::filesystem::rename(tmp, path);
}

}

#endif
