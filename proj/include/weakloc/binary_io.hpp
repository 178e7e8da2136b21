#ifndef WEAKLOC_BINARY_IO_HPP
#define WEAKLOC_BINARY_IO_HPP

#include <weakloc/tensor.hpp>

#include <algorithm>
#include <array>
#include <bit>
#include <filesystem>
#include <istream>
#include <ostream>

namespace weakloc::io
{

template <typename T>
void write_le(std::ostream &os, T value)
{
    auto bytes = std::bit_cast<std::array<char, sizeof(T)>>(value);
    if constexpr (std::endian::native == std::endian::big) {
        std::reverse(bytes.begin(), bytes.end());
    }
    os.write(bytes.data(), sizeof(T));
}

template <typename T>
T read_le(std::istream &is, const std::filesystem::path &path)
{
    std::array<char, sizeof(T)> bytes{};
    is.read(bytes.data(), sizeof(T));
    if (!is) {
        throw Error("unexpected end of file: " + path.string());
    }
    if constexpr (std::endian::native == std::endian::big) {
        std::reverse(bytes.begin(), bytes.end());
    }
    return std::bit_cast<T>(bytes);
}

} // namespace weakloc::io

#endif
