#pragma once

#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "bcglm/error.hpp"
#include "bcglm/tensor.hpp"

// Binary layout: "BCT1", u32 rank, rank x u64 extents, row-major f64 payload;
// every integer and float little-endian.

namespace bcglm {

static_assert(std::endian::native == std::endian::little, "BCT1 I/O assumes a little-endian host");

inline void write_tensor(const std::filesystem::path& path, const Tensor& t) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(Errc::IoError, "write_tensor", "cannot open " + path.string());
    out.write("BCT1", 4);
    const auto rank = static_cast<std::uint32_t>(t.rank());
    out.write(reinterpret_cast<const char*>(&rank), sizeof rank);
    for (std::size_t e : t.shape()) {
        const auto extent = static_cast<std::uint64_t>(e);
        out.write(reinterpret_cast<const char*>(&extent), sizeof extent);
    }
    out.write(reinterpret_cast<const char*>(t.data().data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
    if (!out) throw Error(Errc::IoError, "write_tensor", "short write to " + path.string());
}

inline Tensor read_tensor(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(Errc::IoError, "read_tensor", "cannot open " + path.string());
    char magic[4] = {};
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "BCT1", 4) != 0)
        throw Error(Errc::IoError, "read_tensor", path.string() + " is not a BCT1 tensor file");
    std::uint32_t rank = 0;
    in.read(reinterpret_cast<char*>(&rank), sizeof rank);
    if (!in || rank == 0 || rank > 16) throw Error(Errc::IoError, "read_tensor", "bad rank in " + path.string());
    Shape shape(rank);
    for (auto& e : shape) {
        std::uint64_t extent = 0;
        in.read(reinterpret_cast<char*>(&extent), sizeof extent);
        if (!in || extent == 0) throw Error(Errc::IoError, "read_tensor", "bad extent in " + path.string());
        e = static_cast<std::size_t>(extent);
    }
    std::vector<double> data(shape_size(shape));
    in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(double)));
    if (!in) throw Error(Errc::IoError, "read_tensor", "truncated payload in " + path.string());
    return Tensor(std::move(shape), std::move(data));
}

/// Shortest round-trip decimal for a double.
inline std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline void write_csv(const std::filesystem::path& path, const Tensor& t, const std::vector<std::string>& header) {
    if (t.rank() > 2) throw Error(Errc::ShapeMismatch, "write_csv", "only 1-D and 2-D tensors are supported");
    const std::size_t cols = t.rank() == 2 ? t.cols() : 1;
    if (header.size() != cols) throw Error(Errc::ShapeMismatch, "write_csv", "header width does not match columns");
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error(Errc::IoError, "write_csv", "cannot open " + path.string());
    for (std::size_t j = 0; j < cols; ++j) out << (j ? "," : "") << header[j];
    out << '\n';
    for (std::size_t i = 0; i < t.rows(); ++i) {
        for (std::size_t j = 0; j < cols; ++j) out << (j ? "," : "") << format_double(t[i * cols + j]);
        out << '\n';
    }
}

struct CsvTable {
    std::vector<std::string> header;
    Tensor values;
};

inline CsvTable read_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(Errc::IoError, "read_csv", "cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw Error(Errc::IoError, "read_csv", path.string() + " is empty");
    CsvTable table;
    {
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) table.header.push_back(cell);
    }
    std::vector<double> values;
    std::size_t rows = 0;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        std::size_t count = 0;
        while (std::getline(ss, cell, ',')) {
            try {
                values.push_back(std::stod(cell));
            } catch (const std::exception&) {
                throw Error(Errc::IoError, "read_csv", "non-numeric cell '" + cell + "' in " + path.string());
            }
            ++count;
        }
        if (count != table.header.size())
            throw Error(Errc::IoError, "read_csv", "row " + std::to_string(rows + 1) + " has wrong width");
        ++rows;
    }
    if (rows == 0) throw Error(Errc::IoError, "read_csv", path.string() + " has no data rows");
    table.values = Tensor({rows, table.header.size()}, std::move(values));
    return table;
}

} // namespace bcglm
