#pragma once

// Output plumbing: CSV files with a one-line header preceded by #-prefixed
// metadata, full-precision numeric formatting, and a config fingerprint so
// every artifact can be traced back to the exact input that produced it.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace latthresh::io {

inline constexpr const char* kVersion = "0.1.0";

/// FNV-1a, as a stable fingerprint of the raw config bytes.
inline std::uint64_t fnv1a64(const std::string& bytes) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

/// Shortest round-trip decimal form; reproducible across runs.
inline std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline std::string fmt(int v) { return std::to_string(v); }
inline std::string fmt(std::size_t v) { return std::to_string(v); }
inline std::string fmt(bool v) { return v ? "1" : "0"; }

class CsvWriter {
public:
    CsvWriter(const std::filesystem::path& path, std::vector<std::string> columns,
              const std::vector<std::pair<std::string, std::string>>& metadata)
        : out_(path), columns_(std::move(columns)) {
        if (!out_) throw std::runtime_error("cannot open output file " + path.string());
        for (const auto& [key, value] : metadata) out_ << "# " << key << ": " << value << "\n";
        for (std::size_t i = 0; i < columns_.size(); ++i)
            out_ << columns_[i] << (i + 1 < columns_.size() ? "," : "\n");
    }

    void row(const std::vector<std::string>& cells) {
        if (cells.size() != columns_.size())
            throw std::logic_error("csv row width does not match the header");
        for (std::size_t i = 0; i < cells.size(); ++i)
            out_ << cells[i] << (i + 1 < cells.size() ? "," : "\n");
    }

private:
    std::ofstream out_;
    std::vector<std::string> columns_;
};

inline void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open output file " + path.string());
    out << text;
}

}  // namespace latthresh::io
