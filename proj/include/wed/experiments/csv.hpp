#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <string>
#include <string_view>

namespace wed::experiments {

/// Fixed 17-significant-digit formatting so reruns are byte-identical.
inline std::string fmt_real(double x)
{
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

class CsvWriter {
public:
    explicit CsvWriter(const std::filesystem::path& path) : path_(path), out_(path)
    {
        if (!out_) {
            throw std::runtime_error("cannot write '" + path.string() + "'");
        }
    }

    void header(std::initializer_list<std::string_view> names)
    {
        bool first = true;
        for (auto n : names) {
            out_ << (first ? "" : ",") << n;
            first = false;
        }
        out_ << '\n';
    }

    CsvWriter& cell(std::string_view text)
    {
        out_ << (row_started_ ? "," : "") << text;
        row_started_ = true;
        return *this;
    }
    CsvWriter& cell(double x) { return cell(fmt_real(x)); }
    CsvWriter& cell(long long x) { return cell(std::to_string(x)); }
    CsvWriter& cell(int x) { return cell(std::to_string(x)); }
    CsvWriter& cell(std::size_t x) { return cell(std::to_string(x)); }

    void end_row()
    {
        out_ << '\n';
        row_started_ = false;
    }

    std::ostream& stream() { return out_; }
    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
    std::ofstream out_;
    bool row_started_ = false;
};

} // namespace wed::experiments
