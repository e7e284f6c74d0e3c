#pragma once

#include <string>
#include <vector>

namespace trusttune {

// Canonical float text for CSV cells: %.6f for bounded metrics keeps bytes
// identical across runs.
std::string csv_f64(double v);
std::string csv_f64_wide(double v);  // %.12g for unbounded quantities

// Deterministic CSV writer: UTF-8, LF line endings, fixed header.
class CsvWriter {
public:
    CsvWriter(const std::string& path, const std::vector<std::string>& header);
    ~CsvWriter();
    CsvWriter(const CsvWriter&) = delete;
    CsvWriter& operator=(const CsvWriter&) = delete;

    void row(const std::vector<std::string>& cells);
    void close();

private:
    std::string path_;
    std::string buffer_;
    std::size_t columns_;
    bool closed_ = false;
};

}  // namespace trusttune
