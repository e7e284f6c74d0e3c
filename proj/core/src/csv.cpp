#include "trusttune/csv.hpp"

#include <cstdio>
#include <fstream>

#include "trusttune/errors.hpp"

namespace trusttune {

std::string csv_f64(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}

std::string csv_f64_wide(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.12g", v);
    return buf;
}

CsvWriter::CsvWriter(const std::string& path, const std::vector<std::string>& header)
    : path_(path), columns_(header.size()) {
    row(header);
}

CsvWriter::~CsvWriter() {
    if (!closed_) {
        try {
            close();
        } catch (...) {
        }
    }
}

void CsvWriter::row(const std::vector<std::string>& cells) {
    if (cells.size() != columns_)
        throw ShapeError("csv row has " + std::to_string(cells.size()) + " cells, expected " +
                         std::to_string(columns_));
    for (std::size_t i = 0; i < cells.size(); ++i) {
        if (i) buffer_.push_back(',');
        buffer_.append(cells[i]);
    }
    buffer_.push_back('\n');
}

void CsvWriter::close() {
    closed_ = true;
    std::ofstream out(path_, std::ios::binary);
    if (!out) throw ParseError("cannot open '" + path_ + "' for writing");
    out.write(buffer_.data(), static_cast<std::streamsize>(buffer_.size()));
}

}  // namespace trusttune
