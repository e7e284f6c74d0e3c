#include "trusttune/svg.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "trusttune/csv.hpp"
#include "trusttune/errors.hpp"

namespace trusttune {

namespace {

constexpr double kWidth = 640.0;
constexpr double kHeight = 400.0;
constexpr double kMarginLeft = 60.0;
constexpr double kMarginBottom = 40.0;
constexpr double kMarginTop = 40.0;

const char* kPalette[] = {"#4878d0", "#ee854a", "#6acc64", "#d65f5f",
                          "#956cb4", "#8c613c", "#dc7ec0", "#797979"};

std::string escape_xml(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out.push_back(c);
        }
    }
    return out;
}

void value_range(const std::vector<Series>& series, double& lo, double& hi) {
    lo = 1e300;
    hi = -1e300;
    for (const auto& [name, values] : series) {
        for (double v : values) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
    }
    if (lo > hi) {
        lo = 0.0;
        hi = 1.0;
    }
    if (hi - lo < 1e-9) {
        lo -= 0.5;
        hi += 0.5;
    }
}

void open_svg(std::ostringstream& os, const std::string& title) {
    os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
       << "\" viewBox=\"0 0 " << kWidth << " " << kHeight << "\">\n";
    os << "  <rect x=\"0\" y=\"0\" width=\"" << kWidth << "\" height=\"" << kHeight
       << "\" fill=\"white\"/>\n";
    os << "  <text x=\"" << kWidth / 2 << "\" y=\"22\" text-anchor=\"middle\" font-family=\"sans-serif\""
       << " font-size=\"15\">" << escape_xml(title) << "</text>\n";
}

void legend(std::ostringstream& os, const std::vector<Series>& series) {
    os << "  <g id=\"legend\" font-family=\"sans-serif\" font-size=\"12\">\n";
    double y = kMarginTop + 6.0;
    for (std::size_t i = 0; i < series.size(); ++i) {
        const char* color = kPalette[i % 8];
        os << "    <rect x=\"" << kWidth - 150 << "\" y=\"" << y - 9 << "\" width=\"10\" height=\"10\" fill=\""
           << color << "\"/>\n";
        os << "    <text x=\"" << kWidth - 134 << "\" y=\"" << y << "\">" << escape_xml(series[i].first)
           << "</text>\n";
        y += 18.0;
    }
    os << "  </g>\n";
}

void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ParseError("cannot open '" + path + "' for writing");
    out << content;
}

}  // namespace

void write_violin_svg(const std::string& path, const std::string& title,
                      const std::vector<Series>& series) {
    if (series.empty()) throw ConfigError("violin plot needs at least one series");
    double lo, hi;
    value_range(series, lo, hi);
    const double plot_h = kHeight - kMarginTop - kMarginBottom;
    auto y_of = [&](double v) { return kMarginTop + plot_h * (1.0 - (v - lo) / (hi - lo)); };

    std::ostringstream os;
    open_svg(os, title);
    os << "  <text x=\"16\" y=\"" << y_of(hi) + 4 << "\" font-family=\"sans-serif\" font-size=\"11\">"
       << csv_f64(hi) << "</text>\n";
    os << "  <text x=\"16\" y=\"" << y_of(lo) + 4 << "\" font-family=\"sans-serif\" font-size=\"11\">"
       << csv_f64(lo) << "</text>\n";

    const double slot = (kWidth - kMarginLeft - 170.0) / static_cast<double>(series.size());
    for (std::size_t i = 0; i < series.size(); ++i) {
        const auto& [name, values] = series[i];
        const char* color = kPalette[i % 8];
        const double cx = kMarginLeft + slot * (static_cast<double>(i) + 0.5);

        // Gaussian-kernel density silhouette evaluated on a fixed grid.
        const std::size_t grid = 40;
        std::vector<double> density(grid, 0.0);
        const double bw = std::max((hi - lo) / 15.0, 1e-9);
        double dmax = 0.0;
        for (std::size_t gi = 0; gi < grid; ++gi) {
            const double v = lo + (hi - lo) * static_cast<double>(gi) / static_cast<double>(grid - 1);
            for (double x : values) {
                const double u = (v - x) / bw;
                density[gi] += std::exp(-0.5 * u * u);
            }
            dmax = std::max(dmax, density[gi]);
        }
        const double half_w = slot * 0.35;
        os << "  <polygon fill=\"" << color << "\" fill-opacity=\"0.55\" stroke=\"" << color
           << "\" points=\"";
        for (std::size_t gi = 0; gi < grid; ++gi) {
            const double v = lo + (hi - lo) * static_cast<double>(gi) / static_cast<double>(grid - 1);
            os << cx + half_w * (density[gi] / dmax) << "," << y_of(v) << " ";
        }
        for (std::size_t gi = grid; gi-- > 0;) {
            const double v = lo + (hi - lo) * static_cast<double>(gi) / static_cast<double>(grid - 1);
            os << cx - half_w * (density[gi] / dmax) << "," << y_of(v) << " ";
        }
        os << "\"/>\n";

        // median tick
        std::vector<double> sorted = values;
        std::sort(sorted.begin(), sorted.end());
        const double med = sorted.size() % 2 ? sorted[sorted.size() / 2]
                                             : 0.5 * (sorted[sorted.size() / 2 - 1] + sorted[sorted.size() / 2]);
        os << "  <line x1=\"" << cx - half_w << "\" x2=\"" << cx + half_w << "\" y1=\"" << y_of(med)
           << "\" y2=\"" << y_of(med) << "\" stroke=\"black\" stroke-width=\"1.5\"/>\n";
        os << "  <text x=\"" << cx << "\" y=\"" << kHeight - 14
           << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">" << escape_xml(name)
           << "</text>\n";
    }
    legend(os, series);
    os << "</svg>\n";
    write_file(path, os.str());
}

void write_line_svg(const std::string& path, const std::string& title,
                    const std::vector<Series>& series) {
    if (series.empty()) throw ConfigError("line chart needs at least one series");
    double lo, hi;
    value_range(series, lo, hi);
    std::size_t max_len = 1;
    for (const auto& [name, values] : series) max_len = std::max(max_len, values.size());
    const double plot_h = kHeight - kMarginTop - kMarginBottom;
    const double plot_w = kWidth - kMarginLeft - 170.0;
    auto y_of = [&](double v) { return kMarginTop + plot_h * (1.0 - (v - lo) / (hi - lo)); };
    auto x_of = [&](std::size_t i) {
        return kMarginLeft + (max_len == 1 ? 0.5 * plot_w
                                           : plot_w * static_cast<double>(i) /
                                                 static_cast<double>(max_len - 1));
    };

    std::ostringstream os;
    open_svg(os, title);
    for (std::size_t i = 0; i < series.size(); ++i) {
        const auto& [name, values] = series[i];
        const char* color = kPalette[i % 8];
        os << "  <polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
        for (std::size_t k = 0; k < values.size(); ++k) os << x_of(k) << "," << y_of(values[k]) << " ";
        os << "\"/>\n";
        for (std::size_t k = 0; k < values.size(); ++k)
            os << "  <circle cx=\"" << x_of(k) << "\" cy=\"" << y_of(values[k]) << "\" r=\"3\" fill=\""
               << color << "\"/>\n";
    }
    legend(os, series);
    os << "</svg>\n";
    write_file(path, os.str());
}

}  // namespace trusttune
