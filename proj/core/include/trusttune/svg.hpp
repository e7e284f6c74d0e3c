#pragma once

#include <string>
#include <utility>
#include <vector>

namespace trusttune {

using Series = std::pair<std::string, std::vector<double>>;

// Violin-style distribution plot, one silhouette per named series. The legend
// lists every series name. Static write-only artifact, well-formed XML.
void write_violin_svg(const std::string& path, const std::string& title,
                      const std::vector<Series>& series);

// Line chart with one polyline per named series (x = index).
void write_line_svg(const std::string& path, const std::string& title,
                    const std::vector<Series>& series);

}  // namespace trusttune
