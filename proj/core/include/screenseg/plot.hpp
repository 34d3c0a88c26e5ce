#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace screenseg {

// Minimal deterministic chart renderer: 8-bit grayscale PNG, fixed bitmap
// font, no external state. Identical inputs produce identical bytes.

struct PlotSeries {
    std::string label;
    std::vector<double> x;
    std::vector<double> y;
};

void render_line_chart(const std::filesystem::path& path, const std::string& title,
                       const std::string& x_label, const std::string& y_label,
                       const std::vector<PlotSeries>& series, int width = 720, int height = 480);

// Grouped bars: one group per category, one bar per series inside the group.
// `separator_before` (category index) draws a dashed divider in front of that
// group, used to set baseline groups apart.
struct BarGroup {
    std::string label;
    std::vector<double> values;  // one per series
};

void render_bar_chart(const std::filesystem::path& path, const std::string& title,
                      const std::string& y_label, const std::vector<std::string>& series_labels,
                      const std::vector<BarGroup>& groups, int separator_before = -1,
                      int width = 860, int height = 480);

}  // namespace screenseg
