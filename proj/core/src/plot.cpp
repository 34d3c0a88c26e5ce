#include "screenseg/plot.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <map>

#include "screenseg/png_io.hpp"

namespace screenseg {

namespace {

// ---------------------------------------------------------------------------
// Canvas
// ---------------------------------------------------------------------------

struct Canvas {
    int w, h;
    std::vector<uint8_t> px;

    Canvas(int width, int height) : w(width), h(height), px(static_cast<size_t>(width) * height, 255) {}

    void set(int x, int y, uint8_t v) {
        if (x >= 0 && x < w && y >= 0 && y < h) px[static_cast<size_t>(y) * w + x] = v;
    }

    void hline(int x0, int x1, int y, uint8_t v) {
        for (int x = std::min(x0, x1); x <= std::max(x0, x1); ++x) set(x, y, v);
    }
    void vline(int x, int y0, int y1, uint8_t v) {
        for (int y = std::min(y0, y1); y <= std::max(y0, y1); ++y) set(x, y, v);
    }
    void vline_dashed(int x, int y0, int y1, uint8_t v) {
        for (int y = std::min(y0, y1); y <= std::max(y0, y1); ++y)
            if ((y / 4) % 2 == 0) set(x, y, v);
    }

    void line(int x0, int y0, int x1, int y1, uint8_t v, int thickness = 1) {
        const int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
        const int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
        int err = dx + dy;
        while (true) {
            for (int t = 0; t < thickness; ++t) set(x0, y0 + t, v);
            if (x0 == x1 && y0 == y1) break;
            const int e2 = 2 * err;
            if (e2 >= dy) {
                err += dy;
                x0 += sx;
            }
            if (e2 <= dx) {
                err += dx;
                y0 += sy;
            }
        }
    }

    void fill_rect(int x0, int y0, int x1, int y1, uint8_t v) {
        for (int y = std::min(y0, y1); y <= std::max(y0, y1); ++y) hline(x0, x1, y, v);
    }

    void marker(int x, int y, int kind, uint8_t v) {
        switch (kind % 4) {
            case 0:  // filled square
                fill_rect(x - 2, y - 2, x + 2, y + 2, v);
                break;
            case 1:  // cross
                line(x - 3, y - 3, x + 3, y + 3, v);
                line(x - 3, y + 3, x + 3, y - 3, v);
                break;
            case 2:  // diamond
                line(x - 3, y, x, y - 3, v);
                line(x, y - 3, x + 3, y, v);
                line(x + 3, y, x, y + 3, v);
                line(x, y + 3, x - 3, y, v);
                break;
            default:  // plus
                hline(x - 3, x + 3, y, v);
                vline(x, y - 3, y + 3, v);
                break;
        }
    }
};

// ---------------------------------------------------------------------------
// 5x7 bitmap font (bit 4 = leftmost column)
// ---------------------------------------------------------------------------

using Glyph = std::array<uint8_t, 7>;

const std::map<char, Glyph>& font() {
    static const std::map<char, Glyph> table = {
        {'0', {0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E}},
        {'1', {0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E}},
        {'2', {0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F}},
        {'3', {0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E}},
        {'4', {0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02}},
        {'5', {0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E}},
        {'6', {0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E}},
        {'7', {0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08}},
        {'8', {0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E}},
        {'9', {0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C}},
        {'A', {0x0E, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11}},
        {'B', {0x1E, 0x11, 0x11, 0x1E, 0x11, 0x11, 0x1E}},
        {'C', {0x0E, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0E}},
        {'D', {0x1C, 0x12, 0x11, 0x11, 0x11, 0x12, 0x1C}},
        {'E', {0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x1F}},
        {'F', {0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x10}},
        {'G', {0x0E, 0x11, 0x10, 0x17, 0x11, 0x11, 0x0F}},
        {'H', {0x11, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11}},
        {'I', {0x0E, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E}},
        {'J', {0x07, 0x02, 0x02, 0x02, 0x02, 0x12, 0x0C}},
        {'K', {0x11, 0x12, 0x14, 0x18, 0x14, 0x12, 0x11}},
        {'L', {0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1F}},
        {'M', {0x11, 0x1B, 0x15, 0x15, 0x11, 0x11, 0x11}},
        {'N', {0x11, 0x19, 0x15, 0x13, 0x11, 0x11, 0x11}},
        {'O', {0x0E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E}},
        {'P', {0x1E, 0x11, 0x11, 0x1E, 0x10, 0x10, 0x10}},
        {'Q', {0x0E, 0x11, 0x11, 0x11, 0x15, 0x12, 0x0D}},
        {'R', {0x1E, 0x11, 0x11, 0x1E, 0x14, 0x12, 0x11}},
        {'S', {0x0F, 0x10, 0x10, 0x0E, 0x01, 0x01, 0x1E}},
        {'T', {0x1F, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04}},
        {'U', {0x11, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E}},
        {'V', {0x11, 0x11, 0x11, 0x11, 0x11, 0x0A, 0x04}},
        {'W', {0x11, 0x11, 0x11, 0x15, 0x15, 0x1B, 0x11}},
        {'X', {0x11, 0x11, 0x0A, 0x04, 0x0A, 0x11, 0x11}},
        {'Y', {0x11, 0x11, 0x0A, 0x04, 0x04, 0x04, 0x04}},
        {'Z', {0x1F, 0x01, 0x02, 0x04, 0x08, 0x10, 0x1F}},
        {'.', {0x00, 0x00, 0x00, 0x00, 0x00, 0x0C, 0x0C}},
        {',', {0x00, 0x00, 0x00, 0x00, 0x0C, 0x04, 0x08}},
        {'-', {0x00, 0x00, 0x00, 0x1F, 0x00, 0x00, 0x00}},
        {'+', {0x00, 0x04, 0x04, 0x1F, 0x04, 0x04, 0x00}},
        {'_', {0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x1F}},
        {':', {0x00, 0x0C, 0x0C, 0x00, 0x0C, 0x0C, 0x00}},
        {'%', {0x19, 0x1A, 0x02, 0x04, 0x08, 0x0B, 0x13}},
        {'/', {0x01, 0x01, 0x02, 0x04, 0x08, 0x10, 0x10}},
        {'(', {0x02, 0x04, 0x08, 0x08, 0x08, 0x04, 0x02}},
        {')', {0x08, 0x04, 0x02, 0x02, 0x02, 0x04, 0x08}},
        {'=', {0x00, 0x00, 0x1F, 0x00, 0x1F, 0x00, 0x00}},
        {' ', {0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00}},
    };
    return table;
}

void draw_text(Canvas& c, int x, int y, const std::string& text, uint8_t v = 0) {
    int cx = x;
    for (char raw : text) {
        const char ch = static_cast<char>(std::toupper(static_cast<unsigned char>(raw)));
        const auto it = font().find(ch);
        if (it != font().end()) {
            for (int row = 0; row < 7; ++row)
                for (int col = 0; col < 5; ++col)
                    if (it->second[static_cast<size_t>(row)] & (1 << (4 - col)))
                        c.set(cx + col, y + row, v);
        }
        cx += 6;
    }
}

int text_width(const std::string& text) { return static_cast<int>(text.size()) * 6; }

// ---------------------------------------------------------------------------
// Axes
// ---------------------------------------------------------------------------

std::string format_tick(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%g", v);
    return buf;
}

// Tick positions at a 1/2/5 step covering [lo, hi].
std::vector<double> nice_ticks(double lo, double hi, int target = 5) {
    if (!(hi > lo)) return {lo};
    const double span = hi - lo;
    const double raw = span / target;
    const double mag = std::pow(10.0, std::floor(std::log10(raw)));
    double step = mag;
    for (double m : {1.0, 2.0, 5.0, 10.0}) {
        if (raw <= m * mag) {
            step = m * mag;
            break;
        }
    }
    std::vector<double> ticks;
    for (double t = std::ceil(lo / step) * step; t <= hi + 1e-12 * span; t += step)
        ticks.push_back(std::fabs(t) < 1e-12 * span ? 0.0 : t);
    return ticks;
}

constexpr uint8_t kShades[4] = {0, 90, 150, 200};

struct Frame {
    int left, right, top, bottom;
    double x_lo, x_hi, y_lo, y_hi;

    int map_x(double x) const {
        return left + static_cast<int>(std::lround((x - x_lo) / (x_hi - x_lo) * (right - left)));
    }
    int map_y(double y) const {
        return bottom - static_cast<int>(std::lround((y - y_lo) / (y_hi - y_lo) * (bottom - top)));
    }
};

void draw_axes(Canvas& c, const Frame& f, const std::string& title, const std::string& x_label,
               const std::string& y_label) {
    c.hline(f.left, f.right, f.bottom, 0);
    c.vline(f.left, f.top, f.bottom, 0);
    draw_text(c, (f.left + f.right) / 2 - text_width(title) / 2, 6, title);
    draw_text(c, (f.left + f.right) / 2 - text_width(x_label) / 2, f.bottom + 24, x_label);
    draw_text(c, 4, f.top - 14, y_label);

    for (double t : nice_ticks(f.y_lo, f.y_hi)) {
        const int y = f.map_y(t);
        c.hline(f.left - 3, f.left, y, 0);
        const std::string label = format_tick(t);
        draw_text(c, f.left - 6 - text_width(label), y - 3, label);
    }
    for (double t : nice_ticks(f.x_lo, f.x_hi)) {
        const int x = f.map_x(t);
        c.vline(x, f.bottom, f.bottom + 3, 0);
        const std::string label = format_tick(t);
        draw_text(c, x - text_width(label) / 2, f.bottom + 8, label);
    }
}

}  // namespace

// ---------------------------------------------------------------------------
// Charts
// ---------------------------------------------------------------------------

void render_line_chart(const std::filesystem::path& path, const std::string& title,
                       const std::string& x_label, const std::string& y_label,
                       const std::vector<PlotSeries>& series, int width, int height) {
    Canvas canvas(width, height);
    double x_lo = 0, x_hi = 1, y_lo = 0, y_hi = 1;
    bool first = true;
    for (const auto& s : series) {
        for (size_t i = 0; i < s.x.size(); ++i) {
            if (first) {
                x_lo = x_hi = s.x[i];
                y_lo = y_hi = s.y[i];
                first = false;
            }
            x_lo = std::min(x_lo, s.x[i]);
            x_hi = std::max(x_hi, s.x[i]);
            y_lo = std::min(y_lo, s.y[i]);
            y_hi = std::max(y_hi, s.y[i]);
        }
    }
    if (x_hi == x_lo) x_hi = x_lo + 1;
    if (y_hi == y_lo) y_hi = y_lo + 1;
    const double pad = 0.06 * (y_hi - y_lo);
    y_lo -= pad;
    y_hi += pad;

    Frame f{64, width - 140, 24, height - 48, x_lo, x_hi, y_lo, y_hi};
    draw_axes(canvas, f, title, x_label, y_label);

    for (size_t si = 0; si < series.size(); ++si) {
        const uint8_t shade = kShades[si % 4];
        const auto& s = series[si];
        for (size_t i = 0; i + 1 < s.x.size(); ++i)
            canvas.line(f.map_x(s.x[i]), f.map_y(s.y[i]), f.map_x(s.x[i + 1]), f.map_y(s.y[i + 1]),
                        shade, si / 4 + 1);
        for (size_t i = 0; i < s.x.size(); ++i)
            canvas.marker(f.map_x(s.x[i]), f.map_y(s.y[i]), static_cast<int>(si), shade);
        // legend
        const int ly = f.top + 14 * static_cast<int>(si);
        canvas.hline(f.right + 8, f.right + 28, ly + 3, shade);
        canvas.marker(f.right + 18, ly + 3, static_cast<int>(si), shade);
        draw_text(canvas, f.right + 32, ly, s.label);
    }

    write_gray8_png(path, canvas.px, height, width);
}

void render_bar_chart(const std::filesystem::path& path, const std::string& title,
                      const std::string& y_label, const std::vector<std::string>& series_labels,
                      const std::vector<BarGroup>& groups, int separator_before, int width,
                      int height) {
    Canvas canvas(width, height);
    double y_hi = 0;
    for (const auto& g : groups)
        for (double v : g.values) y_hi = std::max(y_hi, v);
    if (y_hi <= 0) y_hi = 1;
    y_hi *= 1.08;

    Frame f{64, width - 150, 24, height - 48, 0, 1, 0, y_hi};
    draw_axes(canvas, f, title, "", y_label);

    const int n_groups = static_cast<int>(groups.size());
    const int n_series = std::max<size_t>(1, series_labels.size());
    const int span = f.right - f.left;
    const int group_w = span / std::max(1, n_groups);
    const int bar_w = std::max(2, (group_w - 8) / n_series);

    for (int gi = 0; gi < n_groups; ++gi) {
        const int gx = f.left + gi * group_w + 4;
        if (gi == separator_before)
            canvas.vline_dashed(f.left + gi * group_w, f.top, f.bottom, 0);
        for (size_t si = 0; si < groups[static_cast<size_t>(gi)].values.size(); ++si) {
            const double v = groups[static_cast<size_t>(gi)].values[si];
            const int x0 = gx + static_cast<int>(si) * bar_w;
            const int y0 = f.map_y(v);
            canvas.fill_rect(x0, y0, x0 + bar_w - 2, f.bottom - 1, kShades[si % 4]);
            canvas.line(x0, y0, x0 + bar_w - 2, y0, 0);
        }
        draw_text(canvas,
                  f.left + gi * group_w + group_w / 2 -
                      text_width(groups[static_cast<size_t>(gi)].label) / 2,
                  f.bottom + 8, groups[static_cast<size_t>(gi)].label);
    }

    for (size_t si = 0; si < series_labels.size(); ++si) {
        const int ly = f.top + 14 * static_cast<int>(si);
        canvas.fill_rect(f.right + 8, ly, f.right + 24, ly + 7, kShades[si % 4]);
        draw_text(canvas, f.right + 30, ly, series_labels[si]);
    }

    write_gray8_png(path, canvas.px, height, width);
}

}  // namespace screenseg
