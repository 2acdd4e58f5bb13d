#include "l2s/harness/plot.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>

#include "l2s/common.hpp"
#include "l2s/io/image_io.hpp"

namespace l2s::harness {
namespace {

// 5x5 caps font, one byte per row, low 5 bits used (MSB = leftmost pixel).
struct Glyph {
    char ch;
    std::uint8_t rows[5];
};
constexpr Glyph kFont[] = {
    {'0', {0x0E, 0x11, 0x11, 0x11, 0x0E}}, {'1', {0x04, 0x0C, 0x04, 0x04, 0x0E}},
    {'2', {0x0E, 0x11, 0x02, 0x04, 0x1F}}, {'3', {0x1E, 0x01, 0x06, 0x01, 0x1E}},
    {'4', {0x02, 0x06, 0x0A, 0x1F, 0x02}}, {'5', {0x1F, 0x10, 0x1E, 0x01, 0x1E}},
    {'6', {0x0E, 0x10, 0x1E, 0x11, 0x0E}}, {'7', {0x1F, 0x01, 0x02, 0x04, 0x04}},
    {'8', {0x0E, 0x11, 0x0E, 0x11, 0x0E}}, {'9', {0x0E, 0x11, 0x0F, 0x01, 0x0E}},
    {'A', {0x0E, 0x11, 0x1F, 0x11, 0x11}}, {'B', {0x1E, 0x11, 0x1E, 0x11, 0x1E}},
    {'C', {0x0F, 0x10, 0x10, 0x10, 0x0F}}, {'D', {0x1E, 0x11, 0x11, 0x11, 0x1E}},
    {'E', {0x1F, 0x10, 0x1E, 0x10, 0x1F}}, {'F', {0x1F, 0x10, 0x1E, 0x10, 0x10}},
    {'G', {0x0F, 0x10, 0x13, 0x11, 0x0F}}, {'H', {0x11, 0x11, 0x1F, 0x11, 0x11}},
    {'I', {0x0E, 0x04, 0x04, 0x04, 0x0E}}, {'J', {0x07, 0x02, 0x02, 0x12, 0x0C}},
    {'K', {0x11, 0x12, 0x1C, 0x12, 0x11}}, {'L', {0x10, 0x10, 0x10, 0x10, 0x1F}},
    {'M', {0x11, 0x1B, 0x15, 0x11, 0x11}}, {'N', {0x11, 0x19, 0x15, 0x13, 0x11}},
    {'O', {0x0E, 0x11, 0x11, 0x11, 0x0E}}, {'P', {0x1E, 0x11, 0x1E, 0x10, 0x10}},
    {'Q', {0x0E, 0x11, 0x15, 0x12, 0x0D}}, {'R', {0x1E, 0x11, 0x1E, 0x12, 0x11}},
    {'S', {0x0F, 0x10, 0x0E, 0x01, 0x1E}}, {'T', {0x1F, 0x04, 0x04, 0x04, 0x04}},
    {'U', {0x11, 0x11, 0x11, 0x11, 0x0E}}, {'V', {0x11, 0x11, 0x11, 0x0A, 0x04}},
    {'W', {0x11, 0x11, 0x15, 0x1B, 0x11}}, {'X', {0x11, 0x0A, 0x04, 0x0A, 0x11}},
    {'Y', {0x11, 0x0A, 0x04, 0x04, 0x04}}, {'Z', {0x1F, 0x02, 0x04, 0x08, 0x1F}},
    {'.', {0x00, 0x00, 0x00, 0x00, 0x04}}, {',', {0x00, 0x00, 0x00, 0x04, 0x08}},
    {'-', {0x00, 0x00, 0x0E, 0x00, 0x00}}, {'+', {0x00, 0x04, 0x0E, 0x04, 0x00}},
    {'%', {0x19, 0x1A, 0x04, 0x0B, 0x13}}, {'/', {0x01, 0x02, 0x04, 0x08, 0x10}},
    {'_', {0x00, 0x00, 0x00, 0x00, 0x1F}}, {':', {0x00, 0x04, 0x00, 0x04, 0x00}},
    {' ', {0x00, 0x00, 0x00, 0x00, 0x00}},
};

const std::uint8_t* glyph_rows(char c) {
    c = (char)std::toupper((unsigned char)c);
    for (const Glyph& g : kFont)
        if (g.ch == c) return g.rows;
    return nullptr;  // unknown chars are skipped
}

struct Canvas {
    Image img;
    explicit Canvas(int w, int h) : img(w, h, 1.f) {}

    void set(int x, int y, const float rgb[3]) {
        if (x < 0 || y < 0 || x >= img.width || y >= img.height) return;
        float* p = img.px(x, y);
        p[0] = rgb[0];
        p[1] = rgb[1];
        p[2] = rgb[2];
    }

    void line(double x0, double y0, double x1, double y1, const float rgb[3]) {
        const double dx = x1 - x0, dy = y1 - y0;
        const int n = (int)std::ceil(std::max(std::fabs(dx), std::fabs(dy))) + 1;
        for (int i = 0; i <= n; ++i) {
            const double t = n > 0 ? (double)i / n : 0.0;
            const int x = (int)std::lround(x0 + t * dx);
            const int y = (int)std::lround(y0 + t * dy);
            set(x, y, rgb);
            set(x + (std::fabs(dy) > std::fabs(dx) ? 1 : 0),
                y + (std::fabs(dy) > std::fabs(dx) ? 0 : 1), rgb);  // 2px stroke
        }
    }

    void text(int x, int y, const std::string& s, const float rgb[3]) {
        for (char c : s) {
            if (const std::uint8_t* rows = glyph_rows(c)) {
                for (int r = 0; r < 5; ++r)
                    for (int b = 0; b < 5; ++b)
                        if (rows[r] & (1 << (4 - b))) set(x + b, y + r, rgb);
            }
            x += 6;
        }
    }
};

std::string fmt_tick(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4g", v);
    return buf;
}

constexpr float kAxis[3] = {0.25f, 0.25f, 0.25f};
constexpr float kGrid[3] = {0.88f, 0.88f, 0.88f};
constexpr float kText[3] = {0.15f, 0.15f, 0.15f};

}  // namespace

void plot_lines(const std::string& path, const std::vector<Series>& series,
                const std::string& title, int width, int height) {
    if (width < 120 || height < 90) throw ConfigError("plot_lines: canvas too small");
    Canvas cv(width, height);

    double xmin = 0, xmax = 0, ymin = 0, ymax = 0;
    bool any = false;
    for (const Series& s : series) {
        if (s.x.size() != s.y.size()) throw ConfigError("plot_lines: x/y size mismatch");
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
            if (!any) {
                xmin = xmax = s.x[i];
                ymin = ymax = s.y[i];
                any = true;
            } else {
                xmin = std::min(xmin, s.x[i]);
                xmax = std::max(xmax, s.x[i]);
                ymin = std::min(ymin, s.y[i]);
                ymax = std::max(ymax, s.y[i]);
            }
        }
    }
    if (!any) {
        cv.text(width / 2 - 24, height / 2, "NO DATA", kText);
        io::save_png(path, cv.img);
        return;
    }
    if (xmax == xmin) {
        xmin -= 1;
        xmax += 1;
    }
    const double ypad = ymax == ymin ? 1.0 : 0.05 * (ymax - ymin);
    ymin -= ypad;
    ymax += ypad;

    const int left = 56, right = width - 12, top = title.empty() ? 14 : 26,
              bottom = height - 26;
    auto px = [&](double x) { return left + (x - xmin) / (xmax - xmin) * (right - left); };
    auto py = [&](double y) { return bottom - (y - ymin) / (ymax - ymin) * (bottom - top); };

    for (int i = 0; i <= 5; ++i) {
        const double xv = xmin + (xmax - xmin) * i / 5.0;
        const double yv = ymin + (ymax - ymin) * i / 5.0;
        cv.line(px(xv), top, px(xv), bottom, kGrid);
        cv.line(left, py(yv), right, py(yv), kGrid);
        cv.text((int)px(xv) - 3 * (int)fmt_tick(xv).size(), bottom + 6, fmt_tick(xv), kText);
        cv.text(4, (int)py(yv) - 2, fmt_tick(yv), kText);
    }
    cv.line(left, top, left, bottom, kAxis);
    cv.line(left, bottom, right, bottom, kAxis);
    if (!title.empty()) cv.text(left, 8, title, kText);

    int ly = top + 6;
    for (const Series& s : series) {
        for (std::size_t i = 0; i + 1 < s.x.size(); ++i) {
            if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i]) || !std::isfinite(s.x[i + 1]) ||
                !std::isfinite(s.y[i + 1]))
                continue;
            cv.line(px(s.x[i]), py(s.y[i]), px(s.x[i + 1]), py(s.y[i + 1]), s.rgb);
        }
        if (!s.label.empty()) {
            cv.line(right - 90, ly + 2, right - 76, ly + 2, s.rgb);
            cv.text(right - 72, ly, s.label, kText);
            ly += 9;
        }
    }
    io::save_png(path, cv.img);
}

}  // namespace l2s::harness
