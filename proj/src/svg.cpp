#include "dmsp/svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "dmsp/error.hpp"

namespace dmsp::svg {

namespace {

constexpr int kWidth = 560;
constexpr int kHeight = 480;
constexpr int kMargin = 60;

std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    return buf;
}

std::string header(const std::string& title) {
    std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" +
                    std::to_string(kWidth) + "\" height=\"" + std::to_string(kHeight) + "\">\n";
    s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    s += "<text x=\"" + std::to_string(kWidth / 2) +
         "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"16\">" +
         title + "</text>\n";
    return s;
}

struct Scale {
    double lo, hi;
    double to_px(double v, double px_lo, double px_hi) const {
        const double t = hi > lo ? (v - lo) / (hi - lo) : 0.5;
        return px_lo + t * (px_hi - px_lo);
    }
};

Scale make_scale(double lo, double hi) {
    if (!(hi > lo)) {
        lo -= 0.5;
        hi += 0.5;
    }
    const double pad = 0.05 * (hi - lo);
    return {lo - pad, hi + pad};
}

void axes(std::string& s, const Scale& sx, const Scale& sy, const std::string& x_label,
          const std::string& y_label) {
    const int x0 = kMargin, x1 = kWidth - kMargin / 2;
    const int y0 = kHeight - kMargin, y1 = kMargin / 2 + 20;
    s += "<line x1=\"" + std::to_string(x0) + "\" y1=\"" + std::to_string(y0) + "\" x2=\"" +
         std::to_string(x1) + "\" y2=\"" + std::to_string(y0) + "\" stroke=\"black\"/>\n";
    s += "<line x1=\"" + std::to_string(x0) + "\" y1=\"" + std::to_string(y0) + "\" x2=\"" +
         std::to_string(x0) + "\" y2=\"" + std::to_string(y1) + "\" stroke=\"black\"/>\n";
    for (int t = 0; t <= 4; ++t) {
        const double fx = sx.lo + (sx.hi - sx.lo) * t / 4.0;
        const double fy = sy.lo + (sy.hi - sy.lo) * t / 4.0;
        const double px = sx.to_px(fx, x0, x1);
        const double py = sy.to_px(fy, y0, y1);
        s += "<text x=\"" + num(px) + "\" y=\"" + std::to_string(y0 + 18) +
             "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"10\">" + num(fx) +
             "</text>\n";
        s += "<text x=\"" + std::to_string(x0 - 6) + "\" y=\"" + num(py + 3) +
             "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">" + num(fy) +
             "</text>\n";
    }
    s += "<text x=\"" + std::to_string((x0 + x1) / 2) + "\" y=\"" + std::to_string(kHeight - 12) +
         "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">" + x_label +
         "</text>\n";
    s += "<text x=\"16\" y=\"" + std::to_string((y0 + y1) / 2) +
         "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\" transform=\"rotate(-90 16 " +
         std::to_string((y0 + y1) / 2) + ")\">" + y_label + "</text>\n";
}

// 5-stop blue->red ramp
std::string color_ramp(double t) {
    t = std::clamp(t, 0.0, 1.0);
    const double stops[5][3] = {{68, 1, 84}, {59, 82, 139}, {33, 145, 140}, {94, 201, 98},
                                {253, 231, 37}};
    const double pos = t * 4.0;
    const int i = std::min(3, static_cast<int>(pos));
    const double f = pos - i;
    char buf[24];
    std::snprintf(buf, sizeof(buf), "rgb(%d,%d,%d)",
                  static_cast<int>(stops[i][0] + f * (stops[i + 1][0] - stops[i][0])),
                  static_cast<int>(stops[i][1] + f * (stops[i + 1][1] - stops[i][1])),
                  static_cast<int>(stops[i][2] + f * (stops[i + 1][2] - stops[i][2])));
    return buf;
}

}  // namespace

std::string scatter_plot(const std::vector<XY>& points, const std::string& title,
                         const std::string& x_label, const std::string& y_label,
                         bool with_diagonal) {
    if (points.empty()) throw usage_error("invalid plot input", "no points");
    double xlo = points[0].x, xhi = points[0].x, ylo = points[0].y, yhi = points[0].y;
    for (const auto& p : points) {
        xlo = std::min(xlo, p.x); xhi = std::max(xhi, p.x);
        ylo = std::min(ylo, p.y); yhi = std::max(yhi, p.y);
    }
    const Scale sx = make_scale(xlo, xhi), sy = make_scale(ylo, yhi);
    const int x0 = kMargin, x1 = kWidth - kMargin / 2;
    const int y0 = kHeight - kMargin, y1 = kMargin / 2 + 20;

    std::string s = header(title);
    axes(s, sx, sy, x_label, y_label);
    if (with_diagonal) {
        const double lo = std::max(sx.lo, sy.lo), hi = std::min(sx.hi, sy.hi);
        if (hi > lo)
            s += "<line x1=\"" + num(sx.to_px(lo, x0, x1)) + "\" y1=\"" + num(sy.to_px(lo, y0, y1)) +
                 "\" x2=\"" + num(sx.to_px(hi, x0, x1)) + "\" y2=\"" + num(sy.to_px(hi, y0, y1)) +
                 "\" stroke=\"gray\" stroke-dasharray=\"4 3\"/>\n";
    }
    for (const auto& p : points) {
        s += "<circle cx=\"" + num(sx.to_px(p.x, x0, x1)) + "\" cy=\"" + num(sy.to_px(p.y, y0, y1)) +
             "\" r=\"2.5\" fill=\"steelblue\" fill-opacity=\"0.6\"/>\n";
    }
    s += "</svg>\n";
    return s;
}

std::string bar_chart(const std::vector<double>& values, const std::vector<std::string>& labels,
                      const std::string& title) {
    if (values.empty() || values.size() != labels.size())
        throw usage_error("invalid plot input", "values/labels mismatch");
    double hi = 0.0;
    for (double v : values) hi = std::max(hi, v);
    if (hi <= 0.0) hi = 1.0;

    std::string s = header(title);
    const int x0 = kMargin, x1 = kWidth - kMargin / 2;
    const int y0 = kHeight - kMargin, y1 = kMargin / 2 + 20;
    const double band = static_cast<double>(x1 - x0) / static_cast<double>(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) {
        const double h = (values[i] / hi) * (y0 - y1);
        const double bx = x0 + band * static_cast<double>(i) + band * 0.15;
        s += "<rect x=\"" + num(bx) + "\" y=\"" + num(y0 - h) + "\" width=\"" + num(band * 0.7) +
             "\" height=\"" + num(h) + "\" fill=\"steelblue\"/>\n";
        s += "<text x=\"" + num(bx + band * 0.35) + "\" y=\"" + std::to_string(y0 + 18) +
             "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" + labels[i] +
             "</text>\n";
        s += "<text x=\"" + num(bx + band * 0.35) + "\" y=\"" + num(y0 - h - 5) +
             "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"10\">" +
             num(values[i]) + "</text>\n";
    }
    s += "<line x1=\"" + std::to_string(x0) + "\" y1=\"" + std::to_string(y0) + "\" x2=\"" +
         std::to_string(x1) + "\" y2=\"" + std::to_string(y0) + "\" stroke=\"black\"/>\n";
    s += "</svg>\n";
    return s;
}

std::string heat_map(const std::vector<double>& values, int size, const std::string& title) {
    if (size < 1 || values.size() != static_cast<std::size_t>(size) * static_cast<std::size_t>(size))
        throw usage_error("invalid plot input", "values must be size*size");
    double lo = values[0], hi = values[0];
    for (double v : values) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    const double span = hi > lo ? hi - lo : 1.0;

    std::string s = header(title);
    const int x0 = kMargin, y1 = kMargin / 2 + 20;
    const double extent = static_cast<double>(std::min(kWidth - kMargin - kMargin / 2,
                                                       kHeight - kMargin - y1));
    const double cell = extent / static_cast<double>(size);
    for (int iy = 0; iy < size; ++iy) {
        for (int ix = 0; ix < size; ++ix) {
            const double v = values[static_cast<std::size_t>(iy) * size + ix];
            // y axis points up: last row at the top
            const double px = x0 + cell * ix;
            const double py = y1 + extent - cell * (iy + 1);
            s += "<rect x=\"" + num(px) + "\" y=\"" + num(py) + "\" width=\"" + num(cell + 0.5) +
                 "\" height=\"" + num(cell + 0.5) + "\" fill=\"" + color_ramp((v - lo) / span) +
                 "\"/>\n";
        }
    }
    s += "</svg>\n";
    return s;
}

}  // namespace dmsp::svg
