#include "et/svg.hpp"

#include "et/errors.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace et::svg {

namespace {

std::string ramp_color(double t) {
    // 0 -> blue, 0.5 -> white, 1 -> red
    t = std::min(1.0, std::max(0.0, t));
    int r, g, b;
    if (t < 0.5) {
        const double u = t / 0.5;
        r = static_cast<int>(std::lround(255 * u));
        g = static_cast<int>(std::lround(255 * u));
        b = 255;
    } else {
        const double u = (t - 0.5) / 0.5;
        r = 255;
        g = static_cast<int>(std::lround(255 * (1 - u)));
        b = static_cast<int>(std::lround(255 * (1 - u)));
    }
    char buf[8];
    std::snprintf(buf, sizeof buf, "#%02x%02x%02x", r, g, b);
    return buf;
}

std::ofstream open_out(const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    return out;
}

} // namespace

void write_heatmap(const std::string& path, const std::vector<double>& values,
                   std::size_t rows, std::size_t cols, double lo, double hi,
                   std::size_t cell_px) {
    if (values.size() != rows * cols) throw IoError("heatmap: size mismatch");
    auto out = open_out(path);
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << cols * cell_px
        << "\" height=\"" << rows * cell_px << "\">\n";
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) {
            const double v = values[r * cols + c];
            const double t = (v - lo) / (hi - lo);
            out << "<rect x=\"" << c * cell_px << "\" y=\"" << r * cell_px << "\" width=\""
                << cell_px << "\" height=\"" << cell_px << "\" fill=\"" << ramp_color(t)
                << "\"/>\n";
        }
    out << "</svg>\n";
}

void write_line_chart(const std::string& path, const std::vector<Series>& series,
                      const std::string& title, const std::string& x_label,
                      const std::string& y_label, std::size_t width, std::size_t height) {
    auto out = open_out(path);
    const double ml = 60, mr = 140, mt = 40, mb = 50;
    const double pw = width - ml - mr, ph = height - mt - mb;
    double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
    for (const auto& s : series)
        for (auto [x, y] : s.points) {
            xmin = std::min(xmin, x);
            xmax = std::max(xmax, x);
            ymin = std::min(ymin, y);
            ymax = std::max(ymax, y);
        }
    if (xmin > xmax) { xmin = 0; xmax = 1; }
    if (ymin > ymax) { ymin = 0; ymax = 1; }
    if (xmax == xmin) xmax = xmin + 1;
    if (ymax == ymin) ymax = ymin + 1;
    auto px = [&](double x) { return ml + (x - xmin) / (xmax - xmin) * pw; };
    auto py = [&](double y) { return mt + ph - (y - ymin) / (ymax - ymin) * ph; };

    static const char* palette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                                    "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
        << height << "\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    out << "<text x=\"" << width / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">"
        << title << "</text>\n";
    out << "<line x1=\"" << ml << "\" y1=\"" << mt + ph << "\" x2=\"" << ml + pw << "\" y2=\""
        << mt + ph << "\" stroke=\"black\"/>\n";
    out << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\"" << mt + ph
        << "\" stroke=\"black\"/>\n";
    out << "<text x=\"" << ml + pw / 2 << "\" y=\"" << height - 12
        << "\" text-anchor=\"middle\" font-size=\"12\">" << x_label << "</text>\n";
    out << "<text x=\"16\" y=\"" << mt + ph / 2
        << "\" text-anchor=\"middle\" font-size=\"12\" transform=\"rotate(-90 16 "
        << mt + ph / 2 << ")\">" << y_label << "</text>\n";
    for (int i = 0; i <= 4; ++i) {
        const double yv = ymin + (ymax - ymin) * i / 4.0;
        out << "<text x=\"" << ml - 6 << "\" y=\"" << py(yv) + 4
            << "\" text-anchor=\"end\" font-size=\"10\">";
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.4g", yv);
        out << buf << "</text>\n";
        const double xv = xmin + (xmax - xmin) * i / 4.0;
        std::snprintf(buf, sizeof buf, "%.4g", xv);
        out << "<text x=\"" << px(xv) << "\" y=\"" << mt + ph + 16
            << "\" text-anchor=\"middle\" font-size=\"10\">" << buf << "</text>\n";
    }
    std::size_t si = 0;
    for (const auto& s : series) {
        const char* color = palette[si % 10];
        out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
        for (auto [x, y] : s.points) out << px(x) << ',' << py(y) << ' ';
        out << "\"/>\n";
        out << "<text x=\"" << ml + pw + 8 << "\" y=\"" << mt + 14 + 16 * si
            << "\" font-size=\"11\" fill=\"" << color << "\">" << s.label << "</text>\n";
        ++si;
    }
    out << "</svg>\n";
}

} // namespace et::svg
