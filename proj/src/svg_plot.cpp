#include "ccam/svg_plot.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "ccam/error.hpp"

namespace ccam {

namespace {

constexpr int kWidth = 640;
constexpr int kHeight = 420;
constexpr int kLeft = 64, kRight = 24, kTop = 40, kBottom = 48;

std::string fmt(double v) {
    std::ostringstream os;
    os.precision(4);
    os << v;
    return os.str();
}

void plot_frame(std::ostream& os, const std::string& title, const std::string& xlabel,
                const std::string& ylabel, double x0, double x1, double y0, double y1) {
    os << "<rect x='" << kLeft << "' y='" << kTop << "' width='" << (kWidth - kLeft - kRight)
       << "' height='" << (kHeight - kTop - kBottom)
       << "' fill='white' stroke='#333' stroke-width='1'/>\n";
    os << "<text x='" << kWidth / 2 << "' y='22' text-anchor='middle' font-size='15'>" << title
       << "</text>\n";
    os << "<text x='" << kWidth / 2 << "' y='" << (kHeight - 10)
       << "' text-anchor='middle' font-size='12'>" << xlabel << "</text>\n";
    os << "<text x='16' y='" << kHeight / 2 << "' text-anchor='middle' font-size='12' transform='rotate(-90 16 "
       << kHeight / 2 << ")'>" << ylabel << "</text>\n";
    for (int i = 0; i <= 4; ++i) {
        const double fx = x0 + (x1 - x0) * i / 4.0;
        const double fy = y0 + (y1 - y0) * i / 4.0;
        const double px = kLeft + (kWidth - kLeft - kRight) * i / 4.0;
        const double py = kHeight - kBottom - (kHeight - kTop - kBottom) * i / 4.0;
        os << "<text x='" << px << "' y='" << (kHeight - kBottom + 16)
           << "' text-anchor='middle' font-size='10'>" << fmt(fx) << "</text>\n";
        os << "<text x='" << (kLeft - 6) << "' y='" << (py + 3)
           << "' text-anchor='end' font-size='10'>" << fmt(fy) << "</text>\n";
        os << "<line x1='" << px << "' y1='" << kTop << "' x2='" << px << "' y2='"
           << (kHeight - kBottom) << "' stroke='#ddd' stroke-width='0.5'/>\n";
        os << "<line x1='" << kLeft << "' y1='" << py << "' x2='" << (kWidth - kRight) << "' y2='"
           << py << "' stroke='#ddd' stroke-width='0.5'/>\n";
    }
}

}  // namespace

void write_svg_lines(const std::string& path, const std::string& title, const std::string& xlabel,
                     const std::string& ylabel, const std::vector<SvgSeries>& series) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    double x0 = 0.0, x1 = 1.0, y0 = 0.0, y1 = 1.0;
    bool first = true;
    for (const auto& s : series)
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            if (first) {
                x0 = x1 = s.x[i];
                y0 = y1 = s.y[i];
                first = false;
            }
            x0 = std::min(x0, s.x[i]);
            x1 = std::max(x1, s.x[i]);
            y0 = std::min(y0, s.y[i]);
            y1 = std::max(y1, s.y[i]);
        }
    if (x1 - x0 < 1e-12) x1 = x0 + 1.0;
    if (y1 - y0 < 1e-12) y1 = y0 + 1.0;
    const double ypad = (y1 - y0) * 0.05;
    y0 -= ypad;
    y1 += ypad;

    auto px = [&](double x) { return kLeft + (x - x0) / (x1 - x0) * (kWidth - kLeft - kRight); };
    auto py = [&](double y) {
        return kHeight - kBottom - (y - y0) / (y1 - y0) * (kHeight - kTop - kBottom);
    };

    out << "<svg xmlns='http://www.w3.org/2000/svg' width='" << kWidth << "' height='" << kHeight
        << "'>\n<rect width='100%' height='100%' fill='white'/>\n";
    plot_frame(out, title, xlabel, ylabel, x0, x1, y0, y1);
    int li = 0;
    for (const auto& s : series) {
        out << "<polyline fill='none' stroke='" << s.color << "' stroke-width='1.6' points='";
        for (std::size_t i = 0; i < s.x.size(); ++i)
            out << px(s.x[i]) << "," << py(s.y[i]) << " ";
        out << "'/>\n";
        out << "<text x='" << (kLeft + 10) << "' y='" << (kTop + 16 + 16 * li)
            << "' font-size='12' fill='" << s.color << "'>" << s.label << "</text>\n";
        ++li;
    }
    out << "</svg>\n";
}

void write_svg_bars(const std::string& path, const std::string& title,
                    const std::vector<std::pair<std::string, double>>& bars) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    double lo = 0.0, hi = 0.0;
    for (const auto& [label, v] : bars) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    if (hi - lo < 1e-12) hi = lo + 1.0;
    const int rows = static_cast<int>(bars.size());
    const int height = kTop + kBottom + std::max(1, rows) * 28;
    auto px = [&](double v) {
        return kLeft + (v - lo) / (hi - lo) * (kWidth - kLeft - kRight);
    };
    out << "<svg xmlns='http://www.w3.org/2000/svg' width='" << kWidth << "' height='" << height
        << "'>\n<rect width='100%' height='100%' fill='white'/>\n";
    out << "<text x='" << kWidth / 2 << "' y='22' text-anchor='middle' font-size='15'>" << title
        << "</text>\n";
    const double zero_x = px(0.0);
    out << "<line x1='" << zero_x << "' y1='" << kTop << "' x2='" << zero_x << "' y2='"
        << (height - kBottom) << "' stroke='#333' stroke-width='1'/>\n";
    for (int i = 0; i < rows; ++i) {
        const double v = bars[i].second;
        const double x = px(std::min(0.0, v));
        const double w = std::fabs(px(v) - zero_x);
        const double y = kTop + i * 28.0;
        out << "<rect x='" << x << "' y='" << y << "' width='" << std::max(0.5, w)
            << "' height='20' fill='" << (v >= 0 ? "#4878cf" : "#d65f5f") << "'/>\n";
        out << "<text x='" << (kWidth - kRight) << "' y='" << (y + 14)
            << "' text-anchor='end' font-size='11'>" << bars[i].first << " (" << fmt(v)
            << ")</text>\n";
    }
    out << "</svg>\n";
}

}  // namespace ccam
