#include "fbsde/svg.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

namespace fbsde {

namespace {

constexpr double kW = 640, kH = 420;
constexpr double kL = 70, kR = 20, kT = 40, kB = 50;

double map_coord(double v, double lo, double hi, double plo, double phi) {
    if (hi <= lo) return 0.5 * (plo + phi);
    return plo + (v - lo) / (hi - lo) * (phi - plo);
}

std::string fmt_tick(double v) {
    std::ostringstream os;
    os.precision(3);
    os << v;
    return os.str();
}

} // namespace

void write_line_plot_svg(const std::string& path, const std::string& title,
                         const std::string& xlabel, const std::string& ylabel, const Vec& x,
                         const Vec& y, bool logx, bool logy) {
    if (x.size() != y.size()) throw std::invalid_argument("svg: series size mismatch");
    Vec px, py;
    for (size_t i = 0; i < x.size(); ++i) {
        if (!std::isfinite(x[i]) || !std::isfinite(y[i])) continue;
        if (logx && x[i] <= 0.0) continue;
        if (logy && y[i] <= 0.0) continue;
        px.push_back(logx ? std::log10(x[i]) : x[i]);
        py.push_back(logy ? std::log10(y[i]) : y[i]);
    }

    std::ofstream os(path);
    if (!os) throw std::runtime_error("svg: cannot open " + path);
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH
       << "\" viewBox=\"0 0 " << kW << " " << kH << "\">\n";
    os << "<rect width=\"" << kW << "\" height=\"" << kH << "\" fill=\"white\"/>\n";
    os << "<text x=\"" << kW / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << title
       << "</text>\n";
    os << "<text x=\"" << kW / 2 << "\" y=\"" << kH - 10
       << "\" text-anchor=\"middle\" font-size=\"12\">" << xlabel << "</text>\n";
    os << "<text x=\"16\" y=\"" << kH / 2 << "\" text-anchor=\"middle\" font-size=\"12\" "
       << "transform=\"rotate(-90 16 " << kH / 2 << ")\">" << ylabel << "</text>\n";
    os << "<rect x=\"" << kL << "\" y=\"" << kT << "\" width=\"" << kW - kL - kR << "\" height=\""
       << kH - kT - kB << "\" fill=\"none\" stroke=\"black\"/>\n";

    if (!px.empty()) {
        double xlo = px[0], xhi = px[0], ylo = py[0], yhi = py[0];
        for (size_t i = 1; i < px.size(); ++i) {
            xlo = std::min(xlo, px[i]);
            xhi = std::max(xhi, px[i]);
            ylo = std::min(ylo, py[i]);
            yhi = std::max(yhi, py[i]);
        }
        if (xhi == xlo) xhi = xlo + 1.0;
        if (yhi == ylo) yhi = ylo + 1.0;

        auto emit_ticks = [&](bool is_x, bool is_log, double lo, double hi) {
            const int n_ticks = 5;
            for (int k = 0; k <= n_ticks; ++k) {
                const double v = lo + (hi - lo) * k / n_ticks;
                const double label = is_log ? std::pow(10.0, v) : v;
                if (is_x) {
                    const double sx = map_coord(v, lo, hi, kL, kW - kR);
                    os << "<line x1=\"" << sx << "\" y1=\"" << kH - kB << "\" x2=\"" << sx
                       << "\" y2=\"" << kH - kB + 5 << "\" stroke=\"black\"/>\n";
                    os << "<text x=\"" << sx << "\" y=\"" << kH - kB + 18
                       << "\" text-anchor=\"middle\" font-size=\"10\">" << fmt_tick(label)
                       << "</text>\n";
                } else {
                    const double sy = map_coord(v, lo, hi, kH - kB, kT);
                    os << "<line x1=\"" << kL - 5 << "\" y1=\"" << sy << "\" x2=\"" << kL
                       << "\" y2=\"" << sy << "\" stroke=\"black\"/>\n";
                    os << "<text x=\"" << kL - 8 << "\" y=\"" << sy + 3
                       << "\" text-anchor=\"end\" font-size=\"10\">" << fmt_tick(label)
                       << "</text>\n";
                }
            }
        };
        emit_ticks(true, logx, xlo, xhi);
        emit_ticks(false, logy, ylo, yhi);

        os << "<polyline fill=\"none\" stroke=\"#1f6fb2\" stroke-width=\"1.5\" points=\"";
        for (size_t i = 0; i < px.size(); ++i) {
            const double sx = map_coord(px[i], xlo, xhi, kL, kW - kR);
            const double sy = map_coord(py[i], ylo, yhi, kH - kB, kT);
            os << sx << "," << sy << " ";
        }
        os << "\"/>\n";
    } else {
        os << "<text x=\"" << kW / 2 << "\" y=\"" << kH / 2
           << "\" text-anchor=\"middle\" font-size=\"12\">no plottable points</text>\n";
    }
    os << "</svg>\n";
}

} // namespace fbsde
