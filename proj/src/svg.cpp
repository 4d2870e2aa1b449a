#include "paramscope/svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

namespace paramscope {

std::string_view to_string(PlotKind k) {
    switch (k) {
        case PlotKind::ConvergenceLines: return "convergence-lines";
        case PlotKind::MeanSigmaScatter: return "mean-sigma-scatter";
        case PlotKind::DensityCurves: return "density-curves";
        case PlotKind::StrengthScatter: return "strength-scatter";
        case PlotKind::EmbeddingScatter: return "embedding-scatter";
    }
    return "?";
}

std::array<int, 3> accuracy_rgb(double accuracy) {
    double t = std::isfinite(accuracy) ? std::clamp(accuracy, 0.0, 100.0) / 100.0 : 0.0;
    return {static_cast<int>(std::lround(255.0 * t)), 0, static_cast<int>(std::lround(255.0 * (1.0 - t)))};
}

std::string accuracy_color(double accuracy) {
    const auto c = accuracy_rgb(accuracy);
    char buf[8];
    std::snprintf(buf, sizeof buf, "#%02x%02x%02x", c[0], c[1], c[2]);
    return buf;
}

std::vector<double> nice_ticks(double lo, double hi, int target) {
    if (!(hi > lo)) return {lo};
    const double raw = (hi - lo) / std::max(1, target);
    const double mag = std::pow(10.0, std::floor(std::log10(raw)));
    double step = mag;
    for (double m : {1.0, 2.0, 5.0, 10.0})
        if (raw <= m * mag) {
            step = m * mag;
            break;
        }
    std::vector<double> ticks;
    for (double t = std::ceil(lo / step) * step; t <= hi + step * 1e-9; t += step)
        ticks.push_back(std::abs(t) < step * 1e-9 ? 0.0 : t);
    return ticks;
}

namespace {

constexpr double kWidth = 640, kHeight = 440;
constexpr double kLeft = 80, kRight = 110, kTop = 40, kBottom = 60;

std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

std::string tick_label(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

std::string escape(std::string_view s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

struct Range {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();

    void add(double v) {
        if (!std::isfinite(v)) return;
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }

    void finish() {
        if (!std::isfinite(lo)) {
            lo = 0.0;
            hi = 1.0;
        } else if (lo == hi) {
            const double pad = lo == 0.0 ? 1.0 : std::abs(lo) * 0.1;
            lo -= pad;
            hi += pad;
        } else {
            const double pad = (hi - lo) * 0.05;
            lo -= pad;
            hi += pad;
        }
    }
};

}  // namespace

std::string render_svg(const PlotSpec& spec, const PlotData& data) {
    Range rx, ry;
    for (const auto& p : data.points)
        if (std::isfinite(p.x) && std::isfinite(p.y)) {
            rx.add(p.x);
            ry.add(p.y);
        }
    for (const auto& l : data.lines)
        for (std::size_t i = 0; i < l.x.size() && i < l.y.size(); ++i)
            if (std::isfinite(l.x[i]) && std::isfinite(l.y[i])) {
                rx.add(l.x[i]);
                ry.add(l.y[i]);
            }
    rx.finish();
    ry.finish();

    const double pw = kWidth - kLeft - kRight, ph = kHeight - kTop - kBottom;
    auto sx = [&](double v) { return kLeft + (v - rx.lo) / (rx.hi - rx.lo) * pw; };
    auto sy = [&](double v) { return kTop + ph - (v - ry.lo) / (ry.hi - ry.lo) * ph; };

    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
       << "\" viewBox=\"0 0 " << kWidth << ' ' << kHeight << "\" data-kind=\"" << to_string(spec.kind) << "\">\n";
    os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    os << "<text x=\"" << num(kLeft + pw / 2) << "\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">"
       << escape(spec.title) << "</text>\n";

    // axes
    os << "<g class=\"axes\" stroke=\"black\" fill=\"none\">\n";
    os << "<line x1=\"" << num(kLeft) << "\" y1=\"" << num(kTop + ph) << "\" x2=\"" << num(kLeft + pw) << "\" y2=\""
       << num(kTop + ph) << "\"/>\n";
    os << "<line x1=\"" << num(kLeft) << "\" y1=\"" << num(kTop) << "\" x2=\"" << num(kLeft) << "\" y2=\""
       << num(kTop + ph) << "\"/>\n</g>\n";
    os << "<g class=\"ticks\" font-size=\"11\">\n";
    for (double t : nice_ticks(rx.lo, rx.hi)) {
        const double x = sx(t);
        os << "<line x1=\"" << num(x) << "\" y1=\"" << num(kTop + ph) << "\" x2=\"" << num(x) << "\" y2=\""
           << num(kTop + ph + 5) << "\" stroke=\"black\"/>";
        os << "<text x=\"" << num(x) << "\" y=\"" << num(kTop + ph + 18) << "\" text-anchor=\"middle\">"
           << tick_label(t) << "</text>\n";
    }
    for (double t : nice_ticks(ry.lo, ry.hi)) {
        const double y = sy(t);
        os << "<line x1=\"" << num(kLeft - 5) << "\" y1=\"" << num(y) << "\" x2=\"" << num(kLeft) << "\" y2=\""
           << num(y) << "\" stroke=\"black\"/>";
        os << "<text x=\"" << num(kLeft - 8) << "\" y=\"" << num(y + 4) << "\" text-anchor=\"end\">" << tick_label(t)
           << "</text>\n";
    }
    os << "</g>\n";
    os << "<text x=\"" << num(kLeft + pw / 2) << "\" y=\"" << num(kHeight - 16)
       << "\" text-anchor=\"middle\" font-size=\"13\">" << escape(spec.x_label) << "</text>\n";
    os << "<text x=\"20\" y=\"" << num(kTop + ph / 2) << "\" text-anchor=\"middle\" font-size=\"13\" transform=\"rotate(-90 20 "
       << num(kTop + ph / 2) << ")\">" << escape(spec.y_label) << "</text>\n";

    // legend: accuracy colour bar
    const double lx = kLeft + pw + 30, ly = kTop, lh = ph;
    os << "<defs><linearGradient id=\"acc-ramp\" x1=\"0\" y1=\"1\" x2=\"0\" y2=\"0\">"
       << "<stop offset=\"0\" stop-color=\"" << accuracy_color(0) << "\"/>"
       << "<stop offset=\"1\" stop-color=\"" << accuracy_color(100) << "\"/></linearGradient></defs>\n";
    os << "<g class=\"legend\" font-size=\"11\">\n";
    os << "<rect x=\"" << num(lx) << "\" y=\"" << num(ly) << "\" width=\"16\" height=\"" << num(lh)
       << "\" fill=\"url(#acc-ramp)\" stroke=\"black\"/>\n";
    for (int a = 0; a <= 100; a += 25) {
        const double y = ly + lh - lh * a / 100.0;
        os << "<text x=\"" << num(lx + 22) << "\" y=\"" << num(y + 4) << "\">" << a << "</text>\n";
    }
    os << "<text x=\"" << num(lx + 8) << "\" y=\"" << num(ly + lh + 20)
       << "\" text-anchor=\"middle\">test acc. (%)</text>\n</g>\n";

    os << "<g class=\"marks\">\n";
    for (const auto& l : data.lines) {
        std::string pts;
        for (std::size_t i = 0; i < l.x.size() && i < l.y.size(); ++i) {
            if (!std::isfinite(l.x[i]) || !std::isfinite(l.y[i])) continue;
            if (!pts.empty()) pts += ' ';
            pts += num(sx(l.x[i])) + "," + num(sy(l.y[i]));
        }
        if (pts.empty()) continue;
        os << "<polyline class=\"mark\" data-id=\"" << escape(l.id) << "\" points=\"" << pts
           << "\" fill=\"none\" stroke=\"" << accuracy_color(l.accuracy) << "\" stroke-width=\"1.2\" stroke-opacity=\"0.8\"/>\n";
    }
    for (const auto& p : data.points) {
        if (!std::isfinite(p.x) || !std::isfinite(p.y)) continue;
        os << "<circle class=\"mark\" data-id=\"" << escape(p.id) << "\" cx=\"" << num(sx(p.x)) << "\" cy=\""
           << num(sy(p.y)) << "\" r=\"4\" fill=\"" << accuracy_color(p.accuracy) << "\" fill-opacity=\"0.85\"/>\n";
    }
    os << "</g>\n</svg>\n";
    return os.str();
}

}  // namespace paramscope
