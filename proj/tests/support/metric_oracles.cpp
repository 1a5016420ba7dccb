#include "support/metric_oracles.hpp"

#include <algorithm>
#include <cfloat>
#include <cmath>

namespace oracle {

namespace {

std::vector<double> binary_gt(const Map& g) {
    std::vector<double> out;
    for (double x : g.v) out.push_back(x >= 0.5 ? 1.0 : 0.0);
    return out;
}

double mean(const std::vector<double>& v) {
    double s = 0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

double object(const std::vector<double>& vals) {
    if (vals.empty()) return 0.0;
    const double m = mean(vals);
    double var = 0;
    for (double x : vals) var += (x - m) * (x - m);
    const double sd = vals.size() > 1 ? std::sqrt(var / static_cast<double>(vals.size() - 1)) : 0.0;
    return 2.0 * m / (m * m + 1.0 + sd + DBL_EPSILON);
}

double ssim(const std::vector<double>& x, const std::vector<double>& y) {
    const double n = static_cast<double>(x.size());
    const double mx = mean(x), my = mean(y);
    double sx = 0, sy = 0, sxy = 0;
    for (size_t i = 0; i < x.size(); ++i) {
        sx += (x[i] - mx) * (x[i] - mx);
        sy += (y[i] - my) * (y[i] - my);
        sxy += (x[i] - mx) * (y[i] - my);
    }
    sx /= n - 1 + DBL_EPSILON;
    sy /= n - 1 + DBL_EPSILON;
    sxy /= n - 1 + DBL_EPSILON;
    const double alpha = 4 * mx * my * sxy;
    const double beta = (mx * mx + my * my) * (sx + sy);
    if (alpha != 0) return alpha / (beta + DBL_EPSILON);
    return beta == 0 ? 1.0 : 0.0;
}

}  // namespace

double mae(const Map& p, const Map& g) {
    double s = 0;
    for (size_t i = 0; i < p.v.size(); ++i) s += std::fabs(p.v[i] - g.v[i]);
    return s / static_cast<double>(p.v.size());
}

double max_f(const Map& p, const Map& g) {
    const auto gt = binary_gt(g);
    double best = 0;
    for (int k = 0; k < 256; ++k) {
        const double t = k / 255.0;
        double tp = 0, pred = 0, pos = 0;
        for (size_t i = 0; i < gt.size(); ++i) {
            const bool on = p.v[i] > t;
            pred += on;
            pos += gt[i];
            tp += on && gt[i] == 1.0;
        }
        if (tp == 0) continue;
        const double prec = tp / pred, rec = tp / pos;
        best = std::max(best, 1.3 * prec * rec / (0.3 * prec + rec));
    }
    return best;
}

double s_measure(const Map& p, const Map& g) {
    const auto gt = binary_gt(g);
    const double y = mean(gt);
    if (y == 0) return 1.0 - mean(p.v);
    if (y == 1) return mean(p.v);

    std::vector<double> fg, bg;
    for (size_t i = 0; i < gt.size(); ++i) {
        if (gt[i] == 1.0) fg.push_back(p.v[i]);
        else bg.push_back(1.0 - p.v[i]);
    }
    const double so = y * object(fg) + (1 - y) * object(bg);

    // Centroid in 1-based coordinates; blocks are [1..X] and [X+1..w].
    double sx = 0, sy = 0, cnt = 0;
    for (int r = 0; r < g.h; ++r)
        for (int c = 0; c < g.w; ++c)
            if (gt[static_cast<size_t>(r * g.w + c)] == 1.0) {
                sx += c + 1;
                sy += r + 1;
                cnt += 1;
            }
    const int X = static_cast<int>(std::lround(sx / cnt));
    const int Y = static_cast<int>(std::lround(sy / cnt));
    const int rows[2][2] = {{0, Y}, {Y, g.h}};
    const int cols[2][2] = {{0, X}, {X, g.w}};
    double sr = 0;
    for (const auto& rr : rows)
        for (const auto& cc : cols) {
            std::vector<double> bp, bg2;
            for (int r = rr[0]; r < rr[1]; ++r)
                for (int c = cc[0]; c < cc[1]; ++c) {
                    bp.push_back(p.at(r, c));
                    bg2.push_back(gt[static_cast<size_t>(r * g.w + c)]);
                }
            if (bp.empty()) continue;
            const double weight = static_cast<double>(bp.size()) / static_cast<double>(gt.size());
            sr += weight * ssim(bp, bg2);
        }
    return std::max(0.0, 0.5 * so + 0.5 * sr);
}

double e_measure(const Map& p, const Map& g) {
    const auto gt = binary_gt(g);
    const double n = static_cast<double>(gt.size());
    const double pos = mean(gt) * n;
    double best = 0;
    for (int k = 0; k < 256; ++k) {
        const double t = k / 255.0;
        std::vector<double> fm;
        for (double x : p.v) fm.push_back(x > t ? 1.0 : 0.0);
        double score = 0;
        if (pos == 0) {
            for (double x : fm) score += 1.0 - x;
            score /= n;
        } else if (pos == n) {
            for (double x : fm) score += x;
            score /= n;
        } else {
            const double mf = mean(fm), mg = mean(gt);
            for (size_t i = 0; i < gt.size(); ++i) {
                const double a = fm[i] - mf, b = gt[i] - mg;
                const double align = 2 * a * b / (a * a + b * b + DBL_EPSILON);
                score += (align + 1) * (align + 1) / 4;
            }
            score /= n;
        }
        best = std::max(best, score);
    }
    return best;
}

}  // namespace oracle
