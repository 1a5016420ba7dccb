#include "omnisal/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>

#include "omnisal/log.hpp"

namespace omnisal::eval {

namespace {

constexpr double kEps = std::numeric_limits<double>::epsilon();

struct Plane {
    const double* p;
    const double* g;
    int64_t h;
    int64_t w;
    int64_t n() const { return h * w; }
};

Plane plane_of(const EvalPair& pair) {
    const auto& p = pair.prediction;
    const auto& g = pair.ground_truth;
    if (p.shape() != g.shape()) {
        throw ShapeError("evaluation pair sizes differ: " + shape_str(p.shape()) + " vs " + shape_str(g.shape()));
    }
    if (p.rank() < 2 || p.numel() == 0) throw ShapeError("evaluation maps must be at least 2-D and non-empty");
    for (int64_t i = 0; i + 2 < p.rank(); ++i) {
        if (p.dim(i) != 1) throw ShapeError("evaluation maps must be single images, got " + shape_str(p.shape()));
    }
    return {p.data(), g.data(), p.dim(p.rank() - 2), p.dim(p.rank() - 1)};
}

bool foreground(double g) { return g >= 0.5; }

// Number of thresholds k/255 (k = 0..255) that p exceeds, computed with the
// same comparison a direct sweep would use.
int exceeded(double p) {
    int c = std::clamp(static_cast<int>(std::ceil(p * 255.0)), 0, kThresholds);
    while (c > 0 && !(p > static_cast<double>(c - 1) / 255.0)) --c;
    while (c < kThresholds && p > static_cast<double>(c) / 255.0) ++c;
    return c;
}

// tp[k], fp[k]: foreground / background pixels with P > k/255.
struct Sweep {
    std::array<int64_t, kThresholds> tp{};
    std::array<int64_t, kThresholds> fp{};
    int64_t positives = 0;
    int64_t n = 0;
};

Sweep sweep(const Plane& pl) {
    std::array<int64_t, kThresholds + 1> pos_hist{}, neg_hist{};
    Sweep s;
    s.n = pl.n();
    for (int64_t i = 0; i < pl.n(); ++i) {
        const bool fg = foreground(pl.g[i]);
        s.positives += fg ? 1 : 0;
        ++(fg ? pos_hist : neg_hist)[static_cast<size_t>(exceeded(pl.p[i]))];
    }
    // A pixel in bin c exceeds thresholds 0..c-1.
    int64_t tp = 0, fp = 0;
    for (int k = kThresholds - 1; k >= 0; --k) {
        tp += pos_hist[static_cast<size_t>(k + 1)];
        fp += neg_hist[static_cast<size_t>(k + 1)];
        s.tp[static_cast<size_t>(k)] = tp;
        s.fp[static_cast<size_t>(k)] = fp;
    }
    return s;
}

double mean_over(const double* v, int64_t n) {
    double s = 0.0;
    for (int64_t i = 0; i < n; ++i) s += v[i];
    return s / static_cast<double>(n);
}

// Object-aware term on the pixels selected by `mask`: 2x̄ / (x̄² + 1 + σ + eps).
template <typename Value, typename Mask>
double object_score(const Plane& pl, Value value, Mask mask) {
    double sum = 0.0;
    int64_t count = 0;
    for (int64_t i = 0; i < pl.n(); ++i) {
        if (mask(i)) {
            sum += value(i);
            ++count;
        }
    }
    if (count == 0) return 0.0;
    const double mean = sum / static_cast<double>(count);
    double ss = 0.0;
    for (int64_t i = 0; i < pl.n(); ++i) {
        if (mask(i)) ss += (value(i) - mean) * (value(i) - mean);
    }
    const double sigma = count > 1 ? std::sqrt(ss / static_cast<double>(count - 1)) : 0.0;
    return 2.0 * mean / (mean * mean + 1.0 + sigma + kEps);
}

double object_similarity(const Plane& pl) {
    double u = 0.0;
    for (int64_t i = 0; i < pl.n(); ++i) u += foreground(pl.g[i]) ? 1.0 : 0.0;
    u /= static_cast<double>(pl.n());
    const double fg = object_score(
        pl, [&](int64_t i) { return pl.p[i]; }, [&](int64_t i) { return foreground(pl.g[i]); });
    const double bg = object_score(
        pl, [&](int64_t i) { return 1.0 - pl.p[i]; }, [&](int64_t i) { return !foreground(pl.g[i]); });
    return u * fg + (1.0 - u) * bg;
}

// SSIM-style similarity of one rectangular block [y0, y1) × [x0, x1).
double block_ssim(const Plane& pl, int64_t y0, int64_t y1, int64_t x0, int64_t x1) {
    const int64_t n = (y1 - y0) * (x1 - x0);
    if (n <= 0) return 0.0;
    double mx = 0.0, my = 0.0;
    for (int64_t y = y0; y < y1; ++y)
        for (int64_t x = x0; x < x1; ++x) {
            mx += pl.p[y * pl.w + x];
            my += foreground(pl.g[y * pl.w + x]) ? 1.0 : 0.0;
        }
    mx /= static_cast<double>(n);
    my /= static_cast<double>(n);
    double sxx = 0.0, syy = 0.0, sxy = 0.0;
    for (int64_t y = y0; y < y1; ++y)
        for (int64_t x = x0; x < x1; ++x) {
            const double dx = pl.p[y * pl.w + x] - mx;
            const double dy = (foreground(pl.g[y * pl.w + x]) ? 1.0 : 0.0) - my;
            sxx += dx * dx;
            syy += dy * dy;
            sxy += dx * dy;
        }
    const double denom = static_cast<double>(n) - 1.0 + kEps;
    sxx /= denom;
    syy /= denom;
    sxy /= denom;
    const double alpha = 4.0 * mx * my * sxy;
    const double beta = (mx * mx + my * my) * (sxx + syy);
    if (alpha != 0.0) return alpha / (beta + kEps);
    return beta == 0.0 ? 1.0 : 0.0;
}

double region_similarity(const Plane& pl) {
    // Foreground centroid, rounded, as a 1-based split column / row.
    double sx = 0.0, sy = 0.0, total = 0.0;
    for (int64_t y = 0; y < pl.h; ++y)
        for (int64_t x = 0; x < pl.w; ++x) {
            if (foreground(pl.g[y * pl.w + x])) {
                sx += static_cast<double>(x + 1);
                sy += static_cast<double>(y + 1);
                total += 1.0;
            }
        }
    const auto cx = static_cast<int64_t>(std::round(sx / total));
    const auto cy = static_cast<int64_t>(std::round(sy / total));
    const double area = static_cast<double>(pl.n());
    const double w1 = static_cast<double>(cx * cy) / area;
    const double w2 = static_cast<double>((pl.w - cx) * cy) / area;
    const double w3 = static_cast<double>(cx * (pl.h - cy)) / area;
    const double w4 = 1.0 - w1 - w2 - w3;
    return w1 * block_ssim(pl, 0, cy, 0, cx) + w2 * block_ssim(pl, 0, cy, cx, pl.w) +
           w3 * block_ssim(pl, cy, pl.h, 0, cx) + w4 * block_ssim(pl, cy, pl.h, cx, pl.w);
}

}  // namespace

double mae(const EvalPair& pair) {
    const auto pl = plane_of(pair);
    double s = 0.0;
    for (int64_t i = 0; i < pl.n(); ++i) s += std::abs(pl.p[i] - pl.g[i]);
    return s / static_cast<double>(pl.n());
}

double max_f_measure(const EvalPair& pair) {
    const auto s = sweep(plane_of(pair));
    if (s.positives == 0) {
        log::warn("max F-measure: ground truth has no foreground; scoring 0");
        return 0.0;
    }
    double best = 0.0;
    for (size_t k = 0; k < kThresholds; ++k) {
        const int64_t predicted = s.tp[k] + s.fp[k];
        if (s.tp[k] == 0 || predicted == 0) continue;
        const double precision = static_cast<double>(s.tp[k]) / static_cast<double>(predicted);
        const double recall = static_cast<double>(s.tp[k]) / static_cast<double>(s.positives);
        best = std::max(best, (1.0 + kBetaSquared) * precision * recall / (kBetaSquared * precision + recall));
    }
    return best;
}

double s_measure(const EvalPair& pair) {
    const auto pl = plane_of(pair);
    double fg = 0.0;
    for (int64_t i = 0; i < pl.n(); ++i) fg += foreground(pl.g[i]) ? 1.0 : 0.0;
    const double y = fg / static_cast<double>(pl.n());
    if (y == 0.0) return 1.0 - mean_over(pl.p, pl.n());
    if (y == 1.0) return mean_over(pl.p, pl.n());
    const double q =
        kStructureGamma * object_similarity(pl) + (1.0 - kStructureGamma) * region_similarity(pl);
    return std::max(0.0, q);
}

double e_measure(const EvalPair& pair) {
    const auto s = sweep(plane_of(pair));
    const double n = static_cast<double>(s.n);
    const int64_t pos = s.positives, neg = s.n - s.positives;
    double best = 0.0;
    for (size_t k = 0; k < kThresholds; ++k) {
        const int64_t tp = s.tp[k], fp = s.fp[k], fn = pos - tp, tn = neg - fp;
        double score = 0.0;
        if (pos == 0) {
            score = static_cast<double>(tn) / n;
        } else if (neg == 0) {
            score = static_cast<double>(tp) / n;
        } else {
            // Binary maps: the enhanced alignment takes one value per (fm, gt) combination.
            const double mu_fm = static_cast<double>(tp + fp) / n;
            const double mu_gt = static_cast<double>(pos) / n;
            auto enhanced = [&](double fm, double gt) {
                const double a = fm - mu_fm, b = gt - mu_gt;
                const double align = 2.0 * a * b / (a * a + b * b + kEps);
                return (align + 1.0) * (align + 1.0) / 4.0;
            };
            score = (static_cast<double>(tp) * enhanced(1, 1) + static_cast<double>(fp) * enhanced(1, 0) +
                     static_cast<double>(fn) * enhanced(0, 1) + static_cast<double>(tn) * enhanced(0, 0)) /
                    n;
        }
        best = std::max(best, score);
    }
    return best;
}

ImageScores evaluate_pair(const EvalPair& pair) {
    return {mae(pair), max_f_measure(pair), s_measure(pair), e_measure(pair)};
}

MetricsReport aggregate(const std::string& dataset, const std::vector<ImageScores>& scores) {
    MetricsReport r;
    r.dataset = dataset;
    r.images = static_cast<int64_t>(scores.size());
    if (scores.empty()) return r;
    ImageScores sum;
    for (const auto& s : scores) {
        sum.mae += s.mae;
        sum.max_f += s.max_f;
        sum.s_measure += s.s_measure;
        sum.e_measure += s.e_measure;
    }
    const double n = static_cast<double>(scores.size());
    r.mae = sum.mae / n;
    r.max_f = sum.max_f / n;
    r.s_measure = sum.s_measure / n;
    r.e_measure = sum.e_measure / n;
    return r;
}

}  // namespace omnisal::eval
