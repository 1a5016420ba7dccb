#pragma once

#include <vector>

// Straightforward per-pixel reference implementations of the evaluation
// metrics. Maps are row-major h×w vectors.
namespace oracle {

struct Map {
    int h = 0;
    int w = 0;
    std::vector<double> v;
    double at(int y, int x) const { return v[static_cast<size_t>(y * w + x)]; }
};

double mae(const Map& p, const Map& g);
double max_f(const Map& p, const Map& g);
double s_measure(const Map& p, const Map& g);
double e_measure(const Map& p, const Map& g);

}  // namespace oracle
