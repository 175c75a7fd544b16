#include "tuna/stats.hpp"

#include <algorithm>

#include "tuna/errors.hpp"

namespace tuna {

namespace {

void validate_areas(const std::vector<double>& areas) {
    if (areas.empty()) {
        throw DataError("dataset statistics: no image areas given");
    }
    for (double a : areas) {
        if (a <= 0.0) {
            throw DataError("dataset statistics: non-positive image area");
        }
    }
}

}  // namespace

double resolution_range_ratio(const std::vector<double>& areas) {
    validate_areas(areas);
    const auto [mn, mx] = std::minmax_element(areas.begin(), areas.end());
    return *mx / *mn;
}

double gini_coefficient(const std::vector<double>& areas) {
    validate_areas(areas);
    const int64_t n = static_cast<int64_t>(areas.size());
    std::vector<double> sorted = areas;
    std::sort(sorted.begin(), sorted.end());
    // sum_{i,j} |A_i - A_j| = 2 * sum_i (2i - n + 1) * A_(i)  (0-based i,
    // ascending order), so G = sum_i (2i - n + 1) * A_(i) / (n * sum A).
    double weighted = 0.0;
    double total = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        weighted += static_cast<double>(2 * i - n + 1) * sorted[i];
        total += sorted[i];
    }
    return weighted / (static_cast<double>(n) * total);
}

DatasetStats compute_dataset_stats(const std::vector<double>& areas) {
    validate_areas(areas);
    DatasetStats s;
    s.n = static_cast<int64_t>(areas.size());
    s.r_range = resolution_range_ratio(areas);
    s.gini = gini_coefficient(areas);
    double sum = 0.0;
    for (double a : areas) {
        sum += a;
    }
    s.mean_area = sum / static_cast<double>(s.n);
    return s;
}

}  // namespace tuna
