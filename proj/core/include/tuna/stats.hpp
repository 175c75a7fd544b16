#pragma once

#include <cstdint>
#include <vector>

namespace tuna {

// A_max / A_min over image areas; DataError on empty input or non-positive
// areas. Scale-invariant and always >= 1.
double resolution_range_ratio(const std::vector<double>& areas);

// G = sum_{i,j} |A_i - A_j| / (2 n^2 mean(A)), computed with the
// O(n log n) sorted-prefix identity.
double gini_coefficient(const std::vector<double>& areas);

struct DatasetStats {
    int64_t n = 0;
    double r_range = 1.0;
    double gini = 0.0;
    double mean_area = 0.0;
};

DatasetStats compute_dataset_stats(const std::vector<double>& areas);

}  // namespace tuna
