#pragma once

#include <utility>
#include <vector>

#include "errors.hpp"

namespace sparsesplat {

// Evenly spaced picks over [0, m): round(k (m-1) / (n-1)) with ties rounded
// down; a single pick is the middle index (lower middle for even m).
inline std::vector<int> even_spacing(int m, int n) {
    if (n <= 0 || n > m) throw InvalidInputError("even_spacing: need 0 < n <= m");
    if (n == 1) return {(m - 1) / 2};
    std::vector<int> out;
    for (int k = 0; k < n; ++k) {
        const long long num = static_cast<long long>(k) * (m - 1);
        const long long den = n - 1;
        // ceil(num/den - 1/2) == floor((2 num + den - 1) / (2 den))
        out.push_back(static_cast<int>((2 * num + den - 1) / (2 * den)));
    }
    return out;
}

struct Split {
    std::vector<int> train;
    std::vector<int> test;
};

inline constexpr int kLlffHoldoutStride = 8;

// Every eighth view is held out; `train_views` views are spread evenly over the rest.
inline Split make_llff_split(int view_count, int train_views) {
    if (view_count < 1) throw InvalidInputError("make_llff_split: no views");
    Split s;
    std::vector<int> remaining;
    for (int i = 0; i < view_count; ++i) {
        if (i % kLlffHoldoutStride == 0) {
            s.test.push_back(i);
        } else {
            remaining.push_back(i);
        }
    }
    if (train_views < 1 || train_views > static_cast<int>(remaining.size())) {
        throw InvalidInputError("make_llff_split: " + std::to_string(train_views) + " training views requested but " +
                                std::to_string(remaining.size()) + " remain after holding out every eighth view");
    }
    for (int k : even_spacing(static_cast<int>(remaining.size()), train_views)) s.train.push_back(remaining[k]);
    return s;
}

} // namespace sparsesplat
