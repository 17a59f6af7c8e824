// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <vector>

#include "dualsft/error.hpp"
#include "dualsft/linalg.hpp"

namespace dualsft {

/// 1-based ranks in ascending value order; ties share their average rank.
inline Vec average_ranks(std::span<const double> v) {
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    Vec r(v.size());
    std::size_t i = 0;
    while (i < idx.size()) {
        std::size_t j = i;
        while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
        const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
        i = j + 1;
    }
    return r;
}

inline double pearson(std::span<const double> a, std::span<const double> b) {
    require(a.size() == b.size() && a.size() >= 2, "correlation needs two equal-length vectors of length >= 2");
    const double n = static_cast<double>(a.size());
    const double ma = sum(a) / n, mb = sum(b) / n;
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    if (saa == 0.0 || sbb == 0.0) return saa == sbb ? 1.0 : 0.0;
    return sab / std::sqrt(saa * sbb);
}

/// Spearman rank correlation (Pearson correlation of average ranks).
inline double spearman(std::span<const double> a, std::span<const double> b) {
    return pearson(average_ranks(a), average_ranks(b));
}

/// Percentage of index pairs (i < j) ordered the same way by both vectors. Pairs tied in either are skipped.
inline double pairwise_agreement(std::span<const double> a, std::span<const double> b) {
    require(a.size() == b.size(), "pairwise agreement needs equal-length vectors");
    std::size_t agree = 0, total = 0;
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t j = i + 1; j < a.size(); ++j) {
            const double da = a[i] - a[j], db = b[i] - b[j];
            if (da == 0.0 || db == 0.0) continue;
            ++total;
            if ((da > 0.0) == (db > 0.0)) ++agree;
        }
    return total == 0 ? 100.0 : 100.0 * static_cast<double>(agree) / static_cast<double>(total);
}

/// |A n B| / |A u B| of two sorted index sets; two empty sets give 1.
inline double jaccard(std::span<const std::size_t> a, std::span<const std::size_t> b) {
    std::vector<std::size_t> inter, uni;
    std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(inter));
    std::set_union(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(uni));
    return uni.empty() ? 1.0 : static_cast<double>(inter.size()) / static_cast<double>(uni.size());
}

/// Top-`count` indices by descending value, ascending index on ties, returned sorted.
inline std::vector<std::size_t> top_indices(std::span<const double> v, std::size_t count) {
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t x, std::size_t y) { return v[x] > v[y]; });
    idx.resize(std::min(count, idx.size()));
    std::sort(idx.begin(), idx.end());
    return idx;
}

/// Overlap fraction of the top ceil(q * n) sets of two score vectors.
inline double top_fraction_overlap(std::span<const double> a, std::span<const double> b, double q) {
    require(a.size() == b.size() && !a.empty(), "overlap needs equal-length non-empty vectors");
    const auto k = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(q * static_cast<double>(a.size()) - 1e-9)));
    const auto ta = top_indices(a, k), tb = top_indices(b, k);
    std::vector<std::size_t> inter;
    std::set_intersection(ta.begin(), ta.end(), tb.begin(), tb.end(), std::back_inserter(inter));
    return static_cast<double>(inter.size()) / static_cast<double>(k);
}

} // namespace dualsft
