// SPDX-License-Identifier: Apache-2.0
//
// Scores a synthetic classification pool with planted label noise and
// prints how many flipped examples land in the top and bottom of the ranking.

#include <algorithm>
#include <cstdio>

#include "dualsft/dualsft.hpp"

int main() {
    dualsft::RunConfig cfg;
    cfg.seed = 7;
    cfg.label_noise = 0.2;
    const auto run = dualsft::run_dualsft(cfg);

    const auto ranking = dualsft::signed_ranking(run->scores.data);
    auto flipped_in = [&](std::size_t begin, std::size_t end) {
        std::size_t hits = 0;
        for (std::size_t r = begin; r < end; ++r) {
            const std::size_t train_index = run->split.pool[ranking[r]];
            if (std::binary_search(run->flipped.begin(), run->flipped.end(), train_index)) ++hits;
        }
        return hits;
    };
    const std::size_t n = ranking.size(), tenth = n / 10;
    std::printf("pool %zu, flipped %zu\n", n, run->flipped.size());
    std::printf("flipped in top 10%%:    %zu / %zu\n", flipped_in(0, tenth), tenth);
    std::printf("flipped in bottom 10%%: %zu / %zu\n", flipped_in(n - tenth, n), tenth);

    const auto m = dualsft::run_metrics(*run);
    std::printf("L_val  theta_old %.4f  theta_star %.4f\n", m["theta_old"]["l_val"].get<double>(),
                m["theta_star"]["l_val"].get<double>());
}
