#include "fedprog/hungarian.hpp"

#include <limits>
#include <string>

namespace fedprog {

Assignment hungarian_solve(const Tensor2D& cost) {
    const std::size_t n = cost.rows();
    const std::size_t m = cost.cols();
    if (n > m) {
        throw ShapeError("hungarian_solve: " + std::to_string(n) + " rows exceed " +
                         std::to_string(m) + " columns");
    }
    if (!cost.all_finite()) throw DataQualityError("hungarian_solve: non-finite cost entry");
    Assignment out;
    if (n == 0) return out;

    // 1-based potentials; column 0 is the virtual source. Rectangular matrices need no
    // padding: rows are added one at a time along shortest augmenting paths.
    constexpr double kInf = std::numeric_limits<double>::infinity();
    std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0), min_slack(m + 1);
    std::vector<std::size_t> col_owner(m + 1, 0), way(m + 1, 0);
    std::vector<char> used(m + 1);

    for (std::size_t i = 1; i <= n; ++i) {
        col_owner[0] = i;
        std::size_t j0 = 0;
        std::fill(min_slack.begin(), min_slack.end(), kInf);
        std::fill(used.begin(), used.end(), 0);
        do {
            used[j0] = 1;
            const std::size_t i0 = col_owner[j0];
            double delta = kInf;
            std::size_t j1 = 0;
            for (std::size_t j = 1; j <= m; ++j) {
                if (used[j]) continue;
                const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if (cur < min_slack[j]) {
                    min_slack[j] = cur;
                    way[j] = j0;
                }
                if (min_slack[j] < delta) {
                    delta = min_slack[j];
                    j1 = j;
                }
            }
            for (std::size_t j = 0; j <= m; ++j) {
                if (used[j]) {
                    u[col_owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    min_slack[j] -= delta;
                }
            }
            j0 = j1;
        } while (col_owner[j0] != 0);
        do {
            const std::size_t j1 = way[j0];
            col_owner[j0] = col_owner[j1];
            j0 = j1;
        } while (j0 != 0);
    }

    out.row_to_col.assign(n, 0);
    for (std::size_t j = 1; j <= m; ++j) {
        if (col_owner[j] != 0) out.row_to_col[col_owner[j] - 1] = j - 1;
    }
    for (std::size_t i = 0; i < n; ++i) out.total_cost += cost(i, out.row_to_col[i]);
    return out;
}

}  // namespace fedprog
