#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <utility>
#include <vector>

namespace qmarket {

inline double mean(const std::vector<double>& v) {
    if (v.empty()) throw std::invalid_argument("mean: empty sample");
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

inline double sample_variance(const std::vector<double>& v) {
    if (v.size() < 2) throw std::invalid_argument("sample_variance: need at least 2 points");
    const double m = mean(v);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return s / static_cast<double>(v.size() - 1);
}

namespace detail {

// Continued-fraction core of the regularized incomplete beta (modified Lentz).
inline double beta_cf(double a, double b, double x) {
    constexpr int max_iter = 300;
    constexpr double eps = 3e-15;
    constexpr double fpmin = 1e-300;
    const double qab = a + b;
    const double qap = a + 1.0;
    const double qam = a - 1.0;
    double c = 1.0;
    double d = 1.0 - qab * x / qap;
    if (std::abs(d) < fpmin) d = fpmin;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= max_iter; ++m) {
        const int m2 = 2 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < fpmin) d = fpmin;
        c = 1.0 + aa / c;
        if (std::abs(c) < fpmin) c = fpmin;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < fpmin) d = fpmin;
        c = 1.0 + aa / c;
        if (std::abs(c) < fpmin) c = fpmin;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::abs(del - 1.0) < eps) break;
    }
    return h;
}

}  // namespace detail

// Regularized incomplete beta I_x(a, b).
inline double incomplete_beta(double a, double b, double x) {
    if (!(a > 0) || !(b > 0)) throw std::invalid_argument("incomplete_beta: a, b must be positive");
    if (x <= 0) return 0.0;
    if (x >= 1) return 1.0;
    const double ln_front =
        std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x);
    const double front = std::exp(ln_front);
    if (x < (a + 1.0) / (a + b + 2.0)) return front * detail::beta_cf(a, b, x) / a;
    return 1.0 - front * detail::beta_cf(b, a, 1.0 - x) / b;
}

// Student-t CDF with dof degrees of freedom.
inline double student_t_cdf(double t, double dof) {
    if (!(dof > 0)) throw std::invalid_argument("student_t_cdf: dof must be positive");
    const double x = dof / (dof + t * t);
    const double tail = 0.5 * incomplete_beta(0.5 * dof, 0.5, x);
    return t >= 0 ? 1.0 - tail : tail;
}

// Upper quantile: smallest t with CDF(t) >= p, by bisection.
inline double student_t_quantile(double p, double dof) {
    if (!(p > 0) || !(p < 1)) throw std::invalid_argument("student_t_quantile: p outside (0,1)");
    double lo = -1.0, hi = 1.0;
    while (student_t_cdf(lo, dof) > p) lo *= 2.0;
    while (student_t_cdf(hi, dof) < p) hi *= 2.0;
    for (int i = 0; i < 200; ++i) {
        const double mid = 0.5 * (lo + hi);
        if (student_t_cdf(mid, dof) < p)
            lo = mid;
        else
            hi = mid;
        if (hi - lo < 1e-12) break;
    }
    return 0.5 * (lo + hi);
}

struct MeanCi {
    double mean = 0.0;
    double lo = 0.0;
    double hi = 0.0;
    double half_width = 0.0;
};

inline MeanCi mean_ci(const std::vector<double>& v, double level = 0.95) {
    MeanCi out;
    out.mean = mean(v);
    if (v.size() < 2) {
        out.lo = out.hi = out.mean;
        return out;
    }
    const double n = static_cast<double>(v.size());
    const double se = std::sqrt(sample_variance(v) / n);
    const double t = student_t_quantile(0.5 + level / 2.0, n - 1.0);
    out.half_width = t * se;
    out.lo = out.mean - out.half_width;
    out.hi = out.mean + out.half_width;
    return out;
}

// One-sided Welch test of mean(a) > mean(b); returns the p-value.
inline double welch_one_sided_p(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() < 2 || b.size() < 2)
        throw std::invalid_argument("welch_one_sided_p: need at least 2 points per sample");
    const double na = static_cast<double>(a.size());
    const double nb = static_cast<double>(b.size());
    const double va = sample_variance(a) / na;
    const double vb = sample_variance(b) / nb;
    const double se2 = va + vb;
    if (se2 <= 0) return mean(a) > mean(b) ? 0.0 : 1.0;
    const double t = (mean(a) - mean(b)) / std::sqrt(se2);
    const double dof = se2 * se2 / (va * va / (na - 1.0) + vb * vb / (nb - 1.0));
    return 1.0 - student_t_cdf(t, dof);
}

// Kendall tau-b rank correlation.
inline double kendall_tau(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size()) throw std::invalid_argument("kendall_tau: size mismatch");
    const std::size_t n = x.size();
    if (n < 2) throw std::invalid_argument("kendall_tau: need at least 2 points");
    long long concordant = 0, discordant = 0, ties_x = 0, ties_y = 0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            const double dx = x[i] - x[j];
            const double dy = y[i] - y[j];
            if (dx == 0 && dy == 0) continue;
            if (dx == 0) {
                ties_x += 1;
            } else if (dy == 0) {
                ties_y += 1;
            } else if ((dx > 0) == (dy > 0)) {
                concordant += 1;
            } else {
                discordant += 1;
            }
        }
    const double n0 = 0.5 * static_cast<double>(n) * static_cast<double>(n - 1);
    const double denom = std::sqrt((n0 - static_cast<double>(ties_x)) *
                                   (n0 - static_cast<double>(ties_y)));
    if (denom == 0) return 0.0;
    return static_cast<double>(concordant - discordant) / denom;
}

// Empirical CDF over the distinct sorted values; last fraction is exactly 1.
inline std::vector<std::pair<double, double>> cdf_points(std::vector<double> values) {
    if (values.empty()) throw std::invalid_argument("cdf_points: empty sample");
    std::sort(values.begin(), values.end());
    std::vector<std::pair<double, double>> out;
    const double n = static_cast<double>(values.size());
    std::size_t i = 0;
    while (i < values.size()) {
        std::size_t j = i;
        while (j + 1 < values.size() && values[j + 1] == values[i]) ++j;
        out.emplace_back(values[i], static_cast<double>(j + 1) / n);
        i = j + 1;
    }
    out.back().second = 1.0;
    return out;
}

}  // namespace qmarket
