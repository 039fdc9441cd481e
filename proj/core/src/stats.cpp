#include "lgap/stats.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>

#include "lgap/error.hpp"

namespace lgap::stats {

std::string to_string(Sidedness s) {
    switch (s) {
        case Sidedness::two_sided: return "two_sided";
        case Sidedness::less: return "less";
        case Sidedness::greater: return "greater";
    }
    return "unknown";
}

Sidedness parse_sidedness(const std::string& text) {
    if (text == "two_sided" || text == "two-sided") return Sidedness::two_sided;
    if (text == "less") return Sidedness::less;
    if (text == "greater") return Sidedness::greater;
    throw ValidationError("unknown sidedness: " + text);
}

std::string to_string(Method m) {
    switch (m) {
        case Method::exact: return "exact";
        case Method::normal_approximation: return "normal_approximation";
        case Method::t_distribution: return "t_distribution";
    }
    return "unknown";
}

void to_json(nlohmann::json& j, const TestResult& r) {
    j = {{"statistic", r.statistic}, {"p_value", r.p_value}, {"n_effective", r.n_effective},
         {"method", to_string(r.method)}, {"sidedness", to_string(r.sidedness)}, {"degenerate", r.degenerate}};
}

PairedSample::PairedSample(std::vector<double> a_, std::vector<double> b_) : a(std::move(a_)), b(std::move(b_)) {
    require(a.size() == b.size(), "paired sample lengths differ");
    require(!a.empty(), "paired sample is empty");
    for (std::size_t i = 0; i < a.size(); ++i)
        require(std::isfinite(a[i]) && std::isfinite(b[i]), "paired sample contains non-finite values");
}

PairedSample PairedSample::from_differences(std::span<const double> d) {
    return PairedSample(std::vector<double>(d.begin(), d.end()), std::vector<double>(d.size(), 0.0));
}

std::vector<double> PairedSample::differences() const {
    std::vector<double> d(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
    return d;
}

namespace {

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

double clamp_p(double p) { return std::clamp(p, std::numeric_limits<double>::denorm_min(), 1.0); }

double sided_p(double p_lower, double p_upper, Sidedness s) {
    switch (s) {
        case Sidedness::less: return clamp_p(p_lower);
        case Sidedness::greater: return clamp_p(p_upper);
        case Sidedness::two_sided: return clamp_p(2.0 * std::min(p_lower, p_upper));
    }
    return 1.0;
}

}  // namespace

TestResult wilcoxon_signed_rank(const PairedSample& pairs, Sidedness sidedness) {
    require(pairs.size() >= 1, "wilcoxon on empty sample");
    std::vector<double> d;
    for (double v : pairs.differences())
        if (v != 0.0) d.push_back(v);
    require(!d.empty(), "wilcoxon: all differences are zero");
    const std::size_t n = d.size();

    // Ranks of |d| doubled so that midranks stay integral.
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return std::abs(d[x]) < std::abs(d[y]); });
    std::vector<std::uint64_t> rank2(n);
    double tie_term = 0.0;
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j + 1 < n && std::abs(d[order[j + 1]]) == std::abs(d[order[i]])) ++j;
        const std::uint64_t r2 = (i + 1) + (j + 1);  // 2 * average of ranks i+1..j+1
        for (std::size_t t = i; t <= j; ++t) rank2[order[t]] = r2;
        const double tcount = static_cast<double>(j - i + 1);
        tie_term += tcount * tcount * tcount - tcount;
        i = j + 1;
    }
    std::uint64_t w2 = 0;  // 2 * W+
    for (std::size_t i = 0; i < n; ++i)
        if (d[i] > 0) w2 += rank2[i];

    TestResult r;
    r.statistic = static_cast<double>(w2) / 2.0;
    r.n_effective = n;
    r.sidedness = sidedness;

    if (n <= kExactWilcoxonLimit) {
        // Null distribution of 2*W+ over all 2^n sign assignments, counted by
        // subset-sum dynamic programming (exact integer counts).
        const std::uint64_t total2 = std::accumulate(rank2.begin(), rank2.end(), std::uint64_t{0});
        std::vector<std::uint64_t> count(total2 + 1, 0);
        count[0] = 1;
        std::uint64_t reach = 0;
        for (std::uint64_t r2 : rank2) {
            for (std::uint64_t s = reach + 1; s-- > 0;)
                if (count[s]) count[s + r2] += count[s];
            reach += r2;
        }
        std::uint64_t le = 0, ge = 0;
        for (std::uint64_t s = 0; s <= total2; ++s) {
            if (s <= w2) le += count[s];
            if (s >= w2) ge += count[s];
        }
        const double denom = std::ldexp(1.0, static_cast<int>(n));
        r.method = Method::exact;
        r.p_value = sided_p(static_cast<double>(le) / denom, static_cast<double>(ge) / denom, sidedness);
    } else {
        const double nn = static_cast<double>(n);
        const double mean = nn * (nn + 1.0) / 4.0;
        const double var = nn * (nn + 1.0) * (2.0 * nn + 1.0) / 24.0 - tie_term / 48.0;
        const double z = (r.statistic - mean) / std::sqrt(var);
        r.method = Method::normal_approximation;
        r.p_value = sided_p(normal_cdf(z), normal_cdf(-z), sidedness);
    }
    return r;
}

namespace {

// Continued fraction for the incomplete beta (modified Lentz).
double beta_cf(double a, double b, double x) {
    constexpr int kMaxIter = 10000;
    constexpr double kEps = 1e-16;
    constexpr double kTiny = 1e-300;
    const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
    double c = 1.0;
    double d = 1.0 - qab * x / qap;
    if (std::abs(d) < kTiny) d = kTiny;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= kMaxIter; ++m) {
        const double m2 = 2.0 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < kTiny) d = kTiny;
        c = 1.0 + aa / c;
        if (std::abs(c) < kTiny) c = kTiny;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < kTiny) d = kTiny;
        c = 1.0 + aa / c;
        if (std::abs(c) < kTiny) c = kTiny;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::abs(del - 1.0) < kEps) return h;
    }
    throw Error("incomplete beta continued fraction did not converge");
}

}  // namespace

double incomplete_beta(double a, double b, double x) {
    require(a > 0.0 && b > 0.0, "incomplete beta needs a, b > 0");
    require(x >= 0.0 && x <= 1.0, "incomplete beta needs x in [0, 1]");
    if (x == 0.0 || x == 1.0) return x;
    const double log_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x);
    const double front = std::exp(log_front);
    if (x < (a + 1.0) / (a + b + 2.0)) return front * beta_cf(a, b, x) / a;
    return 1.0 - front * beta_cf(b, a, 1.0 - x) / b;
}

double student_t_cdf(double t, double df) {
    require(df > 0.0, "t distribution needs df > 0");
    if (std::isinf(t)) return t > 0 ? 1.0 : 0.0;
    const double tail = 0.5 * incomplete_beta(df / 2.0, 0.5, df / (df + t * t));  // P(T > |t|)
    return t > 0 ? 1.0 - tail : tail;
}

TestResult paired_t_test(const PairedSample& pairs, Sidedness sidedness) {
    require(pairs.size() >= 2, "paired t-test needs at least 2 pairs");
    const auto d = pairs.differences();
    const double n = static_cast<double>(d.size());
    const double mean = std::accumulate(d.begin(), d.end(), 0.0) / n;
    double ss = 0.0;
    for (double v : d) ss += (v - mean) * (v - mean);
    const double sd = std::sqrt(ss / (n - 1.0));

    TestResult r;
    r.n_effective = d.size();
    r.sidedness = sidedness;
    r.method = Method::t_distribution;
    if (sd == 0.0) {
        // Zero variance: t is 0/0 or +-inf.
        r.degenerate = true;
        if (mean == 0.0) {
            r.statistic = 0.0;
            r.p_value = 1.0;
        } else {
            r.statistic = mean > 0 ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity();
            const double lower = mean > 0 ? 1.0 : 0.0;
            r.p_value = sided_p(lower, 1.0 - lower, sidedness);
        }
        return r;
    }
    r.statistic = mean / (sd / std::sqrt(n));
    const double df = n - 1.0;
    // Both tails from the incomplete beta directly, avoiding 1 - (1 - tiny).
    const double tail = 0.5 * incomplete_beta(df / 2.0, 0.5, df / (df + r.statistic * r.statistic));
    const double lower = r.statistic > 0 ? 1.0 - tail : tail;
    const double upper = r.statistic > 0 ? tail : 1.0 - tail;
    r.p_value = sided_p(lower, upper, sidedness);
    return r;
}

std::vector<double> holm_adjust(std::span<const double> p) {
    for (double v : p) require(v > 0.0 && v <= 1.0, "p-values must lie in (0, 1]");
    const std::size_t m = p.size();
    std::vector<std::size_t> order(m);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return p[a] < p[b]; });
    std::vector<double> adj(m);
    double running = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        running = std::max(running, std::min(1.0, static_cast<double>(m - i) * p[order[i]]));
        adj[order[i]] = running;
    }
    return adj;
}

}  // namespace lgap::stats
