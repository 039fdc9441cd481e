#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

namespace lgap::stats {

/// Alternative hypothesis on the paired differences d = a - b.
enum class Sidedness { two_sided, less, greater };

std::string to_string(Sidedness s);
Sidedness parse_sidedness(const std::string& text);

enum class Method { exact, normal_approximation, t_distribution };

std::string to_string(Method m);

struct TestResult {
    double statistic = 0.0;  // W+ for Wilcoxon, t for the paired t-test
    double p_value = 1.0;
    std::size_t n_effective = 0;
    Method method = Method::exact;
    Sidedness sidedness = Sidedness::two_sided;
    /// Paired t-test with zero-variance differences.
    bool degenerate = false;
};

void to_json(nlohmann::json& j, const TestResult& r);

struct PairedSample {
    std::vector<double> a;
    std::vector<double> b;

    PairedSample() = default;
    PairedSample(std::vector<double> a_, std::vector<double> b_);
    /// Pairs (0, d_i), i.e. the differences themselves.
    static PairedSample from_differences(std::span<const double> d);

    std::size_t size() const { return a.size(); }
    std::vector<double> differences() const;
};

inline constexpr std::size_t kExactWilcoxonLimit = 25;

/// Signed-rank test. Zero differences are dropped, tied |d| share average
/// ranks. Exact null distribution for n_effective <= 25, normal approximation
/// with tie correction above. Throws if every difference is zero.
TestResult wilcoxon_signed_rank(const PairedSample& pairs, Sidedness sidedness);

/// t = mean(d) / (sd(d) / sqrt(n)) with n - 1 degrees of freedom.
TestResult paired_t_test(const PairedSample& pairs, Sidedness sidedness);

/// Regularized incomplete beta I_x(a, b) (continued fraction).
double incomplete_beta(double a, double b, double x);
/// Student-t CDF with `df` degrees of freedom.
double student_t_cdf(double t, double df);

/// Holm step-down adjusted p-values, in input order.
std::vector<double> holm_adjust(std::span<const double> p_values);

}  // namespace lgap::stats
