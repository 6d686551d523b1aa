#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace sbsteer {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Precondition or input validation failure (CLI exit code 2).
class ContractError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Non-finite values encountered during a computation (CLI exit code 3).
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// File system or parse failure (CLI exit code 4).
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline void require(bool cond, const std::string& what) {
    if (!cond)
        throw ContractError(what);
}

// Warnings go through a replaceable sink so tests can observe them.
using WarningSink = std::function<void(const std::string&)>;
void set_warning_sink(WarningSink sink);
void warn(const std::string& message);

// splitmix64 finalizer; used to derive independent sub-seeds.
constexpr std::uint64_t mix_seed(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index) {
    return mix_seed(mix_seed(base) ^ (index + 0x632be59bd9b4e019ULL));
}

/// log(sum(exp(values))) without overflow. Returns -inf for an empty or all -inf input.
double log_sum_exp(const Vector& values);

bool all_finite(const Vector& v);

/// Formats with 17 significant digits, the round-trip precision used by every file format here.
std::string format_double(double x);

} // namespace sbsteer
