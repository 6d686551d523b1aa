#include "sbsteer/common.hpp"

#include <cmath>
#include <cstdio>
#include <iostream>
#include <limits>
#include <mutex>

namespace sbsteer {

namespace {

std::mutex sink_mutex;
WarningSink current_sink;

} // namespace

void set_warning_sink(WarningSink sink) {
    std::lock_guard lock(sink_mutex);
    current_sink = std::move(sink);
}

void warn(const std::string& message) {
    std::lock_guard lock(sink_mutex);
    if (current_sink)
        current_sink(message);
    else
        std::cerr << "warning: " << message << '\n';
}

double log_sum_exp(const Vector& values) {
    if (values.size() == 0)
        return -std::numeric_limits<double>::infinity();
    const double m = values.maxCoeff();
    if (!std::isfinite(m))
        return m;
    return m + std::log((values.array() - m).exp().sum());
}

bool all_finite(const Vector& v) {
    return v.allFinite();
}

std::string format_double(double x) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

} // namespace sbsteer
