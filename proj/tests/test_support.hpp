#pragma once

// Shared oracles for the test suites: central finite differences, an
// independent relative-error helper, and small random-tensor builders.
// Everything here stays independent of the implementation paths it
// checks.

#include "orthoct/rng.hpp"
#include "orthoct/tensor.hpp"

#include <cmath>
#include <functional>
#include <vector>

namespace testsup {

inline double rel_err(double got, double want)
{
    const double denom = std::max({std::fabs(got), std::fabs(want), 1e-12});
    return std::fabs(got - want) / denom;
}

// max over elements of rel err with an absolute floor: entries that are
// both tiny compare as equal
inline double max_rel_err(std::span<const double> got, std::span<const double> want,
    double abs_floor = 1e-9)
{
    double worst = 0;
    for (size_t i = 0; i < got.size(); ++i) {
        if (std::fabs(got[i]) < abs_floor && std::fabs(want[i]) < abs_floor)
            continue;
        worst = std::max(worst, rel_err(got[i], want[i]));
    }
    return worst;
}

// central finite differences of a scalar function over a flat vector
inline std::vector<double> finite_diff(const std::function<double(const std::vector<double>&)>& f,
    std::vector<double> x, double h = 1e-4)
{
    std::vector<double> g(x.size());
    for (size_t i = 0; i < x.size(); ++i) {
        const double keep = x[i];
        x[i] = keep + h;
        const double up = f(x);
        x[i] = keep - h;
        const double down = f(x);
        x[i] = keep;
        g[i] = (up - down) / (2.0 * h);
    }
    return g;
}

inline std::vector<double> random_vec(orthoct::Rng& rng, size_t n, double lo = -1.0,
    double hi = 1.0)
{
    std::vector<double> v(n);
    for (double& x : v)
        x = rng.uniform(lo, hi);
    return v;
}

inline orthoct::Tensor<double> random_tensor(orthoct::Rng& rng, orthoct::Shape shape,
    bool requires_grad, double lo = -1.0, double hi = 1.0)
{
    auto data = random_vec(rng, static_cast<size_t>(orthoct::numel(shape)), lo, hi);
    return orthoct::Tensor<double>::from_data(std::move(shape), std::move(data), requires_grad);
}

inline std::vector<double> to_double(std::span<const double> s)
{
    return {s.begin(), s.end()};
}

} // namespace testsup
