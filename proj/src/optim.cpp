#include "orthoct/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace orthoct {

template <typename T>
OptimizerState<T> OptimizerState<T>::init(const ParamSet<T>& params)
{
    OptimizerState<T> s;
    s.m.reserve(params.count());
    s.v.reserve(params.count());
    for (const auto& [name, t] : params.entries()) {
        s.m.emplace_back(t.values().size(), T(0));
        s.v.emplace_back(t.values().size(), T(0));
    }
    return s;
}

template <typename T>
void adamw_step(ParamSet<T>& params, OptimizerState<T>& state, double lr, const AdamWConfig& cfg)
{
    if (state.m.size() != params.count() || state.v.size() != params.count())
        throw std::invalid_argument("adamw_step: optimizer state does not match parameter set");
    state.step += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    const T b1 = static_cast<T>(cfg.beta1), b2 = static_cast<T>(cfg.beta2);
    const T one_m_b1 = static_cast<T>(1.0 - cfg.beta1), one_m_b2 = static_cast<T>(1.0 - cfg.beta2);
    const T inv_bc1 = static_cast<T>(1.0 / bc1), inv_bc2 = static_cast<T>(1.0 / bc2);
    const T eps = static_cast<T>(cfg.eps);
    const T step_lr = static_cast<T>(lr);
    const T decay = static_cast<T>(lr * cfg.weight_decay);

    auto& entries = params.entries_mut();
    for (size_t i = 0; i < entries.size(); ++i) {
        auto& t = entries[i].second;
        if (!t.has_grad())
            continue;
        auto theta = t.values_mut();
        auto g = t.grad();
        if (state.m[i].size() != theta.size())
            throw std::invalid_argument("adamw_step: state shape mismatch at " + entries[i].first);
        T* m = state.m[i].data();
        T* v = state.v[i].data();
        for (size_t k = 0; k < theta.size(); ++k) {
            m[k] = b1 * m[k] + one_m_b1 * g[k];
            v[k] = b2 * v[k] + one_m_b2 * g[k] * g[k];
            const T mhat = m[k] * inv_bc1;
            const T vhat = v[k] * inv_bc2;
            theta[k] -= decay * theta[k];
            theta[k] -= step_lr * mhat / (std::sqrt(vhat) + eps);
        }
    }
}

double cosine_lr(int epoch, int total_epochs, double lr_init, double lr_min)
{
    if (total_epochs < 1)
        throw std::invalid_argument("cosine_lr: total_epochs must be >= 1");
    if (epoch < 0 || epoch > total_epochs)
        throw std::invalid_argument("cosine_lr: epoch " + std::to_string(epoch)
            + " outside [0, " + std::to_string(total_epochs) + "]");
    const double phase = 3.14159265358979323846 * static_cast<double>(epoch) / total_epochs;
    return lr_min + 0.5 * (lr_init - lr_min) * (1.0 + std::cos(phase));
}

template struct OptimizerState<float>;
template struct OptimizerState<double>;
template void adamw_step<float>(ParamSet<float>&, OptimizerState<float>&, double, const AdamWConfig&);
template void adamw_step<double>(ParamSet<double>&, OptimizerState<double>&, double, const AdamWConfig&);

} // namespace orthoct
