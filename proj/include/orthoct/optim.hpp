#pragma once

#include "orthoct/network.hpp"

#include <vector>

namespace orthoct {

struct AdamWConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

/// First/second moment accumulators mirroring a ParamSet, plus the
/// shared step counter.
template <typename T>
struct OptimizerState {
    std::vector<std::vector<T>> m;
    std::vector<std::vector<T>> v;
    int64_t step = 0;

    static OptimizerState init(const ParamSet<T>& params);
};

/// One AdamW update: bias-corrected adaptive step from the parameter
/// gradients plus decoupled decay theta -= lr*wd*theta.
template <typename T>
void adamw_step(ParamSet<T>& params, OptimizerState<T>& state, double lr, const AdamWConfig& cfg);

/// lr_min + (lr_init - lr_min)*(1 + cos(pi*epoch/total))/2.
double cosine_lr(int epoch, int total_epochs, double lr_init, double lr_min);

#define ORTHOCT_OPTIM_DECL(T)                                 \
    extern template struct OptimizerState<T>;                 \
    extern template void adamw_step<T>(ParamSet<T>&, OptimizerState<T>&, double, const AdamWConfig&);

ORTHOCT_OPTIM_DECL(float)
ORTHOCT_OPTIM_DECL(double)
#undef ORTHOCT_OPTIM_DECL

} // namespace orthoct
