#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include <json.hpp>

#include "resid/core.hpp"

namespace resid {

/// Hyper-parameters shared by every trained aligner.
struct OptimConfig {
    double lr = 1e-3;
    int batch = 256;
    int max_epochs = 30;
    int patience = 5;
    std::uint64_t seed = 0;
    double tau = 100.0;
};

void validate(const OptimConfig& cfg);
nlohmann::ordered_json to_json(const OptimConfig& cfg);
/// Missing keys keep their defaults; unknown keys are rejected.
OptimConfig optim_config_from_json(const nlohmann::json& j);

/// Adam with bias correction (beta1 0.9, beta2 0.999, eps 1e-8).
class Adam {
public:
    Adam(Eigen::Index n_params, double lr);
    void step(Vector& params, const Vector& grad);

private:
    double lr_;
    double beta1_ = 0.9;
    double beta2_ = 0.999;
    double eps_ = 1e-8;
    Vector m_;
    Vector v_;
    long t_ = 0;
};

struct EpochMetrics {
    int epoch = 0;
    double train_loss = 0.0;
    double val_accuracy = 0.0;
};

struct TrainResult {
    Vector best_params;
    double best_val_accuracy = 0.0;
    int best_epoch = 0;
    bool early_stopped = false;
    std::vector<EpochMetrics> history;  // epoch 0 is the initial state
};

/// Mean loss over the batch; writes d(loss)/d(params) into `grad`.
using BatchLossFn = std::function<double(std::span<const Eigen::Index> batch, const Vector& params, Vector& grad)>;
using ValAccuracyFn = std::function<double(const Vector& params)>;

/// Mini-batch Adam with early stopping on validation accuracy.
///
/// The initial parameters are evaluated first and count as a candidate, so the
/// returned parameters never score below the initial validation accuracy.
/// Batch order for epoch e is a permutation drawn from derive_seed(seed, e).
/// Throws DivergenceError when a batch loss is not finite.
TrainResult train_adam(Vector params, Eigen::Index n_train, const OptimConfig& cfg, const BatchLossFn& loss_fn,
                       const ValAccuracyFn& val_fn);

}  // namespace resid
