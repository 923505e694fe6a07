#include "resid/optim.hpp"

#include <cmath>
#include <numeric>

#include "resid/error.hpp"
#include "resid/rng.hpp"

namespace resid {

void validate(const OptimConfig& cfg) {
    if (!(cfg.lr > 0.0) || !std::isfinite(cfg.lr)) throw ValidationError("optim: lr must be positive");
    if (cfg.batch < 1) throw ValidationError("optim: batch must be >= 1");
    if (cfg.max_epochs < 0) throw ValidationError("optim: max_epochs must be >= 0");
    if (cfg.patience < 1) throw ValidationError("optim: patience must be >= 1");
    if (!(cfg.tau > 0.0) || !std::isfinite(cfg.tau)) throw ValidationError("optim: tau must be positive");
}

nlohmann::ordered_json to_json(const OptimConfig& cfg) {
    nlohmann::ordered_json j;
    j["lr"] = cfg.lr;
    j["batch"] = cfg.batch;
    j["max_epochs"] = cfg.max_epochs;
    j["patience"] = cfg.patience;
    j["seed"] = cfg.seed;
    j["tau"] = cfg.tau;
    return j;
}

OptimConfig optim_config_from_json(const nlohmann::json& j) {
    OptimConfig cfg;
    if (!j.is_object()) throw ValidationError("optim config must be a JSON object");
    for (const auto& [key, value] : j.items()) {
        try {
            if (key == "lr") cfg.lr = value.get<double>();
            else if (key == "batch") cfg.batch = value.get<int>();
            else if (key == "max_epochs") cfg.max_epochs = value.get<int>();
            else if (key == "patience") cfg.patience = value.get<int>();
            else if (key == "seed") cfg.seed = value.get<std::uint64_t>();
            else if (key == "tau") cfg.tau = value.get<double>();
            else throw ValidationError("optim config: unknown key '" + key + "'");
        } catch (const nlohmann::json::exception& e) {
            throw ValidationError("optim config: bad value for '" + key + "': " + e.what());
        }
    }
    validate(cfg);
    return cfg;
}

Adam::Adam(Eigen::Index n_params, double lr)
    : lr_(lr), m_(Vector::Zero(n_params)), v_(Vector::Zero(n_params)) {}

void Adam::step(Vector& params, const Vector& grad) {
    ++t_;
    m_ = beta1_ * m_ + (1.0 - beta1_) * grad;
    v_ = beta2_ * v_ + (1.0 - beta2_) * grad.cwiseAbs2();
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    params.array() -= lr_ * (m_.array() / c1) / ((v_.array() / c2).sqrt() + eps_);
}

TrainResult train_adam(Vector params, Eigen::Index n_train, const OptimConfig& cfg, const BatchLossFn& loss_fn,
                       const ValAccuracyFn& val_fn) {
    validate(cfg);
    if (n_train < 1) throw ValidationError("training split is empty");

    std::vector<Eigen::Index> all(static_cast<std::size_t>(n_train));
    std::iota(all.begin(), all.end(), Eigen::Index{0});
    Vector grad(params.size());

    TrainResult res;
    const double init_loss = loss_fn(all, params, grad);
    if (!std::isfinite(init_loss)) throw DivergenceError("non-finite loss at initialization", 0);
    res.best_params = params;
    res.best_val_accuracy = val_fn(params);
    res.history.push_back({0, init_loss, res.best_val_accuracy});

    Adam adam(params.size(), cfg.lr);
    int stale = 0;
    for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        Rng rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(epoch)));
        const auto order = rng.permutation(static_cast<std::size_t>(n_train));
        double loss_sum = 0.0;
        int n_batches = 0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch)) {
            const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch));
            std::vector<Eigen::Index> batch(order.begin() + static_cast<std::ptrdiff_t>(start),
                                            order.begin() + static_cast<std::ptrdiff_t>(stop));
            const double loss = loss_fn(batch, params, grad);
            if (!std::isfinite(loss) || !grad.allFinite()) {
                throw DivergenceError("non-finite loss in epoch " + std::to_string(epoch), epoch);
            }
            adam.step(params, grad);
            loss_sum += loss;
            ++n_batches;
        }
        const double val = val_fn(params);
        res.history.push_back({epoch, loss_sum / n_batches, val});
        if (val > res.best_val_accuracy) {
            res.best_val_accuracy = val;
            res.best_params = params;
            res.best_epoch = epoch;
            stale = 0;
        } else if (++stale >= cfg.patience) {
            res.early_stopped = true;
            break;
        }
    }
    return res;
}

}  // namespace resid
