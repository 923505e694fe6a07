#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "resid/core.hpp"
#include "resid/optim.hpp"
#include "resid/spectra.hpp"
#include "resid/trace.hpp"

namespace resid {

using BasisMap = std::map<UnitId, PcaBasis>;

/// Per-unit spectral scaling vectors.
struct LambdaSet {
    std::map<UnitId, Vector> entries;
    bool recenter = true;

    /// All-ones vectors sized to each basis.
    static LambdaSet ones(const BasisMap& bases, const std::vector<UnitId>& units, bool recenter = true);
    std::int64_t param_count() const;
};

enum class RdVariant : std::uint8_t { RD, RD_star, RD_Y };
std::string_view to_string(RdVariant v);
RdVariant parse_rd_variant(std::string_view text);

struct RdConfig {
    RdVariant variant = RdVariant::RD;
    double evr_truncation = 0.9;  // RD_star only
    bool include_embed = false;
    std::string basis_source = "train";
    bool recenter = true;
};

void validate(const RdConfig& cfg);
nlohmann::ordered_json to_json(const RdConfig& cfg);

/// ((x - mu) Phi^T diag(lambda)) Phi, plus mu when `recenter`.
Matrix rd_transform(const Matrix& x, const PcaBasis& basis, const Vector& lambda, bool recenter);

/// Smallest leading sub-basis with cumulative evr >= threshold.
PcaBasis truncate_basis(const PcaBasis& basis, double evr_threshold);

/// Units that carry a lambda vector under `cfg`, in canonical order.
std::vector<UnitId> rd_units(int n_layers, int heads_per_layer, const RdConfig& cfg);

/// PCA bases of the reweighted units fitted on `reference` (truncated for RD_star).
BasisMap fit_rd_bases(const SplitData& reference, int n_layers, int heads_per_layer, const RdConfig& cfg);

/// Modified output encoding for `split`.
///
/// RD sums the transformed heads and mlps (and embed when included) plus the
/// untouched remaining units. RD_star transforms heads only. RD_Y transforms
/// the stored output unit.
UnitTensor rd_output(const SplitData& split, const BasisMap& bases, const LambdaSet& lambdas, const RdConfig& cfg);

/// Number of lambda entries. Without bases each head counts d_head and each
/// other unit d_out; RD_star then reports the untruncated upper bound.
std::int64_t rd_param_count(const TraceManifest& manifest, const RdConfig& cfg, const BasisMap* bases = nullptr);

/// Split data projected once onto the bases: Y' = K + sum_u (C_u . lambda_u) Phi_u.
class RdProblem {
public:
    RdProblem(const SplitData& split, const BasisMap& bases, const RdConfig& cfg);

    const std::vector<UnitId>& units() const { return units_; }
    Eigen::Index n_params() const { return n_params_; }
    Eigen::Index n_samples() const { return constant_.rows(); }

    Vector pack(const LambdaSet& lambdas) const;
    LambdaSet unpack(const Vector& params) const;

    /// Rows `rows` of Y' (all rows when empty).
    Matrix forward(const Vector& params, std::span<const Eigen::Index> rows = {}) const;

    /// Mean zero-shot loss over `rows`; `grad` gets d(loss)/d(params).
    double loss_and_grad(const Vector& params, std::span<const Eigen::Index> rows, std::span<const int> labels,
                         const Matrix& unit_classes, double tau, Vector* grad) const;

private:
    std::vector<UnitId> units_;
    std::vector<Eigen::Index> offsets_;
    std::vector<Matrix> coords_;  // n x m_u
    std::vector<Matrix> phis_;    // m_u x d
    Matrix constant_;             // n x d
    Eigen::Index n_params_ = 0;
    bool recenter_ = true;
};

struct RdGradient {
    double loss = 0.0;
    LambdaSet grad;
};

/// Loss and gradient over every sample of `batch`.
RdGradient rd_loss_and_grad(const LambdaSet& lambdas, const SplitData& batch, const BasisMap& bases,
                            const TaskSpec& task, std::span<const int> labels, const RdConfig& cfg, double tau);

struct ResidualFit {
    LambdaSet lambdas;
    TrainResult training;
};

/// Trains lambda (init 1) on `train` and keeps the best-validation vector.
ResidualFit fit_residual(const SplitData& train, const SplitData& val, const BasisMap& bases, const TaskSpec& task,
                         const RdConfig& cfg, const OptimConfig& optim);

/// Directory with index.json and one RDT1 vector per unit.
void write_lambda_set(const std::filesystem::path& dir, const LambdaSet& lambdas);
LambdaSet read_lambda_set(const std::filesystem::path& dir);

/// CSV with header "epoch,train_loss,val_acc".
void write_training_log(std::ostream& out, const std::vector<EpochMetrics>& history);

}  // namespace resid
