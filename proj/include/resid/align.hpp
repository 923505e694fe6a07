#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "resid/core.hpp"
#include "resid/optim.hpp"
#include "resid/trace.hpp"

namespace resid {

// ---- zero-shot classification ----

/// Predicted class per row: argmax of cosine to the class encodings, ties to
/// the lowest class. Throws NumericError on a zero-norm row.
std::vector<int> zeroshot_predict(const Matrix& enc, const TaskSpec& task);

/// Fraction of rows whose prediction equals the label.
double zeroshot_eval(const Matrix& enc, const TaskSpec& task, std::span<const int> labels);

/// Mean cross-entropy over tau * cosine logits for the rows in `batch`.
///
/// `unit_classes` holds the l2-normalized class encodings. When `grad` is
/// non-null it receives d(loss)/d(enc row) for each batch row (|batch| x d).
double zeroshot_loss(const Matrix& enc, const Matrix& unit_classes, std::span<const int> labels, double tau,
                     Matrix* grad);

/// Per-class mean of `enc`. Class count is max(label)+1 unless given.
TaskSpec build_prototypes(const Matrix& enc, std::span<const int> labels, int n_classes = -1);

// ---- scorers ----

enum class ScoreMethod : std::uint8_t { U, UT, S };
std::string_view to_string(ScoreMethod m);
ScoreMethod parse_score_method(std::string_view text);

struct UnitScore {
    UnitId unit;
    ScoreMethod method = ScoreMethod::U;
    double value = 0.0;
};

/// Sample-averaged Pearson correlation across coordinates between matching
/// rows of `a` and `b`. Throws NumericError on a constant row.
double mean_row_pearson(const Matrix& a, const Matrix& b);

/// Orthonormal basis (rows) of span(task.encodings).
Matrix task_span_basis(const TaskSpec& task);

UnitScore score_unsupervised(const UnitTensor& head, const UnitTensor& output);
UnitScore score_task_conditioned(const UnitTensor& head, const UnitTensor& output, const TaskSpec& task);
UnitScore score_supervised(const UnitTensor& head, const TaskSpec& task, std::span<const int> labels);

/// Scores every head of the split, one work item per head.
std::vector<UnitScore> score_heads(const SplitData& split, ScoreMethod method, const TaskSpec& task, int threads = 1);

// ---- selections ----

struct Selection {
    std::vector<UnitId> units;  // sorted ascending
    std::string method;
    int k = 0;
};

/// Number of units kept for a fraction of n: ceil(fraction * n).
int topk_count(double fraction, std::size_t n);

/// Highest scores win; ties go to the lower (layer, index).
Selection select_topk(const std::vector<UnitScore>& scores, double fraction = 0.05);

/// One uniform k-subset of `heads` per seed.
std::vector<Selection> random_selection(const std::vector<UnitId>& heads, int k, std::span<const std::uint64_t> seeds);

/// Elementwise sum of the selected units of `split`.
UnitTensor partial_output(const Selection& selection, const SplitData& split);

/// |a & b| / |a | b|, 1 when both are empty.
double selection_jaccard(const Selection& a, const Selection& b);

// ---- trained aligners ----

/// Learned scalar weight per head: Y' = sum_h w_h H_h.
struct UnitWeights {
    std::vector<UnitId> heads;
    Vector weights;
    TrainResult training;
};

/// Weighted sum of the given heads of `split`.
Matrix weighted_heads(const SplitData& split, const std::vector<UnitId>& heads, const Vector& weights);

/// Trains one weight per head (init 1) on `train`, early-stopping on `val`.
/// Throws ValidationError("degenerate task") when all class encodings point
/// the same way.
UnitWeights optimize_unit_weights(const SplitData& train, const SplitData& val, const TaskSpec& task,
                                  const OptimConfig& cfg);

/// Affine map Y' = Y M + b on the output encoding.
struct LinearAligner {
    Matrix map;      // d x d
    RowVector bias;  // d
    TrainResult training;

    Matrix apply(const Matrix& enc) const;
    std::int64_t param_count() const { return map.size() + bias.size(); }
    std::int64_t param_count_without_bias() const { return map.size(); }
};

/// Trains M (init identity) and b (init 0).
LinearAligner fit_linear_aligner(const Matrix& train_enc, std::span<const int> train_labels, const Matrix& val_enc,
                                 std::span<const int> val_labels, const TaskSpec& task, const OptimConfig& cfg);

/// Throws ValidationError("degenerate task") if every normalized class
/// encoding is the same vector.
void require_nondegenerate(const TaskSpec& task);

}  // namespace resid
