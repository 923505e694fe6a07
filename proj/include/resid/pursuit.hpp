#pragma once

// Greedy sparse recovery over a dictionary of unit-norm atoms.
//
// All three algorithms select one atom per step (never repeating one) and keep
// the residual orthogonal to every selected atom. Ties in the selection
// criterion go to the lowest atom index; a near tie (gap <= 1e-9) is flagged.

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "resid/core.hpp"

namespace resid {

struct Dictionary {
    Matrix atoms;  // k x d, unit rows
    std::vector<std::string> labels;

    Eigen::Index size() const { return atoms.rows(); }
    Eigen::Index dim() const { return atoms.cols(); }

    /// Builds a dictionary, normalizing rows. Throws on zero rows or label count mismatch.
    static Dictionary from_rows(const Matrix& rows, std::vector<std::string> labels);
};

/// Throws ValidationError unless k >= 1, labels match, and rows are unit norm within 1e-6.
void validate(const Dictionary& dict);

/// JSON lines: {"label": ..., "vector": [...]} or {"label": ..., "path": "atom.rdt"}
/// (path relative to the file). Atoms are normalized on load.
Dictionary load_dictionary(const std::filesystem::path& path);

/// Writes the inline "vector" form of load_dictionary's format.
void write_dictionary(const std::filesystem::path& path, const Dictionary& dict);

enum class PursuitStatus { completed, exact_recovery, rank_deficient };

struct PursuitResult {
    std::vector<int> support;           // selection order
    Matrix reconstruction;              // same shape as the signal
    Matrix residual;                    // signal - reconstruction
    std::vector<double> per_step_criterion;
    std::vector<double> residual_norms; // Frobenius norm after each step
    PursuitStatus status = PursuitStatus::completed;
    bool near_tie = false;
};

enum class SelectionCriterion { l1, variance };

/// Orthogonal matching pursuit on a single d-vector; argmax |<atom, residual>|
/// followed by a least-squares refit on the support.
PursuitResult omp(const Vector& signal, const Dictionary& dict, int n_iters);

/// Simultaneous OMP on an n x d signal. Score of atom j is the l1 norm (or the
/// population variance) of row j of D R^T; refit is least squares of the signal
/// on the selected atoms.
PursuitResult somp(const Matrix& signal, const Dictionary& dict, int n_iters,
                   SelectionCriterion criterion = SelectionCriterion::l1);

struct TextSpanOptions {
    /// Project atoms on the span of the signal's top-r principal components (then
    /// renormalize) before the search. Unset means no projection.
    std::optional<Eigen::Index> project_dict_rank;
    SelectionCriterion criterion = SelectionCriterion::variance;
};

/// TextSpan: variance selection on D_t R_t^T, then deflation of both the
/// residual and the working dictionary along the picked (deflated) atom.
PursuitResult textspan(const Matrix& signal, const Dictionary& dict, int n_iters,
                       const TextSpanOptions& options = {});

/// Atoms projected on the span of the signal's top `rank` principal components
/// and renormalized. Atoms orthogonal to that span become zero rows.
Dictionary project_dictionary(const Dictionary& dict, const Matrix& signal, Eigen::Index rank);

enum class SetSimilarity {
    mean_cross,      // mean cosine over all pairs (a, b)
    greedy_matched,  // greedy one-to-one matching on cosine, mean of matched pairs
};

/// Set-to-set cosine similarity.
double set_similarity(const Matrix& set_a, const Matrix& set_b, SetSimilarity mode = SetSimilarity::mean_cross);

/// |sim(A, B) - mean(pop)| / std(pop), with pop the cosines between every
/// member of A and every atom of the dictionary. Throws NumericError when the
/// background spread is zero.
double agreement_zscore(const Matrix& set_a, const Matrix& set_b, const Dictionary& dict,
                        SetSimilarity mode = SetSimilarity::mean_cross);

}  // namespace resid
