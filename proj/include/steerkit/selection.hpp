#pragma once

// Validation-split scoring of candidate vectors, steering-layer selection and
// lambda calibration.

#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "steerkit/extraction.hpp"
#include "steerkit/scoring.hpp"
#include "steerkit/traces.hpp"

namespace steerkit {

inline constexpr double kDefaultExcludeFrac = 0.05;

struct LayerMetrics {
    std::size_t layer = 0;
    double rmse = 0.0;
    double pearson_r = 0.0;  // NaN when undefined (zero variance)
    bool degenerate = false;
    bool excluded = false;
};

struct SelectionReport {
    Method method = Method::wmd;
    std::vector<LayerMetrics> rows;
    std::size_t chosen_layer = 0;
    std::vector<std::size_t> excluded_layers;
    /// Chosen direction was negated so its validation correlation is >= 0.
    bool flipped = false;
};

struct SteeringVector {
    std::size_t layer = 0;
    std::vector<double> unit_direction;
    /// Projection units per unit disparity; lambda * scale is the raw projection.
    double scale = 1.0;
    Method method = Method::wmd;
    std::string trace_id;
    double rmse = 0.0;
    double pearson_r = 0.0;

    void validate() const;
};

VectorFile to_vector_file(const SteeringVector& sv);
SteeringVector from_vector_file(const VectorFile& vf);

double scalar_projection(std::span<const double> activation, std::span<const double> unit_direction);

/// Projections of the given prompts' layer activations on a unit direction.
std::vector<double> projections(const Trace& trace, std::span<const PromptId> ids, std::size_t layer,
                                std::span<const double> unit_direction);
std::vector<double> disparities(const Trace& trace, std::span<const PromptId> ids);

/// sqrt(mean over prompts of [sign(comp) != sign(s)] * s^2).
double rmse_from(std::span<const double> projections, std::span<const double> scores);
/// Pearson correlation; DegenerateError for fewer than 2 points or zero variance.
double pearson(std::span<const double> x, std::span<const double> y);

double rmse_separability(const CandidateVector& candidate, const Trace& trace, std::span<const PromptId> validation_ids);
double projection_correlation(const CandidateVector& candidate, const Trace& trace,
                              std::span<const PromptId> validation_ids);

/// ceil(frac * n_layers): how many top layers are never selected.
std::size_t excluded_layer_count(std::size_t n_layers, double exclude_frac);

/// Lowest-RMSE eligible layer (ties to the lower index), direction normalised
/// and oriented so validation Pearson r >= 0.
std::pair<SteeringVector, SelectionReport> select_steering_vector(std::span<const CandidateVector> candidates,
                                                                  const Trace& trace,
                                                                  std::span<const PromptId> validation_ids,
                                                                  double exclude_frac = kDefaultExcludeFrac);

/// Least-squares slope through the origin of projection on disparity over
/// prompts with |s| > delta.
double calibration_slope(std::span<const double> projections, std::span<const double> scores,
                         double delta = kDefaultDelta);
SteeringVector calibrate_scale(const SteeringVector& sv, const Trace& trace, std::span<const PromptId> validation_ids,
                               double delta = kDefaultDelta);

}  // namespace steerkit
