#include "steerkit/selection.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "steerkit/errors.hpp"
#include "steerkit/parallel.hpp"
#include "steerkit/simd/kernels.hpp"

namespace steerkit {
namespace {

int sign_of(double x) {
    return (x > 0.0) - (x < 0.0);
}

std::vector<double> unit_copy(std::span<const double> v) {
    std::vector<double> out(v.begin(), v.end());
    const double n = simd::norm(out);
    if (!(n > kDegeneracyEps)) {
        throw DegenerateError("cannot normalise a zero direction");
    }
    simd::scale(1.0 / n, out);
    return out;
}

}  // namespace

void SteeringVector::validate() const {
    if (unit_direction.empty()) {
        throw ValidationError("steering vector: empty direction");
    }
    const double n = simd::norm(unit_direction);
    if (!std::isfinite(n) || std::abs(n - 1.0) > 1e-9) {
        throw ValidationError("steering vector: direction is not unit norm (norm " + std::to_string(n) + ")");
    }
    if (!(scale > 0.0) || !std::isfinite(scale)) {
        throw ValidationError("steering vector: scale must be finite and > 0");
    }
}

VectorFile to_vector_file(const SteeringVector& sv) {
    sv.validate();
    return VectorFile{sv.method, sv.layer, sv.unit_direction, sv.scale, sv.rmse, sv.pearson_r, sv.trace_id};
}

SteeringVector from_vector_file(const VectorFile& vf) {
    vf.validate();
    SteeringVector sv;
    sv.layer = vf.layer;
    sv.unit_direction = vf.direction;
    sv.scale = vf.scale;
    sv.method = vf.method;
    sv.trace_id = vf.manifest_ref;
    sv.rmse = vf.rmse;
    sv.pearson_r = vf.pearson_r;
    return sv;
}

double scalar_projection(std::span<const double> activation, std::span<const double> unit_direction) {
    if (activation.size() != unit_direction.size()) {
        throw ValidationError("scalar_projection: dimension mismatch (" + std::to_string(activation.size()) + " vs " +
                              std::to_string(unit_direction.size()) + ")");
    }
    return simd::dot(activation, unit_direction);
}

std::vector<double> projections(const Trace& trace, std::span<const PromptId> ids, std::size_t layer,
                                std::span<const double> unit_direction) {
    if (unit_direction.size() != trace.d_model()) {
        throw ValidationError("projections: direction dimension " + std::to_string(unit_direction.size()) +
                              " != d_model " + std::to_string(trace.d_model()));
    }
    std::vector<double> out;
    out.reserve(ids.size());
    for (PromptId id : ids) {
        out.push_back(simd::dot(trace.activation(id, layer), unit_direction));
    }
    return out;
}

std::vector<double> disparities(const Trace& trace, std::span<const PromptId> ids) {
    std::vector<double> out;
    out.reserve(ids.size());
    for (PromptId id : ids) {
        out.push_back(trace.record(id).disparity);
    }
    return out;
}

double rmse_from(std::span<const double> projections, std::span<const double> scores) {
    if (projections.size() != scores.size()) {
        throw ValidationError("rmse: projections and scores differ in length");
    }
    if (scores.empty()) {
        throw DegenerateError("rmse: empty validation set");
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (sign_of(projections[i]) != sign_of(scores[i])) {
            acc += scores[i] * scores[i];
        }
    }
    return std::sqrt(acc / static_cast<double>(scores.size()));
}

double pearson(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) {
        throw ValidationError("pearson: series differ in length");
    }
    const std::size_t n = x.size();
    if (n < 2) {
        throw DegenerateError("pearson: need at least 2 points");
    }
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= static_cast<double>(n);
    my /= static_cast<double>(n);
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double dx = x[i] - mx;
        const double dy = y[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if (!(sxx > 0.0) || !(syy > 0.0)) {
        throw DegenerateError("pearson: undefined correlation (zero variance)");
    }
    return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

double rmse_separability(const CandidateVector& candidate, const Trace& trace, std::span<const PromptId> validation_ids) {
    const auto dir = unit_copy(candidate.direction);
    return rmse_from(projections(trace, validation_ids, candidate.layer, dir), disparities(trace, validation_ids));
}

double projection_correlation(const CandidateVector& candidate, const Trace& trace,
                              std::span<const PromptId> validation_ids) {
    const auto dir = unit_copy(candidate.direction);
    return pearson(projections(trace, validation_ids, candidate.layer, dir), disparities(trace, validation_ids));
}

std::size_t excluded_layer_count(std::size_t n_layers, double exclude_frac) {
    if (!(exclude_frac >= 0.0 && exclude_frac <= 1.0)) {
        throw ValidationError("exclude_frac must lie in [0, 1]");
    }
    // Slack absorbs representation error such as 0.05 * 40 = 2.0000000000000004.
    const double raw = exclude_frac * static_cast<double>(n_layers);
    const auto count = static_cast<std::size_t>(std::ceil(raw - 1e-9));
    return std::min(count, n_layers);
}

std::pair<SteeringVector, SelectionReport> select_steering_vector(std::span<const CandidateVector> candidates,
                                                                  const Trace& trace,
                                                                  std::span<const PromptId> validation_ids,
                                                                  double exclude_frac) {
    if (candidates.empty()) {
        throw ValidationError("select: no candidates");
    }
    if (validation_ids.empty()) {
        throw DegenerateError("select: empty validation set");
    }
    const std::size_t n_layers = trace.n_layers();
    const std::size_t n_excluded = excluded_layer_count(n_layers, exclude_frac);

    SelectionReport report;
    report.method = candidates.front().method;
    for (std::size_t l = n_layers - n_excluded; l < n_layers; ++l) {
        report.excluded_layers.push_back(l);
    }
    report.rows.resize(candidates.size());
    const auto scores = disparities(trace, validation_ids);

    parallel_for(candidates.size(), [&](std::size_t i) {
        const auto& c = candidates[i];
        LayerMetrics m;
        m.layer = c.layer;
        m.excluded = c.layer >= n_layers - n_excluded;
        m.degenerate = c.degenerate;
        if (c.degenerate) {
            m.rmse = std::numeric_limits<double>::quiet_NaN();
            m.pearson_r = std::numeric_limits<double>::quiet_NaN();
        } else {
            const auto proj = projections(trace, validation_ids, c.layer, unit_copy(c.direction));
            m.rmse = rmse_from(proj, scores);
            try {
                m.pearson_r = pearson(proj, scores);
            } catch (const DegenerateError&) {
                m.pearson_r = std::numeric_limits<double>::quiet_NaN();
            }
        }
        report.rows[i] = m;
    });

    std::size_t best = candidates.size();
    for (std::size_t i = 0; i < report.rows.size(); ++i) {
        const auto& m = report.rows[i];
        if (m.excluded || m.degenerate || !std::isfinite(m.rmse)) {
            continue;
        }
        if (best == candidates.size() || m.rmse < report.rows[best].rmse ||
            (m.rmse == report.rows[best].rmse && m.layer < report.rows[best].layer)) {
            best = i;
        }
    }
    if (best == candidates.size()) {
        throw DegenerateError("select: all layers excluded or degenerate");
    }

    const auto& chosen = candidates[best];
    report.chosen_layer = chosen.layer;

    SteeringVector sv;
    sv.layer = chosen.layer;
    sv.method = chosen.method;
    sv.trace_id = trace.manifest().model_id;
    sv.unit_direction = unit_copy(chosen.direction);
    sv.rmse = report.rows[best].rmse;
    sv.pearson_r = report.rows[best].pearson_r;
    if (std::isfinite(sv.pearson_r) && sv.pearson_r < 0.0) {
        simd::scale(-1.0, sv.unit_direction);
        report.flipped = true;
        sv.pearson_r = -sv.pearson_r;
        sv.rmse = rmse_from(projections(trace, validation_ids, sv.layer, sv.unit_direction), scores);
    }
    return {sv, report};
}

double calibration_slope(std::span<const double> projections, std::span<const double> scores, double delta) {
    if (projections.size() != scores.size()) {
        throw ValidationError("calibrate: projections and scores differ in length");
    }
    double num = 0.0, den = 0.0;
    std::size_t used = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (std::abs(scores[i]) > delta) {
            num += projections[i] * scores[i];
            den += scores[i] * scores[i];
            ++used;
        }
    }
    if (used == 0) {
        throw DegenerateError("calibration failed: no validation prompts with |s| > delta");
    }
    const double slope = num / den;
    if (!(slope > 0.0) || !std::isfinite(slope)) {
        throw DegenerateError("calibration failed: non-positive projection/disparity slope " + std::to_string(slope));
    }
    return slope;
}

SteeringVector calibrate_scale(const SteeringVector& sv, const Trace& trace, std::span<const PromptId> validation_ids,
                               double delta) {
    SteeringVector out = sv;
    out.scale = calibration_slope(projections(trace, validation_ids, sv.layer, sv.unit_direction),
                                  disparities(trace, validation_ids), delta);
    return out;
}

}  // namespace steerkit
