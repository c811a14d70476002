#include "steerkit/intervention.hpp"

#include <cmath>
#include <string>

#include "steerkit/errors.hpp"
#include "steerkit/simd/kernels.hpp"

namespace steerkit {
namespace {

void require_unit(std::span<const double> v) {
    const double n = simd::norm(v);
    if (!std::isfinite(n) || std::abs(n - 1.0) > kUnitNormTolerance) {
        throw ValidationError("projection edit needs a unit direction (norm " + std::to_string(n) + ")");
    }
}

void require_same_size(std::size_t a, std::size_t b) {
    if (a != b) {
        throw ValidationError("dimension mismatch: activation " + std::to_string(a) + " vs direction " +
                              std::to_string(b));
    }
}

}  // namespace

std::string_view mode_name(InterventionMode mode) {
    return mode == InterventionMode::projection_edit ? "projection_edit" : "activation_addition";
}

InterventionMode parse_mode(std::string_view name) {
    if (name == "projection_edit" || name == "projection") {
        return InterventionMode::projection_edit;
    }
    if (name == "activation_addition" || name == "addition") {
        return InterventionMode::activation_addition;
    }
    throw ValidationError("unknown intervention mode '" + std::string(name) + "'");
}

void project_edit_inplace(std::span<double> activation, std::span<const double> unit_direction, double lambda) {
    require_same_size(activation.size(), unit_direction.size());
    require_unit(unit_direction);
    simd::active().project_edit(activation.data(), unit_direction.data(), lambda, activation.size());
}

std::vector<double> project_edit(std::span<const double> activation, std::span<const double> unit_direction,
                                 double lambda) {
    std::vector<double> out(activation.begin(), activation.end());
    project_edit_inplace(out, unit_direction, lambda);
    return out;
}

void activation_addition_inplace(std::span<double> activation, std::span<const double> direction, double c) {
    require_same_size(activation.size(), direction.size());
    simd::axpy(c, direction, activation);
}

std::vector<double> activation_addition(std::span<const double> activation, std::span<const double> direction,
                                        double c) {
    std::vector<double> out(activation.begin(), activation.end());
    activation_addition_inplace(out, direction, c);
    return out;
}

SteeredModel::SteeredModel(toy::ToyModel model, SteeringVector vector, InterventionConfig config)
    : model_(std::move(model)), vector_(std::move(vector)), config_(config) {
    vector_.validate();
    layer_ = config_.layer.value_or(vector_.layer);
    if (layer_ >= model_.config().n_layers) {
        throw ValidationError("intervention layer " + std::to_string(layer_) + " outside model with " +
                              std::to_string(model_.config().n_layers) + " layers");
    }
    if (vector_.unit_direction.size() != model_.config().d_model) {
        throw ValidationError("steering vector dimension " + std::to_string(vector_.unit_direction.size()) +
                              " != model d_model " + std::to_string(model_.config().d_model));
    }
    if (!std::isfinite(config_.coefficient)) {
        throw ValidationError("intervention coefficient must be finite");
    }
    raw_ = config_.use_calibrated_scale ? config_.coefficient * vector_.scale : config_.coefficient;
}

std::vector<toy::Hook> SteeredModel::hooks(std::span<const toy::Hook> extra) const {
    std::vector<toy::Hook> out;
    out.reserve(extra.size() + 1);
    // The hook copies what it needs so the handle may be moved freely.
    const auto dir = vector_.unit_direction;
    const double raw = raw_;
    if (config_.mode == InterventionMode::projection_edit) {
        out.push_back(toy::Hook::editor(layer_, toy::PositionScope::all_tokens, [dir, raw](std::span<double> h) {
            simd::active().project_edit(h.data(), dir.data(), raw, h.size());
        }));
    } else {
        out.push_back(toy::Hook::editor(layer_, toy::PositionScope::all_tokens,
                                        [dir, raw](std::span<double> h) { simd::axpy(raw, dir, h); }));
    }
    out.insert(out.end(), extra.begin(), extra.end());
    return out;
}

toy::ForwardResult SteeredModel::forward(std::span<const TokenId> tokens, std::span<const toy::Hook> extra) const {
    auto result = model_.forward(tokens, hooks(extra));
    result.captures.erase(result.captures.begin());
    return result;
}

std::vector<TokenId> SteeredModel::generate(std::span<const TokenId> prompt, const toy::GenerationOptions& opts) const {
    return toy::generate(model_, prompt, opts, hooks());
}

std::vector<double> steered_forward(const toy::ToyModel& model, std::span<const TokenId> tokens,
                                    const SteeringVector& vector, const InterventionConfig& config) {
    return SteeredModel(model, vector, config).forward(tokens).distribution;
}

}  // namespace steerkit
