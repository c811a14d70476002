#pragma once

// Residual-stream edits: the projection edit h - (h.v)v + lambda v and the
// activation-addition baseline h + c u, plus a steered model handle that
// applies one of them at every position of a single layer.

#include <cstddef>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "steerkit/selection.hpp"
#include "steerkit/toymodel.hpp"

namespace steerkit {

/// Tolerance on |v| - 1 accepted by the projection edit.
inline constexpr double kUnitNormTolerance = 1e-6;

enum class InterventionMode { projection_edit, activation_addition };

std::string_view mode_name(InterventionMode mode);
InterventionMode parse_mode(std::string_view name);

struct InterventionConfig {
    InterventionMode mode = InterventionMode::projection_edit;
    /// Target layer; the steering vector's own layer when unset.
    std::optional<std::size_t> layer;
    /// lambda for projection_edit, c for activation_addition.
    double coefficient = 0.0;
    /// Multiply the coefficient by the vector's calibrated scale.
    bool use_calibrated_scale = true;
};

std::vector<double> project_edit(std::span<const double> activation, std::span<const double> unit_direction,
                                 double lambda);
void project_edit_inplace(std::span<double> activation, std::span<const double> unit_direction, double lambda);

std::vector<double> activation_addition(std::span<const double> activation, std::span<const double> direction,
                                        double c);
void activation_addition_inplace(std::span<double> activation, std::span<const double> direction, double c);

/// A model bound to one steering edit. Immutable; safe to share across threads.
class SteeredModel {
public:
    SteeredModel(toy::ToyModel model, SteeringVector vector, InterventionConfig config);

    const toy::ToyModel& model() const { return model_; }
    const SteeringVector& vector() const { return vector_; }
    const InterventionConfig& config() const { return config_; }
    std::size_t layer() const { return layer_; }
    /// Coefficient in activation units, after calibration.
    double raw_coefficient() const { return raw_; }

    /// The edit hook; `extra` hooks (e.g. captures) are appended after it.
    std::vector<toy::Hook> hooks(std::span<const toy::Hook> extra = {}) const;

    toy::ForwardResult forward(std::span<const TokenId> tokens, std::span<const toy::Hook> extra = {}) const;
    std::vector<TokenId> generate(std::span<const TokenId> prompt, const toy::GenerationOptions& opts) const;

private:
    toy::ToyModel model_;
    SteeringVector vector_;
    InterventionConfig config_;
    std::size_t layer_ = 0;
    double raw_ = 0.0;
};

std::vector<double> steered_forward(const toy::ToyModel& model, std::span<const TokenId> tokens,
                                    const SteeringVector& vector, const InterventionConfig& config);

}  // namespace steerkit
