#pragma once

// End-to-end composition: toy trace synthesis, model reconstruction from a
// trace manifest, and the extract -> select -> calibrate -> evaluate run.

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "steerkit/eval.hpp"
#include "steerkit/selection.hpp"
#include "steerkit/toymodel.hpp"
#include "steerkit/traces.hpp"

namespace steerkit {

struct ToygenOptions {
    std::size_t n_prompts = 800;
    /// Share of prompts without any signal token.
    double no_signal_frac = 0.15;
    double train_frac = 0.5;
    std::uint64_t seed = 7;
    std::string model_id = "toy";
};

/// Synthesises prompts over the model's signal levels, scores them and
/// captures last-token activations at every layer.
Trace make_toy_trace(const toy::ToyModel& model, const ToygenOptions& opts);

/// Rebuilds the toy model recorded in a trace manifest.
toy::ToyModel model_from_manifest(const TraceManifest& manifest);

struct MethodResult {
    Method method = Method::wmd;
    SteeringVector vector;
    SelectionReport selection;
    BiasReport bias;
};

struct PipelineOptions {
    std::vector<Method> methods{Method::wmd};
    double delta = kDefaultDelta;
    double exclude_frac = kDefaultExcludeFrac;
    std::optional<std::size_t> layer_override;
};

/// Partition the train split, extract, select and calibrate on the validation
/// split, then score the lambda = 0 edit on the validation prompts.
std::vector<MethodResult> run_pipeline(const Trace& trace, const toy::ToyModel& model, const PipelineOptions& opts);

/// Extraction, selection and calibration only (no live model needed).
std::pair<SteeringVector, SelectionReport> fit_vector(const Trace& trace, Method method, double delta,
                                                      double exclude_frac,
                                                      std::optional<std::size_t> layer_override = std::nullopt);

std::vector<PromptId> split_ids(const Trace& trace, Split split);

}  // namespace steerkit
