#pragma once

// Bias metrics, the three-option choice task, the label frequency-gap
// harness and the delta-threshold sweep.

#include <array>
#include <cstddef>
#include <map>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "steerkit/intervention.hpp"
#include "steerkit/scoring.hpp"
#include "steerkit/selection.hpp"
#include "steerkit/toymodel.hpp"
#include "steerkit/traces.hpp"

namespace steerkit {

/// Root mean square of disparity scores. Throws on empty input.
double bias_score(std::span<const double> scores);

struct EvalPrompt {
    PromptId id = 0;
    std::vector<TokenId> tokens;
};

/// Rebuilds token sequences for the trace prompts of one split from their text.
std::vector<EvalPrompt> eval_prompts(const toy::ToyModel& model, const Trace& trace, Split split);

struct PromptDelta {
    PromptId id = 0;
    double s_before = 0.0;
    double s_after = 0.0;
    /// Baseline projection onto the steering direction at the steering layer.
    double comp_before = 0.0;
};

struct BiasReport {
    double baseline_bias = 0.0;
    double steered_bias = 0.0;
    std::vector<PromptDelta> deltas;
    double vector_rmse = 0.0;
    double vector_pearson_r = 0.0;
    std::size_t vector_layer = 0;
    double lambda = 0.0;

    /// 1 - steered / baseline.
    double reduction() const;
    /// Pearson r between (s_before - s_after) and comp_before.
    double delta_projection_correlation() const;
};

/// Scores every prompt with and without the projection edit (default lambda 0).
BiasReport run_debias_eval(const toy::ToyModel& model, std::span<const EvalPrompt> prompts,
                           const SteeringVector& vector, double lambda = 0.0);

/// 9 evenly spaced points on [-1, 1].
std::vector<double> default_lambda_grid();

struct ChoiceTaskSpec {
    std::vector<std::vector<TokenId>> prompts;
    /// A-option, B-option, neutral option; pairwise disjoint.
    std::array<std::vector<TokenId>, 3> options;
    std::vector<double> lambdas = default_lambda_grid();

    void validate() const;
};

struct ChoiceRow {
    double lambda = 0.0;
    std::array<double, 3> mean{};
    std::array<double, 3> stddev{};
    /// Mean raw disparity P(A) - P(B) over all prompts.
    double mean_disparity = 0.0;
    std::size_t n_used = 0;
    std::size_t n_excluded = 0;
};

struct ChoiceTaskReport {
    std::vector<ChoiceRow> rows;
};

/// p_i / (p_A + p_B + p_N); false when the total mass is zero.
bool normalize_options(const std::array<double, 3>& raw, std::array<double, 3>& out);

ChoiceTaskReport choice_task_eval(const toy::ToyModel& model, const ChoiceTaskSpec& spec, const SteeringVector& vector,
                                  InterventionMode mode = InterventionMode::projection_edit);

enum class Group { a, b };

struct LabeledGeneration {
    Group group = Group::a;
    std::vector<std::string> labels;
};

struct GapRow {
    std::string label;
    std::size_t count_a_before = 0;
    std::size_t count_b_before = 0;
    std::size_t count_a_after = 0;
    std::size_t count_b_after = 0;

    long gap_before() const { return static_cast<long>(count_a_before) - static_cast<long>(count_b_before); }
    long gap_after() const { return static_cast<long>(count_a_after) - static_cast<long>(count_b_after); }
};

struct FrequencyGapReport {
    /// Sorted by |gap_before| descending, then label.
    std::vector<GapRow> rows;
};

FrequencyGapReport frequency_gap_eval(std::span<const LabeledGeneration> before,
                                      std::span<const LabeledGeneration> after = {});

/// Labels are tokens found in `label_vocab`, by exact id.
std::vector<std::string> extract_labels(std::span<const TokenId> generated, const std::map<TokenId, std::string>& label_vocab);

struct GapHarnessOptions {
    std::size_t prompts_per_group = 100;
    toy::GenerationOptions generation;
    std::uint64_t seed = 0;
};

/// Toy label-generation study: group A prompts carry positive signal tokens,
/// group B negative ones; generations are decoded with and without the
/// lambda = 0 edit and labelled against the concept and neutral tokens.
FrequencyGapReport toy_frequency_gap(const toy::ToyModel& model, const SteeringVector& vector,
                                     const GapHarnessOptions& opts);

std::vector<double> default_delta_grid();

struct SweepRow {
    double delta = 0.0;
    bool ok = false;
    std::string error;
    std::size_t n_a = 0;
    std::size_t n_b = 0;
    std::size_t n_o = 0;
    std::size_t layer = 0;
    double pearson_r = 0.0;
    double baseline_bias = 0.0;
    double steered_bias = 0.0;
};

struct SweepReport {
    Method method = Method::wmd;
    std::vector<SweepRow> rows;
    /// max - min steered bias over successful rows.
    double spread = 0.0;
};

/// Re-partitions the train split at each delta, re-extracts, re-selects on the
/// validation split and scores the lambda = 0 edit on the validation prompts.
SweepReport threshold_sweep(const Trace& trace, const toy::ToyModel& model, std::span<const double> deltas,
                            Method method, double exclude_frac = kDefaultExcludeFrac);

void write_csv(std::ostream& os, const SelectionReport& r);
void write_csv(std::ostream& os, const BiasReport& r);
void write_csv(std::ostream& os, const ChoiceTaskReport& r);
void write_csv(std::ostream& os, const FrequencyGapReport& r);
void write_csv(std::ostream& os, const SweepReport& r);
/// (comp_before, s_before, s_after) per prompt.
void write_scatter_csv(std::ostream& os, const BiasReport& r);

nlohmann::json to_json(const SelectionReport& r);
nlohmann::json to_json(const BiasReport& r);
nlohmann::json to_json(const ChoiceTaskReport& r);
nlohmann::json to_json(const FrequencyGapReport& r);
nlohmann::json to_json(const SweepReport& r);

}  // namespace steerkit
