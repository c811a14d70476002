#include "steerkit/cli.hpp"

#include <cstdlib>
#include <fstream>
#include <functional>
#include <iomanip>

#include <CLI11.hpp>

#include "steerkit/eval.hpp"
#include "steerkit/extraction.hpp"
#include "steerkit/intervention.hpp"
#include "steerkit/parallel.hpp"
#include "steerkit/pipeline.hpp"
#include "steerkit/selection.hpp"
#include "steerkit/simd/kernels.hpp"
#include "steerkit/traces.hpp"

namespace steerkit::cli {
namespace fs = std::filesystem;

namespace {

/// Error raised inside a named stage; the stage is reported with the message.
class StageError : public Error {
public:
    StageError(std::string stage, const std::string& what, bool usage)
        : Error(stage + ": " + what), usage_(usage) {}
    bool usage() const { return usage_; }

private:
    bool usage_;
};

template <typename F>
auto stage(const std::string& name, F&& fn) -> decltype(fn()) {
    try {
        return fn();
    } catch (const StageError&) {
        throw;
    } catch (const UsageError& e) {
        throw StageError(name, e.what(), true);
    } catch (const std::exception& e) {
        throw StageError(name, e.what(), false);
    }
}

int guarded(const RunConfig& cfg, std::ostream& err, const std::function<void()>& body) {
    try {
        if (cfg.threads > 0) {
            set_max_threads(cfg.threads);
        }
        body();
        return kExitOk;
    } catch (const UsageError& e) {
        err << "steerkit " << cfg.subcommand << ": " << e.what() << '\n';
        return kExitUsage;
    } catch (const StageError& e) {
        err << "steerkit " << cfg.subcommand << ": " << e.what() << '\n';
        return e.usage() ? kExitUsage : kExitInternal;
    } catch (const std::exception& e) {
        err << "steerkit " << cfg.subcommand << ": " << e.what() << '\n';
        return kExitInternal;
    }
}

void require_trace(const RunConfig& cfg) {
    if (cfg.trace.empty()) {
        throw UsageError("--trace is required");
    }
    if (!fs::is_directory(cfg.trace)) {
        throw UsageError("trace directory not found: " + cfg.trace.string());
    }
}

void require_vector(const RunConfig& cfg) {
    if (cfg.vector.empty()) {
        throw UsageError("--vector is required");
    }
    if (!fs::is_regular_file(cfg.vector)) {
        throw UsageError("vector file not found: " + cfg.vector.string());
    }
}

std::uint64_t require_seed(const RunConfig& cfg) {
    if (!cfg.seed) {
        throw UsageError("--seed is required for " + cfg.subcommand);
    }
    return *cfg.seed;
}

void require_delta(const RunConfig& cfg) {
    if (!(cfg.delta >= 0.0) || !std::isfinite(cfg.delta)) {
        throw UsageError("--delta must be a finite value >= 0");
    }
}

std::vector<Method> methods_of(const RunConfig& cfg) {
    if (cfg.method == "both") {
        return {Method::wmd, Method::md};
    }
    try {
        return {parse_method(cfg.method)};
    } catch (const std::exception&) {
        throw UsageError("--method must be wmd, md or both (got '" + cfg.method + "')");
    }
}

bool wants(const RunConfig& cfg, const std::string& format) {
    return std::find(cfg.formats.begin(), cfg.formats.end(), format) != cfg.formats.end();
}

fs::path out_dir(const RunConfig& cfg) {
    const fs::path dir = cfg.out.empty() ? default_out(cfg.subcommand) : cfg.out;
    fs::create_directories(dir);
    return dir;
}

void write_text(const fs::path& path, const std::function<void(std::ostream&)>& fn) {
    std::ofstream os(path);
    if (!os) {
        throw Error("cannot open " + path.string() + " for writing");
    }
    fn(os);
    if (!os) {
        throw Error("failed writing " + path.string());
    }
}

void write_json(const fs::path& path, const nlohmann::json& j) {
    write_text(path, [&](std::ostream& os) { os << j.dump(2) << '\n'; });
}

template <typename Report>
void write_report(const RunConfig& cfg, const fs::path& dir, const std::string& stem, const Report& r) {
    if (wants(cfg, "csv")) {
        write_text(dir / (stem + ".csv"), [&](std::ostream& os) { write_csv(os, r); });
    }
    if (wants(cfg, "json")) {
        write_json(dir / (stem + ".json"), to_json(r));
    }
}

void echo_config(const RunConfig& cfg, const fs::path& dir) {
    write_json(dir / "run_config.json", to_json(cfg));
}

Trace load_trace(const RunConfig& cfg) {
    return stage("read trace", [&] { return read_trace(cfg.trace); });
}

toy::ToyModel load_model(const Trace& trace) {
    return stage("load model", [&] { return model_from_manifest(trace.manifest()); });
}

SteeringVector load_vector(const RunConfig& cfg) {
    return stage("read vector", [&] { return from_vector_file(read_vector_file(cfg.vector)); });
}

ChoiceTaskSpec choice_spec(const toy::ToyModel& model, const Trace& trace) {
    ChoiceTaskSpec spec;
    for (auto& p : eval_prompts(model, trace, Split::validation)) {
        spec.prompts.push_back(std::move(p.tokens));
    }
    spec.options = {model.plant().concept_a_tokens, model.plant().concept_b_tokens, model.plant().neutral_tokens};
    return spec;
}

std::string stem(const char* base, Method m) {
    return std::string(base) + "_" + std::string(method_name(m));
}

}  // namespace

nlohmann::json to_json(const RunConfig& cfg) {
    nlohmann::json j = {{"subcommand", cfg.subcommand},
                        {"trace", cfg.trace.string()},
                        {"vector", cfg.vector.string()},
                        {"method", cfg.method},
                        {"delta", cfg.delta},
                        {"lambda", cfg.lambda},
                        {"raw_lambda", cfg.raw_lambda},
                        {"out", cfg.out.string()},
                        {"formats", cfg.formats},
                        {"exclude_frac", cfg.exclude_frac},
                        {"threads", cfg.threads},
                        {"mode", cfg.mode},
                        {"preset", cfg.preset},
                        {"n_prompts", cfg.n_prompts}};
    j["seed"] = cfg.seed ? nlohmann::json(*cfg.seed) : nlohmann::json(nullptr);
    j["layer_override"] = cfg.layer_override ? nlohmann::json(*cfg.layer_override) : nlohmann::json(nullptr);
    return j;
}

fs::path default_out(const std::string& subcommand) {
    const char* root = std::getenv(kOutEnv);
    const fs::path base = (root != nullptr && *root != '\0') ? fs::path(root) : fs::path("steerkit_out");
    return base / subcommand;
}

int cmd_toygen(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
    return guarded(cfg, err, [&] {
        const auto seed = require_seed(cfg);
        const auto model = stage("build model", [&] {
            const auto [mc, plant] = toy::preset(cfg.preset);
            return toy::ToyModel::build(mc, plant);
        });
        const fs::path dir = cfg.out.empty() ? default_out(cfg.subcommand) : cfg.out;
        ToygenOptions opts;
        opts.n_prompts = cfg.n_prompts;
        opts.seed = seed;
        opts.model_id = "toy-" + cfg.preset;
        const auto trace = stage("synthesize", [&] { return make_toy_trace(model, opts); });
        stage("write trace", [&] { write_trace(trace, dir); });
        echo_config(cfg, dir);
        out << "wrote trace with " << trace.records().size() << " prompts and " << trace.n_layers() << " layers to "
            << dir.string() << '\n';
    });
}

int cmd_extract(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
    return guarded(cfg, err, [&] {
        require_trace(cfg);
        require_delta(cfg);
        const auto methods = methods_of(cfg);
        const auto trace = load_trace(cfg);
        const auto dir = out_dir(cfg);
        echo_config(cfg, dir);
        const auto part = partition(trace.records_in(Split::train), cfg.delta);
        out << "partition at delta " << cfg.delta << ": |A|=" << part.ids_a.size() << " |B|=" << part.ids_b.size()
            << " |O|=" << part.ids_o.size() << '\n';
        for (Method m : methods) {
            const auto candidates = stage("extract", [&] { return extract_all_layers(trace, part, m); });
            nlohmann::json arr = nlohmann::json::array();
            for (const auto& c : candidates) {
                arr.push_back({{"layer", c.layer},
                               {"norm", simd::norm(c.direction)},
                               {"degenerate", c.degenerate},
                               {"direction", c.direction}});
            }
            write_json(dir / (stem("candidates", m) + ".json"),
                       {{"method", method_name(m)}, {"delta", cfg.delta}, {"layers", arr}});
            out << method_name(m) << ": " << candidates.size() << " candidates\n";
        }
    });
}

int cmd_select(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
    return guarded(cfg, err, [&] {
        require_trace(cfg);
        require_delta(cfg);
        const auto methods = methods_of(cfg);
        const auto trace = load_trace(cfg);
        const auto dir = out_dir(cfg);
        echo_config(cfg, dir);
        for (Method m : methods) {
            const auto [sv, report] = stage("select", [&] {
                return fit_vector(trace, m, cfg.delta, cfg.exclude_frac, cfg.layer_override);
            });
            write_vector_file(to_vector_file(sv), dir / ("vector_" + std::string(method_name(m)) + ".json"));
            write_report(cfg, dir, stem("selection", m), report);
            out << method_name(m) << ": layer " << sv.layer << " rmse " << sv.rmse << " r " << sv.pearson_r
                << " scale " << sv.scale << '\n';
        }
    });
}

int cmd_steer(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
    return guarded(cfg, err, [&] {
        require_trace(cfg);
        require_vector(cfg);
        const auto mode = [&] {
            try {
                return parse_mode(cfg.mode);
            } catch (const std::exception&) {
                throw UsageError("--mode must be projection_edit or activation_addition");
            }
        }();
        const auto trace = load_trace(cfg);
        const auto model = load_model(trace);
        const auto sv = load_vector(cfg);
        const auto dir = out_dir(cfg);
        echo_config(cfg, dir);
        const InterventionConfig ic{mode, cfg.layer_override, cfg.lambda, !cfg.raw_lambda};
        const SteeredModel steered = stage("configure", [&] { return SteeredModel(model, sv, ic); });
        const auto prompts = eval_prompts(model, trace, Split::validation);
        const auto spec = model.concept_spec();
        std::vector<std::array<double, 2>> rows(prompts.size());
        stage("steer", [&] {
            parallel_for(prompts.size(), [&](std::size_t i) {
                rows[i][0] = disparity_score(model.forward(prompts[i].tokens).distribution, spec);
                rows[i][1] = disparity_score(steered.forward(prompts[i].tokens).distribution, spec);
            });
        });
        double mb = 0.0, ma = 0.0;
        write_text(dir / "steer.csv", [&](std::ostream& os) {
            os << std::setprecision(12) << "id,s_before,s_after\n";
            for (std::size_t i = 0; i < rows.size(); ++i) {
                os << prompts[i].id << ',' << rows[i][0] << ',' << rows[i][1] << '\n';
                mb += rows[i][0];
                ma += rows[i][1];
            }
        });
        const double n = static_cast<double>(std::max<std::size_t>(rows.size(), 1));
        write_json(dir / "steer.json", {{"mode", mode_name(mode)},
                                        {"layer", steered.layer()},
                                        {"lambda", cfg.lambda},
                                        {"raw_coefficient", steered.raw_coefficient()},
                                        {"mean_s_before", mb / n},
                                        {"mean_s_after", ma / n}});
        out << "mean s " << mb / n << " -> " << ma / n << " (" << mode_name(mode) << ", layer " << steered.layer()
            << ", raw coefficient " << steered.raw_coefficient() << ")\n";
    });
}

int cmd_eval(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
    return guarded(cfg, err, [&] {
        require_trace(cfg);
        require_vector(cfg);
        const auto seed = require_seed(cfg);
        const auto trace = load_trace(cfg);
        const auto model = load_model(trace);
        const auto sv = load_vector(cfg);
        const auto dir = out_dir(cfg);
        echo_config(cfg, dir);
        const auto prompts = eval_prompts(model, trace, Split::validation);
        const auto bias = stage("debias", [&] { return run_debias_eval(model, prompts, sv, cfg.lambda); });
        write_report(cfg, dir, "bias", bias);
        write_text(dir / "scatter.csv", [&](std::ostream& os) { write_scatter_csv(os, bias); });
        const auto choice = stage("choice task", [&] { return choice_task_eval(model, choice_spec(model, trace), sv); });
        write_report(cfg, dir, "choice", choice);
        GapHarnessOptions gopts;
        gopts.seed = seed;
        const auto gap = stage("frequency gap", [&] { return toy_frequency_gap(model, sv, gopts); });
        write_report(cfg, dir, "frequency_gap", gap);
        out << "bias " << bias.baseline_bias << " -> " << bias.steered_bias << " (reduction "
            << 100.0 * bias.reduction() << "%)\n";
    });
}

int cmd_sweep(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
    return guarded(cfg, err, [&] {
        require_trace(cfg);
        const auto methods = methods_of(cfg);
        const auto trace = load_trace(cfg);
        const auto model = load_model(trace);
        const auto dir = out_dir(cfg);
        echo_config(cfg, dir);
        const auto grid = default_delta_grid();
        for (Method m : methods) {
            const auto report =
                stage("sweep", [&] { return threshold_sweep(trace, model, grid, m, cfg.exclude_frac); });
            write_report(cfg, dir, stem("sweep", m), report);
            out << method_name(m) << ": steered-bias spread " << report.spread << '\n';
        }
    });
}

int cmd_plotdata(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
    return guarded(cfg, err, [&] {
        require_trace(cfg);
        require_delta(cfg);
        if (!cfg.vector.empty()) {
            require_vector(cfg);
        }
        const auto trace = load_trace(cfg);
        const auto dir = out_dir(cfg);
        echo_config(cfg, dir);

        const auto wmd = stage("select", [&] { return fit_vector(trace, Method::wmd, cfg.delta, cfg.exclude_frac); });
        const auto md = stage("select", [&] { return fit_vector(trace, Method::md, cfg.delta, cfg.exclude_frac); });
        write_text(dir / "layers.csv", [&](std::ostream& os) {
            os << std::setprecision(12) << "layer,rmse_wmd,pearson_wmd,rmse_md,pearson_md\n";
            for (std::size_t i = 0; i < wmd.second.rows.size(); ++i) {
                const auto& a = wmd.second.rows[i];
                const auto& b = md.second.rows[i];
                os << a.layer << ',' << a.rmse << ',' << a.pearson_r << ',' << b.rmse << ',' << b.pearson_r << '\n';
            }
        });

        write_text(dir / "disparity_hist.csv", [&](std::ostream& os) {
            std::vector<std::array<std::size_t, 2>> counts(kDefaultBins);
            for (const auto& r : trace.records()) {
                ++counts[disparity_bin(r.disparity, kDefaultBins)][r.split == Split::train ? 0 : 1];
            }
            os << std::setprecision(12) << "bin_lo,bin_hi,train,validation\n";
            for (std::size_t b = 0; b < kDefaultBins; ++b) {
                const double w = 2.0 / static_cast<double>(kDefaultBins);
                os << -1.0 + w * b << ',' << -1.0 + w * (b + 1) << ',' << counts[b][0] << ',' << counts[b][1] << '\n';
            }
        });

        if (trace.manifest().toy_model) {
            const auto model = load_model(trace);
            const auto sv = cfg.vector.empty() ? wmd.first : load_vector(cfg);
            const auto prompts = eval_prompts(model, trace, Split::validation);
            const auto bias = stage("debias", [&] { return run_debias_eval(model, prompts, sv, 0.0); });
            write_text(dir / "scatter.csv", [&](std::ostream& os) { write_scatter_csv(os, bias); });
            const auto choice =
                stage("choice task", [&] { return choice_task_eval(model, choice_spec(model, trace), sv); });
            write_text(dir / "choice.csv", [&](std::ostream& os) { write_csv(os, choice); });
        }
        out << "plot data written to " << dir.string() << '\n';
    });
}

int cmd_pipeline(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
    return guarded(cfg, err, [&] {
        require_trace(cfg);
        require_delta(cfg);
        PipelineOptions opts;
        opts.methods = methods_of(cfg);
        opts.delta = cfg.delta;
        opts.exclude_frac = cfg.exclude_frac;
        opts.layer_override = cfg.layer_override;
        const auto trace = load_trace(cfg);
        const auto model = load_model(trace);
        const auto dir = out_dir(cfg);
        echo_config(cfg, dir);

        const auto prompts = eval_prompts(model, trace, Split::validation);
        std::vector<MethodResult> results;
        for (Method m : opts.methods) {
            MethodResult r;
            r.method = m;
            std::tie(r.vector, r.selection) = stage("select " + std::string(method_name(m)), [&] {
                return fit_vector(trace, m, opts.delta, opts.exclude_frac, opts.layer_override);
            });
            r.bias = stage("eval " + std::string(method_name(m)),
                           [&] { return run_debias_eval(model, prompts, r.vector, 0.0); });
            write_vector_file(to_vector_file(r.vector), dir / ("vector_" + std::string(method_name(m)) + ".json"));
            write_report(cfg, dir, stem("selection", m), r.selection);
            write_report(cfg, dir, stem("bias", m), r.bias);
            write_text(dir / (stem("scatter", m) + ".csv"), [&](std::ostream& os) { write_scatter_csv(os, r.bias); });
            out << method_name(m) << ": layer " << r.vector.layer << " r " << r.vector.pearson_r << " bias "
                << r.bias.baseline_bias << " -> " << r.bias.steered_bias << '\n';
            results.push_back(std::move(r));
        }
        write_text(dir / "comparison.csv", [&](std::ostream& os) {
            os << std::setprecision(12) << "method,layer,rmse,pearson_r,baseline_bias,steered_bias\n";
            for (const auto& r : results) {
                os << method_name(r.method) << ',' << r.vector.layer << ',' << r.vector.rmse << ','
                   << r.vector.pearson_r << ',' << r.bias.baseline_bias << ',' << r.bias.steered_bias << '\n';
            }
        });
    });
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"steerkit: concept steering vectors from residual-stream traces"};
    app.require_subcommand(1);
    RunConfig cfg;
    std::uint64_t seed = 0;
    std::size_t layer_override = 0;

    const auto add_common = [&](CLI::App* sub) {
        sub->add_option("--out", cfg.out, "Output directory");
        sub->add_option("--threads", cfg.threads, "Worker thread cap (0 = hardware)");
        sub->add_option("--format", cfg.formats, "Report formats (csv, json)")->delimiter(',');
    };
    const auto add_trace = [&](CLI::App* sub) { sub->add_option("--trace", cfg.trace, "Trace directory"); };
    const auto add_vector = [&](CLI::App* sub) { sub->add_option("--vector", cfg.vector, "Vector file"); };
    const auto add_method = [&](CLI::App* sub) {
        sub->add_option("--method", cfg.method, "wmd, md or both")->capture_default_str();
    };
    const auto add_delta = [&](CLI::App* sub) {
        sub->add_option("--delta", cfg.delta, "Partition threshold")->capture_default_str();
    };
    const auto add_exclude = [&](CLI::App* sub) {
        sub->add_option("--exclude-frac", cfg.exclude_frac, "Share of top layers never selected")->capture_default_str();
    };
    const auto add_layer = [&](CLI::App* sub) {
        sub->add_option("--layer-override", layer_override, "Force the steering layer");
    };
    const auto add_seed = [&](CLI::App* sub) { sub->add_option("--seed", seed, "RNG seed"); };

    std::map<std::string, std::function<int(const RunConfig&, std::ostream&, std::ostream&)>> commands;
    const auto sub = [&](const std::string& name, const std::string& help, auto fn) {
        CLI::App* s = app.add_subcommand(name, help);
        add_common(s);
        commands[name] = fn;
        return s;
    };

    auto* toygen = sub("toygen", "Build the planted toy model and write a trace", cmd_toygen);
    toygen->add_option("--preset", cfg.preset, "Model preset (default, clean)")->capture_default_str();
    toygen->add_option("--n-prompts", cfg.n_prompts, "Prompt count")->capture_default_str();
    add_seed(toygen);

    auto* extract = sub("extract", "Per-layer candidate vectors", cmd_extract);
    add_trace(extract);
    add_method(extract);
    add_delta(extract);

    auto* select = sub("select", "Select and calibrate a steering vector", cmd_select);
    add_trace(select);
    add_method(select);
    add_delta(select);
    add_exclude(select);
    add_layer(select);

    auto* steer = sub("steer", "Apply a vector to the validation prompts", cmd_steer);
    add_trace(steer);
    add_vector(steer);
    steer->add_option("--lambda", cfg.lambda, "Steering coefficient")->capture_default_str();
    steer->add_option("--mode", cfg.mode, "projection_edit or activation_addition")->capture_default_str();
    steer->add_flag("--raw", cfg.raw_lambda, "Coefficient in activation units (skip calibration)");
    add_layer(steer);

    auto* eval = sub("eval", "Debias, choice-task and frequency-gap reports", cmd_eval);
    add_trace(eval);
    add_vector(eval);
    add_seed(eval);
    eval->add_option("--lambda", cfg.lambda, "Steering coefficient")->capture_default_str();

    auto* sweep = sub("sweep", "Delta-threshold sweep", cmd_sweep);
    add_trace(sweep);
    add_method(sweep);
    add_exclude(sweep);

    auto* plot = sub("plotdata", "CSV data for layer, scatter and choice plots", cmd_plotdata);
    add_trace(plot);
    add_vector(plot);
    add_delta(plot);
    add_exclude(plot);

    auto* pipeline = sub("pipeline", "partition, extract, select, calibrate and evaluate", cmd_pipeline);
    add_trace(pipeline);
    add_method(pipeline);
    add_delta(pipeline);
    add_exclude(pipeline);
    add_layer(pipeline);

    std::vector<std::string> rev(args.rbegin(), args.rend());
    if (!rev.empty()) {
        rev.pop_back();  // program name
    }
    try {
        app.parse(rev);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitUsage;
    }

    for (const auto& [name, fn] : commands) {
        CLI::App* s = app.get_subcommand(name);
        if (!s->parsed()) {
            continue;
        }
        cfg.subcommand = name;
        if (s->get_option_no_throw("--seed") != nullptr && s->count("--seed") > 0) {
            cfg.seed = seed;
        }
        if (s->get_option_no_throw("--layer-override") != nullptr && s->count("--layer-override") > 0) {
            cfg.layer_override = layer_override;
        }
        return fn(cfg, out, err);
    }
    return kExitUsage;
}

}  // namespace steerkit::cli
