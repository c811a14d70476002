#pragma once

// The steerkit command line: one subcommand per pipeline stage.
//
// Exit codes: 0 success, 1 internal or stage error, 2 usage error.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "steerkit/errors.hpp"

namespace steerkit::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitInternal = 1;
inline constexpr int kExitUsage = 2;

/// Environment variable naming the default output root.
inline constexpr const char* kOutEnv = "STEERKIT_OUT";

class UsageError : public Error {
public:
    using Error::Error;
};

struct RunConfig {
    std::string subcommand;
    std::filesystem::path trace;
    std::filesystem::path vector;
    std::string method = "wmd";
    double delta = 0.05;
    double lambda = 0.0;
    std::optional<std::uint64_t> seed;
    std::filesystem::path out;
    std::vector<std::string> formats{"csv", "json"};
    double exclude_frac = 0.05;
    std::size_t threads = 0;
    std::string mode = "projection_edit";
    std::optional<std::size_t> layer_override;
    std::string preset = "default";
    std::size_t n_prompts = 800;
    bool raw_lambda = false;
};

nlohmann::json to_json(const RunConfig& cfg);

/// Default output directory for a subcommand: $STEERKIT_OUT/<sub> or steerkit_out/<sub>.
std::filesystem::path default_out(const std::string& subcommand);

int cmd_toygen(const RunConfig& cfg, std::ostream& out, std::ostream& err);
int cmd_extract(const RunConfig& cfg, std::ostream& out, std::ostream& err);
int cmd_select(const RunConfig& cfg, std::ostream& out, std::ostream& err);
int cmd_steer(const RunConfig& cfg, std::ostream& out, std::ostream& err);
int cmd_eval(const RunConfig& cfg, std::ostream& out, std::ostream& err);
int cmd_sweep(const RunConfig& cfg, std::ostream& out, std::ostream& err);
int cmd_plotdata(const RunConfig& cfg, std::ostream& out, std::ostream& err);
int cmd_pipeline(const RunConfig& cfg, std::ostream& out, std::ostream& err);

/// Parses argv (argv[0] is the program name) and dispatches.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace steerkit::cli
