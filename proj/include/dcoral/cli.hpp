#pragma once

#include "dcoral/data.hpp"
#include "dcoral/error.hpp"
#include "dcoral/trainer.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace dcoral::cli {

// Stable process exit codes.
enum ExitCode : int {
    kExitOk = 0,
    kExitConfig = 1,
    kExitIo = 2,
    kExitDivergence = 3,
    kExitGradcheck = 4,
};

int exit_code_for(ErrorKind kind) noexcept;

struct ExperimentConfig {
    TrainConfig train;
    // Synthetic data, used when no dataset paths are given.
    ShiftSpec shift = standard_shift_spec(0);
    std::optional<std::filesystem::path> source_path;
    std::optional<std::filesystem::path> target_path;
    bool target_labels = true;
    std::size_t num_classes = 3;
    // Empty means {input dim, 32, num_classes}.
    std::vector<std::size_t> dims;
    // Empty means the logits layer.
    std::vector<std::size_t> taps;
    double head_init_std = 0.005;
    std::filesystem::path out_dir = "out";
    bool plot = false;

    // Canonical key=value lines, in a fixed order, covering every field.
    std::vector<std::pair<std::string, std::string>> to_key_values() const;
    // FNV-1a of the canonical lines, excluding output-only keys (out, plot).
    std::uint64_t hash() const;
};

// Defaults for the fixed synthetic benchmark: standard shift, 3000 iterations.
ExperimentConfig default_config();

// Applies one key=value pair; throws Error(ConfigError) on an unknown key or a
// malformed value. Keys written only into manifests are accepted and ignored.
void apply_setting(ExperimentConfig& config, std::string_view key, std::string_view value);

// Flat key=value text; '#' starts a comment line.
void apply_config_text(ExperimentConfig& config, std::istream& is, const std::string& origin);
void apply_config_file(ExperimentConfig& config, const std::filesystem::path& path);

std::string to_hex(std::uint64_t v);

// Manifest text: every canonical key, plus the config hash, seed, and any
// extra provenance lines. It is itself a valid config file.
std::string manifest_text(const ExperimentConfig& config, const std::string& command,
                          const std::vector<std::pair<std::string, std::string>>& extra);

// Resolves datasets: loads CSVs or draws the synthetic pair.
DomainPair load_or_generate(const ExperimentConfig& config);
std::vector<std::size_t> resolve_dims(const ExperimentConfig& config, std::size_t input_dim);

struct TrainOutcome {
    ExperimentResult result;
    std::filesystem::path metrics_path;
    std::filesystem::path checkpoint_path;
    std::filesystem::path manifest_path;
};

// Each command writes its artifacts and returns them; errors propagate as Error.
DomainPair cmd_generate(const ExperimentConfig& config);
TrainOutcome cmd_train(const ExperimentConfig& config);

struct EvalReport {
    std::optional<double> source_accuracy;
    std::optional<double> target_accuracy;
    std::optional<double> coral_distance;
};
EvalReport cmd_eval(const std::filesystem::path& checkpoint, const std::filesystem::path& source,
                    const std::optional<std::filesystem::path>& target);
void print_eval(std::ostream& os, const EvalReport& report);

// Minimal SVG line chart; one polyline per series.
struct Series {
    std::string label;
    std::vector<double> x;
    std::vector<double> y;
};
std::string render_svg(const std::string& title, const std::string& x_label, const std::vector<Series>& series);

// Full command-line entry point. Returns the process exit code.
int run(int argc, char** argv, std::ostream& out, std::ostream& err);

}  // namespace dcoral::cli
