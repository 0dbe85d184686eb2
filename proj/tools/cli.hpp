#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <hpalign/joint.hpp>
#include <hpalign/synth.hpp>

namespace hpalign::cli {

inline constexpr const char* kVersion = "0.3.0";

enum ExitCode : int {
    kSuccess = 0,
    kUnexpected = 1,
    kValidation = 2,
    kNumerical = 3,
    kIo = 4,
};

struct SimulateOptions {
    std::filesystem::path params;
    double horizon{0.0};
    std::size_t count{1};
    std::uint64_t seed{0};
    std::filesystem::path out;
};

struct AlignOptions {
    std::filesystem::path source;
    std::filesystem::path target;
    std::optional<std::filesystem::path> source_meta;
    std::optional<std::filesystem::path> target_meta;
    std::optional<std::filesystem::path> truth;
    long k{1};
    AlignmentConfig config;
    std::filesystem::path out;
};

struct BenchOptions {
    TrialSpec spec;
    std::vector<Method> methods;
    AlignmentConfig config;
    unsigned threads{1};
    std::filesystem::path out;
};

struct EvalOptions {
    std::filesystem::path plan;
    std::filesystem::path truth;
    long k{1};
    std::optional<std::filesystem::path> out;
};

struct EvalResult {
    long k{1};
    double accuracy{0.0};
    double similarity{0.0};
    double entropy{0.0};
};

// Command implementations; each throws hpalign errors and writes a manifest.json into its output
// directory (eval only when --out is given). `argv` is recorded in the manifest for replay.
void cmd_simulate(const SimulateOptions& opts, const std::vector<std::string>& argv);
JointState cmd_align(const AlignOptions& opts, const std::vector<std::string>& argv);
BenchmarkTable cmd_bench(const BenchOptions& opts, const std::vector<std::string>& argv);
EvalResult cmd_eval(const EvalOptions& opts);

// Parses `args` (without the program name), runs the command and maps errors to exit codes.
int run(const std::vector<std::string>& args);

}  // namespace hpalign::cli
