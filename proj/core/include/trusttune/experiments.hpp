#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "trusttune/run_config.hpp"

namespace trusttune {

struct CliOptions {
    std::string out_dir = "runs";
    std::vector<std::uint64_t> seeds{1};
    std::size_t jobs = 1;
    std::vector<std::string> inputs;  // report: completed run directories
};

// Exit codes: 0 success (including partial with per-seed failure rows),
// 2 config error, 3 invariant violation, 1 anything else.
int run_command(const std::string& command, RunConfig& cfg, const CliOptions& opt);

// Individual commands (throw on error; run_command maps to exit codes).
void cmd_pretrain(RunConfig& cfg, const CliOptions& opt);
void cmd_finetune(RunConfig& cfg, const CliOptions& opt);
void cmd_stability(RunConfig& cfg, const CliOptions& opt);
void cmd_chain(RunConfig& cfg, const CliOptions& opt);
void cmd_cycle(RunConfig& cfg, const CliOptions& opt);
void cmd_probe_matrix(RunConfig& cfg, const CliOptions& opt);
void cmd_theory(RunConfig& cfg, const CliOptions& opt);
void cmd_report(RunConfig& cfg, const CliOptions& opt);

}  // namespace trusttune
