// trusttune: deterministic fine-tuning experiments on a desk-scale encoder.
//
// Subcommands: pretrain, finetune, stability, chain, cycle, probe-matrix,
// theory, report. Each takes a flat JSON config (--config) and writes CSV,
// JSON manifests, SVG plots, and checkpoints under --out.

#include <CLI11.hpp>
#include <cstdio>
#include <string>
#include <vector>

#include "trusttune/errors.hpp"
#include "trusttune/experiments.hpp"

namespace {

struct Args {
    std::string config_path;
    std::string out_dir = "runs";
    std::string seeds = "1";
    std::size_t jobs = 1;
    std::vector<std::string> inputs;
};

std::vector<std::uint64_t> parse_seeds(const std::string& text) {
    std::vector<std::uint64_t> out;
    std::string cur;
    for (char c : text + ",") {
        if (c == ',') {
            if (!cur.empty()) {
                try {
                    out.push_back(std::stoull(cur));
                } catch (const std::exception&) {
                    throw trusttune::ConfigError("--seeds expects comma-separated integers, got '" + cur + "'");
                }
                cur.clear();
            }
        } else {
            cur.push_back(c);
        }
    }
    if (out.empty()) throw trusttune::ConfigError("--seeds lists no seeds");
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"trusttune: regularized fine-tuning and representation-collapse probing"};
    app.require_subcommand(1);

    const std::vector<std::string> commands = {"pretrain", "finetune",     "stability", "chain",
                                               "cycle",    "probe-matrix", "theory",    "report"};
    std::map<std::string, Args> args;
    for (const std::string& name : commands) {
        CLI::App* sub = app.add_subcommand(name);
        Args& a = args[name];
        sub->add_option("--config", a.config_path, "flat JSON config file");
        sub->add_option("--out", a.out_dir, "output directory");
        sub->add_option("--seeds", a.seeds, "comma-separated master seeds");
        sub->add_option("--jobs", a.jobs, "concurrent runs (TRUSTTUNE_DETERMINISTIC=1 forces 1)");
        if (name == "report") sub->add_option("dirs", a.inputs, "completed run directories");
    }

    CLI11_PARSE(app, argc, argv);

    const std::string command = app.get_subcommands().at(0)->get_name();
    const Args& a = args[command];
    try {
        trusttune::RunConfig cfg = a.config_path.empty()
                                       ? trusttune::RunConfig::from_text("{}")
                                       : trusttune::RunConfig::load_file(a.config_path);
        trusttune::CliOptions opt;
        opt.out_dir = a.out_dir;
        opt.seeds = parse_seeds(a.seeds);
        opt.jobs = a.jobs;
        opt.inputs = a.inputs;
        return trusttune::run_command(command, cfg, opt);
    } catch (const trusttune::ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}
