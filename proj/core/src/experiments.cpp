#include "trusttune/experiments.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <thread>
#include <tuple>

#include <json.hpp>

#include "trusttune/checkpoint.hpp"
#include "trusttune/csv.hpp"
#include "trusttune/errors.hpp"
#include "trusttune/gaussian.hpp"
#include "trusttune/manifest.hpp"
#include "trusttune/probes.hpp"
#include "trusttune/svg.hpp"

namespace trusttune {

namespace {

namespace fs = std::filesystem;

void ensure_dir(const std::string& path) { fs::create_directories(path); }

double now_seconds() {
    return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch()).count();
}

std::size_t effective_jobs(std::size_t jobs) {
    const char* forced = std::getenv("TRUSTTUNE_DETERMINISTIC");
    if (forced && std::string(forced) == "1") return 1;
    return jobs == 0 ? 1 : jobs;
}

// Independent work items; results must land in pre-sized slots.
void run_parallel(std::size_t jobs, const std::vector<std::function<void()>>& work) {
    jobs = effective_jobs(jobs);
    if (jobs <= 1) {
        for (const auto& fn : work) fn();
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(work.size());
    for (std::size_t t = 0; t < std::min(jobs, work.size()); ++t) {
        pool.emplace_back([&]() {
            for (;;) {
                const std::size_t i = next.fetch_add(1);
                if (i >= work.size()) return;
                try {
                    work[i]();
                } catch (...) {
                    errors[i] = std::current_exception();
                }
            }
        });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

std::string seeds_csv(const std::vector<std::uint64_t>& seeds) {
    std::string out;
    for (std::size_t i = 0; i < seeds.size(); ++i) {
        if (i) out.push_back(',');
        out += std::to_string(seeds[i]);
    }
    return out;
}

// Seeds participate in the config hash; output paths and job counts do not.
std::string hash_with_seeds(RunConfig& cfg, const CliOptions& opt) {
    cfg.set("run.seeds", seeds_csv(opt.seeds));
    (void)cfg.get_string("run.seeds", "");
    return cfg.config_hash();
}

EncoderConfig parse_model(RunConfig& cfg) {
    EncoderConfig out;
    out.vocab_size = cfg.get_uint("model.vocab_size", 64);
    out.embed_dim = cfg.get_uint("model.embed_dim", 16);
    out.blocks = cfg.get_uint("model.blocks", 2);
    out.ffn_hidden = cfg.get_uint("model.ffn_hidden", 32);
    out.max_len = cfg.get_uint("model.max_len", 16);
    const std::string pooling = cfg.get_string("model.pooling", "first_token");
    if (pooling == "first_token") {
        out.pooling = Pooling::kFirstToken;
    } else if (pooling == "mean") {
        out.pooling = Pooling::kMean;
    } else {
        throw ConfigError("model.pooling must be 'first_token' or 'mean'");
    }
    return out;
}

RegularizerConfig parse_method(RunConfig& cfg, const std::string& name) {
    RegularizerConfig out;
    out.method = method_from_name(name);
    out.lambda = cfg.get_double("method.lambda", 1.0);
    out.sigma = cfg.get_double("method.sigma", 1e-5);
    const std::string dist = cfg.get_string("method.noise", "uniform");
    if (dist == "uniform") {
        out.noise_dist = NoiseDist::kUniform;
    } else if (dist == "normal") {
        out.noise_dist = NoiseDist::kNormal;
    } else {
        throw ConfigError("method.noise must be 'uniform' or 'normal'");
    }
    out.epsilon = cfg.get_double("method.epsilon", 1e-5);
    out.ascent_steps = cfg.get_uint("method.ascent_steps", 1);
    out.ascent_lr = cfg.get_double("method.ascent_lr", 1e-3);
    const std::string norm = cfg.get_string("method.ascent_norm", "l2");
    if (norm == "l2") {
        out.ascent_norm = AscentNorm::kL2;
    } else if (norm == "linf") {
        out.ascent_norm = AscentNorm::kLinf;
    } else {
        throw ConfigError("method.ascent_norm must be 'l2' or 'linf'");
    }
    out.label_smoothing_alpha = cfg.get_double("method.label_smoothing", 0.0);
    return out;
}

FineTuneConfig parse_finetune(RunConfig& cfg, const std::string& method_name) {
    FineTuneConfig out;
    out.reg = parse_method(cfg, method_name);
    out.schedule.peak_lr = cfg.get_double("optim.peak_lr", 1e-3);
    out.schedule.total_updates = cfg.get_uint("optim.total_updates", 2000);
    const double warmup_ratio = cfg.get_double("optim.warmup_ratio", 0.06);
    out.schedule.warmup_updates = cfg.get_uint(
        "optim.warmup_updates",
        static_cast<std::uint64_t>(warmup_ratio * static_cast<double>(out.schedule.total_updates)));
    out.schedule.power = cfg.get_double("optim.power", 1.0);
    out.schedule.end_lr = cfg.get_double("optim.end_lr", 0.0);
    out.adam.beta1 = cfg.get_double("optim.beta1", 0.9);
    out.adam.beta2 = cfg.get_double("optim.beta2", 0.98);
    out.adam.eps = cfg.get_double("optim.eps", 1e-6);
    out.adam.weight_decay = cfg.get_double("optim.weight_decay", 0.01);
    out.adam.bias_correction = cfg.get_bool("optim.bias_correction", true);
    out.batch_size = cfg.get_uint("optim.batch_size", 8);
    out.clip_norm = cfg.get_double("optim.clip_norm", 0.1);
    out.head_depth = cfg.get_uint("optim.head_depth", 2);

    // Standard++ preset: longer budget with Adam bias correction.
    if (out.reg.method == Method::kStandardPP) {
        out.adam.bias_correction = true;
    } else if (out.reg.method == Method::kStandard) {
        out.adam.bias_correction = cfg.get_bool("optim.bias_correction_std", false);
    }
    return out;
}

ProbeConfig parse_probe(RunConfig& cfg) {
    ProbeConfig out;
    out.lr = cfg.get_double("probe.lr", 1e-2);
    out.epochs = cfg.get_uint("probe.epochs", 20);
    out.batch_size = cfg.get_uint("probe.batch_size", 32);
    return out;
}

struct SuiteData {
    std::vector<TaskSpec> specs;
    std::uint64_t suite_seed;
};

SuiteData parse_suite(RunConfig& cfg) {
    SuiteData out;
    out.suite_seed = cfg.get_uint("task.suite_seed", 42);
    out.specs = task_suite(out.suite_seed);
    const std::size_t train = cfg.get_uint("task.train_size", 2000);
    const std::size_t dev = cfg.get_uint("task.dev_size", 500);
    for (TaskSpec& s : out.specs) {
        s.train_size = train;
        s.dev_size = dev;
    }
    return out;
}

TaskData suite_task(const SuiteData& suite, const std::string& name) {
    return generate_task(find_task(suite.specs, name));
}

EncoderParams load_pretrained(RunConfig& cfg, const EncoderConfig& expect) {
    const std::string path = cfg.get_string("run.pretrained", "");
    if (path.empty()) throw ConfigError("run.pretrained must point at a pretrain checkpoint");
    EncoderParams params = load_encoder_checkpoint(path);
    if (params.config.vocab_size != expect.vocab_size || params.config.embed_dim != expect.embed_dim ||
        params.config.blocks != expect.blocks || params.config.ffn_hidden != expect.ffn_hidden ||
        params.config.max_len != expect.max_len)
        throw ConfigError("checkpoint '" + path + "' does not match the model.* configuration");
    return params;
}

// Experiments must never mutate the stored pretrained checkpoint.
class CheckpointGuard {
public:
    explicit CheckpointGuard(RunConfig& cfg)
        : path_(cfg.get_string("run.pretrained", "")), before_(file_content_hash(path_)) {}
    void verify() const {
        if (file_content_hash(path_) != before_)
            throw InvariantViolation("pretrained checkpoint '" + path_ + "' changed during the experiment");
    }

private:
    std::string path_;
    std::uint64_t before_;
};

// Collects this run's top-level artifacts into one manifest.
void save_run_manifest(const std::string& out_dir, const std::string& config_hash,
                       const std::vector<std::string>& files, double wall_seconds) {
    RunManifest manifest;
    manifest.config_hash = config_hash;
    manifest.wall_seconds = wall_seconds;
    for (const std::string& f : files) manifest.add_artifact(out_dir, f);
    manifest.save(out_dir + "/manifest.json");
}

std::string wall_cell(RunConfig& cfg, double measured) {
    // The CSV keeps byte-identical reruns by freezing this column; the true
    // measurement always lives in the manifest.
    const std::string mode = cfg.get_string("report.wall_seconds", "frozen");
    if (mode == "measured") return csv_f64(measured);
    if (mode != "frozen") throw ConfigError("report.wall_seconds must be 'frozen' or 'measured'");
    return csv_f64(0.0);
}

double stdev(const std::vector<double>& xs) {
    if (xs.size() < 2) return 0.0;
    double mean = 0.0;
    for (double x : xs) mean += x;
    mean /= static_cast<double>(xs.size());
    double var = 0.0;
    for (double x : xs) var += (x - mean) * (x - mean);
    return std::sqrt(var / static_cast<double>(xs.size() - 1));
}

struct SeedRun {
    FineTuneResult result;
    double wall = 0.0;
};

// Per-seed fine-tunes for one method, optionally in parallel.
std::vector<SeedRun> finetune_over_seeds(const EncoderParams& pretrained, const TaskData& task,
                                         const FineTuneConfig& ft, const CliOptions& opt) {
    std::vector<SeedRun> runs(opt.seeds.size());
    std::vector<std::function<void()>> work;
    for (std::size_t i = 0; i < opt.seeds.size(); ++i) {
        work.push_back([&, i]() {
            const double t0 = now_seconds();
            runs[i].result = fine_tune(pretrained, task, ft, opt.seeds[i]);
            runs[i].wall = now_seconds() - t0;
        });
    }
    run_parallel(opt.jobs, work);
    return runs;
}

// Writes per-seed manifests + the pinned finetune CSV schema; returns the
// per-seed best accuracies of the succeeding runs.
std::vector<double> emit_finetune_outputs(RunConfig& cfg, const CliOptions& opt,
                                          const std::string& out_dir, const std::string& config_hash,
                                          const std::string& method_name, const std::string& task_name,
                                          const std::vector<SeedRun>& runs, CsvWriter& csv) {
    std::vector<double> bests;
    for (std::size_t i = 0; i < opt.seeds.size(); ++i) {
        const FineTuneResult& res = runs[i].result;
        const std::string seed_dir = out_dir + "/seed" + std::to_string(opt.seeds[i]);
        ensure_dir(seed_dir);

        RunManifest manifest;
        manifest.config_hash = config_hash;
        manifest.seed = opt.seeds[i];
        manifest.fp_total = res.totals.fp;
        manifest.bp_total = res.totals.bp;
        manifest.xfp_total = res.totals.xfp();
        manifest.wall_seconds = runs[i].wall;
        manifest.status = res.failed ? "failed" : "ok";
        if (!res.failed) {
            save_encoder_checkpoint(seed_dir + "/best_encoder.ckpt", res.best_encoder);
            manifest.add_artifact(seed_dir, "best_encoder.ckpt");
        }
        manifest.save(seed_dir + "/manifest.json");

        double running_best = 0.0;
        for (std::size_t e = 0; e < res.history.size(); ++e) {
            running_best = std::max(running_best, res.history[e].dev_accuracy);
            csv.row({config_hash, method_name, task_name, std::to_string(opt.seeds[i]),
                     std::to_string(res.history[e].epoch), csv_f64(res.history[e].dev_accuracy),
                     csv_f64(running_best), std::to_string(res.totals.fp), std::to_string(res.totals.bp),
                     std::to_string(res.totals.xfp()), wall_cell(cfg, runs[i].wall)});
        }
        if (!res.failed) bests.push_back(res.best_dev_accuracy);
    }

    if (!bests.empty()) {
        const std::uint64_t fp = runs[0].result.totals.fp;
        const std::uint64_t bp = runs[0].result.totals.bp;
        double best_max = -1.0;
        for (double b : bests) best_max = std::max(best_max, b);
        const double best_med = median(bests);
        std::size_t max_epoch = 0;
        for (const SeedRun& r : runs) {
            if (!r.result.history.empty()) max_epoch = std::max(max_epoch, r.result.history.back().epoch);
        }
        for (const char* which : {"max", "median"}) {
            const double v = std::string(which) == "max" ? best_max : best_med;
            csv.row({config_hash, method_name, task_name, which, std::to_string(max_epoch), csv_f64(v),
                     csv_f64(v), std::to_string(fp), std::to_string(bp),
                     std::to_string(PassCounters{fp, bp}.xfp()), wall_cell(cfg, 0.0)});
        }
    }
    return bests;
}

const std::vector<std::string> kFinetuneHeader = {
    "config_hash", "method",   "task",     "seed",      "epoch",     "dev_accuracy",
    "best_dev_accuracy", "fp_total", "bp_total", "xfp_total", "wall_seconds"};

const std::vector<std::string> kProbeHeader = {"config_hash", "method", "stage_index", "stage_task",
                                               "probe_task",  "cycle",  "seed",        "accuracy"};

void write_results_json(const std::string& path, const std::string& config_hash,
                        const std::string& task_name,
                        const std::vector<std::pair<std::string, std::vector<double>>>& per_method_bests) {
    nlohmann::json doc;
    doc["config_hash"] = config_hash;
    doc["task"] = task_name;
    nlohmann::json methods = nlohmann::json::object();
    for (const auto& [name, bests] : per_method_bests) {
        double best_max = -1.0;
        for (double b : bests) best_max = std::max(best_max, b);
        methods[name] = {{"count", bests.size()},
                         {"max", bests.empty() ? 0.0 : best_max},
                         {"median", bests.empty() ? 0.0 : median(bests)}};
    }
    doc["methods"] = methods;
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ParseError("cannot open '" + path + "' for writing");
    out << doc.dump(2) << "\n";
}

}  // namespace

void cmd_pretrain(RunConfig& cfg, const CliOptions& opt) {
    const std::string config_hash = hash_with_seeds(cfg, opt);
    EncoderConfig model = parse_model(cfg);
    PretrainConfig pre;
    pre.mask_rate = cfg.get_double("pretrain.mask_rate", 0.15);
    pre.steps = cfg.get_uint("pretrain.steps", 400);
    pre.corpus_size = cfg.get_uint("pretrain.corpus_size", 256);
    pre.batch_size = cfg.get_uint("pretrain.batch_size", 8);
    pre.lr = cfg.get_double("pretrain.lr", 5e-3);
    (void)cfg.get_string("report.wall_seconds", "frozen");
    cfg.require_all_consumed();

    if (pre.mask_rate <= 0.0 || pre.mask_rate >= 1.0)
        throw ConfigError("pretrain.mask_rate must lie in (0,1)");

    ensure_dir(opt.out_dir);
    const std::uint64_t seed = opt.seeds.at(0);
    const double t0 = now_seconds();

    Vocabulary vocab;
    vocab.size = model.vocab_size;
    auto corpus = make_pretrain_corpus(seed, pre.corpus_size, model.max_len, vocab);
    RngStreams streams(seed);
    EncoderParams params = EncoderParams::init(model, streams.init);
    PretrainResult result = pretrain(params, pre, corpus, seed);

    save_encoder_checkpoint(opt.out_dir + "/encoder.ckpt", params);
    {
        CsvWriter csv(opt.out_dir + "/pretrain_loss.csv", {"step", "loss"});
        for (std::size_t i = 0; i < result.loss_curve.size(); ++i)
            csv.row({std::to_string(i + 1), csv_f64_wide(result.loss_curve[i])});
        csv.close();
    }

    RunManifest manifest;
    manifest.config_hash = config_hash;
    manifest.seed = seed;
    manifest.fp_total = pre.steps;
    manifest.bp_total = pre.steps;
    manifest.xfp_total = 3 * pre.steps;
    manifest.wall_seconds = now_seconds() - t0;
    manifest.add_artifact(opt.out_dir, "encoder.ckpt");
    manifest.add_artifact(opt.out_dir, "pretrain_loss.csv");
    manifest.save(opt.out_dir + "/manifest.json");
}

void cmd_finetune(RunConfig& cfg, const CliOptions& opt) {
    // Explicit grid enumeration: one run directory per lambda grid point.
    if (cfg.has("method.lambda_grid")) {
        const auto grid = cfg.get_list("method.lambda_grid", {});
        for (const std::string& value : grid) {
            RunConfig point = cfg;
            point.erase("method.lambda_grid");
            point.set("method.lambda", std::stod(value));
            CliOptions sub = opt;
            sub.out_dir = opt.out_dir + "/lambda_" + value;
            cmd_finetune(point, sub);
        }
        return;
    }

    const std::string config_hash = hash_with_seeds(cfg, opt);
    EncoderConfig model = parse_model(cfg);
    SuiteData suite = parse_suite(cfg);
    const std::string task_name = cfg.get_string("task.name", "kw_src");
    const std::string method_name = cfg.get_string("method.name", "standard");
    FineTuneConfig ft = parse_finetune(cfg, method_name);
    EncoderParams pretrained = load_pretrained(cfg, model);
    CheckpointGuard guard(cfg);
    (void)cfg.get_string("report.wall_seconds", "frozen");
    cfg.require_all_consumed();

    const double t0 = now_seconds();
    ensure_dir(opt.out_dir);
    TaskData task = suite_task(suite, task_name);
    std::vector<SeedRun> runs = finetune_over_seeds(pretrained, task, ft, opt);

    CsvWriter csv(opt.out_dir + "/finetune.csv", kFinetuneHeader);
    auto bests = emit_finetune_outputs(cfg, opt, opt.out_dir, config_hash, method_name, task_name, runs, csv);
    csv.close();
    write_results_json(opt.out_dir + "/results.json", config_hash, task_name, {{method_name, bests}});
    save_run_manifest(opt.out_dir, config_hash, {"finetune.csv", "results.json"}, now_seconds() - t0);
    guard.verify();

    bool any_ok = false;
    for (const SeedRun& r : runs) any_ok |= !r.result.failed;
    if (!any_ok) throw Error("all seeds failed");
}

void cmd_stability(RunConfig& cfg, const CliOptions& opt) {
    if (opt.seeds.size() < 2) throw ConfigError("stability needs at least 2 seeds");
    const std::string config_hash = hash_with_seeds(cfg, opt);
    EncoderConfig model = parse_model(cfg);
    SuiteData suite = parse_suite(cfg);
    const std::string task_name = cfg.get_string("task.name", "kw_src");
    const auto method_names = cfg.get_list("method.names", {"standard", "standard_pp", "r3f", "r4f"});
    std::vector<FineTuneConfig> fts;
    for (const auto& name : method_names) fts.push_back(parse_finetune(cfg, name));
    EncoderParams pretrained = load_pretrained(cfg, model);
    CheckpointGuard guard(cfg);
    (void)cfg.get_string("report.wall_seconds", "frozen");
    cfg.require_all_consumed();

    const double t0 = now_seconds();
    ensure_dir(opt.out_dir);
    TaskData task = suite_task(suite, task_name);

    CsvWriter runs_csv(opt.out_dir + "/finetune.csv", kFinetuneHeader);
    CsvWriter stats_csv(opt.out_dir + "/stability.csv",
                        {"config_hash", "method", "task", "count", "min", "median", "max", "stdev"});
    std::vector<Series> violin;
    std::vector<std::pair<std::string, std::vector<double>>> per_method;
    for (std::size_t m = 0; m < method_names.size(); ++m) {
        const std::string method_dir = opt.out_dir + "/" + method_names[m];
        ensure_dir(method_dir);
        CliOptions sub = opt;
        sub.out_dir = method_dir;
        std::vector<SeedRun> runs = finetune_over_seeds(pretrained, task, fts[m], sub);
        auto bests =
            emit_finetune_outputs(cfg, sub, method_dir, config_hash, method_names[m], task_name, runs, runs_csv);
        per_method.emplace_back(method_names[m], bests);
        if (bests.empty()) continue;
        double lo = 1e300, hi = -1e300;
        for (double b : bests) {
            lo = std::min(lo, b);
            hi = std::max(hi, b);
        }
        stats_csv.row({config_hash, method_names[m], task_name, std::to_string(bests.size()), csv_f64(lo),
                       csv_f64(median(bests)), csv_f64(hi), csv_f64(stdev(bests))});
        violin.emplace_back(method_names[m], bests);
    }
    runs_csv.close();
    stats_csv.close();
    write_results_json(opt.out_dir + "/results.json", config_hash, task_name, per_method);
    std::vector<std::string> files{"finetune.csv", "stability.csv", "results.json"};
    if (!violin.empty()) {
        write_violin_svg(opt.out_dir + "/stability_" + task_name + ".svg",
                         "best dev accuracy across seeds: " + task_name, violin);
        files.push_back("stability_" + task_name + ".svg");
    }
    save_run_manifest(opt.out_dir, config_hash, files, now_seconds() - t0);
    guard.verify();
}

namespace {

std::vector<TaskData> generate_named(const SuiteData& suite, const std::vector<std::string>& names) {
    std::vector<TaskData> out;
    for (const auto& n : names) out.push_back(suite_task(suite, n));
    return out;
}

void emit_chain_rows(CsvWriter& csv, const std::string& config_hash, const std::string& method,
                     const ChainResult& chain, std::uint64_t seed) {
    for (const ProbeStage& st : chain.stages) {
        csv.row({config_hash, method, std::to_string(st.stage_index), st.stage_task, st.probe.probe_task,
                 std::to_string(st.cycle), std::to_string(seed), csv_f64(st.probe.accuracy)});
    }
}

}  // namespace

void cmd_chain(RunConfig& cfg, const CliOptions& opt) {
    const std::string config_hash = hash_with_seeds(cfg, opt);
    EncoderConfig model = parse_model(cfg);
    SuiteData suite = parse_suite(cfg);
    const std::string source_name = cfg.get_string("chain.source", "kw_src");
    const auto chain_names = cfg.get_list("chain.tasks", {"maj2", "order_a", "parity"});
    const auto method_names = cfg.get_list("method.names", {"standard", "r3f"});
    std::vector<FineTuneConfig> fts;
    for (const auto& name : method_names) fts.push_back(parse_finetune(cfg, name));
    ProbeConfig probe_cfg = parse_probe(cfg);
    EncoderParams pretrained = load_pretrained(cfg, model);
    CheckpointGuard guard(cfg);
    (void)cfg.get_string("report.wall_seconds", "frozen");
    cfg.require_all_consumed();

    const double t0 = now_seconds();
    ensure_dir(opt.out_dir);
    TaskData source = suite_task(suite, source_name);
    std::vector<TaskData> chain = generate_named(suite, chain_names);

    std::vector<std::vector<ChainResult>> results(method_names.size(),
                                                  std::vector<ChainResult>(opt.seeds.size()));
    std::vector<std::function<void()>> work;
    for (std::size_t m = 0; m < method_names.size(); ++m)
        for (std::size_t s = 0; s < opt.seeds.size(); ++s)
            work.push_back([&, m, s]() {
                results[m][s] = sequential_degradation(pretrained, source, chain, fts[m].reg.method, fts[m],
                                                       probe_cfg, opt.seeds[s]);
            });
    run_parallel(opt.jobs, work);

    CsvWriter csv(opt.out_dir + "/chain.csv", kProbeHeader);
    std::vector<Series> medians;
    for (std::size_t m = 0; m < method_names.size(); ++m) {
        std::vector<std::vector<double>> by_stage(1 + chain.size());
        for (std::size_t s = 0; s < opt.seeds.size(); ++s) {
            emit_chain_rows(csv, config_hash, method_names[m], results[m][s], opt.seeds[s]);
            if (!results[m][s].failed)
                for (const ProbeStage& st : results[m][s].stages)
                    by_stage[st.stage_index].push_back(st.probe.accuracy);
        }
        std::vector<double> med;
        for (auto& stage_vals : by_stage)
            if (!stage_vals.empty()) med.push_back(median(stage_vals));
        medians.emplace_back(method_names[m], med);
    }
    csv.close();
    write_line_svg(opt.out_dir + "/chain.svg", "source-task probe accuracy along the chain", medians);
    save_run_manifest(opt.out_dir, config_hash, {"chain.csv", "chain.svg"}, now_seconds() - t0);
    guard.verify();
}

void cmd_cycle(RunConfig& cfg, const CliOptions& opt) {
    const std::string config_hash = hash_with_seeds(cfg, opt);
    EncoderConfig model = parse_model(cfg);
    SuiteData suite = parse_suite(cfg);
    const auto cycle_names = cfg.get_list("cycle.tasks", {"kw_src", "maj2", "order_a", "parity"});
    const std::size_t cycles = cfg.get_uint("cycle.cycles", 2);
    const auto method_names = cfg.get_list("method.names", {"standard", "r4f"});
    std::vector<FineTuneConfig> fts;
    for (const auto& name : method_names) fts.push_back(parse_finetune(cfg, name));
    ProbeConfig probe_cfg = parse_probe(cfg);
    EncoderParams pretrained = load_pretrained(cfg, model);
    CheckpointGuard guard(cfg);
    (void)cfg.get_string("report.wall_seconds", "frozen");
    cfg.require_all_consumed();

    const double t0 = now_seconds();
    ensure_dir(opt.out_dir);
    std::vector<TaskData> cycle_tasks = generate_named(suite, cycle_names);

    std::vector<std::vector<ChainResult>> results(method_names.size(),
                                                  std::vector<ChainResult>(opt.seeds.size()));
    std::vector<std::function<void()>> work;
    for (std::size_t m = 0; m < method_names.size(); ++m)
        for (std::size_t s = 0; s < opt.seeds.size(); ++s)
            work.push_back([&, m, s]() {
                results[m][s] = cyclic_retention(pretrained, cycle_tasks, cycles, fts[m].reg.method, fts[m],
                                                 probe_cfg, opt.seeds[s]);
            });
    run_parallel(opt.jobs, work);

    CsvWriter csv(opt.out_dir + "/cycle.csv", kProbeHeader);
    std::vector<Series> series;
    for (std::size_t m = 0; m < method_names.size(); ++m) {
        std::vector<std::vector<double>> by_cycle(cycles);
        for (std::size_t s = 0; s < opt.seeds.size(); ++s) {
            emit_chain_rows(csv, config_hash, method_names[m], results[m][s], opt.seeds[s]);
            if (!results[m][s].failed)
                for (const ProbeStage& st : results[m][s].stages)
                    by_cycle[st.cycle - 1].push_back(st.probe.accuracy);
        }
        std::vector<double> med;
        for (auto& vals : by_cycle)
            if (!vals.empty()) med.push_back(median(vals));
        series.emplace_back(method_names[m], med);
    }
    csv.close();
    write_line_svg(opt.out_dir + "/cycle.svg", "probe accuracy per cycle (median over tasks and seeds)",
                   series);
    save_run_manifest(opt.out_dir, config_hash, {"cycle.csv", "cycle.svg"}, now_seconds() - t0);
    guard.verify();
}

void cmd_probe_matrix(RunConfig& cfg, const CliOptions& opt) {
    const std::string config_hash = hash_with_seeds(cfg, opt);
    EncoderConfig model = parse_model(cfg);
    SuiteData suite = parse_suite(cfg);
    const std::string source_name = cfg.get_string("matrix.source", "kw_src");
    const auto method_names = cfg.get_list("method.names", {"standard", "r3f", "r4f"});
    std::vector<FineTuneConfig> fts;
    for (const auto& name : method_names) fts.push_back(parse_finetune(cfg, name));
    ProbeConfig probe_cfg = parse_probe(cfg);
    EncoderParams pretrained = load_pretrained(cfg, model);
    CheckpointGuard guard(cfg);
    (void)cfg.get_string("report.wall_seconds", "frozen");
    cfg.require_all_consumed();

    const double t0 = now_seconds();
    ensure_dir(opt.out_dir);
    TaskData source = suite_task(suite, source_name);
    std::vector<TaskData> probe_tasks;
    std::vector<std::string> probe_names;
    for (const TaskSpec& spec : suite.specs) {
        if (spec.name == source_name) continue;
        probe_tasks.push_back(generate_task(spec));
        probe_names.push_back(spec.name);
    }

    // Baseline probes of the raw pretrained encoder plus one fine-tune per
    // (method, seed), probing all targets on the frozen result.
    struct Cell {
        double accuracy = 0.0;
        bool failed = false;
    };
    std::vector<std::vector<std::vector<Cell>>> table(
        method_names.size() + 1,
        std::vector<std::vector<Cell>>(opt.seeds.size(), std::vector<Cell>(probe_tasks.size())));

    std::vector<std::function<void()>> work;
    for (std::size_t s = 0; s < opt.seeds.size(); ++s) {
        work.push_back([&, s]() {
            EncoderParams base = pretrained;
            for (std::size_t p = 0; p < probe_tasks.size(); ++p)
                table[0][s][p].accuracy = probe(base, probe_tasks[p], probe_cfg, opt.seeds[s]).accuracy;
        });
    }
    for (std::size_t m = 0; m < method_names.size(); ++m) {
        for (std::size_t s = 0; s < opt.seeds.size(); ++s) {
            work.push_back([&, m, s]() {
                FineTuneResult ft = fine_tune(pretrained, source, fts[m], opt.seeds[s]);
                for (std::size_t p = 0; p < probe_tasks.size(); ++p) {
                    if (ft.failed) {
                        table[m + 1][s][p].failed = true;
                    } else {
                        table[m + 1][s][p].accuracy =
                            probe(ft.best_encoder, probe_tasks[p], probe_cfg, opt.seeds[s]).accuracy;
                    }
                }
            });
        }
    }
    run_parallel(opt.jobs, work);

    CsvWriter csv(opt.out_dir + "/probe_matrix.csv", kProbeHeader);
    std::vector<Series> medians;
    std::vector<std::string> row_names;
    row_names.push_back("none");
    for (const auto& n : method_names) row_names.push_back(n);
    for (std::size_t r = 0; r < row_names.size(); ++r) {
        std::vector<double> med_by_task;
        for (std::size_t p = 0; p < probe_tasks.size(); ++p) {
            std::vector<double> vals;
            for (std::size_t s = 0; s < opt.seeds.size(); ++s) {
                const Cell& cell = table[r][s][p];
                csv.row({config_hash, row_names[r], "0", r == 0 ? "none" : source_name, probe_names[p], "0",
                         std::to_string(opt.seeds[s]),
                         cell.failed ? "failed" : csv_f64(cell.accuracy)});
                if (!cell.failed) vals.push_back(cell.accuracy);
            }
            if (!vals.empty()) med_by_task.push_back(median(vals));
        }
        medians.emplace_back(row_names[r], med_by_task);
    }
    csv.close();
    write_line_svg(opt.out_dir + "/probe_matrix.svg",
                   "median probe accuracy per target task (source: " + source_name + ")", medians);
    save_run_manifest(opt.out_dir, config_hash, {"probe_matrix.csv", "probe_matrix.svg"},
                      now_seconds() - t0);
    guard.verify();
}

void cmd_theory(RunConfig& cfg, const CliOptions& opt) {
    const std::string config_hash = hash_with_seeds(cfg, opt);
    const std::size_t trials = cfg.get_uint("theory.trials", 200);
    const std::size_t dim = cfg.get_uint("theory.dim", 3);
    const std::uint64_t seed = cfg.get_uint("theory.seed", 7);
    (void)cfg.get_string("report.wall_seconds", "frozen");
    cfg.require_all_consumed();
    if (trials == 0) throw ConfigError("theory.trials must be >= 1");

    ensure_dir(opt.out_dir);

    // gaussian_kl self-tests against hand values
    auto gauss1 = [](double mean, double var) {
        GaussianDensity g;
        g.mean = Eigen::VectorXd::Constant(1, mean);
        g.covariance = Eigen::MatrixXd::Constant(1, 1, var);
        return g;
    };
    if (std::abs(gaussian_kl(gauss1(0, 1), gauss1(1, 1)) - 0.5) > 1e-6 ||
        std::abs(gaussian_kl(gauss1(0, 1), gauss1(0, 4)) - 0.318147) > 1e-6 ||
        std::abs(gaussian_kl(gauss1(0, 1), gauss1(0, 1))) > 1e-12)
        throw InvariantViolation("gaussian_kl self-test failed");

    const double t0 = now_seconds();
    Rng rng(stream_seed(seed, "theory"));
    LipschitzReport report = lipschitz_bound_experiment(dim, trials, rng);

    CsvWriter csv(opt.out_dir + "/theory.csv",
                  {"trial", "in_dim", "out_dim", "det_g", "kl_repr", "kl_output", "relation"});
    for (const LipschitzTrial& t : report.trials) {
        csv.row({std::to_string(t.trial), std::to_string(t.in_dim), std::to_string(t.out_dim),
                 csv_f64_wide(t.det_g), csv_f64_wide(t.kl_repr), csv_f64_wide(t.kl_output), t.relation});
    }
    csv.close();
    save_run_manifest(opt.out_dir, config_hash, {"theory.csv"}, now_seconds() - t0);

    if (!report.ok) {
        for (const LipschitzTrial& t : report.trials) {
            if (t.relation == "violated")
                throw InvariantViolation("theory trial " + std::to_string(t.trial) +
                                         " violated its KL relation: kl_repr=" + csv_f64_wide(t.kl_repr) +
                                         " kl_output=" + csv_f64_wide(t.kl_output));
        }
    }
}

void cmd_report(RunConfig& cfg, const CliOptions& opt) {
    const std::string config_hash = hash_with_seeds(cfg, opt);
    (void)cfg.get_string("report.wall_seconds", "frozen");
    cfg.require_all_consumed();
    if (opt.inputs.empty()) throw ConfigError("report needs at least one completed run directory");

    // task -> method -> (config_hash, max, median); keyed join, input order free
    std::map<std::string, std::map<std::string, std::tuple<std::string, double, double>>> cells;
    for (const std::string& dir : opt.inputs) {
        std::ifstream in(dir + "/results.json");
        if (!in) throw ConfigError("no results.json under '" + dir + "'");
        nlohmann::json doc;
        in >> doc;
        const std::string task = doc.at("task").get<std::string>();
        const std::string hash = doc.at("config_hash").get<std::string>();
        for (auto it = doc.at("methods").begin(); it != doc.at("methods").end(); ++it) {
            auto& cell = cells[task][it.key()];
            if (!std::get<0>(cell).empty() && std::get<0>(cell) != hash)
                throw Error("conflicting config hashes for task '" + task + "', method '" + it.key() + "'");
            cell = {hash, it.value().at("max").get<double>(), it.value().at("median").get<double>()};
        }
    }

    ensure_dir(opt.out_dir);
    CsvWriter csv(opt.out_dir + "/report.csv",
                  {"task", "method", "best_max", "best_median", "config_hash"});
    std::map<std::string, std::vector<double>> series_by_method;
    for (const auto& [task, methods] : cells) {
        for (const auto& [method, cell] : methods) {
            csv.row({task, method, csv_f64(std::get<1>(cell)), csv_f64(std::get<2>(cell)),
                     std::get<0>(cell)});
            series_by_method[method].push_back(std::get<1>(cell));
        }
    }
    csv.close();
    std::vector<Series> series;
    for (const auto& [method, vals] : series_by_method) series.emplace_back(method, vals);
    write_line_svg(opt.out_dir + "/report.svg", "best dev accuracy per task", series);
    save_run_manifest(opt.out_dir, config_hash, {"report.csv", "report.svg"}, 0.0);
}

int run_command(const std::string& command, RunConfig& cfg, const CliOptions& opt) {
    try {
        if (command == "pretrain") {
            cmd_pretrain(cfg, opt);
        } else if (command == "finetune") {
            cmd_finetune(cfg, opt);
        } else if (command == "stability") {
            cmd_stability(cfg, opt);
        } else if (command == "chain") {
            cmd_chain(cfg, opt);
        } else if (command == "cycle") {
            cmd_cycle(cfg, opt);
        } else if (command == "probe-matrix") {
            cmd_probe_matrix(cfg, opt);
        } else if (command == "theory") {
            cmd_theory(cfg, opt);
        } else if (command == "report") {
            cmd_report(cfg, opt);
        } else {
            throw ConfigError("unknown command '" + command + "'");
        }
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const InvariantViolation& e) {
        std::fprintf(stderr, "invariant violation: %s\n", e.what());
        return 3;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}

}  // namespace trusttune
