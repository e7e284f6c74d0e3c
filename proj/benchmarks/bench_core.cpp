#include <benchmark/benchmark.h>

#include "trusttune/finetune.hpp"
#include "trusttune/head.hpp"
#include "trusttune/objectives.hpp"
#include "trusttune/tasks.hpp"

using namespace trusttune;

namespace {

EncoderParams bench_encoder() {
    Rng init(1);
    return EncoderParams::init(EncoderConfig{}, init);
}

std::vector<int> bench_tokens() {
    std::vector<int> tokens(16, kClsId);
    for (std::size_t i = 1; i < tokens.size(); ++i) tokens[i] = kFirstContentId + static_cast<int>(i);
    return tokens;
}

struct BenchBatch {
    std::vector<Example> examples;
    BatchView view;
    BenchBatch() {
        Rng rng(3);
        for (int i = 0; i < 8; ++i) {
            Example ex;
            ex.tokens = bench_tokens();
            rng.shuffle(ex.tokens);
            ex.tokens[0] = kClsId;
            ex.label = i % 2;
            examples.push_back(std::move(ex));
        }
        for (const Example& ex : examples) view.push_back(&ex);
    }
};

}  // namespace

static void BM_encode_forward(benchmark::State& state) {
    EncoderParams enc = bench_encoder();
    const auto tokens = bench_tokens();
    for (auto _ : state) {
        benchmark::DoNotOptimize(encode(enc, tokens));
    }
}
BENCHMARK(BM_encode_forward);

static void BM_standard_step(benchmark::State& state) {
    EncoderParams enc = bench_encoder();
    Rng init(2);
    HeadParams head = HeadParams::init(enc.config.embed_dim, 2, 2, false, init);
    BenchBatch batch;
    RegularizerConfig cfg;
    for (auto _ : state) {
        enc.zero_grads();
        head.zero_grads();
        benchmark::DoNotOptimize(standard_loss(enc, head, batch.view, cfg));
    }
}
BENCHMARK(BM_standard_step);

static void BM_r3f_step(benchmark::State& state) {
    EncoderParams enc = bench_encoder();
    Rng init(2);
    HeadParams head = HeadParams::init(enc.config.embed_dim, 2, 2, false, init);
    BenchBatch batch;
    RegularizerConfig cfg;
    cfg.method = Method::kR3F;
    cfg.sigma = 0.1;
    Rng noise(7);
    for (auto _ : state) {
        enc.zero_grads();
        head.zero_grads();
        benchmark::DoNotOptimize(r3f_loss(enc, head, batch.view, cfg, noise));
    }
}
BENCHMARK(BM_r3f_step);

static void BM_smart_step(benchmark::State& state) {
    EncoderParams enc = bench_encoder();
    Rng init(2);
    HeadParams head = HeadParams::init(enc.config.embed_dim, 2, 2, false, init);
    BenchBatch batch;
    RegularizerConfig cfg;
    cfg.method = Method::kSmart;
    cfg.sigma = 0.01;
    cfg.epsilon = 0.01;
    cfg.ascent_steps = static_cast<std::size_t>(state.range(0));
    Rng noise(7);
    for (auto _ : state) {
        enc.zero_grads();
        head.zero_grads();
        benchmark::DoNotOptimize(smart_loss(enc, head, batch.view, cfg, noise));
    }
}
BENCHMARK(BM_smart_step)->Arg(1)->Arg(3);

static void BM_spectral_normalize(benchmark::State& state) {
    Rng rng(5);
    Tensor w = Tensor::zeros({16, 16});
    for (double& v : w.values) v = rng.normal();
    SpectralState st = SpectralState::init(16, 16, rng);
    for (auto _ : state) {
        benchmark::DoNotOptimize(power_iterate(w, st, 1));
    }
}
BENCHMARK(BM_spectral_normalize);

static void BM_task_generation(benchmark::State& state) {
    auto suite = task_suite(42);
    TaskSpec spec = find_task(suite, "maj2");
    spec.train_size = 512;
    spec.dev_size = 128;
    for (auto _ : state) {
        benchmark::DoNotOptimize(generate_task(spec));
    }
}
BENCHMARK(BM_task_generation);

BENCHMARK_MAIN();
