#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "trusttune/rng.hpp"

namespace trusttune {

// Reserved token ids shared by every task and the pretraining corpus.
constexpr int kClsId = 0;
constexpr int kMaskId = 1;
constexpr int kPadId = 2;
constexpr int kFirstContentId = 3;

struct Vocabulary {
    std::size_t size = 64;  // >= 8

    std::size_t content_count() const { return size - kFirstContentId; }
    int content_id(std::size_t i) const { return kFirstContentId + static_cast<int>(i); }
};

enum class TaskFamily { kKeyword, kMajority, kOrder, kParity };

const char* family_name(TaskFamily f);
TaskFamily family_from_name(const std::string& name);

struct TaskSpec {
    std::string name;
    TaskFamily family = TaskFamily::kKeyword;
    std::uint64_t seed = 0;
    std::size_t vocab_size = 64;
    std::size_t seq_len = 16;       // includes the CLS slot at position 0
    std::size_t train_size = 2000;
    std::size_t dev_size = 500;
    std::size_t num_classes = 2;

    std::vector<int> keywords;              // KEYWORD
    std::vector<std::vector<int>> groups;   // MAJORITY, one group per class
    int order_first = -1;                   // ORDER: label 1 iff this token's
    int order_second = -1;                  //   first occurrence comes first
    int parity_token = -1;                  // PARITY
};

struct Example {
    std::vector<int> tokens;  // length seq_len, tokens[0] == kClsId
    int label = 0;
};

struct Split {
    std::vector<Example> examples;
};

struct TaskData {
    TaskSpec spec;
    Split train;
    Split dev;
};

// Recomputes the label from the tokens by the family rule. Every generated
// example satisfies derive_label(spec, ex.tokens) == ex.label.
int derive_label(const TaskSpec& spec, const std::vector<int>& tokens);

// Deterministic generation: balanced classes per split (round-robin),
// train/dev disjoint as token-sequence sets, MAJORITY ties impossible by
// construction. Errors on infeasible specs and when rejection exceeds 100x
// the requested example count.
TaskData generate_task(const TaskSpec& spec);

// 1 source + 6 probe tasks over one shared vocabulary. Fixed family
// assignment: kw_src (source), kw_alt, maj2, maj3, order_a, order_b, parity.
std::vector<TaskSpec> task_suite(std::uint64_t master_seed);

TaskSpec find_task(const std::vector<TaskSpec>& suite, const std::string& name);

// Split files: one-line header `# family=<F> seed=<s> V=<v> m=<m>`, then one
// `label<TAB>id id id ...` line per example. UTF-8, LF line endings.
void export_split(const Split& split, const TaskSpec& spec, const std::string& path);
Split import_split(const std::string& path, std::size_t expected_vocab, std::size_t expected_seq_len);

// Unlabeled pretraining corpus: token chains following a seeded successor
// permutation over the content ids, so masked tokens are recoverable from
// their neighbors.
std::vector<std::vector<int>> make_pretrain_corpus(std::uint64_t seed, std::size_t corpus_size,
                                                   std::size_t seq_len, const Vocabulary& vocab);

}  // namespace trusttune
