#include "trusttune/tasks.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "trusttune/errors.hpp"
#include "trusttune/hash.hpp"

namespace trusttune {

const char* family_name(TaskFamily f) {
    switch (f) {
        case TaskFamily::kKeyword: return "KEYWORD";
        case TaskFamily::kMajority: return "MAJORITY";
        case TaskFamily::kOrder: return "ORDER";
        case TaskFamily::kParity: return "PARITY";
    }
    return "?";
}

TaskFamily family_from_name(const std::string& name) {
    if (name == "KEYWORD") return TaskFamily::kKeyword;
    if (name == "MAJORITY") return TaskFamily::kMajority;
    if (name == "ORDER") return TaskFamily::kOrder;
    if (name == "PARITY") return TaskFamily::kParity;
    throw ParseError("unknown task family '" + name + "'");
}

namespace {

void validate_spec(const TaskSpec& spec) {
    if (spec.vocab_size < 8) throw ConfigError("task '" + spec.name + "': vocabulary must have size >= 8");
    if (spec.seq_len < 2) throw ConfigError("task '" + spec.name + "': sequence length too small");
    switch (spec.family) {
        case TaskFamily::kKeyword:
            if (spec.keywords.empty()) throw ConfigError("KEYWORD task needs a keyword set");
            if (spec.num_classes != 2) throw ConfigError("KEYWORD task is binary");
            break;
        case TaskFamily::kMajority: {
            if (spec.groups.size() != spec.num_classes)
                throw ConfigError("MAJORITY task needs one token group per class");
            std::set<int> seen;
            for (const auto& g : spec.groups) {
                if (g.empty()) throw ConfigError("MAJORITY group must be nonempty");
                for (int t : g) {
                    if (!seen.insert(t).second) throw ConfigError("MAJORITY groups must be disjoint");
                }
            }
            break;
        }
        case TaskFamily::kOrder:
            if (spec.order_first < 0 || spec.order_second < 0 || spec.order_first == spec.order_second)
                throw ConfigError("ORDER task needs two distinct tokens");
            if (spec.seq_len < 3)
                throw ConfigError("ORDER task: sequence too short to place both tokens");
            if (spec.num_classes != 2) throw ConfigError("ORDER task is binary");
            break;
        case TaskFamily::kParity:
            if (spec.parity_token < 0) throw ConfigError("PARITY task needs a counted token");
            if (spec.num_classes != 2) throw ConfigError("PARITY task is binary");
            break;
    }
}

// Content tokens that carry no task signal for this spec.
std::vector<int> neutral_tokens(const TaskSpec& spec) {
    std::set<int> excluded;
    for (int t : spec.keywords) excluded.insert(t);
    for (const auto& g : spec.groups)
        for (int t : g) excluded.insert(t);
    if (spec.order_first >= 0) excluded.insert(spec.order_first);
    if (spec.order_second >= 0) excluded.insert(spec.order_second);
    if (spec.parity_token >= 0) excluded.insert(spec.parity_token);
    std::vector<int> out;
    for (int id = kFirstContentId; id < static_cast<int>(spec.vocab_size); ++id) {
        if (!excluded.count(id)) out.push_back(id);
    }
    if (out.empty()) throw ConfigError("task '" + spec.name + "': no neutral tokens left in vocabulary");
    return out;
}

std::vector<std::size_t> sample_positions(Rng& rng, std::size_t seq_len, std::size_t count) {
    // distinct positions in [1, seq_len)
    std::vector<std::size_t> all;
    for (std::size_t i = 1; i < seq_len; ++i) all.push_back(i);
    rng.shuffle(all);
    all.resize(count);
    return all;
}

// Builds one example for the requested class; the label always re-derives
// via derive_label by construction.
Example build_example(const TaskSpec& spec, int wanted_class, Rng& rng,
                      const std::vector<int>& neutral) {
    Example ex;
    ex.tokens.assign(spec.seq_len, kClsId);
    for (std::size_t i = 1; i < spec.seq_len; ++i)
        ex.tokens[i] = neutral[rng.uniform_index(neutral.size())];

    switch (spec.family) {
        case TaskFamily::kKeyword: {
            if (wanted_class == 1) {
                const std::size_t count = 1 + rng.uniform_index(2);
                for (std::size_t pos : sample_positions(rng, spec.seq_len, count))
                    ex.tokens[pos] = spec.keywords[rng.uniform_index(spec.keywords.size())];
            }
            break;
        }
        case TaskFamily::kMajority: {
            const std::size_t q = spec.num_classes;
            const std::size_t win = 2 + rng.uniform_index(2);  // 2 or 3 occurrences
            std::vector<std::size_t> counts(q);
            std::size_t total = 0;
            for (std::size_t c = 0; c < q; ++c) {
                counts[c] = (c == static_cast<std::size_t>(wanted_class)) ? win
                                                                          : rng.uniform_index(win);
                total += counts[c];
            }
            auto positions = sample_positions(rng, spec.seq_len, total);
            std::size_t k = 0;
            for (std::size_t c = 0; c < q; ++c) {
                const auto& group = spec.groups[c];
                for (std::size_t i = 0; i < counts[c]; ++i)
                    ex.tokens[positions[k++]] = group[rng.uniform_index(group.size())];
            }
            break;
        }
        case TaskFamily::kOrder: {
            auto positions = sample_positions(rng, spec.seq_len, 2);
            std::sort(positions.begin(), positions.end());
            if (wanted_class == 1) {
                ex.tokens[positions[0]] = spec.order_first;
                ex.tokens[positions[1]] = spec.order_second;
            } else {
                ex.tokens[positions[0]] = spec.order_second;
                ex.tokens[positions[1]] = spec.order_first;
            }
            break;
        }
        case TaskFamily::kParity: {
            const std::size_t max_count = std::min<std::size_t>(4, spec.seq_len - 1);
            std::vector<std::size_t> options;
            for (std::size_t c = (wanted_class == 1) ? 1 : 0; c <= max_count; c += 2)
                options.push_back(c);
            const std::size_t count = options[rng.uniform_index(options.size())];
            for (std::size_t pos : sample_positions(rng, spec.seq_len, count))
                ex.tokens[pos] = spec.parity_token;
            break;
        }
    }
    ex.label = wanted_class;
    return ex;
}

}  // namespace

int derive_label(const TaskSpec& spec, const std::vector<int>& tokens) {
    switch (spec.family) {
        case TaskFamily::kKeyword: {
            for (int t : tokens) {
                if (std::find(spec.keywords.begin(), spec.keywords.end(), t) != spec.keywords.end())
                    return 1;
            }
            return 0;
        }
        case TaskFamily::kMajority: {
            std::size_t best = 0;
            long best_count = -1;
            bool tie = false;
            for (std::size_t c = 0; c < spec.groups.size(); ++c) {
                long count = 0;
                for (int t : tokens)
                    if (std::find(spec.groups[c].begin(), spec.groups[c].end(), t) != spec.groups[c].end())
                        ++count;
                if (count > best_count) {
                    best_count = count;
                    best = c;
                    tie = false;
                } else if (count == best_count) {
                    tie = true;
                }
            }
            if (tie) throw NumericError("MAJORITY label undefined: tied group counts");
            return static_cast<int>(best);
        }
        case TaskFamily::kOrder: {
            long first = -1, second = -1;
            for (std::size_t i = 0; i < tokens.size(); ++i) {
                if (tokens[i] == spec.order_first && first < 0) first = static_cast<long>(i);
                if (tokens[i] == spec.order_second && second < 0) second = static_cast<long>(i);
            }
            if (first < 0 || second < 0) throw NumericError("ORDER label undefined: token missing");
            return first < second ? 1 : 0;
        }
        case TaskFamily::kParity: {
            long count = 0;
            for (int t : tokens)
                if (t == spec.parity_token) ++count;
            return static_cast<int>(count % 2);
        }
    }
    throw Error("unreachable");
}

TaskData generate_task(const TaskSpec& spec) {
    validate_spec(spec);
    const auto neutral = neutral_tokens(spec);
    Rng rng(stream_seed(spec.seed, "task-gen"));

    const std::size_t want_total = spec.train_size + spec.dev_size;
    const std::size_t attempt_cap = 100 * want_total;

    std::set<std::vector<int>> seen;
    TaskData data;
    data.spec = spec;

    std::size_t attempts = 0;
    auto fill = [&](Split& split, std::size_t count) {
        for (std::size_t i = 0; i < count; ++i) {
            const int wanted = static_cast<int>(i % spec.num_classes);
            for (;;) {
                if (++attempts > attempt_cap)
                    throw ConfigError("task '" + spec.name +
                                      "': generation exceeded 100x oversampling cap (infeasible spec?)");
                Example ex = build_example(spec, wanted, rng, neutral);
                if (derive_label(spec, ex.tokens) != wanted) continue;
                if (!seen.insert(ex.tokens).second) continue;           // keep splits disjoint
                split.examples.push_back(std::move(ex));
                break;
            }
        }
    };
    fill(data.train, spec.train_size);
    fill(data.dev, spec.dev_size);
    return data;
}

std::vector<TaskSpec> task_suite(std::uint64_t master_seed) {
    const Vocabulary vocab;
    Rng rng(stream_seed(master_seed, "suite"));

    // Distinct parameter tokens per task, drawn without replacement so rules
    // stay pairwise distinct.
    std::vector<int> pool;
    for (std::size_t i = 0; i < vocab.content_count(); ++i) pool.push_back(vocab.content_id(i));
    rng.shuffle(pool);
    std::size_t next = 0;
    auto take = [&](std::size_t k) {
        std::vector<int> out(pool.begin() + static_cast<long>(next),
                             pool.begin() + static_cast<long>(next + k));
        next += k;
        return out;
    };

    std::vector<TaskSpec> suite;
    auto base = [&](const std::string& name, TaskFamily fam) {
        TaskSpec s;
        s.name = name;
        s.family = fam;
        s.seed = stream_seed(master_seed, name);
        s.vocab_size = vocab.size;
        return s;
    };

    TaskSpec kw_src = base("kw_src", TaskFamily::kKeyword);
    kw_src.keywords = take(3);
    suite.push_back(kw_src);

    TaskSpec kw_alt = base("kw_alt", TaskFamily::kKeyword);
    kw_alt.keywords = take(3);
    suite.push_back(kw_alt);

    TaskSpec maj2 = base("maj2", TaskFamily::kMajority);
    maj2.groups = {take(3), take(3)};
    suite.push_back(maj2);

    TaskSpec maj3 = base("maj3", TaskFamily::kMajority);
    maj3.num_classes = 3;
    maj3.groups = {take(3), take(3), take(3)};
    suite.push_back(maj3);

    TaskSpec order_a = base("order_a", TaskFamily::kOrder);
    {
        auto pair = take(2);
        order_a.order_first = pair[0];
        order_a.order_second = pair[1];
    }
    suite.push_back(order_a);

    TaskSpec order_b = base("order_b", TaskFamily::kOrder);
    {
        auto pair = take(2);
        order_b.order_first = pair[0];
        order_b.order_second = pair[1];
    }
    suite.push_back(order_b);

    TaskSpec parity = base("parity", TaskFamily::kParity);
    parity.parity_token = take(1)[0];
    suite.push_back(parity);

    return suite;
}

TaskSpec find_task(const std::vector<TaskSpec>& suite, const std::string& name) {
    for (const auto& s : suite)
        if (s.name == name) return s;
    throw ConfigError("unknown task '" + name + "' (expected one of kw_src, kw_alt, maj2, maj3, order_a, order_b, parity)");
}

void export_split(const Split& split, const TaskSpec& spec, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ParseError("cannot open '" + path + "' for writing");
    out << "# family=" << family_name(spec.family) << " seed=" << spec.seed << " V=" << spec.vocab_size
        << " m=" << spec.seq_len << "\n";
    for (const Example& ex : split.examples) {
        out << ex.label << '\t';
        for (std::size_t i = 0; i < ex.tokens.size(); ++i) {
            if (i) out << ' ';
            out << ex.tokens[i];
        }
        out << '\n';
    }
}

Split import_split(const std::string& path, std::size_t expected_vocab, std::size_t expected_seq_len) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open '" + path + "'");
    std::string line;
    if (!std::getline(in, line)) throw ParseError(path + ": empty file");

    std::string fam;
    unsigned long long seed = 0, v = 0, m = 0;
    {
        std::istringstream hs(line);
        std::string hash, kv;
        hs >> hash;
        if (hash != "#") throw ParseError(path + ":1: missing '#' header");
        while (hs >> kv) {
            const auto eq = kv.find('=');
            if (eq == std::string::npos) throw ParseError(path + ":1: malformed header field '" + kv + "'");
            const std::string key = kv.substr(0, eq);
            const std::string val = kv.substr(eq + 1);
            if (key == "family") fam = val;
            else if (key == "seed") seed = std::stoull(val);
            else if (key == "V") v = std::stoull(val);
            else if (key == "m") m = std::stoull(val);
            else throw ParseError(path + ":1: unknown header field '" + key + "'");
        }
    }
    (void)seed;
    family_from_name(fam);  // validates
    if (v != expected_vocab)
        throw ParseError(path + ": header V=" + std::to_string(v) + " does not match current vocabulary size " +
                         std::to_string(expected_vocab));
    if (m != expected_seq_len)
        throw ParseError(path + ": header m=" + std::to_string(m) + " does not match current sequence length " +
                         std::to_string(expected_seq_len));

    Split split;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos)
            throw ParseError(path + ":" + std::to_string(line_no) + ": expected `label<TAB>ids`");
        Example ex;
        try {
            ex.label = std::stoi(line.substr(0, tab));
            std::istringstream ts(line.substr(tab + 1));
            int id;
            while (ts >> id) ex.tokens.push_back(id);
            if (!ts.eof()) throw ParseError("");
        } catch (const std::exception&) {
            throw ParseError(path + ":" + std::to_string(line_no) + ": malformed example line");
        }
        if (ex.tokens.size() != expected_seq_len)
            throw ParseError(path + ":" + std::to_string(line_no) + ": expected " +
                             std::to_string(expected_seq_len) + " tokens, got " + std::to_string(ex.tokens.size()));
        for (int id : ex.tokens) {
            if (id < 0 || static_cast<std::size_t>(id) >= expected_vocab)
                throw ParseError(path + ":" + std::to_string(line_no) + ": token id out of vocabulary");
        }
        split.examples.push_back(std::move(ex));
    }
    return split;
}

std::vector<std::vector<int>> make_pretrain_corpus(std::uint64_t seed, std::size_t corpus_size,
                                                   std::size_t seq_len, const Vocabulary& vocab) {
    if (corpus_size == 0) throw ConfigError("pretrain corpus must be nonempty");
    Rng rng(stream_seed(seed, "pretrain-corpus"));
    // Successor permutation over content ids.
    std::vector<int> succ;
    for (std::size_t i = 0; i < vocab.content_count(); ++i) succ.push_back(vocab.content_id(i));
    rng.shuffle(succ);

    std::vector<std::vector<int>> corpus;
    corpus.reserve(corpus_size);
    for (std::size_t s = 0; s < corpus_size; ++s) {
        std::vector<int> seq(seq_len, kClsId);
        int cur = vocab.content_id(rng.uniform_index(vocab.content_count()));
        for (std::size_t i = 1; i < seq_len; ++i) {
            seq[i] = cur;
            cur = succ[static_cast<std::size_t>(cur - kFirstContentId)];
        }
        corpus.push_back(std::move(seq));
    }
    return corpus;
}

}  // namespace trusttune
