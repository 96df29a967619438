#ifndef FH_EXPERIMENT_HPP
#define FH_EXPERIMENT_HPP

// Experiment harness behind the fhctl subcommands. Everything here is a pure
// function of the configuration: seeds are derived from the config seed and
// instance index, and output rows are ordered by instance before writing, so
// the worker count never changes an output byte.

#include "fh/cnf.hpp"
#include "fh/csv.hpp"
#include "fh/error.hpp"
#include "fh/homotopy.hpp"
#include "fh/objective.hpp"
#include "fh/parallel.hpp"
#include "fh/ranking.hpp"
#include "fh/rng.hpp"
#include "fh/search.hpp"

#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace fh
{
namespace fs = std::filesystem;

// --- Configuration -----------------------------------------------------------------------

struct InstanceSpec
{
    std::string source = "planted"; // random | planted | file
    std::uint32_t m = 12;
    std::size_t k = 50;
    std::size_t count = 50;
    std::vector< std::string > paths; // file source
};

struct ChainSpec
{
    double lr = 0.05;
    std::size_t max_steps = 2000;
    std::size_t keep_every = 1;
    bool allow_partial = false;
};

struct AttackSpec
{
    std::vector< std::string > arms = {"GR", "GradientGreedy", "FH-GR"};
    std::size_t budget = 1000;
    std::vector< std::size_t > cuts = {500, 1000};
    std::size_t batch_size = 0; // 0: automatic
    std::size_t top_k = 0;      // 0: automatic
    std::size_t stride = 1;
    std::size_t K = 100;
    std::size_t retry_cap = 400;
};

struct ControlFamily
{
    Activation activation = Activation::Identity;
    std::size_t count = 5;
    std::size_t vocab = 8;
    std::size_t positions = 6;
    std::size_t hidden = 8;
};

struct RankSpec
{
    std::size_t positions = 4;
    double p = 0.99;
    std::size_t depth = 0; // 0: full depth |V|
    std::vector< ControlFamily > controls = {ControlFamily{}};
};

struct ExperimentConfig
{
    std::uint64_t seed = 1;
    InstanceSpec instances;
    ChainSpec chain;
    AttackSpec attack;
    RankSpec rankeval;
    std::size_t bin_width = 50;
    std::string chain_dir; // empty: <out>/chains
};

inline const std::vector< std::string >& known_arms()
{
    static const std::vector< std::string > arms = {"GR", "GradientGreedy", "FH-GR", "FH-GradientGreedy",
                                                    "FH-binary-search"};
    return arms;
}

namespace detail
{
inline void reject_unknown(const nlohmann::json& j, const std::set< std::string >& allowed, const std::string& where)
{
    require(j.is_object(), ErrorKind::Config, where + " must be an object");
    for (auto it = j.begin(); it != j.end(); ++it)
        require(allowed.count(it.key()) > 0, ErrorKind::Config, "unknown key '" + it.key() + "' in " + where);
}

template < typename T >
void read_opt(const nlohmann::json& j, const char* key, T& dst, const std::string& where)
{
    if (!j.contains(key))
        return;
    try
    {
        dst = j.at(key).get< T >();
    }
    catch (const nlohmann::json::exception&)
    {
        fail(ErrorKind::Config, std::string("bad value for '") + key + "' in " + where);
    }
}
} // namespace detail

inline ExperimentConfig config_from_json(const nlohmann::json& j)
{
    using detail::read_opt;
    ExperimentConfig c;
    detail::reject_unknown(j, {"seed", "instances", "chain", "attack", "rankeval", "report", "chain_dir"}, "config");
    read_opt(j, "seed", c.seed, "config");
    read_opt(j, "chain_dir", c.chain_dir, "config");
    if (j.contains("instances"))
    {
        const auto& s = j["instances"];
        detail::reject_unknown(s, {"source", "m", "k", "count", "paths"}, "instances");
        read_opt(s, "source", c.instances.source, "instances");
        read_opt(s, "m", c.instances.m, "instances");
        read_opt(s, "k", c.instances.k, "instances");
        read_opt(s, "count", c.instances.count, "instances");
        read_opt(s, "paths", c.instances.paths, "instances");
    }
    if (j.contains("chain"))
    {
        const auto& s = j["chain"];
        detail::reject_unknown(s, {"lr", "max_steps", "keep_every", "allow_partial"}, "chain");
        read_opt(s, "lr", c.chain.lr, "chain");
        read_opt(s, "max_steps", c.chain.max_steps, "chain");
        read_opt(s, "keep_every", c.chain.keep_every, "chain");
        read_opt(s, "allow_partial", c.chain.allow_partial, "chain");
    }
    if (j.contains("attack"))
    {
        const auto& s = j["attack"];
        detail::reject_unknown(s, {"arms", "budget", "cuts", "batch_size", "top_k", "stride", "K", "retry_cap"}, "attack");
        read_opt(s, "arms", c.attack.arms, "attack");
        read_opt(s, "budget", c.attack.budget, "attack");
        read_opt(s, "cuts", c.attack.cuts, "attack");
        read_opt(s, "batch_size", c.attack.batch_size, "attack");
        read_opt(s, "top_k", c.attack.top_k, "attack");
        read_opt(s, "stride", c.attack.stride, "attack");
        read_opt(s, "K", c.attack.K, "attack");
        read_opt(s, "retry_cap", c.attack.retry_cap, "attack");
    }
    if (j.contains("rankeval"))
    {
        const auto& s = j["rankeval"];
        detail::reject_unknown(s, {"positions", "p", "depth", "controls"}, "rankeval");
        read_opt(s, "positions", c.rankeval.positions, "rankeval");
        read_opt(s, "p", c.rankeval.p, "rankeval");
        read_opt(s, "depth", c.rankeval.depth, "rankeval");
        if (s.contains("controls"))
        {
            require(s["controls"].is_array(), ErrorKind::Config, "rankeval.controls must be an array");
            c.rankeval.controls.clear();
            for (const auto& f : s["controls"])
            {
                detail::reject_unknown(f, {"activation", "count", "vocab", "positions", "hidden"}, "rankeval.controls");
                ControlFamily fam;
                std::string act = std::string(to_string(fam.activation));
                read_opt(f, "activation", act, "rankeval.controls");
                try
                {
                    fam.activation = activation_from_string(act);
                }
                catch (const Error&)
                {
                    fail(ErrorKind::Config, "unknown activation '" + act + "'");
                }
                read_opt(f, "count", fam.count, "rankeval.controls");
                read_opt(f, "vocab", fam.vocab, "rankeval.controls");
                read_opt(f, "positions", fam.positions, "rankeval.controls");
                read_opt(f, "hidden", fam.hidden, "rankeval.controls");
                require(fam.vocab >= 1 && fam.positions >= 1 && fam.hidden >= 1, ErrorKind::Config,
                        "control family dimensions must be positive");
                c.rankeval.controls.push_back(fam);
            }
        }
    }
    if (j.contains("report"))
    {
        detail::reject_unknown(j["report"], {"bin_width"}, "report");
        read_opt(j["report"], "bin_width", c.bin_width, "report");
    }

    const auto& src = c.instances.source;
    require(src == "random" || src == "planted" || src == "file", ErrorKind::Config,
            "instances.source must be random, planted or file");
    if (src == "file")
    {
        require(!c.instances.paths.empty(), ErrorKind::Config, "file source needs instances.paths");
        for (const auto& p : c.instances.paths)
            require(fs::exists(p), ErrorKind::Config, "instance file does not exist: " + p);
    }
    else
    {
        require(c.instances.m >= 3 && c.instances.k >= 1, ErrorKind::Config, "generators need m >= 3 and k >= 1");
    }
    require(c.chain.lr > 0.0 && c.chain.max_steps >= 1 && c.chain.keep_every >= 1, ErrorKind::Config,
            "chain needs lr > 0, max_steps >= 1, keep_every >= 1");
    for (const auto& a : c.attack.arms)
        require(std::find(known_arms().begin(), known_arms().end(), a) != known_arms().end(), ErrorKind::Config,
                "unknown attack arm '" + a + "'");
    require(!c.attack.cuts.empty(), ErrorKind::Config, "attack.cuts must be non-empty");
    std::sort(c.attack.cuts.begin(), c.attack.cuts.end());
    require(c.attack.stride >= 1 && c.attack.K >= 1, ErrorKind::Config, "attack needs stride >= 1 and K >= 1");
    require(c.rankeval.p > 0.0 && c.rankeval.p < 1.0, ErrorKind::Config, "rankeval.p must lie in (0, 1)");
    require(c.bin_width >= 1, ErrorKind::Config, "report.bin_width must be positive");
    return c;
}

/// Fully resolved configuration, defaults included. Output locations and the
/// worker count are not part of it, since they never change results.
inline nlohmann::json config_to_json(const ExperimentConfig& c)
{
    nlohmann::json controls = nlohmann::json::array();
    for (const auto& f : c.rankeval.controls)
        controls.push_back({{"activation", std::string(to_string(f.activation))},
                            {"count", f.count},
                            {"vocab", f.vocab},
                            {"positions", f.positions},
                            {"hidden", f.hidden}});
    nlohmann::json inst = {{"source", c.instances.source}};
    if (c.instances.source == "file")
        inst["paths"] = c.instances.paths;
    else
        inst.update({{"m", c.instances.m}, {"k", c.instances.k}, {"count", c.instances.count}});
    return {{"seed", c.seed},
            {"instances", inst},
            {"chain",
             {{"lr", c.chain.lr},
              {"max_steps", c.chain.max_steps},
              {"keep_every", c.chain.keep_every},
              {"allow_partial", c.chain.allow_partial}}},
            {"attack",
             {{"arms", c.attack.arms},
              {"budget", c.attack.budget},
              {"cuts", c.attack.cuts},
              {"batch_size", c.attack.batch_size},
              {"top_k", c.attack.top_k},
              {"stride", c.attack.stride},
              {"K", c.attack.K},
              {"retry_cap", c.attack.retry_cap}}},
            {"rankeval",
             {{"positions", c.rankeval.positions},
              {"p", c.rankeval.p},
              {"depth", c.rankeval.depth},
              {"controls", controls}}},
            {"report", {{"bin_width", c.bin_width}}}};
}

inline std::string read_file(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    require(static_cast< bool >(in), ErrorKind::Config, "cannot read " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_file(const fs::path& path, const std::string& content)
{
    std::error_code ec;
    if (path.has_parent_path())
        fs::create_directories(path.parent_path(), ec);
    std::ofstream out(path, std::ios::binary);
    require(static_cast< bool >(out), ErrorKind::Config, "cannot write " + path.string());
    out << content;
    require(static_cast< bool >(out), ErrorKind::Config, "write failed for " + path.string());
}

inline ExperimentConfig load_config(const std::string& path)
{
    nlohmann::json j;
    try
    {
        j = nlohmann::json::parse(read_file(path));
    }
    catch (const nlohmann::json::exception& e)
    {
        fail(ErrorKind::Config, std::string("config is not valid JSON: ") + e.what());
    }
    return config_from_json(j);
}

// --- Instances ---------------------------------------------------------------------------

namespace tag
{
inline constexpr std::uint64_t instance = 1;
inline constexpr std::uint64_t search = 2;
inline constexpr std::uint64_t rank_input = 3;
inline constexpr std::uint64_t rank_positions = 4;
inline constexpr std::uint64_t random_ranking = 5;
inline constexpr std::uint64_t control = 6;
} // namespace tag

struct Instance
{
    std::string id;
    CompiledInstance compiled;
    std::optional< TokenSequence > planted;

    bool oracle_tractable() const { return compiled.formula.num_vars <= kMaxEnumerationVars; }
};

inline std::string instance_id(std::size_t i)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "inst_%03zu", i);
    return buf;
}

inline std::vector< Instance > make_instances(const ExperimentConfig& c)
{
    std::vector< Instance > out;
    const auto& s = c.instances;
    if (s.source == "file")
    {
        std::set< std::string > ids;
        for (const auto& p : s.paths)
        {
            auto id = fs::path(p).stem().string();
            require(ids.insert(id).second, ErrorKind::Config, "duplicate instance name '" + id + "'");
            out.push_back({id, compile_to_network(parse_dimacs(read_file(p))), std::nullopt});
        }
        return out;
    }
    for (std::size_t i = 0; i < s.count; ++i)
    {
        const auto seed = derive_seed(c.seed, {tag::instance, i});
        if (s.source == "planted")
        {
            auto pf = planted_3cnf(s.m, s.k, seed);
            out.push_back({instance_id(i), compile_to_network(pf.formula), pf.assignment});
        }
        else
        {
            out.push_back({instance_id(i), compile_to_network(random_3cnf(s.m, s.k, seed)), std::nullopt});
        }
    }
    return out;
}

/// Anchor input for chains and the shared starting point of every arm.
inline TokenSequence anchor_for(const Instance& inst)
{
    return TokenSequence(std::vector< Token >(inst.compiled.positions(), 0));
}

inline SuffixProblem problem_for(const Instance& inst)
{
    return whole_sequence_problem(inst.compiled.net.shape(), inst.compiled.threshold);
}

inline fs::path chain_dir(const ExperimentConfig& c, const fs::path& out)
{
    return c.chain_dir.empty() ? out / "chains" : fs::path(c.chain_dir);
}

inline std::string header_comment(const std::string& cmd, const ExperimentConfig& c)
{
    return "# fhctl " + cmd + " config=" + config_to_json(c).dump() + "\n";
}

// --- gen -----------------------------------------------------------------------------------

struct GenRecord
{
    std::string id;
    std::size_t vars = 0;
    std::size_t clauses = 0;
    bool oracle_tractable = true;
};

inline std::vector< GenRecord > cmd_gen(const ExperimentConfig& c, const fs::path& out)
{
    std::vector< GenRecord > recs;
    nlohmann::json manifest = {{"format", "fh.instances/1"}, {"config", config_to_json(c)}, {"instances", nlohmann::json::array()}};
    for (const auto& inst : make_instances(c))
    {
        auto doc = instance_to_json(inst.compiled);
        if (inst.planted)
            doc["planted"] = inst.planted->tokens;
        write_file(out / "instances" / (inst.id + ".cnf"), to_dimacs(inst.compiled.formula));
        write_file(out / "instances" / (inst.id + ".json"), doc.dump() + "\n");
        recs.push_back({inst.id, inst.compiled.formula.num_vars, inst.compiled.formula.num_clauses(),
                        inst.oracle_tractable()});
        manifest["instances"].push_back(
            {{"id", inst.id}, {"vars", recs.back().vars}, {"clauses", recs.back().clauses},
             {"oracle_tractable", recs.back().oracle_tractable}});
    }
    write_file(out / "instances" / "manifest.json", manifest.dump(2) + "\n");
    return recs;
}

// --- chain -----------------------------------------------------------------------------------

struct ChainRecord
{
    std::string id;
    std::size_t t = 0;
    double endpoint_value = 0.0;
    bool reached = false;
};

inline CheckpointChain chain_for(const ExperimentConfig& c, const Instance& inst)
{
    return build_chain(inst.compiled.net, Readout{}, anchor_for(inst), inst.compiled.threshold,
                       ChainOptions{c.chain.lr, c.chain.max_steps, c.chain.keep_every, c.chain.allow_partial});
}

inline std::vector< ChainRecord > cmd_chain(const ExperimentConfig& c, const fs::path& out, std::size_t workers)
{
    const auto instances = make_instances(c);
    const auto dir = chain_dir(c, out);
    return parallel_map(instances.size(), workers, [&](std::size_t i) {
        const auto& inst = instances[i];
        const auto chain = chain_for(c, inst);
        write_file(dir / (inst.id + ".chain.jsonl"), chain_to_jsonl(chain));
        return ChainRecord{inst.id, chain.t(), chain_value(chain, chain.states.back(), chain.anchor), chain.reached};
    });
}

// --- attack ------------------------------------------------------------------------------------

struct AttackRow
{
    std::string instance;
    std::string method;
    std::uint64_t seed = 0;
    bool success = false;
    std::size_t iterations = 0; // reported total
    std::size_t raw_iterations = 0;
    std::size_t evaluations = 0;
    double final_value = 0.0;
    std::size_t budget = 0;
};

inline const std::vector< std::string >& attack_columns()
{
    static const std::vector< std::string > cols = {"instance",       "method",      "seed",        "success", "iterations",
                                                    "raw_iterations", "evaluations", "final_value", "budget"};
    return cols;
}

inline AttackRow run_arm(const ExperimentConfig& c, const Instance& inst, std::size_t index, const std::string& arm,
                         const CheckpointChain* chain)
{
    const auto prob = problem_for(inst);
    const auto seed = derive_seed(c.seed, {tag::search, index});
    SearchStrategy strat{SearchStrategy::Kind::GreedyRandom, c.attack.batch_size, c.attack.top_k, seed};
    if (arm == "GradientGreedy" || arm == "FH-GradientGreedy")
        strat.kind = SearchStrategy::Kind::GradientGreedy;

    AttackRow row{inst.id, arm, seed};
    row.budget = c.attack.budget;
    if (arm == "GR" || arm == "GradientGreedy")
    {
        const auto t = greedy_search(prob, inst.compiled.net, anchor_for(inst), SearchBudget{c.attack.budget}, strat);
        row.success = t.success;
        row.iterations = row.raw_iterations = t.iterations_used;
        row.evaluations = t.evaluations;
        row.final_value = t.final_value;
        return row;
    }
    require(chain != nullptr, ErrorKind::Config, "arm " + arm + " needs a chain for " + inst.id);
    FhResult r;
    if (arm == "FH-binary-search")
        r = fh_binary_search(prob, *chain, chain->anchor, BinarySearchOptions{c.attack.K, c.attack.retry_cap}, strat);
    else
        r = fh_attack(prob, *chain, chain->anchor, FhOptions{c.attack.budget, c.attack.stride}, strat);
    row.success = r.success;
    row.iterations = r.total_iterations;
    row.raw_iterations = r.raw_iterations;
    row.evaluations = r.evaluations;
    row.final_value = r.final_value;
    return row;
}

struct MethodSummary
{
    std::size_t instances = 0;
    std::map< std::size_t, std::size_t > success_at; // cut -> count
    std::map< std::size_t, std::size_t > histogram;  // bin start -> successful runs
};

/// Aggregates recomputable from rows alone: success within each cut (by
/// reported iterations) and a histogram of iterations over successful runs.
inline std::map< std::string, MethodSummary > summarize(const std::vector< AttackRow >& rows,
                                                        const std::vector< std::size_t >& cuts, std::size_t bin_width)
{
    std::map< std::string, MethodSummary > out;
    for (const auto& r : rows)
    {
        auto& m = out[r.method];
        ++m.instances;
        for (auto cut : cuts)
        {
            auto& n = m.success_at[cut];
            if (r.success && r.iterations <= cut)
                ++n;
        }
        if (r.success)
            ++m.histogram[(r.iterations / bin_width) * bin_width];
    }
    return out;
}

inline nlohmann::json summary_to_json(const std::map< std::string, MethodSummary >& s,
                                      const std::vector< std::size_t >& cuts, std::size_t bin_width)
{
    nlohmann::json methods = nlohmann::json::object();
    for (const auto& [name, m] : s)
    {
        nlohmann::json succ = nlohmann::json::object(), rate = nlohmann::json::object();
        for (const auto& [cut, n] : m.success_at)
        {
            succ[std::to_string(cut)] = n;
            rate[std::to_string(cut)] = m.instances ? static_cast< double >(n) / static_cast< double >(m.instances) : 0.0;
        }
        nlohmann::json hist = nlohmann::json::array();
        for (const auto& [lo, n] : m.histogram)
            hist.push_back({{"lo", lo}, {"hi", lo + bin_width}, {"count", n}});
        methods[name] = {{"instances", m.instances}, {"success", succ}, {"rate", rate}, {"histogram", hist}};
    }
    return {{"cuts", cuts}, {"bin_width", bin_width}, {"methods", methods}};
}

inline std::string attack_rows_to_csv(const std::vector< AttackRow >& rows, const std::string& header)
{
    std::string out = header + csv_line(attack_columns());
    for (const auto& r : rows)
        out += csv_line({r.instance, r.method, std::to_string(r.seed), r.success ? "1" : "0", std::to_string(r.iterations),
                         std::to_string(r.raw_iterations), std::to_string(r.evaluations), format_double(r.final_value),
                         std::to_string(r.budget)});
    return out;
}

inline std::vector< AttackRow > attack_rows_from_csv(const std::string& text)
{
    const auto t = parse_csv(text);
    require(t.header == attack_columns(), ErrorKind::Integrity, "attack CSV schema mismatch");
    std::vector< AttackRow > rows;
    try
    {
        for (const auto& f : t.rows)
            rows.push_back({f[0], f[1], std::stoull(f[2]), f[3] == "1", std::stoul(f[4]), std::stoul(f[5]),
                            std::stoul(f[6]), std::stod(f[7]), std::stoul(f[8])});
    }
    catch (const std::exception&)
    {
        fail(ErrorKind::Integrity, "attack CSV has a malformed numeric field");
    }
    return rows;
}

struct AttackReport
{
    std::vector< AttackRow > rows;
    nlohmann::json summary;
};

/// Runs every configured arm on every instance. Rows are ordered by instance,
/// then by arm in configuration order.
inline AttackReport run_attacks(const ExperimentConfig& c, const fs::path& out, std::size_t workers)
{
    const auto instances = make_instances(c);
    const bool need_chain = std::any_of(c.attack.arms.begin(), c.attack.arms.end(),
                                        [](const std::string& a) { return a.rfind("FH-", 0) == 0; });
    const auto dir = chain_dir(c, out);
    if (need_chain)
        for (const auto& inst : instances)
            require(fs::exists(dir / (inst.id + ".chain.jsonl")), ErrorKind::Config,
                    "missing chain file for " + inst.id + " in " + dir.string() + " (run 'fhctl chain' first)");

    auto per_instance = parallel_map(instances.size(), workers, [&](std::size_t i) {
        std::optional< CheckpointChain > chain;
        if (need_chain)
            chain = load_chain((dir / (instances[i].id + ".chain.jsonl")).string());
        std::vector< AttackRow > rows;
        for (const auto& arm : c.attack.arms)
            rows.push_back(run_arm(c, instances[i], i, arm, chain ? &*chain : nullptr));
        return rows;
    });
    AttackReport rep;
    for (auto& v : per_instance)
        rep.rows.insert(rep.rows.end(), v.begin(), v.end());
    rep.summary = summary_to_json(summarize(rep.rows, c.attack.cuts, c.bin_width), c.attack.cuts, c.bin_width);
    rep.summary["format"] = "fh.attack-summary/1";
    rep.summary["config"] = config_to_json(c);
    return rep;
}

inline AttackReport cmd_attack(const ExperimentConfig& c, const fs::path& out, std::size_t workers)
{
    auto rep = run_attacks(c, out, workers);
    write_file(out / "attack_rows.csv", attack_rows_to_csv(rep.rows, header_comment("attack", c)));
    write_file(out / "attack_summary.json", rep.summary.dump(2) + "\n");
    return rep;
}

// --- rankeval -------------------------------------------------------------------------------------

struct RankRow
{
    std::string instance;
    std::size_t position = 0;
    std::string method; // gradient | random
    double rbo = 0.0;
    double p = 0.0;
    std::size_t depth = 0;
};

inline const std::vector< std::string >& rank_columns()
{
    static const std::vector< std::string > cols = {"instance", "position", "method", "rbo", "p", "depth"};
    return cols;
}

namespace detail
{
/// `count` distinct free positions (all of them if fewer), in ascending order.
inline std::vector< std::size_t > pick_positions(const SuffixProblem& prob, std::size_t count, std::uint64_t seed)
{
    auto perm = random_ranking(prob.free_positions.size(), seed).order;
    perm.resize(std::min(count, perm.size()));
    std::vector< std::size_t > out;
    for (auto i : perm)
        out.push_back(prob.free_positions[i]);
    std::sort(out.begin(), out.end());
    return out;
}

inline std::vector< RankRow > rank_protocol(const std::string& id, const SuffixProblem& prob, const TwoLayerNet& net,
                                            const RankSpec& spec, std::uint64_t seed)
{
    Rng rng(derive_seed(seed, {tag::rank_input}));
    TokenSequence x = prob.base;
    for (auto pos : prob.free_positions)
        x[pos] = static_cast< Token >(uniform_index(rng, prob.vocab()));
    const RboParams params{spec.p, spec.depth};
    const std::size_t depth = spec.depth ? spec.depth : prob.vocab();
    std::vector< RankRow > rows;
    for (auto pos : pick_positions(prob, spec.positions, derive_seed(seed, {tag::rank_positions})))
    {
        const auto truth = ground_truth_ranking(prob, net, x, pos);
        const auto grad = gradient_ranking(prob, net, x, pos);
        const auto rnd = random_ranking(prob.vocab(), derive_seed(seed, {tag::random_ranking, pos}));
        rows.push_back({id, pos, "gradient", rbo_ext(grad, truth, params), spec.p, depth});
        rows.push_back({id, pos, "random", rbo_ext(rnd, truth, params), spec.p, depth});
    }
    return rows;
}
} // namespace detail

struct RankReport
{
    std::vector< RankRow > rows;
    nlohmann::json summary;
};

inline std::string rank_family(const std::string& instance)
{
    const auto cut = instance.find(':');
    return cut == std::string::npos ? "cnf" : instance.substr(0, cut);
}

inline nlohmann::json summarize_ranks(const std::vector< RankRow >& rows)
{
    std::map< std::string, std::map< std::string, std::pair< double, std::size_t > > > acc;
    for (const auto& r : rows)
    {
        auto& a = acc[rank_family(r.instance)][r.method];
        a.first += r.rbo;
        ++a.second;
    }
    nlohmann::json means = nlohmann::json::object();
    for (const auto& [fam, methods] : acc)
        for (const auto& [m, a] : methods)
            means[fam][m] = {{"mean_rbo", a.first / static_cast< double >(a.second)}, {"rows", a.second}};
    return means;
}

inline RankReport run_rankeval(const ExperimentConfig& c, std::size_t workers)
{
    struct Job
    {
        std::string id;
        SuffixProblem prob;
        TwoLayerNet net;
        std::uint64_t seed;
    };
    std::vector< Job > jobs;
    const auto instances = make_instances(c);
    for (std::size_t i = 0; i < instances.size(); ++i)
        jobs.push_back({instances[i].id, problem_for(instances[i]), instances[i].compiled.net,
                        derive_seed(c.seed, {tag::rank_input, i})});
    for (std::size_t f = 0; f < c.rankeval.controls.size(); ++f)
    {
        const auto& fam = c.rankeval.controls[f];
        const NetShape shape{fam.positions, fam.vocab, fam.hidden, 1, fam.activation};
        for (std::size_t i = 0; i < fam.count; ++i)
        {
            char id[64];
            std::snprintf(id, sizeof id, "%s:%zu_%03zu", std::string(to_string(fam.activation)).c_str(), f, i);
            const auto seed = derive_seed(c.seed, {tag::control, f, i});
            jobs.push_back({id, whole_sequence_problem(shape, 0.0), random_net(shape, seed), seed});
        }
    }
    auto per_job = parallel_map(jobs.size(), workers, [&](std::size_t i) {
        return detail::rank_protocol(jobs[i].id, jobs[i].prob, jobs[i].net, c.rankeval, jobs[i].seed);
    });
    RankReport rep;
    for (auto& v : per_job)
        rep.rows.insert(rep.rows.end(), v.begin(), v.end());
    rep.summary = {{"format", "fh.rank-summary/1"},
                   {"config", config_to_json(c)},
                   {"p", c.rankeval.p},
                   {"depth", c.rankeval.depth},
                   {"means", summarize_ranks(rep.rows)}};
    return rep;
}

inline std::string rank_rows_to_csv(const std::vector< RankRow >& rows, const std::string& header)
{
    std::string out = header + csv_line(rank_columns());
    for (const auto& r : rows)
        out += csv_line({r.instance, std::to_string(r.position), r.method, format_double(r.rbo), format_double(r.p),
                         std::to_string(r.depth)});
    return out;
}

inline std::vector< RankRow > rank_rows_from_csv(const std::string& text)
{
    const auto t = parse_csv(text);
    require(t.header == rank_columns(), ErrorKind::Integrity, "rank CSV schema mismatch");
    std::vector< RankRow > rows;
    try
    {
        for (const auto& f : t.rows)
            rows.push_back({f[0], std::stoul(f[1]), f[2], std::stod(f[3]), std::stod(f[4]), std::stoul(f[5])});
    }
    catch (const std::exception&)
    {
        fail(ErrorKind::Integrity, "rank CSV has a malformed numeric field");
    }
    return rows;
}

inline RankReport cmd_rankeval(const ExperimentConfig& c, const fs::path& out, std::size_t workers)
{
    auto rep = run_rankeval(c, workers);
    write_file(out / "rank_rows.csv", rank_rows_to_csv(rep.rows, header_comment("rankeval", c)));
    write_file(out / "rank_summary.json", rep.summary.dump(2) + "\n");
    return rep;
}

// --- report ---------------------------------------------------------------------------------------

struct MergedReport
{
    std::vector< AttackRow > rows;
    std::map< std::string, MethodSummary > summary;
    std::vector< std::size_t > cuts;
    std::size_t bin_width = 50;
};

/// Cuts read from the configs embedded in the CSV headers; the union is used.
inline MergedReport merge_attack_csvs(const std::vector< std::string >& paths, std::size_t bin_width,
                                      std::vector< std::size_t > cuts = {})
{
    MergedReport m;
    m.bin_width = bin_width;
    std::set< std::size_t > cut_set(cuts.begin(), cuts.end());
    for (const auto& p : paths)
    {
        const auto text = read_file(p);
        auto rows = attack_rows_from_csv(text);
        for (const auto& line : parse_csv(text).comments)
        {
            const auto at = line.find("config=");
            if (at == std::string::npos)
                continue;
            try
            {
                const auto j = nlohmann::json::parse(line.substr(at + 7));
                for (auto cut : j.at("attack").at("cuts"))
                    cut_set.insert(cut.get< std::size_t >());
            }
            catch (const nlohmann::json::exception&)
            {
                fail(ErrorKind::Integrity, "unreadable config header in " + p);
            }
        }
        m.rows.insert(m.rows.end(), rows.begin(), rows.end());
    }
    m.cuts.assign(cut_set.begin(), cut_set.end());
    m.summary = summarize(m.rows, m.cuts, bin_width);
    return m;
}

inline std::string render_report(const MergedReport& m)
{
    std::ostringstream o;
    if (m.rows.empty())
    {
        o << "empty report: no attack rows in the given inputs\n";
        return o.str();
    }
    o << "Success counts (rate) by iteration cut\n";
    o << "method";
    for (auto c : m.cuts)
        o << "\t@" << c;
    o << "\tinstances\n";
    for (const auto& [name, s] : m.summary)
    {
        o << name;
        for (auto c : m.cuts)
        {
            const auto n = s.success_at.at(c);
            char buf[64];
            std::snprintf(buf, sizeof buf, "\t%zu (%.1f%%)", n, 100.0 * static_cast< double >(n) / static_cast< double >(s.instances));
            o << buf;
        }
        o << '\t' << s.instances << '\n';
    }
    o << "\nIterations to success (bin width " << m.bin_width << ")\n";
    for (const auto& [name, s] : m.summary)
    {
        o << name << '\n';
        for (const auto& [lo, n] : s.histogram)
            o << "  [" << lo << ", " << lo + m.bin_width << ")\t" << n << '\t' << std::string(n, '#') << '\n';
    }
    return o.str();
}

inline std::string success_table_csv(const MergedReport& m)
{
    std::string out = csv_line({"method", "cut", "success", "instances", "rate"});
    for (const auto& [name, s] : m.summary)
        for (auto c : m.cuts)
            out += csv_line({name, std::to_string(c), std::to_string(s.success_at.at(c)), std::to_string(s.instances),
                             format_double(static_cast< double >(s.success_at.at(c)) / static_cast< double >(s.instances))});
    return out;
}

inline std::string histogram_csv(const MergedReport& m)
{
    std::string out = csv_line({"method", "lo", "hi", "count"});
    for (const auto& [name, s] : m.summary)
        for (const auto& [lo, n] : s.histogram)
            out += csv_line({name, std::to_string(lo), std::to_string(lo + m.bin_width), std::to_string(n)});
    return out;
}

// --- verify ---------------------------------------------------------------------------------------

struct VerifyResult
{
    bool ok = true;
    std::vector< std::string > messages;
};

/// Recomputes the aggregates in an output directory from its row files.
inline VerifyResult verify_outputs(const fs::path& dir)
{
    VerifyResult v;
    bool any = false;
    if (fs::exists(dir / "attack_rows.csv") || fs::exists(dir / "attack_summary.json"))
    {
        any = true;
        const auto rows = attack_rows_from_csv(read_file((dir / "attack_rows.csv").string()));
        nlohmann::json stored;
        try
        {
            stored = nlohmann::json::parse(read_file((dir / "attack_summary.json").string()));
        }
        catch (const nlohmann::json::exception& e)
        {
            fail(ErrorKind::Integrity, std::string("attack summary is not valid JSON: ") + e.what());
        }
        const auto cuts = stored.at("cuts").get< std::vector< std::size_t > >();
        const auto bw = stored.at("bin_width").get< std::size_t >();
        const auto again = summary_to_json(summarize(rows, cuts, bw), cuts, bw);
        if (again.at("methods") != stored.at("methods"))
        {
            v.ok = false;
            v.messages.push_back("attack_summary.json does not match aggregates recomputed from attack_rows.csv");
        }
        else
            v.messages.push_back("attack aggregates verified (" + std::to_string(rows.size()) + " rows)");
    }
    if (fs::exists(dir / "rank_rows.csv") || fs::exists(dir / "rank_summary.json"))
    {
        any = true;
        const auto rows = rank_rows_from_csv(read_file((dir / "rank_rows.csv").string()));
        nlohmann::json stored;
        try
        {
            stored = nlohmann::json::parse(read_file((dir / "rank_summary.json").string()));
        }
        catch (const nlohmann::json::exception& e)
        {
            fail(ErrorKind::Integrity, std::string("rank summary is not valid JSON: ") + e.what());
        }
        if (summarize_ranks(rows) != stored.at("means"))
        {
            v.ok = false;
            v.messages.push_back("rank_summary.json does not match means recomputed from rank_rows.csv");
        }
        else
            v.messages.push_back("rank aggregates verified (" + std::to_string(rows.size()) + " rows)");
    }
    if (!any)
    {
        v.ok = false;
        v.messages.push_back("no attack or rank outputs found in " + dir.string());
    }
    return v;
}

/// CLI exit code for an error category.
inline int exit_code_for(ErrorKind k)
{
    switch (k)
    {
    case ErrorKind::Config:
    case ErrorKind::Parse:
    case ErrorKind::InvalidInput:
    case ErrorKind::InvalidParameter: return 2;
    case ErrorKind::Guard: return 3;
    case ErrorKind::Integrity: return 4;
    default: return 1;
    }
}
} // namespace fh

#endif // FH_EXPERIMENT_HPP
