// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fails.
// Every criterion is computed at 1 and at 4 workers; criterion 8 compares the
// serialized results (and the CLI output trees) byte for byte.

#include "fh/experiment.hpp"
#include "oracles.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <map>
#include <numeric>

using namespace fh;
using json = nlohmann::json;

namespace tol
{
constexpr double fd_step = 1e-5;
constexpr double fd_rel = 1e-6;
constexpr double kink_margin = 1e-3;
constexpr double rbo = 1e-12;
constexpr double chain_step = 1e-12;
constexpr double c1_seconds = 60.0;
constexpr double c6_seconds = 600.0;
} // namespace tol

namespace
{
struct Outcome
{
    bool pass = true;
    std::string detail;
    json record; // serialized results, compared across worker counts
};

double seconds_since(std::chrono::steady_clock::time_point t0)
{
    return std::chrono::duration< double >(std::chrono::steady_clock::now() - t0).count();
}

// 1 -------------------------------------------------------------------------------------
Outcome reduction_equivalence(std::size_t workers)
{
    const auto t0 = std::chrono::steady_clock::now();
    std::vector< CnfFormula > fs;
    for (std::uint64_t i = 0; i < 200; ++i)
    {
        const auto m = static_cast< std::uint32_t >(3 + derive_seed(101, {i, 0}) % 8); // 3..10
        const auto k = static_cast< std::size_t >(1 + derive_seed(101, {i, 1}) % 45);  // 1..45
        fs.push_back(random_3cnf(m, k, derive_seed(101, {i, 2})));
    }
    fs.push_back(parse_dimacs("p cnf 3 1\n1 2 3 0\n"));
    fs.push_back(parse_dimacs("p cnf 1 2\n1 1 1 0\n-1 -1 -1 0\n"));
    const auto res = parallel_map(fs.size(), workers, [&](std::size_t i) {
        const auto inst = compile_to_network(fs[i]);
        const bool reach = oracle::binary_min(inst.net.shape(), inst.net.params()) <= inst.threshold;
        const bool sat = brute_force_sat(fs[i]).has_value();
        return std::array< bool, 2 >{reach, sat};
    });
    std::size_t agree = 0, sat = 0;
    json rec = json::array();
    for (const auto& r : res)
    {
        agree += r[0] == r[1] ? 1 : 0;
        sat += r[1] ? 1 : 0;
        rec.push_back({r[0], r[1]});
    }
    const double secs = seconds_since(t0);
    Outcome o;
    o.pass = agree == fs.size() && secs < tol::c1_seconds;
    o.detail = std::to_string(agree) + "/" + std::to_string(fs.size()) + " agree (" + std::to_string(sat) +
               " satisfiable), " + std::to_string(secs) + " s";
    o.record = rec;
    return o;
}

// 2 -------------------------------------------------------------------------------------
Outcome gradient_correctness(std::size_t workers)
{
    const std::vector< Activation > acts = {Activation::Identity, Activation::Sigmoid, Activation::ReLU,
                                            Activation::StepLike};
    const auto res = parallel_map(acts.size(), workers, [&](std::size_t a) {
        const Activation act = acts[a];
        const bool kinked = act == Activation::ReLU || act == Activation::StepLike;
        const NetShape s{4, 3, 6, 1, act};
        double worst = 0.0;
        int points = 0;
        for (std::uint64_t seed = 0; points < 20; ++seed)
        {
            const auto net = random_net(s, derive_seed(202, {a, seed}), kinked ? 0.4 : 1.0);
            Rng rng(derive_seed(203, {a, seed}));
            TokenSequence x(std::vector< Token >(4));
            for (auto& t : x.tokens)
                t = static_cast< Token >(uniform_index(rng, 3));
            const auto e = oracle::one_hot(s, x);
            if (kinked && oracle::kink_margin(s, net.params(), e) < tol::kink_margin)
                continue;
            ++points;
            auto fp = [&](const std::vector< double >& p) { return oracle::forward_dense(s, p, e); };
            auto fe = [&](const std::vector< double >& v) { return oracle::forward_dense(s, net.params(), v); };
            worst = std::max(worst, oracle::rel_error(grad_params(net, x).values,
                                                      oracle::central_diff(fp, net.params(), tol::fd_step)));
            worst = std::max(worst, oracle::rel_error(grad_input(net, x).data, oracle::central_diff(fe, e, tol::fd_step)));
        }
        return worst;
    });
    Outcome o;
    o.record = json::array();
    for (std::size_t a = 0; a < acts.size(); ++a)
    {
        o.pass = o.pass && res[a] <= tol::fd_rel;
        char buf[64];
        std::snprintf(buf, sizeof buf, "%s%s max rel err %.2e", a ? ", " : "", std::string(to_string(acts[a])).c_str(),
                      res[a]);
        o.detail += buf;
        o.record.push_back(res[a]);
    }
    return o;
}

// 3 -------------------------------------------------------------------------------------
Outcome linear_exactness(std::size_t workers)
{
    const NetShape s{6, 8, 5, 1, Activation::Identity};
    const auto res = parallel_map(50, workers, [&](std::size_t i) {
        const auto net = random_net(s, derive_seed(303, {i}));
        const auto prob = whole_sequence_problem(s, 0.0);
        Rng rng(derive_seed(304, {i}));
        TokenSequence x(std::vector< Token >(6));
        for (auto& t : x.tokens)
            t = static_cast< Token >(uniform_index(rng, 8));
        bool ok = true;
        for (std::size_t pos = 0; pos < 6; ++pos)
        {
            const auto top = gradient_ranked_candidates(prob, net, x, pos, 1);
            ok = ok && top[0] == oracle::argmin(oracle::sweep(s, net.params(), x, pos));
            const auto g = gradient_ranking(prob, net, x, pos);
            const auto t = ground_truth_ranking(prob, net, x, pos);
            ok = ok && rbo_ext(g, t, {0.99, 0}) == 1.0;
        }
        return ok;
    });
    const auto good = static_cast< std::size_t >(std::count(res.begin(), res.end(), true));
    Outcome o;
    o.pass = good == 50;
    o.detail = std::to_string(good) + "/50 instances exact at every position";
    o.record = res;
    return o;
}

// 4 -------------------------------------------------------------------------------------
Outcome rbo_checks(std::size_t workers)
{
    const auto self = parallel_map(100, workers, [](std::size_t i) {
        const auto s = random_ranking(2 + i % 30, derive_seed(401, {i}));
        return std::abs(rbo_ext(s, s, {0.99, 0}) - 1.0);
    });
    const auto pairs = parallel_map(1000, workers, [](std::size_t i) {
        const std::size_t n = 2 + derive_seed(402, {i}) % 20;
        const auto a = random_ranking(n, derive_seed(403, {i}));
        const auto b = random_ranking(n, derive_seed(404, {i}));
        const double ab = rbo_ext(a, b, {0.9, 0}), ba = rbo_ext(b, a, {0.9, 0});
        return std::array< double, 3 >{ab, ba, std::abs(ab - oracle::rbo(a.order, b.order, 0.9, n))};
    });
    const double hand = rbo_ext(Ranking{{0, 1, 2}, 3}, Ranking{{2, 1, 0}, 3}, {0.5, 3});
    const double worst_self = *std::max_element(self.begin(), self.end());
    bool sym = true, bounded = true;
    double worst_oracle = 0.0;
    for (const auto& p : pairs)
    {
        sym = sym && p[0] == p[1];
        bounded = bounded && p[0] >= 0.0 && p[0] <= 1.0;
        worst_oracle = std::max(worst_oracle, p[2]);
    }
    Outcome o;
    o.pass = worst_self <= tol::rbo && std::abs(hand - 0.375) <= tol::rbo && sym && bounded && worst_oracle <= tol::rbo;
    char buf[200];
    std::snprintf(buf, sizeof buf, "self max dev %.1e, hand case %.17g, symmetric %s, bounded %s, vs direct sum %.1e",
                  worst_self, hand, sym ? "yes" : "no", bounded ? "yes" : "no", worst_oracle);
    o.detail = buf;
    o.record = {worst_self, hand, sym, bounded, worst_oracle};
    return o;
}

// 5 -------------------------------------------------------------------------------------
Outcome chain_integrity(std::size_t workers)
{
    // 10 compiled CNF chains at the default step size, 10 sigmoid chains.
    const auto res = parallel_map(20, workers, [](std::size_t i) {
        TwoLayerNet net;
        TokenSequence anchor;
        double a = 0.0;
        ChainOptions opt;
        if (i < 10)
        {
            const auto inst = compile_to_network(planted_3cnf(12, 50, derive_seed(501, {i})).formula);
            net = inst.net;
            anchor = TokenSequence(std::vector< Token >(12, 0));
            a = inst.threshold;
        }
        else
        {
            net = random_net({4, 3, 5, 1, Activation::Sigmoid}, derive_seed(502, {i}));
            anchor = TokenSequence{2, 0, 1, 1};
            a = forward(net, anchor) - 1.5;
        }
        const auto c = build_chain(net, anchor, a, opt);
        const auto e = oracle::one_hot(c.shape, anchor);
        double worst = 0.0;
        for (std::size_t s = 0; s + 1 < c.size(); ++s)
        {
            const auto g = oracle::grad_params(c.shape, c.states[s].values, e);
            for (std::size_t j = 0; j < g.size(); ++j)
                worst = std::max(worst, std::abs(c.states[s + 1].values[j] - (c.states[s].values[j] - c.lr * g[j])));
        }
        const double end = oracle::forward(c.shape, c.states.back().values, anchor);
        return json{{"t", c.t()}, {"worst", worst}, {"endpoint", end}, {"ok", worst <= tol::chain_step && end <= a}};
    });
    Outcome o;
    std::size_t good = 0, tmax = 0;
    double worst = 0.0;
    for (const auto& r : res)
    {
        good += r["ok"].get< bool >() ? 1 : 0;
        tmax = std::max(tmax, r["t"].get< std::size_t >());
        worst = std::max(worst, r["worst"].get< double >());
    }
    o.pass = good == 20;
    char buf[160];
    std::snprintf(buf, sizeof buf, "%zu/20 chains valid, max step deviation %.1e, longest t = %zu", good, worst, tmax);
    o.detail = buf;
    o.record = res;
    return o;
}

// 6 -------------------------------------------------------------------------------------
Outcome fh_benefit(const fs::path& suite, const fs::path& out, std::size_t workers)
{
    const auto t0 = std::chrono::steady_clock::now();
    auto cfg = load_config(suite.string());
    cmd_gen(cfg, out / "b500");
    cmd_chain(cfg, out / "b500", workers);
    const auto r500 = cmd_attack(cfg, out / "b500", workers);

    // same suite, budget 1000, both cuts taken from one set of traces
    auto j = config_to_json(cfg);
    j["attack"]["budget"] = 1000;
    j["attack"]["cuts"] = {500, 1000};
    j["chain_dir"] = (out / "b500" / "chains").string();
    const auto cfg1000 = config_from_json(j);
    const auto r1000 = cmd_attack(cfg1000, out / "b1000", workers);
    const double secs = seconds_since(t0);

    auto count = [](const json& s, const char* m, const char* cut) { return s["methods"][m]["success"][cut].get< int >(); };
    const int fh = count(r500.summary, "FH-GR", "500"), gr = count(r500.summary, "GR", "500"),
              gg = count(r500.summary, "GradientGreedy", "500");
    Outcome o;
    o.pass = fh >= gr && fh >= gg && secs < tol::c6_seconds;
    std::ostringstream d;
    d << "budget 500: FH-GR " << fh << ", GR " << gr << ", GradientGreedy " << gg << " of 50; budget 1000 run:";
    for (const char* m : {"FH-GR", "GR", "GradientGreedy"})
        d << ' ' << m << " @500 " << count(r1000.summary, m, "500") << " @1000 " << count(r1000.summary, m, "1000") << ';';
    d << ' ' << secs << " s";
    o.detail = d.str();
    o.record = {r500.summary["methods"], r1000.summary["methods"]};
    return o;
}

// 7 -------------------------------------------------------------------------------------
Outcome binary_search_schedule_check(std::size_t workers)
{
    // (a) real chain of t = 500 whose states all accept the anchor: built
    // with an unreachable descent target so that exactly 500 steps are kept.
    const auto pf = planted_3cnf(12, 50, 701);
    const auto inst = compile_to_network(pf.formula);
    const auto chain = build_chain(inst.net, pf.assignment, -1e9, ChainOptions{1e-4, 500, 1, true});
    const auto prob = whole_sequence_problem(inst.net.shape(), inst.threshold);
    const auto r = fh_binary_search(prob, chain, chain.anchor, BinarySearchOptions{100, 400}, SearchStrategy{});
    std::vector< std::size_t > states;
    for (const auto& s : r.stages)
        states.push_back(s.checkpoint);
    const std::vector< std::size_t > expect = {250, 125, 62, 31, 15, 7, 3, 1, 0};
    const bool order_ok = chain.t() == 500 && states == expect;
    const bool end_ok = r.success && oracle::forward(inst.net.shape(), inst.net.params(), r.final_sequence) <= inst.threshold;

    // (b) thresholded synthetic chains: states below c* never succeed
    const std::vector< std::size_t > cstars = {1, 37, 120, 250, 499};
    const auto res = parallel_map(cstars.size(), workers, [&](std::size_t i) {
        const std::size_t cstar = cstars[i];
        auto attack = [&](std::size_t state, const TokenSequence& init, std::size_t cap) {
            StageAttempt a;
            a.sequence = init;
            a.success = state >= cstar;
            a.iterations = a.success ? 5 : cap;
            a.value = a.success ? -1.0 : 1.0;
            return a;
        };
        const auto o = binary_search_schedule(500, TokenSequence{}, 100, 400, attack);
        std::size_t counted = 0, discarded = 0;
        for (const auto& v : o.visits)
        {
            if (v.counted)
                counted += v.iterations;
            else
                discarded += v.iterations;
        }
        const bool ok = o.retry_cap_reached && counted == o.counted_iterations &&
                        o.raw_iterations == counted + discarded && (cstar < 2 || discarded > 0);
        return json{{"cstar", cstar}, {"visits", o.visits.size()}, {"counted", counted}, {"raw", o.raw_iterations}, {"ok", ok}};
    });
    bool thr_ok = true;
    for (const auto& x : res)
        thr_ok = thr_ok && x["ok"].get< bool >();

    Outcome o;
    o.pass = order_ok && end_ok && thr_ok;
    std::ostringstream d;
    d << "visited";
    for (auto s : states)
        d << ' ' << s;
    d << (end_ok ? ", F(p_0, x_0) <= a" : ", endpoint NOT in sublevel set") << "; thresholded chains "
      << (thr_ok ? "terminate with discarded iterations excluded" : "FAILED");
    o.detail = d.str();
    o.record = {states, r.total_iterations, res};
    return o;
}

std::map< std::string, std::string > read_tree(const fs::path& root)
{
    std::map< std::string, std::string > out;
    for (const auto& e : fs::recursive_directory_iterator(root))
        if (e.is_regular_file())
            out[fs::relative(e.path(), root).string()] = read_file(e.path().string());
    return out;
}

void line(int id, const std::string& name, bool pass, const std::string& detail)
{
    std::cout << "[" << (pass ? "PASS" : "FAIL") << "] " << id << ". " << name << ": " << detail << std::endl;
}
} // namespace

int main(int argc, char** argv)
{
    const fs::path suite = argc > 1 ? fs::path(argv[1]) : fs::path(FH_SOURCE_DIR) / "samples" / "acceptance_suite.json";
    const fs::path work = fs::temp_directory_path() / "fh_acceptance";
    fs::remove_all(work);

    struct Run
    {
        Outcome o1, o4;
    };
    std::vector< std::pair< std::string, Run > > runs;
    auto both = [&](const std::string& name, auto&& f) {
        Run r{f(std::size_t{1}), f(std::size_t{4})};
        runs.emplace_back(name, std::move(r));
    };
    both("Reduction equivalence", reduction_equivalence);
    both("Gradient correctness", gradient_correctness);
    both("Linear exactness of gradient ranking", linear_exactness);
    both("RBO unit checks", rbo_checks);
    both("Chain integrity", chain_integrity);
    both("Directional FH benefit", [&](std::size_t w) { return fh_benefit(suite, work / ("w" + std::to_string(w)), w); });
    both("Binary-search scheduler", binary_search_schedule_check);

    bool all = true;
    bool same = true;
    std::string diffs;
    for (std::size_t i = 0; i < runs.size(); ++i)
    {
        const auto& [name, r] = runs[i];
        line(static_cast< int >(i + 1), name, r.o4.pass, r.o4.detail);
        all = all && r.o4.pass;
        if (r.o1.record.dump() != r.o4.record.dump() || r.o1.pass != r.o4.pass)
        {
            same = false;
            diffs += " " + std::to_string(i + 1);
        }
    }
    const bool files_same = read_tree(work / "w1") == read_tree(work / "w4");
    const bool det = same && files_same;
    line(8, "Determinism", det,
         std::string("results of criteria 1-7 at 1 and 4 workers ") + (same ? "identical" : "differ in" + diffs) +
             "; CLI CSV/JSON outputs " + (files_same ? "byte-identical" : "DIFFER"));
    all = all && det;
    return all ? 0 : 1;
}
