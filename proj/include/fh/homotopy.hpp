#ifndef FH_HOMOTOPY_HPP
#define FH_HOMOTOPY_HPP

// Functional homotopy: descend in parameter space at a fixed anchor input to
// obtain states p_0 ... p_t with F(p_t, anchor) <= a, then solve the discrete
// problems min_x F(p_i, x) from i = t-1 back to 0, each warm-started from the
// previous solution.

#include "fh/error.hpp"
#include "fh/objective.hpp"
#include "fh/rng.hpp"
#include "fh/search.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace fh
{
/// Entrywise tolerance for the p_{i+1} = p_i - lr * grad check.
inline constexpr double kChainStepTolerance = 1e-12;

struct CheckpointChain
{
    NetShape shape;
    Readout readout;
    TokenSequence anchor;
    double threshold = 0.0;
    double lr = 0.0;
    std::size_t keep_every = 1;
    bool reached = true; // endpoint satisfies F <= threshold
    std::vector< ParamState > states; // ascending step; front is p_0, back is p_t

    std::size_t t() const { return states.empty() ? 0 : states.back().step; }
    std::size_t size() const { return states.size(); }
};

struct ChainOptions
{
    double lr = 0.05;
    std::size_t max_steps = 2000;
    std::size_t keep_every = 1;
    bool allow_partial = false;
};

inline double chain_value(const CheckpointChain& c, const ParamState& p, const TokenSequence& x)
{
    return forward(unflatten(p), x, c.readout);
}

/// Full-gradient descent on p -> F(p, anchor), saving states along the way.
/// Stops at the first state with F <= threshold. Without allow_partial, a
/// run that never gets there throws ChainBuild with the best value seen.
inline CheckpointChain build_chain(const TwoLayerNet& base, const Readout& readout, const TokenSequence& anchor,
                                   double threshold, const ChainOptions& opt)
{
    require(opt.lr > 0.0 && std::isfinite(opt.lr), ErrorKind::InvalidParameter, "learning rate must be positive");
    require(opt.max_steps >= 1, ErrorKind::InvalidParameter, "max_steps must be at least 1");
    require(opt.keep_every >= 1, ErrorKind::InvalidParameter, "keep_every must be at least 1");
    require(std::isfinite(threshold), ErrorKind::InvalidParameter, "threshold must be finite");
    detail::check_tokens(base.shape(), anchor);

    CheckpointChain c{base.shape(), readout, anchor, threshold, opt.lr, opt.keep_every, false, {}};
    ParamState p = flatten(base, 0);
    double value = forward(base, anchor, readout);
    double best = value;
    c.states.push_back(p);
    if (in_sublevel_set(value, threshold))
    {
        c.reached = true;
        return c;
    }
    for (std::size_t s = 1; s <= opt.max_steps; ++s)
    {
        const TwoLayerNet net = unflatten(p);
        p = sgd_step(p, grad_params(net, anchor, readout), opt.lr);
        value = forward(unflatten(p), anchor, readout);
        best = std::min(best, value);
        const bool done = in_sublevel_set(value, threshold);
        if (done || s % opt.keep_every == 0 || s == opt.max_steps)
            c.states.push_back(p);
        if (done)
        {
            c.reached = true;
            return c;
        }
    }
    if (!opt.allow_partial)
    {
        std::ostringstream msg;
        msg.precision(17);
        msg << "threshold " << threshold << " not reached in " << opt.max_steps << " steps; best value " << best;
        fail(ErrorKind::ChainBuild, msg.str());
    }
    return c;
}

inline CheckpointChain build_chain(const TwoLayerNet& base, const TokenSequence& anchor, double threshold,
                                   const ChainOptions& opt)
{
    return build_chain(base, Readout{}, anchor, threshold, opt);
}

/// Replays every gap between stored states and checks the endpoint. Throws
/// Integrity naming the first broken invariant.
inline void verify_chain(const CheckpointChain& c)
{
    require(!c.states.empty(), ErrorKind::Integrity, "chain is empty");
    require(c.lr > 0.0, ErrorKind::Integrity, "chain learning rate must be positive");
    require(c.states.front().step == 0, ErrorKind::Integrity, "first state is not step 0");
    detail::check_tokens(c.shape, c.anchor);
    for (std::size_t i = 0; i < c.states.size(); ++i)
    {
        require(c.states[i].shape == c.shape, ErrorKind::Integrity, "state " + std::to_string(i) + " has the wrong shape");
        require(c.states[i].values.size() == c.shape.param_count(), ErrorKind::Integrity,
                "state " + std::to_string(i) + " has the wrong parameter count");
    }
    for (std::size_t i = 0; i + 1 < c.states.size(); ++i)
    {
        const auto& lo = c.states[i];
        const auto& hi = c.states[i + 1];
        require(hi.step > lo.step, ErrorKind::Integrity, "state steps are not strictly increasing at record " +
                                                             std::to_string(i + 1));
        ParamState p = lo;
        while (p.step < hi.step)
            p = sgd_step(p, grad_params(unflatten(p), c.anchor, c.readout), c.lr);
        for (std::size_t j = 0; j < p.values.size(); ++j)
            require(std::abs(p.values[j] - hi.values[j]) <= kChainStepTolerance, ErrorKind::Integrity,
                    "consecutive-step invariant broken between steps " + std::to_string(lo.step) + " and " +
                        std::to_string(hi.step) + " at parameter " + std::to_string(j));
    }
    if (c.reached)
        require(in_sublevel_set(chain_value(c, c.states.back(), c.anchor), c.threshold), ErrorKind::Integrity,
                "endpoint invariant broken: F(p_t, anchor) > threshold");
}

// --- Chain files ---------------------------------------------------------------------
//
// JSON lines. Line 1 is a header; each following line is one stored state:
//   {"format":"fh.chain/1","shape":{...},"readout":{...},"anchor":[...],
//    "threshold":a,"lr":lr,"t":t,"keep_every":k,"reached":true,"count":n}
//   {"step":0,"weights":[...]}

inline std::string chain_to_jsonl(const CheckpointChain& c)
{
    nlohmann::json header = {{"format", "fh.chain/1"},
                             {"shape", shape_to_json(c.shape)},
                             {"readout", readout_to_json(c.readout)},
                             {"anchor", c.anchor.tokens},
                             {"threshold", c.threshold},
                             {"lr", c.lr},
                             {"t", c.t()},
                             {"keep_every", c.keep_every},
                             {"reached", c.reached},
                             {"count", c.states.size()}};
    std::string out = header.dump() + "\n";
    for (const auto& s : c.states)
        out += nlohmann::json{{"step", s.step}, {"weights", s.values}}.dump() + "\n";
    return out;
}

inline CheckpointChain chain_from_jsonl(const std::string& text)
{
    std::istringstream in(text);
    std::string line;
    CheckpointChain c;
    try
    {
        require(static_cast< bool >(std::getline(in, line)), ErrorKind::Integrity, "chain file is empty");
        const auto h = nlohmann::json::parse(line);
        require(h.at("format").get< std::string >() == "fh.chain/1", ErrorKind::Integrity, "unsupported chain format");
        c.shape = shape_from_json(h.at("shape"));
        c.readout = readout_from_json(h.at("readout"));
        c.anchor = TokenSequence(h.at("anchor").get< std::vector< Token > >());
        c.threshold = h.at("threshold").get< double >();
        c.lr = h.at("lr").get< double >();
        c.keep_every = h.at("keep_every").get< std::size_t >();
        c.reached = h.at("reached").get< bool >();
        const auto count = h.at("count").get< std::size_t >();
        const auto t = h.at("t").get< std::size_t >();
        while (std::getline(in, line))
        {
            if (line.empty())
                continue;
            const auto r = nlohmann::json::parse(line);
            c.states.push_back(
                ParamState{c.shape, r.at("weights").get< std::vector< double > >(), r.at("step").get< std::size_t >()});
        }
        require(c.states.size() == count, ErrorKind::Integrity,
                "header declares " + std::to_string(count) + " states, file has " + std::to_string(c.states.size()));
        require(c.t() == t, ErrorKind::Integrity, "header t does not match the last stored step");
    }
    catch (const nlohmann::json::exception& e)
    {
        fail(ErrorKind::Integrity, std::string("malformed chain file: ") + e.what());
    }
    verify_chain(c);
    return c;
}

inline void save_chain(const CheckpointChain& c, const std::string& path)
{
    std::ofstream out(path, std::ios::binary);
    require(static_cast< bool >(out), ErrorKind::Config, "cannot write chain file " + path);
    out << chain_to_jsonl(c);
}

inline CheckpointChain load_chain(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    require(static_cast< bool >(in), ErrorKind::Config, "cannot open chain file " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return chain_from_jsonl(ss.str());
}

// --- Attacks ---------------------------------------------------------------------------

struct StageTrace
{
    std::size_t checkpoint = 0; // step index of the attacked state
    SearchTrace trace;
    bool counted = true; // false: discarded failure (binary search)
};

struct FhResult
{
    TokenSequence final_sequence;
    double final_value = 0.0;
    bool success = false;
    std::vector< StageTrace > stages;
    std::size_t total_iterations = 0; // reported total
    std::size_t raw_iterations = 0;   // every iteration spent, discarded ones included
    std::size_t evaluations = 0;
    bool retry_cap_reached = false; // binary search only
};

struct FhOptions
{
    std::size_t total_budget = 1000;
    std::size_t stride = 1;
};

namespace detail
{
inline void check_problem_matches(const SuffixProblem& prob, const CheckpointChain& chain)
{
    require(!chain.states.empty(), ErrorKind::InvalidInput, "chain is empty");
    require(prob.shape == chain.shape, ErrorKind::InvalidInput, "problem shape does not match the chain");
    require(prob.readout == chain.readout, ErrorKind::InvalidInput, "problem readout does not match the chain");
}

inline SearchStrategy stage_strategy(const SearchStrategy& s, std::size_t checkpoint)
{
    SearchStrategy out = s;
    out.seed = derive_seed(s.seed, {checkpoint});
    return out;
}
} // namespace detail

/// Stored-state indices visited by fh_attack: every `stride`-th state below
/// the last one, always ending with state 0.
inline std::vector< std::size_t > fh_stage_indices(std::size_t chain_size, std::size_t stride)
{
    require(chain_size >= 1, ErrorKind::InvalidInput, "chain is empty");
    require(stride >= 1, ErrorKind::InvalidParameter, "stride must be at least 1");
    std::vector< std::size_t > idx;
    if (chain_size == 1)
        return {0};
    for (std::size_t j = chain_size - 1; j > stride; j -= stride)
        idx.push_back(j - stride);
    if (idx.empty() || idx.back() != 0)
        idx.push_back(0);
    return idx;
}

/// Warm-started stage-by-stage search from p_{t-1} down to p_0. Each stage
/// gets an equal share of whatever budget remains; a failed stage is not
/// fatal and its incumbent still seeds the next one.
inline FhResult fh_attack(const SuffixProblem& prob, const CheckpointChain& chain, const TokenSequence& x_init,
                          const FhOptions& opt, const SearchStrategy& strategy)
{
    detail::check_problem_matches(prob, chain);
    const auto stages = fh_stage_indices(chain.size(), opt.stride);
    FhResult r;
    r.final_sequence = x_init;
    std::size_t remaining = opt.total_budget;
    for (std::size_t s = 0; s < stages.size(); ++s)
    {
        const auto& state = chain.states[stages[s]];
        const std::size_t share = remaining / (stages.size() - s);
        auto trace = greedy_search(prob, unflatten(state), r.final_sequence, SearchBudget{share},
                                   detail::stage_strategy(strategy, state.step));
        remaining -= trace.iterations_used;
        r.total_iterations += trace.iterations_used;
        r.evaluations += trace.evaluations;
        r.final_sequence = trace.final_sequence;
        r.final_value = trace.final_value;
        r.stages.push_back({state.step, std::move(trace), true});
    }
    r.raw_iterations = r.total_iterations;
    r.success = in_sublevel_set(r.final_value, prob.threshold);
    return r;
}

inline FhResult fh_attack(const SuffixProblem& prob, const CheckpointChain& chain, const FhOptions& opt,
                          const SearchStrategy& strategy)
{
    return fh_attack(prob, chain, chain.anchor, opt, strategy);
}

// --- Binary search over parameter states -------------------------------------------------

struct StageAttempt
{
    TokenSequence sequence;
    double value = 0.0;
    bool success = false;
    std::size_t iterations = 0;
    std::size_t evaluations = 0;
    SearchTrace trace;
};

struct BinarySearchVisit
{
    std::size_t state = 0; // index into the chain's stored states
    bool success = false;
    bool counted = true;
    std::size_t iterations = 0;
};

struct BinarySearchOutcome
{
    TokenSequence final_sequence;
    double final_value = 0.0;
    bool success = false;
    bool retry_cap_reached = false;
    std::vector< BinarySearchVisit > visits;
    std::vector< StageAttempt > attempts; // parallel to visits
    std::size_t counted_iterations = 0;
    std::size_t raw_iterations = 0;
};

/// Binary search over states 0..t. Attack state C from x_R within K
/// iterations; on success R <- C, C <- floor(R/2); on failure the attempt is
/// discarded (iterations not counted) and C <- floor((C+R)/2). When C is R or
/// R-1, a failed attempt is kept and re-attacked from its own result, with all
/// iterations counted, until `retry_cap` cumulative iterations on that state;
/// hitting the cap ends the search unsuccessfully. The loop runs while C != 0,
/// then state 0 is attacked from x_R.
///
/// `attack(state, init, max_iterations)` must return a StageAttempt.
template < typename AttackFn >
BinarySearchOutcome binary_search_schedule(std::size_t t, const TokenSequence& x_t, std::size_t K, std::size_t retry_cap,
                                           AttackFn&& attack)
{
    require(K >= 1, ErrorKind::InvalidParameter, "per-attempt iteration cap K must be at least 1");
    BinarySearchOutcome out;
    std::size_t L = 0, R = t, C = R / 2;
    TokenSequence x_R = x_t;

    // Returns false when the retry cap was exhausted on a boundary state.
    auto attack_state = [&](std::size_t state, StageAttempt& result) {
        result = attack(state, x_R, K);
        out.raw_iterations += result.iterations;
        const bool boundary = state + 1 >= R;
        if (result.success || !boundary)
        {
            const bool counted = result.success;
            if (counted)
                out.counted_iterations += result.iterations;
            out.visits.push_back({state, result.success, counted, result.iterations});
            out.attempts.push_back(result);
            return true;
        }
        // boundary: keep the string and continue cumulatively
        std::size_t cumulative = result.iterations;
        out.counted_iterations += result.iterations;
        out.visits.push_back({state, false, true, result.iterations});
        out.attempts.push_back(result);
        while (!result.success && cumulative < retry_cap)
        {
            const std::size_t cap = std::min(K, retry_cap - cumulative);
            StageAttempt next = attack(state, result.sequence, cap);
            if (next.iterations == 0 && !next.success)
                break;
            cumulative += next.iterations;
            out.raw_iterations += next.iterations;
            out.counted_iterations += next.iterations;
            out.visits.push_back({state, next.success, true, next.iterations});
            out.attempts.push_back(next);
            result = std::move(next);
        }
        return result.success;
    };

    StageAttempt last;
    last.sequence = x_t;
    while (L != C)
    {
        StageAttempt a;
        const bool boundary = C + 1 >= R;
        const bool ok = attack_state(C, a);
        if (a.success)
        {
            R = C;
            x_R = a.sequence;
            C = R / 2;
            last = std::move(a);
        }
        else if (boundary && !ok)
        {
            out.retry_cap_reached = true;
            out.final_sequence = a.sequence;
            out.final_value = a.value;
            out.success = false;
            return out;
        }
        else
        {
            C = (C + R) / 2;
        }
    }
    StageAttempt a;
    attack_state(C, a);
    out.success = a.success;
    out.retry_cap_reached = !a.success;
    out.final_sequence = a.sequence;
    out.final_value = a.value;
    return out;
}

struct BinarySearchOptions
{
    std::size_t K = 100;
    std::size_t retry_cap = 400;
};

/// Binary-search schedule over the chain's stored states, each attempt a
/// greedy search on F(p_C, .) with at most K iterations.
inline FhResult fh_binary_search(const SuffixProblem& prob, const CheckpointChain& chain, const TokenSequence& x_t,
                                 const BinarySearchOptions& opt, const SearchStrategy& strategy)
{
    detail::check_problem_matches(prob, chain);
    require(opt.K >= 1, ErrorKind::InvalidParameter, "K must be at least 1");
    std::vector< std::size_t > attempts_on(chain.size(), 0);
    auto attack = [&](std::size_t state, const TokenSequence& init, std::size_t cap) {
        const auto& p = chain.states[state];
        auto strat = strategy;
        strat.seed = derive_seed(strategy.seed, {p.step, attempts_on[state]++});
        auto tr = greedy_search(prob, unflatten(p), init, SearchBudget{cap}, strat);
        StageAttempt a{tr.final_sequence, tr.final_value, tr.success, tr.iterations_used, tr.evaluations, {}};
        a.trace = std::move(tr);
        return a;
    };
    auto o = binary_search_schedule(chain.size() - 1, x_t, opt.K, opt.retry_cap, attack);

    FhResult r;
    r.final_sequence = o.final_sequence;
    r.final_value = o.final_value;
    r.success = o.success;
    r.retry_cap_reached = o.retry_cap_reached;
    r.total_iterations = o.counted_iterations;
    r.raw_iterations = o.raw_iterations;
    for (std::size_t i = 0; i < o.visits.size(); ++i)
    {
        r.evaluations += o.attempts[i].evaluations;
        r.stages.push_back({chain.states[o.visits[i].state].step, std::move(o.attempts[i].trace), o.visits[i].counted});
    }
    return r;
}
} // namespace fh

#endif // FH_HOMOTOPY_HPP
