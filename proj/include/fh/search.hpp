#ifndef FH_SEARCH_HPP
#define FH_SEARCH_HPP

// Single-substitution discrete search over the free positions of a token
// sequence: greedy random (GR), gradient-ranked greedy (GCG-style), and an
// exhaustive oracle.

#include "fh/csv.hpp"
#include "fh/error.hpp"
#include "fh/objective.hpp"
#include "fh/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace fh
{
/// min over the free positions of F(p, x), with x fixed to `base` on the
/// first `prefix_len` positions. Success means F(p, x) <= threshold.
struct SuffixProblem
{
    NetShape shape;
    Readout readout;
    TokenSequence base;
    std::size_t prefix_len = 0;
    std::vector< std::size_t > free_positions;
    double threshold = 0.0;

    std::size_t vocab() const { return shape.vocab; }
};

inline void validate(const SuffixProblem& p)
{
    validate_shape(p.shape);
    detail::check_tokens(p.shape, p.base);
    require(std::isfinite(p.threshold), ErrorKind::InvalidParameter, "threshold must be finite");
    require(p.prefix_len <= p.shape.positions, ErrorKind::InvalidInput, "prefix longer than the sequence");
    auto sorted = p.free_positions;
    std::sort(sorted.begin(), sorted.end());
    require(std::adjacent_find(sorted.begin(), sorted.end()) == sorted.end(), ErrorKind::InvalidInput,
            "duplicate free position");
    for (auto pos : sorted)
    {
        require(pos < p.shape.positions, ErrorKind::InvalidInput, "free position " + std::to_string(pos) + " out of range");
        require(pos >= p.prefix_len, ErrorKind::InvalidInput,
                "free position " + std::to_string(pos) + " overlaps the fixed prefix");
    }
}

/// Every position free, no prefix, base all zeros.
inline SuffixProblem whole_sequence_problem(const NetShape& shape, double threshold, Readout readout = {})
{
    SuffixProblem p{shape, readout, TokenSequence(std::vector< Token >(shape.positions, 0)), 0, {}, threshold};
    p.free_positions.resize(shape.positions);
    std::iota(p.free_positions.begin(), p.free_positions.end(), std::size_t{0});
    return p;
}

inline bool in_sublevel_set(double value, double threshold)
{
    return value <= threshold;
}

inline double evaluate(const SuffixProblem& prob, const TwoLayerNet& net, const TokenSequence& x)
{
    return forward(net, x, prob.readout);
}

inline void check_sequence(const SuffixProblem& prob, const TokenSequence& x)
{
    detail::check_tokens(prob.shape, x);
    for (std::size_t i = 0; i < prob.prefix_len; ++i)
        require(x[i] == prob.base[i], ErrorKind::InvalidInput,
                "sequence differs from the fixed prefix at position " + std::to_string(i));
}

struct SearchBudget
{
    std::size_t max_iterations = 0;
};

struct SearchStrategy
{
    enum class Kind
    {
        GreedyRandom,
        GradientGreedy,
        BruteForce
    };
    Kind kind = Kind::GreedyRandom;
    std::size_t batch_size = 0; // 0: automatic
    std::size_t top_k = 0;      // 0: automatic
    std::uint64_t seed = 0;
};

inline std::string_view to_string(SearchStrategy::Kind k)
{
    switch (k)
    {
    case SearchStrategy::Kind::GreedyRandom: return "GR";
    case SearchStrategy::Kind::GradientGreedy: return "GradientGreedy";
    case SearchStrategy::Kind::BruteForce: return "BruteForce";
    }
    return "?";
}

/// |V| for small vocabularies, 64 otherwise.
inline std::size_t default_batch(std::size_t vocab)
{
    return vocab <= 8 ? vocab : 64;
}

struct StepResult
{
    TokenSequence sequence;
    double value = 0.0;
    std::size_t position = 0;
    Token token = 0; // token at `position` after the step
    bool accepted = false;
    std::size_t evaluations = 0;
};

namespace detail
{
inline std::size_t pick_position(const SuffixProblem& prob, Rng& rng)
{
    require(!prob.free_positions.empty(), ErrorKind::Contract, "problem has no free positions");
    return prob.free_positions[uniform_index(rng, prob.free_positions.size())];
}

/// Evaluates candidate substitutions in order; keeps the incumbent on ties and
/// the earliest candidate among equal improvements.
inline StepResult best_substitution(const SuffixProblem& prob, const TwoLayerNet& net, const TokenSequence& current,
                                    double current_value, std::size_t position, const std::vector< Token >& candidates)
{
    StepResult r{current, current_value, position, current[position], false, 0};
    TokenSequence probe = current;
    for (Token c : candidates)
    {
        if (c == current[position])
            continue;
        probe[position] = c;
        const double v = evaluate(prob, net, probe);
        ++r.evaluations;
        if (v < r.value)
        {
            r.value = v;
            r.token = c;
            r.accepted = true;
        }
    }
    r.sequence[position] = r.token;
    return r;
}
} // namespace detail

/// One GR iteration: a uniformly chosen free position, B tokens drawn
/// uniformly with replacement, best of those and the incumbent retained.
/// `full_sweep` replaces sampling by every vocabulary token (test hook).
inline StepResult greedy_random_step(const SuffixProblem& prob, const TwoLayerNet& net, const TokenSequence& current,
                                     double current_value, Rng& rng, std::size_t batch, bool full_sweep = false)
{
    require(batch >= 1, ErrorKind::InvalidParameter, "batch size must be at least 1");
    const std::size_t pos = detail::pick_position(prob, rng);
    std::vector< Token > cands;
    if (full_sweep)
    {
        cands.resize(prob.vocab());
        std::iota(cands.begin(), cands.end(), Token{0});
    }
    else
    {
        cands.reserve(batch);
        for (std::size_t b = 0; b < batch; ++b)
            cands.push_back(static_cast< Token >(uniform_index(rng, prob.vocab())));
    }
    return detail::best_substitution(prob, net, current, current_value, pos, cands);
}

inline StepResult greedy_random_step(const SuffixProblem& prob, const TwoLayerNet& net, const TokenSequence& current,
                                     Rng& rng, std::size_t batch, bool full_sweep = false)
{
    check_sequence(prob, current);
    return greedy_random_step(prob, net, current, evaluate(prob, net, current), rng, batch, full_sweep);
}

/// Tokens ordered by their linearized effect at `position`: substituting b
/// changes the objective by h_b - h_current to first order, so ascending h_b
/// puts the largest predicted decrease first. Ties go to the lower token.
inline std::vector< Token > gradient_token_order(const Matrix& input_grad, std::size_t position)
{
    const auto h = input_grad.row(position);
    std::vector< Token > order(h.size());
    std::iota(order.begin(), order.end(), Token{0});
    std::stable_sort(order.begin(), order.end(), [&](Token a, Token b) { return h[a] < h[b]; });
    return order;
}

inline std::vector< Token > gradient_ranked_candidates(const SuffixProblem& prob, const TwoLayerNet& net,
                                                       const TokenSequence& current, std::size_t position,
                                                       std::size_t top_k)
{
    require(position < prob.shape.positions, ErrorKind::InvalidInput,
            "position " + std::to_string(position) + " out of range");
    require(std::find(prob.free_positions.begin(), prob.free_positions.end(), position) != prob.free_positions.end(),
            ErrorKind::Contract, "position " + std::to_string(position) + " is not free");
    require(top_k >= 1, ErrorKind::InvalidParameter, "top_k must be at least 1");
    auto order = gradient_token_order(grad_input(net, current, prob.readout), position);
    order.resize(std::min(top_k, order.size()));
    return order;
}

/// One gradient-greedy iteration: random free position, top-k tokens by the
/// token gradient, best of those and the incumbent retained.
inline StepResult gradient_greedy_step(const SuffixProblem& prob, const TwoLayerNet& net, const TokenSequence& current,
                                       double current_value, Rng& rng, std::size_t top_k)
{
    const std::size_t pos = detail::pick_position(prob, rng);
    const auto cands = gradient_ranked_candidates(prob, net, current, pos, top_k);
    return detail::best_substitution(prob, net, current, current_value, pos, cands);
}

/// Number of assignments to the free positions, or nullopt past `limit`.
inline std::optional< std::uint64_t > search_space_size(const SuffixProblem& prob, std::uint64_t limit)
{
    std::uint64_t n = 1;
    for (std::size_t i = 0; i < prob.free_positions.size(); ++i)
    {
        if (n > limit / prob.vocab())
            return std::nullopt;
        n *= prob.vocab();
    }
    return n <= limit ? std::optional< std::uint64_t >(n) : std::nullopt;
}

inline constexpr std::uint64_t kMaxBruteForceSpace = std::uint64_t{1} << 24;

struct MinResult
{
    TokenSequence sequence;
    double value = 0.0;
};

/// Exact global minimizer over the free positions. Enumerates in lexicographic
/// order (first free position most significant) and keeps the first minimizer.
inline MinResult brute_force_min(const SuffixProblem& prob, const TwoLayerNet& net)
{
    validate(prob);
    const auto space = search_space_size(prob, kMaxBruteForceSpace);
    require(space.has_value(), ErrorKind::Guard,
            "search space |V|^" + std::to_string(prob.free_positions.size()) + " exceeds the brute-force bound 2^24");
    auto free = prob.free_positions;
    std::sort(free.begin(), free.end());
    TokenSequence x = prob.base;
    for (auto pos : free)
        x[pos] = 0;
    MinResult best{x, evaluate(prob, net, x)};
    for (std::uint64_t it = 1; it < *space; ++it)
    {
        // odometer increment, last free position least significant
        for (std::size_t d = free.size(); d-- > 0;)
        {
            if (++x[free[d]] < prob.vocab())
                break;
            x[free[d]] = 0;
        }
        const double v = evaluate(prob, net, x);
        if (v < best.value)
            best = {x, v};
    }
    return best;
}

struct TraceRecord
{
    std::size_t iteration = 0;
    std::size_t position = 0;
    Token token = 0;
    double value = 0.0; // incumbent value after the iteration
    bool accepted = false;
    std::size_t evaluations = 0;
};

struct SearchTrace
{
    std::vector< TraceRecord > records;
    TokenSequence initial;
    double initial_value = 0.0;
    TokenSequence final_sequence;
    double final_value = 0.0;
    bool success = false;
    std::size_t iterations_used = 0;
    std::size_t evaluations = 0; // candidate objective evaluations, excluding the initial one
};

/// Repeats single-substitution steps from `init` until the value reaches the
/// threshold or the iteration budget runs out.
inline SearchTrace greedy_search(const SuffixProblem& prob, const TwoLayerNet& net, const TokenSequence& init,
                                 const SearchBudget& budget, const SearchStrategy& strategy)
{
    validate(prob);
    check_sequence(prob, init);
    SearchTrace t;
    t.initial = init;
    t.initial_value = evaluate(prob, net, init);
    t.final_sequence = init;
    t.final_value = t.initial_value;
    t.success = in_sublevel_set(t.final_value, prob.threshold);
    if (t.success || budget.max_iterations == 0)
        return t;

    if (strategy.kind == SearchStrategy::Kind::BruteForce)
    {
        auto m = brute_force_min(prob, net);
        const auto evals = static_cast< std::size_t >(*search_space_size(prob, kMaxBruteForceSpace));
        const bool better = m.value < t.final_value;
        if (better)
        {
            t.final_sequence = m.sequence;
            t.final_value = m.value;
        }
        t.records.push_back({0, 0, 0, t.final_value, better, evals});
        t.iterations_used = 1;
        t.evaluations = evals;
        t.success = in_sublevel_set(t.final_value, prob.threshold);
        return t;
    }

    require(!prob.free_positions.empty(), ErrorKind::Contract, "problem has no free positions");
    Rng rng(strategy.seed);
    const std::size_t batch = strategy.batch_size ? strategy.batch_size : default_batch(prob.vocab());
    const std::size_t top_k = strategy.top_k ? strategy.top_k : default_batch(prob.vocab());
    for (std::size_t it = 0; it < budget.max_iterations; ++it)
    {
        StepResult s = strategy.kind == SearchStrategy::Kind::GreedyRandom
                           ? greedy_random_step(prob, net, t.final_sequence, t.final_value, rng, batch)
                           : gradient_greedy_step(prob, net, t.final_sequence, t.final_value, rng, top_k);
        t.records.push_back({it, s.position, s.token, s.value, s.accepted, s.evaluations});
        t.evaluations += s.evaluations;
        t.final_sequence = std::move(s.sequence);
        t.final_value = s.value;
        t.iterations_used = it + 1;
        if (in_sublevel_set(t.final_value, prob.threshold))
        {
            t.success = true;
            break;
        }
    }
    return t;
}

inline SearchTrace greedy_search(const SuffixProblem& prob, const ParamState& p, const TokenSequence& init,
                                 const SearchBudget& budget, const SearchStrategy& strategy)
{
    require(p.shape == prob.shape, ErrorKind::InvalidInput, "parameter state shape does not match the problem");
    return greedy_search(prob, unflatten(p), init, budget, strategy);
}

/// CSV columns: iter,position,token,value,accepted.
inline std::string trace_to_csv(const SearchTrace& t)
{
    std::string out = csv_line({"iter", "position", "token", "value", "accepted"});
    for (const auto& r : t.records)
        out += csv_line({std::to_string(r.iteration), std::to_string(r.position), std::to_string(r.token),
                         format_double(r.value), r.accepted ? "1" : "0"});
    return out;
}
} // namespace fh

#endif // FH_SEARCH_HPP
