#ifndef FH_RANKING_HPP
#define FH_RANKING_HPP

// Per-position token rankings (ground truth by exhaustive substitution,
// token-gradient, random) and extrapolated rank-biased overlap.

#include "fh/error.hpp"
#include "fh/objective.hpp"
#include "fh/rng.hpp"
#include "fh/search.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

namespace fh
{
/// Ordered token list over a universe [0, universe), no duplicates.
struct Ranking
{
    std::vector< Token > order;
    std::size_t universe = 0;

    std::size_t size() const { return order.size(); }
    friend bool operator==(const Ranking&, const Ranking&) = default;
};

inline void validate(const Ranking& r)
{
    std::vector< bool > seen(r.universe, false);
    for (auto t : r.order)
    {
        require(t < r.universe, ErrorKind::InvalidInput, "ranked token " + std::to_string(t) + " outside universe");
        require(!seen[t], ErrorKind::InvalidInput, "token " + std::to_string(t) + " ranked twice");
        seen[t] = true;
    }
}

struct RboParams
{
    double p = 0.99;
    std::size_t depth = 0; // 0: full depth, min(|S|, |T|)
};

/// Extrapolated RBO at depth k, with X_d = |S_{1:d} & T_{1:d}| and A_d = X_d / d:
///   A_k p^k + (1-p)/p * sum_{d=1..k} A_d p^d.
/// Evaluated as 1 minus the same expression in (1 - A_d), which is equal
/// because the weights sum to one, and which makes identical prefixes give
/// exactly 1.
inline double rbo_ext(const Ranking& S, const Ranking& T, const RboParams& params)
{
    require(S.universe == T.universe, ErrorKind::InvalidInput, "rankings are over different universes");
    require(params.p > 0.0 && params.p < 1.0, ErrorKind::InvalidParameter, "RBO persistence must lie in (0, 1)");
    validate(S);
    validate(T);
    const std::size_t limit = std::min(S.size(), T.size());
    const std::size_t k = params.depth ? params.depth : limit;
    require(k >= 1 && k <= limit, ErrorKind::InvalidParameter,
            "RBO depth " + std::to_string(k) + " outside 1.." + std::to_string(limit));

    std::vector< bool > in_s(S.universe, false), in_t(S.universe, false);
    std::size_t overlap = 0;
    double weight = 1.0; // p^d
    double deficit = 0.0;
    double last_gap = 0.0;
    for (std::size_t d = 1; d <= k; ++d)
    {
        const Token s = S.order[d - 1], t = T.order[d - 1];
        in_s[s] = true;
        in_t[t] = true;
        if (s == t)
            ++overlap;
        else
            overlap += (in_t[s] ? 1 : 0) + (in_s[t] ? 1 : 0);
        weight *= params.p;
        last_gap = static_cast< double >(d - overlap) / static_cast< double >(d);
        deficit += last_gap * weight;
    }
    deficit = deficit * (1.0 - params.p) / params.p + last_gap * weight;
    return std::clamp(1.0 - deficit, 0.0, 1.0);
}

/// Every token substituted at `position`; ascending objective, ties to the lower token.
inline Ranking ground_truth_ranking(const SuffixProblem& prob, const TwoLayerNet& net, const TokenSequence& x,
                                    std::size_t position, std::size_t sweep_limit = std::size_t{1} << 20)
{
    check_sequence(prob, x);
    require(std::find(prob.free_positions.begin(), prob.free_positions.end(), position) != prob.free_positions.end(),
            ErrorKind::Contract, "position " + std::to_string(position) + " is not free");
    require(prob.vocab() <= sweep_limit, ErrorKind::Guard,
            "vocabulary of " + std::to_string(prob.vocab()) + " exceeds the sweep limit " + std::to_string(sweep_limit));
    std::vector< double > values(prob.vocab());
    TokenSequence probe = x;
    for (Token b = 0; b < prob.vocab(); ++b)
    {
        probe[position] = b;
        values[b] = evaluate(prob, net, probe);
    }
    Ranking r{std::vector< Token >(prob.vocab()), prob.vocab()};
    std::iota(r.order.begin(), r.order.end(), Token{0});
    std::stable_sort(r.order.begin(), r.order.end(), [&](Token a, Token b) { return values[a] < values[b]; });
    return r;
}

/// Tokens by ascending input-gradient coordinate h_b at `position`, i.e. by
/// descending first-order predicted decrease.
inline Ranking gradient_ranking(const SuffixProblem& prob, const TwoLayerNet& net, const TokenSequence& x,
                                std::size_t position)
{
    check_sequence(prob, x);
    require(position < prob.shape.positions, ErrorKind::InvalidInput, "position out of range");
    require(std::find(prob.free_positions.begin(), prob.free_positions.end(), position) != prob.free_positions.end(),
            ErrorKind::Contract, "position " + std::to_string(position) + " is not free");
    return Ranking{gradient_token_order(grad_input(net, x, prob.readout), position), prob.vocab()};
}

/// Fisher-Yates: for i = n-1 down to 1, swap element i with a uniform j in [0, i].
inline Ranking random_ranking(std::size_t universe, std::uint64_t seed)
{
    require(universe >= 1, ErrorKind::InvalidParameter, "universe must be non-empty");
    Ranking r{std::vector< Token >(universe), universe};
    std::iota(r.order.begin(), r.order.end(), Token{0});
    Rng rng(seed);
    for (std::size_t i = universe - 1; i > 0; --i)
        std::swap(r.order[i], r.order[uniform_index(rng, i + 1)]);
    return r;
}
} // namespace fh

#endif // FH_RANKING_HPP
