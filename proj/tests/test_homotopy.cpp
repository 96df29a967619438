#include "fh/cnf.hpp"
#include "fh/homotopy.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <chrono>
#include <cmath>
#include <filesystem>

using namespace fh;

namespace
{
TokenSequence zeros(std::size_t n)
{
    return TokenSequence(std::vector< Token >(n, 0));
}

CompiledInstance planted(std::uint64_t seed, std::uint32_t m = 12, std::size_t k = 50)
{
    return compile_to_network(planted_3cnf(m, k, seed).formula);
}

// Synthetic attack: states at or above `easy_from` succeed after `cost`
// iterations; below it every attempt fails after using its whole cap.
struct SyntheticAttack
{
    std::size_t easy_from = 0;
    std::size_t cost = 1;
    std::size_t calls = 0;

    StageAttempt operator()(std::size_t state, const TokenSequence& init, std::size_t cap)
    {
        ++calls;
        StageAttempt a;
        a.sequence = init;
        a.sequence.tokens.push_back(static_cast< Token >(state)); // marks the path
        a.success = state >= easy_from && cost <= cap;
        a.iterations = a.success ? cost : cap;
        a.value = a.success ? -1.0 : 1.0;
        return a;
    }
};

std::vector< std::size_t > visited(const BinarySearchOutcome& o)
{
    std::vector< std::size_t > v;
    for (const auto& s : o.visits)
        v.push_back(s.state);
    return v;
}
} // namespace

TEST(BuildChain, AlreadySatisfiedAnchorGivesLengthOne)
{
    const auto inst = compile_to_network(parse_dimacs("p cnf 3 1\n1 2 3 0\n"));
    const auto c = build_chain(inst.net, TokenSequence{1, 0, 0}, inst.threshold, ChainOptions{});
    EXPECT_EQ(c.size(), 1u);
    EXPECT_EQ(c.t(), 0u);
    EXPECT_TRUE(c.reached);
}

TEST(BuildChain, IdentityNetDescentMatchesHandIteration)
{
    // f(p) = W2 (W1 e + b1) + b2 at a fixed anchor; the hand iteration uses
    // the closed-form partials of that bilinear map.
    NetShape s{2, 2, 2, 1, Activation::Identity};
    const auto net = random_net(s, 3, 0.5);
    const TokenSequence anchor{1, 0};
    const auto e = oracle::one_hot(s, anchor);
    const double lr = 0.01;
    const double start = forward(net, anchor);
    const auto c = build_chain(net, anchor, start - 1.0, ChainOptions{lr, 5000, 1, false});
    ASSERT_GT(c.size(), 2u);

    std::vector< double > p = net.params();
    double prev = start;
    for (std::size_t i = 1; i < c.size(); ++i)
    {
        // z_h = W1_h . e + b1_h ; df/dW2_h = z_h ; df/db2 = 1 ; df/db1_h = W2_h ; df/dW1_hi = W2_h e_i
        std::vector< double > g(p.size(), 0.0);
        for (std::size_t h = 0; h < 2; ++h)
        {
            double z = p[8 + h];
            for (std::size_t j = 0; j < 4; ++j)
                z += p[h * 4 + j] * e[j];
            g[10 + h] = z;
            g[8 + h] = p[10 + h];
            for (std::size_t j = 0; j < 4; ++j)
                g[h * 4 + j] = p[10 + h] * e[j];
        }
        g[12] = 1.0;
        for (std::size_t j = 0; j < p.size(); ++j)
            p[j] -= lr * g[j];
        for (std::size_t j = 0; j < p.size(); ++j)
            EXPECT_NEAR(c.states[i].values[j], p[j], 1e-12);
        const double v = forward(unflatten(c.states[i]), anchor);
        EXPECT_LT(v, prev);
        prev = v;
    }
    EXPECT_LE(prev, start - 1.0);
}

TEST(BuildChain, SmoothChainDescendsAtAnchor)
{
    NetShape s{3, 3, 4, 1, Activation::Sigmoid};
    const auto net = random_net(s, 21);
    const TokenSequence anchor{2, 0, 1};
    const double f0 = forward(net, anchor);
    const auto c = build_chain(net, anchor, f0 - 2.0, ChainOptions{0.05, 5000, 1, false});
    for (std::size_t i = 0; i + 1 < c.size(); ++i)
        EXPECT_LE(chain_value(c, c.states[i + 1], anchor), chain_value(c, c.states[i], anchor));
}

TEST(BuildChain, CnfChainReachesThresholdWithStepIdentity)
{
    for (std::uint64_t seed = 0; seed < 10; ++seed)
    {
        const auto inst = planted(seed);
        const auto anchor = zeros(12);
        const auto c = build_chain(inst.net, anchor, inst.threshold, ChainOptions{});
        EXPECT_TRUE(c.reached);
        EXPECT_LE(chain_value(c, c.states.back(), anchor), inst.threshold);
        const auto e = oracle::one_hot(inst.net.shape(), anchor);
        for (std::size_t i = 0; i + 1 < c.size(); ++i)
        {
            const auto g = oracle::grad_params(c.shape, c.states[i].values, e);
            for (std::size_t j = 0; j < g.size(); ++j)
                ASSERT_NEAR(c.states[i + 1].values[j], c.states[i].values[j] - c.lr * g[j], 1e-12);
        }
        EXPECT_NO_THROW(verify_chain(c));
    }
}

TEST(BuildChain, FailureReportsBestValueAndPartialFlag)
{
    const auto inst = planted(1);
    try
    {
        build_chain(inst.net, zeros(12), inst.threshold, ChainOptions{1e-6, 3, 1, false});
        FAIL();
    }
    catch (const Error& e)
    {
        EXPECT_EQ(e.kind(), ErrorKind::ChainBuild);
        EXPECT_NE(std::string(e.what()).find("best value"), std::string::npos);
    }
    const auto c = build_chain(inst.net, zeros(12), inst.threshold, ChainOptions{1e-6, 3, 1, true});
    EXPECT_FALSE(c.reached);
    EXPECT_EQ(c.size(), 4u);
    EXPECT_NO_THROW(verify_chain(c));
    EXPECT_THROW(build_chain(inst.net, zeros(12), inst.threshold, ChainOptions{0.0, 3, 1, false}), Error);
    EXPECT_THROW(build_chain(inst.net, zeros(12), inst.threshold, ChainOptions{0.1, 0, 1, false}), Error);
}

TEST(BuildChain, KeepEveryStoresSparseStates)
{
    NetShape s{3, 3, 4, 1, Activation::Sigmoid};
    const auto net = random_net(s, 5);
    const TokenSequence anchor{0, 1, 2};
    const auto full = build_chain(net, anchor, forward(net, anchor) - 3.0, ChainOptions{0.05, 5000, 1, false});
    const auto sparse = build_chain(net, anchor, forward(net, anchor) - 3.0, ChainOptions{0.05, 5000, 4, false});
    EXPECT_EQ(sparse.t(), full.t());
    for (std::size_t i = 1; i + 1 < sparse.size(); ++i)
        EXPECT_EQ(sparse.states[i].step % 4, 0u);
    EXPECT_EQ(sparse.states.back(), full.states.back());
    EXPECT_NO_THROW(verify_chain(sparse));
}

TEST(ChainFile, RoundTripByteIdenticalAndTamperDetected)
{
    const auto inst = planted(2);
    const auto c = build_chain(inst.net, zeros(12), inst.threshold, ChainOptions{0.01, 2000, 1, false});
    const auto text = chain_to_jsonl(c);
    const auto back = chain_from_jsonl(text);
    EXPECT_EQ(chain_to_jsonl(back), text);
    EXPECT_EQ(back.states, c.states);

    auto lines = std::vector< std::string >{};
    std::istringstream in(text);
    for (std::string l; std::getline(in, l);)
        lines.push_back(l);
    ASSERT_GE(lines.size(), 3u);
    auto rec = nlohmann::json::parse(lines[2]);
    rec["weights"][rec["weights"].size() - 1] = rec["weights"].back().get< double >() + 1e-6;
    lines[2] = rec.dump();
    std::string tampered;
    for (const auto& l : lines)
        tampered += l + "\n";
    try
    {
        chain_from_jsonl(tampered);
        FAIL();
    }
    catch (const Error& e)
    {
        EXPECT_EQ(e.kind(), ErrorKind::Integrity);
        EXPECT_NE(std::string(e.what()).find("consecutive-step"), std::string::npos);
    }
    EXPECT_THROW(chain_from_jsonl(""), Error);
    EXPECT_THROW(chain_from_jsonl(lines[0] + "\n"), Error);
}

TEST(ChainFile, FiveHundredStepsRoundTripQuickly)
{
    NetShape s{4, 3, 4, 1, Activation::Sigmoid};
    const auto net = random_net(s, 9);
    const auto anchor = zeros(4);
    const auto c = build_chain(net, anchor, -1e9, ChainOptions{1e-4, 500, 1, true});
    ASSERT_EQ(c.t(), 500u);
    const auto path = std::filesystem::temp_directory_path() / "fh_chain_500.jsonl";
    const auto t0 = std::chrono::steady_clock::now();
    save_chain(c, path.string());
    const auto back = load_chain(path.string());
    const double secs = std::chrono::duration< double >(std::chrono::steady_clock::now() - t0).count();
    EXPECT_EQ(back.states, c.states);
    EXPECT_LT(secs, 5.0);
    std::filesystem::remove(path);
}

TEST(FhAttack, StageIndices)
{
    EXPECT_EQ(fh_stage_indices(1, 1), (std::vector< std::size_t >{0}));
    EXPECT_EQ(fh_stage_indices(4, 1), (std::vector< std::size_t >{2, 1, 0}));
    EXPECT_EQ(fh_stage_indices(10, 3), (std::vector< std::size_t >{6, 3, 0}));
    EXPECT_EQ(fh_stage_indices(9, 3), (std::vector< std::size_t >{5, 2, 0}));
    EXPECT_EQ(fh_stage_indices(2, 5), (std::vector< std::size_t >{0}));
    EXPECT_THROW(fh_stage_indices(0, 1), Error);
}

TEST(FhAttack, LengthOneChainIsPlainGreedySearch)
{
    const auto inst = planted(3, 10, 40);
    const auto prob = whole_sequence_problem(inst.net.shape(), inst.threshold);
    const TokenSequence anchor = brute_force_sat(inst.formula).value();
    const auto c = build_chain(inst.net, anchor, inst.threshold, ChainOptions{});
    ASSERT_EQ(c.size(), 1u);
    const SearchStrategy strat{SearchStrategy::Kind::GreedyRandom, 0, 0, 42};
    const auto start = zeros(10);
    const auto r = fh_attack(prob, c, start, FhOptions{300, 1}, strat);
    const auto t = greedy_search(prob, inst.net, start, SearchBudget{300}, detail::stage_strategy(strat, 0));
    EXPECT_EQ(r.final_sequence, t.final_sequence);
    EXPECT_EQ(r.total_iterations, t.iterations_used);
    EXPECT_EQ(r.success, t.success);
}

TEST(FhAttack, WarmStartsStagesAndAccountsBudget)
{
    for (std::uint64_t seed = 0; seed < 10; ++seed)
    {
        const auto inst = planted(seed);
        const auto prob = whole_sequence_problem(inst.net.shape(), inst.threshold);
        const auto c = build_chain(inst.net, zeros(12), inst.threshold, ChainOptions{0.01, 2000, 1, false});
        const auto r = fh_attack(prob, c, FhOptions{500, 1}, SearchStrategy{SearchStrategy::Kind::GreedyRandom, 0, 0, seed});
        ASSERT_FALSE(r.stages.empty());
        EXPECT_EQ(r.stages.back().checkpoint, 0u);
        std::size_t total = 0;
        for (std::size_t i = 0; i < r.stages.size(); ++i)
        {
            if (i > 0)
            {
                EXPECT_LT(r.stages[i].checkpoint, r.stages[i - 1].checkpoint);
                EXPECT_EQ(r.stages[i].trace.initial, r.stages[i - 1].trace.final_sequence);
            }
            total += r.stages[i].trace.iterations_used;
        }
        EXPECT_EQ(r.stages.front().trace.initial, c.anchor);
        EXPECT_EQ(total, r.total_iterations);
        EXPECT_LE(total, 500u);
        EXPECT_EQ(r.success, forward(inst.net, r.final_sequence) <= inst.threshold);
    }
}

TEST(FhAttack, StageFailureIsNotFatal)
{
    const auto inst = planted(4);
    const auto prob = whole_sequence_problem(inst.net.shape(), inst.threshold);
    const auto c = build_chain(inst.net, zeros(12), inst.threshold, ChainOptions{0.005, 4000, 1, false});
    ASSERT_GE(c.size(), 3u);
    // A budget smaller than the number of stages leaves early stages with 0 iterations.
    const auto r = fh_attack(prob, c, FhOptions{1, 1}, SearchStrategy{});
    EXPECT_EQ(r.stages.size(), c.size() - 1);
    EXPECT_LE(r.total_iterations, 1u);
}

TEST(BinarySearch, AllEasyChainHalvesDown)
{
    SyntheticAttack easy;
    const auto o = binary_search_schedule(500, TokenSequence{}, 100, 400, easy);
    EXPECT_EQ(visited(o), (std::vector< std::size_t >{250, 125, 62, 31, 15, 7, 3, 1, 0}));
    EXPECT_EQ(o.visits.size(), static_cast< std::size_t >(std::floor(std::log2(500.0))) + 1);
    EXPECT_TRUE(o.success);
    EXPECT_EQ(o.counted_iterations, 9u);
    EXPECT_EQ(o.final_sequence.tokens, (std::vector< Token >{250, 125, 62, 31, 15, 7, 3, 1, 0}));

    SyntheticAttack e8;
    EXPECT_EQ(visited(binary_search_schedule(8, TokenSequence{}, 10, 40, e8)), (std::vector< std::size_t >{4, 2, 1, 0}));
}

TEST(BinarySearch, ThresholdedChainTerminatesAndDropsDiscardedIterations)
{
    for (std::size_t c_star : {1u, 37u, 120u, 499u})
    {
        SyntheticAttack hard{c_star, 3};
        const auto o = binary_search_schedule(500, TokenSequence{}, 100, 400, hard);
        EXPECT_FALSE(o.success);
        EXPECT_TRUE(o.retry_cap_reached);
        std::size_t counted = 0, raw = 0, discarded = 0;
        for (const auto& v : o.visits)
        {
            raw += v.iterations;
            if (v.counted)
                counted += v.iterations;
            else
            {
                ++discarded;
                EXPECT_FALSE(v.success);
            }
        }
        EXPECT_EQ(counted, o.counted_iterations);
        EXPECT_EQ(raw, o.raw_iterations);
        // c* = 1: every halving succeeds, only state 0 fails, nothing to discard
        if (c_star > 1)
        {
            EXPECT_GT(discarded, 0u);
            EXPECT_LT(o.counted_iterations, o.raw_iterations);
        }
        // the cap is hit on state c* - 1, right below the easy region
        EXPECT_EQ(o.visits.back().state, c_star - 1);
        EXPECT_LT(hard.calls, 100u);
    }
}

TEST(BinarySearch, BoundaryRetriesAccumulateUntilSuccess)
{
    // State 0 needs 250 cumulative iterations; K = 100 so two retries follow the first attempt.
    std::map< std::size_t, std::size_t > spent;
    auto attack = [&](std::size_t state, const TokenSequence& init, std::size_t cap) {
        StageAttempt a;
        a.sequence = init;
        const std::size_t need = state == 0 ? 250 : 1;
        const std::size_t left = need - std::min(need, spent[state]);
        a.success = left <= cap;
        a.iterations = a.success ? left : cap;
        spent[state] += a.iterations;
        return a;
    };
    const auto o = binary_search_schedule(16, TokenSequence{}, 100, 400, attack);
    EXPECT_TRUE(o.success);
    EXPECT_FALSE(o.retry_cap_reached);
    EXPECT_EQ(visited(o), (std::vector< std::size_t >{8, 4, 2, 1, 0, 0, 0}));
    EXPECT_EQ(o.counted_iterations, 4u + 250u);
}

TEST(BinarySearch, RealChainResultIsConsistent)
{
    const auto inst = planted(6);
    const auto prob = whole_sequence_problem(inst.net.shape(), inst.threshold);
    const auto c = build_chain(inst.net, zeros(12), inst.threshold, ChainOptions{0.002, 5000, 1, false});
    const auto r = fh_binary_search(prob, c, c.anchor, BinarySearchOptions{50, 200}, SearchStrategy{});
    EXPECT_EQ(r.success, forward(inst.net, r.final_sequence) <= inst.threshold);
    EXPECT_LE(r.total_iterations, r.raw_iterations);
    EXPECT_THROW(fh_binary_search(prob, c, c.anchor, BinarySearchOptions{0, 200}, SearchStrategy{}), Error);
}
