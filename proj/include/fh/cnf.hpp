#ifndef FH_CNF_HPP
#define FH_CNF_HPP

// 3CNF formulas and their compilation into two-layer step-like networks.
//
// Variable X_v is sequence position v-1; token 1 means true. Each hidden node
// computes c_j = s(l1 + l2 + l3), where a positive literal is x_v and a
// negated one is 1 - x_v (the constant folded into b1). The output is
// -sum_j c_j, so on binary inputs f(x) = -(number of satisfied clauses) and
// the formula is satisfiable iff some x reaches f(x) <= -k.

#include "fh/error.hpp"
#include "fh/objective.hpp"
#include "fh/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <array>
#include <cstdint>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace fh
{
struct Literal
{
    std::uint32_t var = 1; // 1-based
    bool negated = false;

    friend bool operator==(const Literal&, const Literal&) = default;
};

using Clause = std::array< Literal, 3 >;

struct CnfFormula
{
    std::uint32_t num_vars = 0;
    std::vector< Clause > clauses;

    std::size_t num_clauses() const { return clauses.size(); }
    friend bool operator==(const CnfFormula&, const CnfFormula&) = default;
};

/// Upper bound on variables for exhaustive enumeration.
inline constexpr std::uint32_t kMaxEnumerationVars = 24;

inline void validate(const CnfFormula& f)
{
    require(!f.clauses.empty(), ErrorKind::InvalidInput, "formula must have at least one clause");
    for (std::size_t j = 0; j < f.clauses.size(); ++j)
        for (const auto& l : f.clauses[j])
            require(l.var >= 1 && l.var <= f.num_vars, ErrorKind::InvalidInput,
                    "clause " + std::to_string(j + 1) + " references variable " + std::to_string(l.var) + " outside 1.." +
                        std::to_string(f.num_vars));
}

inline bool literal_true(const Literal& l, const TokenSequence& x)
{
    return (x[l.var - 1] != 0) != l.negated;
}

inline std::size_t count_satisfied(const CnfFormula& f, const TokenSequence& x)
{
    std::size_t n = 0;
    for (const auto& c : f.clauses)
        n += (literal_true(c[0], x) || literal_true(c[1], x) || literal_true(c[2], x)) ? 1 : 0;
    return n;
}

inline bool satisfies(const CnfFormula& f, const TokenSequence& x)
{
    return count_satisfied(f, x) == f.num_clauses();
}

// --- DIMACS ------------------------------------------------------------------

/// Simplified DIMACS: `c` comments, one `p cnf m k` header, then k clauses of
/// exactly three literals each terminated by 0. Clauses may span lines.
inline CnfFormula parse_dimacs(const std::string& text)
{
    CnfFormula f;
    bool have_header = false;
    std::size_t declared = 0;
    std::vector< Literal > pending;
    std::size_t line_no = 0;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line))
    {
        ++line_no;
        if (!line.empty() && line.back() == '\r')
            line.pop_back();
        std::istringstream ls(line);
        std::string first;
        if (!(ls >> first) || first[0] == 'c')
            continue;
        if (first == "%")
            break;
        if (first == "p")
        {
            if (have_header)
                throw ParseError(line_no, "duplicate problem line");
            std::string fmt;
            long long m = -1, k = -1;
            std::string extra;
            if (!(ls >> fmt >> m >> k) || fmt != "cnf" || (ls >> extra))
                throw ParseError(line_no, "malformed header, expected 'p cnf <vars> <clauses>'");
            if (m < 0 || k < 1)
                throw ParseError(line_no, "header needs vars >= 0 and clauses >= 1");
            f.num_vars = static_cast< std::uint32_t >(m);
            declared = static_cast< std::size_t >(k);
            have_header = true;
            continue;
        }
        if (!have_header)
            throw ParseError(line_no, "clause data before 'p cnf' header");

        ls.clear();
        ls.str(line);
        std::string tok;
        while (ls >> tok)
        {
            long long v = 0;
            std::size_t used = 0;
            try
            {
                v = std::stoll(tok, &used);
            }
            catch (const std::exception&)
            {
                throw ParseError(line_no, "non-integer token '" + tok + "'");
            }
            if (used != tok.size())
                throw ParseError(line_no, "non-integer token '" + tok + "'");
            if (v == 0)
            {
                if (pending.size() != 3)
                    throw ParseError(line_no, "clause has " + std::to_string(pending.size()) + " literals, expected 3");
                f.clauses.push_back({pending[0], pending[1], pending[2]});
                pending.clear();
                continue;
            }
            const long long var = v < 0 ? -v : v;
            if (var > static_cast< long long >(f.num_vars))
                throw ParseError(line_no, "variable " + std::to_string(var) + " exceeds declared count " +
                                              std::to_string(f.num_vars));
            pending.push_back({static_cast< std::uint32_t >(var), v < 0});
            if (pending.size() > 3)
                throw ParseError(line_no, "clause has more than 3 literals");
        }
    }
    if (!have_header)
        throw ParseError(std::max< std::size_t >(line_no, 1), "missing 'p cnf' header");
    if (!pending.empty())
        throw ParseError(line_no, "unterminated clause at end of input");
    if (f.clauses.size() != declared)
        throw ParseError(line_no, "header declares " + std::to_string(declared) + " clauses, found " +
                                      std::to_string(f.clauses.size()));
    return f;
}

inline std::string to_dimacs(const CnfFormula& f)
{
    std::string out = "p cnf " + std::to_string(f.num_vars) + " " + std::to_string(f.num_clauses()) + "\n";
    for (const auto& c : f.clauses)
    {
        for (const auto& l : c)
            out += (l.negated ? "-" : "") + std::to_string(l.var) + " ";
        out += "0\n";
    }
    return out;
}

// --- Compilation -----------------------------------------------------------------

struct CompiledInstance
{
    TwoLayerNet net;
    CnfFormula formula;
    double threshold = 0.0; // -k

    std::size_t positions() const { return formula.num_vars; }
    static constexpr std::size_t vocab() { return 2; }
};

inline CompiledInstance compile_to_network(const CnfFormula& formula)
{
    validate(formula);
    require(formula.num_vars >= 1, ErrorKind::InvalidInput, "formula needs at least one variable");
    const std::size_t k = formula.num_clauses();
    TwoLayerNet net(NetShape{formula.num_vars, 2, k, 1, Activation::StepLike});
    for (std::size_t j = 0; j < k; ++j)
    {
        for (const auto& l : formula.clauses[j])
        {
            const std::size_t true_col = (l.var - 1) * 2 + 1;
            if (l.negated)
            {
                net.w1(j, true_col) -= 1.0;
                net.b1(j) += 1.0;
            }
            else
            {
                net.w1(j, true_col) += 1.0;
            }
        }
        net.w2(0, j) = -1.0;
    }
    return CompiledInstance{std::move(net), formula, -static_cast< double >(k)};
}

// --- Oracle ------------------------------------------------------------------------

/// Lexicographically first model, enumerating X1 as the most significant
/// variable and false before true. Empty when unsatisfiable.
inline std::optional< TokenSequence > brute_force_sat(const CnfFormula& f)
{
    validate(f);
    require(f.num_vars <= kMaxEnumerationVars, ErrorKind::Guard,
            "brute-force SAT refuses " + std::to_string(f.num_vars) + " variables (limit " +
                std::to_string(kMaxEnumerationVars) + ")");
    const std::uint32_t m = f.num_vars;
    // Per-clause masks over the assignment word: bit (m - v) holds X_v.
    struct Mask
    {
        std::uint32_t pos = 0, neg = 0;
    };
    std::vector< Mask > masks;
    masks.reserve(f.num_clauses());
    for (const auto& c : f.clauses)
    {
        Mask mk;
        for (const auto& l : c)
            (l.negated ? mk.neg : mk.pos) |= 1u << (m - l.var);
        masks.push_back(mk);
    }
    const std::uint64_t total = std::uint64_t{1} << m;
    for (std::uint64_t a = 0; a < total; ++a)
    {
        const auto w = static_cast< std::uint32_t >(a);
        bool ok = true;
        for (const auto& mk : masks)
            if (!((w & mk.pos) || (~w & mk.neg)))
            {
                ok = false;
                break;
            }
        if (ok)
        {
            TokenSequence x;
            x.tokens.resize(m);
            for (std::uint32_t v = 1; v <= m; ++v)
                x[v - 1] = (w >> (m - v)) & 1u;
            return x;
        }
    }
    return std::nullopt;
}

// --- Generators ----------------------------------------------------------------------

namespace detail
{
inline Clause random_clause(std::uint32_t m, Rng& rng)
{
    std::array< std::uint32_t, 3 > vars{};
    for (int i = 0; i < 3; ++i)
    {
        std::uint32_t v;
        do
            v = static_cast< std::uint32_t >(uniform_index(rng, m)) + 1;
        while (std::find(vars.begin(), vars.begin() + i, v) != vars.begin() + i);
        vars[i] = v;
    }
    Clause c;
    for (int i = 0; i < 3; ++i)
        c[i] = Literal{vars[i], uniform_index(rng, 2) == 1};
    return c;
}

inline void check_generator_args(std::uint32_t m, std::size_t k)
{
    require(m >= 3, ErrorKind::InvalidParameter, "3CNF generation needs at least 3 variables, got " + std::to_string(m));
    require(k >= 1, ErrorKind::InvalidParameter, "3CNF generation needs at least 1 clause");
}
} // namespace detail

/// k clauses over 3 distinct variables each, every literal negated with probability 1/2.
inline CnfFormula random_3cnf(std::uint32_t m, std::size_t k, std::uint64_t seed)
{
    detail::check_generator_args(m, k);
    Rng rng(seed);
    CnfFormula f{m, {}};
    f.clauses.reserve(k);
    for (std::size_t j = 0; j < k; ++j)
        f.clauses.push_back(detail::random_clause(m, rng));
    return f;
}

struct PlantedFormula
{
    CnfFormula formula;
    TokenSequence assignment;
};

/// Draws a hidden assignment, then samples clauses uniformly among those it
/// satisfies (rejection sampling from the random_3cnf clause distribution).
inline PlantedFormula planted_3cnf(std::uint32_t m, std::size_t k, std::uint64_t seed)
{
    detail::check_generator_args(m, k);
    Rng rng(seed);
    PlantedFormula out;
    out.assignment.tokens.resize(m);
    for (std::uint32_t v = 0; v < m; ++v)
        out.assignment[v] = static_cast< Token >(uniform_index(rng, 2));
    out.formula.num_vars = m;
    out.formula.clauses.reserve(k);
    while (out.formula.clauses.size() < k)
    {
        auto c = detail::random_clause(m, rng);
        if (literal_true(c[0], out.assignment) || literal_true(c[1], out.assignment) ||
            literal_true(c[2], out.assignment))
            out.formula.clauses.push_back(c);
    }
    return out;
}

// --- JSON ----------------------------------------------------------------------------

inline nlohmann::json formula_to_json(const CnfFormula& f)
{
    nlohmann::json clauses = nlohmann::json::array();
    for (const auto& c : f.clauses)
    {
        nlohmann::json row = nlohmann::json::array();
        for (const auto& l : c)
            row.push_back(l.negated ? -static_cast< long long >(l.var) : static_cast< long long >(l.var));
        clauses.push_back(row);
    }
    return {{"num_vars", f.num_vars}, {"clauses", clauses}};
}

inline CnfFormula formula_from_json(const nlohmann::json& j)
{
    try
    {
        CnfFormula f;
        f.num_vars = j.at("num_vars").get< std::uint32_t >();
        for (const auto& row : j.at("clauses"))
        {
            require(row.is_array() && row.size() == 3, ErrorKind::Integrity, "clause arity must be 3");
            Clause c;
            for (std::size_t i = 0; i < 3; ++i)
            {
                const auto v = row[i].get< long long >();
                require(v != 0, ErrorKind::Integrity, "literal 0 is not a variable");
                c[i] = Literal{static_cast< std::uint32_t >(v < 0 ? -v : v), v < 0};
            }
            f.clauses.push_back(c);
        }
        validate(f);
        return f;
    }
    catch (const nlohmann::json::exception& e)
    {
        fail(ErrorKind::Integrity, std::string("bad formula document: ") + e.what());
    }
}

inline nlohmann::json instance_to_json(const CompiledInstance& inst)
{
    return {{"format", "fh.instance/1"},
            {"net", net_to_json(inst.net)},
            {"formula", formula_to_json(inst.formula)},
            {"threshold", inst.threshold}};
}

/// Loads and cross-checks: the embedded network must equal the compilation
/// of the embedded formula.
inline CompiledInstance instance_from_json(const nlohmann::json& j)
{
    try
    {
        require(j.at("format").get< std::string >() == "fh.instance/1", ErrorKind::Integrity,
                "unsupported instance format");
        auto formula = formula_from_json(j.at("formula"));
        auto net = net_from_json(j.at("net"));
        const double threshold = j.at("threshold").get< double >();
        auto expected = compile_to_network(formula);
        require(expected.net == net, ErrorKind::Integrity, "embedded network does not match the embedded formula");
        require(expected.threshold == threshold, ErrorKind::Integrity, "threshold does not equal -k");
        return expected;
    }
    catch (const nlohmann::json::exception& e)
    {
        fail(ErrorKind::Integrity, std::string("bad instance document: ") + e.what());
    }
}
} // namespace fh

#endif // FH_CNF_HPP
