#ifndef FH_OBJECTIVE_HPP
#define FH_OBJECTIVE_HPP

// Parameterized objectives F(p, x) over one-hot encoded token sequences.
//
// The network is f(e) = W2 act(W1 e + b1) + b2, where e is the row-major
// flattening of the n x |V| one-hot matrix (index = position * |V| + token).
// The scalar objective is output 0, optionally passed through a Readout.

#include "fh/error.hpp"
#include "fh/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace fh
{
using Token = std::uint32_t;

struct TokenSequence
{
    std::vector< Token > tokens;

    TokenSequence() = default;
    explicit TokenSequence(std::vector< Token > t) : tokens(std::move(t)) {}
    TokenSequence(std::initializer_list< Token > t) : tokens(t) {}

    std::size_t size() const { return tokens.size(); }
    Token operator[](std::size_t i) const { return tokens[i]; }
    Token& operator[](std::size_t i) { return tokens[i]; }
    auto begin() const { return tokens.begin(); }
    auto end() const { return tokens.end(); }

    friend bool operator==(const TokenSequence&, const TokenSequence&) = default;
    friend auto operator<=>(const TokenSequence&, const TokenSequence&) = default;
};

inline std::string to_string(const TokenSequence& x)
{
    std::string s;
    for (std::size_t i = 0; i < x.size(); ++i)
    {
        if (i)
            s += ' ';
        s += std::to_string(x[i]);
    }
    return s;
}

/// Dense row-major real matrix. Used for relaxed encodings and input gradients.
struct Matrix
{
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector< double > data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

    double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
    std::span< const double > row(std::size_t r) const { return {data.data() + r * cols, cols}; }

    friend bool operator==(const Matrix&, const Matrix&) = default;
};

/// Exactly one 1 per row. Construction from tokens is the only way in, so the
/// invariant holds by construction.
class OneHotEncoding
{
public:
    OneHotEncoding(const TokenSequence& x, std::size_t vocab) : m_(x.size(), vocab)
    {
        for (std::size_t i = 0; i < x.size(); ++i)
        {
            require(x[i] < vocab, ErrorKind::InvalidInput,
                    "token " + std::to_string(x[i]) + " at position " + std::to_string(i) + " outside vocabulary of size " +
                        std::to_string(vocab));
            m_(i, x[i]) = 1.0;
        }
    }

    const Matrix& matrix() const { return m_; }
    std::size_t positions() const { return m_.rows; }
    std::size_t vocab() const { return m_.cols; }

    TokenSequence tokens() const
    {
        TokenSequence x;
        x.tokens.reserve(m_.rows);
        for (std::size_t i = 0; i < m_.rows; ++i)
        {
            auto r = m_.row(i);
            x.tokens.push_back(static_cast< Token >(std::find(r.begin(), r.end(), 1.0) - r.begin()));
        }
        return x;
    }

private:
    Matrix m_;
};

enum class Activation
{
    ReLU,
    StepLike,
    Sigmoid,
    Identity
};

inline std::string_view to_string(Activation a)
{
    switch (a)
    {
    case Activation::ReLU: return "relu";
    case Activation::StepLike: return "step_like";
    case Activation::Sigmoid: return "sigmoid";
    case Activation::Identity: return "identity";
    }
    return "?";
}

inline Activation activation_from_string(std::string_view s)
{
    for (auto a : {Activation::ReLU, Activation::StepLike, Activation::Sigmoid, Activation::Identity})
        if (to_string(a) == s)
            return a;
    fail(ErrorKind::InvalidInput, "unknown activation '" + std::string(s) + "'");
}

inline double relu(double z)
{
    return z > 0.0 ? z : 0.0;
}

inline double activate(Activation a, double z)
{
    switch (a)
    {
    case Activation::ReLU: return relu(z);
    case Activation::StepLike: return relu(z) - relu(z - 1.0);
    case Activation::Sigmoid: return 1.0 / (1.0 + std::exp(-z));
    case Activation::Identity: return z;
    }
    return z;
}

/// Derivative; kinks take the subgradient 0.
inline double activate_derivative(Activation a, double z)
{
    switch (a)
    {
    case Activation::ReLU: return z > 0.0 ? 1.0 : 0.0;
    case Activation::StepLike: return (z > 0.0 && z < 1.0) ? 1.0 : 0.0;
    case Activation::Sigmoid: {
        const double s = 1.0 / (1.0 + std::exp(-z));
        return s * (1.0 - s);
    }
    case Activation::Identity: return 1.0;
    }
    return 0.0;
}

struct NetShape
{
    std::size_t positions = 0;
    std::size_t vocab = 0;
    std::size_t hidden = 0;
    std::size_t outputs = 1;
    Activation activation = Activation::Identity;

    std::size_t input_dim() const { return positions * vocab; }
    std::size_t w1_offset() const { return 0; }
    std::size_t b1_offset() const { return hidden * input_dim(); }
    std::size_t w2_offset() const { return b1_offset() + hidden; }
    std::size_t b2_offset() const { return w2_offset() + outputs * hidden; }
    std::size_t param_count() const { return b2_offset() + outputs; }

    friend bool operator==(const NetShape&, const NetShape&) = default;
};

inline void validate_shape(const NetShape& s)
{
    require(s.positions > 0 && s.vocab > 0 && s.hidden > 0 && s.outputs > 0, ErrorKind::InvalidInput,
            "network dimensions must all be positive");
}

/// One-hidden-layer network. Parameters live in one flat vector in the order
/// W1 (hidden x input, row-major), b1, W2 (outputs x hidden, row-major), b2.
class TwoLayerNet
{
public:
    TwoLayerNet() = default;
    explicit TwoLayerNet(const NetShape& shape) : shape_(shape), params_(shape.param_count(), 0.0) { validate_shape(shape); }
    TwoLayerNet(const NetShape& shape, std::vector< double > params) : shape_(shape), params_(std::move(params))
    {
        validate_shape(shape);
        require(params_.size() == shape.param_count(), ErrorKind::InvalidInput,
                "parameter vector has " + std::to_string(params_.size()) + " entries, shape needs " +
                    std::to_string(shape.param_count()));
        require(std::all_of(params_.begin(), params_.end(), [](double v) { return std::isfinite(v); }),
                ErrorKind::Numeric, "non-finite network parameter");
    }

    const NetShape& shape() const { return shape_; }
    const std::vector< double >& params() const { return params_; }
    std::vector< double >& params() { return params_; }

    double& w1(std::size_t h, std::size_t i) { return params_[h * shape_.input_dim() + i]; }
    double w1(std::size_t h, std::size_t i) const { return params_[h * shape_.input_dim() + i]; }
    double& b1(std::size_t h) { return params_[shape_.b1_offset() + h]; }
    double b1(std::size_t h) const { return params_[shape_.b1_offset() + h]; }
    double& w2(std::size_t o, std::size_t h) { return params_[shape_.w2_offset() + o * shape_.hidden + h]; }
    double w2(std::size_t o, std::size_t h) const { return params_[shape_.w2_offset() + o * shape_.hidden + h]; }
    double& b2(std::size_t o) { return params_[shape_.b2_offset() + o]; }
    double b2(std::size_t o) const { return params_[shape_.b2_offset() + o]; }

    friend bool operator==(const TwoLayerNet&, const TwoLayerNet&) = default;

private:
    NetShape shape_;
    std::vector< double > params_;
};

/// Flat parameter vector with shape metadata and the descent step that produced it.
struct ParamState
{
    NetShape shape;
    std::vector< double > values;
    std::size_t step = 0;

    friend bool operator==(const ParamState&, const ParamState&) = default;
};

struct ParamGradient
{
    NetShape shape;
    std::vector< double > values;
};

inline ParamState flatten(const TwoLayerNet& net, std::size_t step = 0)
{
    return ParamState{net.shape(), net.params(), step};
}

inline TwoLayerNet unflatten(const ParamState& p)
{
    return TwoLayerNet(p.shape, p.values);
}

/// Scalar readout applied to output 0. Surrogate maps f to
/// log(exp(f) / (exp(f) + C)), the log-probability of a target class whose
/// competitors have constant total mass C.
struct Readout
{
    enum class Kind
    {
        Output0,
        Surrogate
    };
    Kind kind = Kind::Output0;
    double C = 1.0;

    friend bool operator==(const Readout&, const Readout&) = default;
};

inline double surrogate_loss(double f, double C)
{
    require(C > 0.0 && std::isfinite(C), ErrorKind::InvalidParameter, "surrogate constant C must be positive and finite");
    require(std::isfinite(f), ErrorKind::InvalidParameter, "surrogate input must be finite");
    // f - log(e^f + C) = -softplus(log C - f)
    const double u = std::log(C) - f;
    return -(std::max(u, 0.0) + std::log1p(std::exp(-std::abs(u))));
}

/// d/df surrogate_loss = C / (e^f + C).
inline double surrogate_loss_derivative(double f, double C)
{
    const double u = f - std::log(C);
    return u >= 0.0 ? std::exp(-u) / (1.0 + std::exp(-u)) : 1.0 / (1.0 + std::exp(u));
}

inline double apply_readout(const Readout& r, double f)
{
    return r.kind == Readout::Kind::Output0 ? f : surrogate_loss(f, r.C);
}

inline double readout_derivative(const Readout& r, double f)
{
    return r.kind == Readout::Kind::Output0 ? 1.0 : surrogate_loss_derivative(f, r.C);
}

namespace detail
{
inline void check_tokens(const NetShape& s, const TokenSequence& x)
{
    require(x.size() == s.positions, ErrorKind::InvalidInput,
            "sequence length " + std::to_string(x.size()) + " does not match network positions " +
                std::to_string(s.positions));
    for (std::size_t i = 0; i < x.size(); ++i)
        require(x[i] < s.vocab, ErrorKind::InvalidInput,
                "token " + std::to_string(x[i]) + " at position " + std::to_string(i) + " outside vocabulary of size " +
                    std::to_string(s.vocab));
}

inline void check_relaxed(const NetShape& s, const Matrix& e)
{
    require(e.rows == s.positions && e.cols == s.vocab, ErrorKind::InvalidInput,
            "relaxed input is " + std::to_string(e.rows) + "x" + std::to_string(e.cols) + ", network expects " +
                std::to_string(s.positions) + "x" + std::to_string(s.vocab));
}

/// Hidden pre-activations for a one-hot input: only one column per position contributes.
inline std::vector< double > preactivations(const TwoLayerNet& net, const TokenSequence& x)
{
    const auto& s = net.shape();
    std::vector< double > z(s.hidden);
    for (std::size_t h = 0; h < s.hidden; ++h)
    {
        double acc = net.b1(h);
        for (std::size_t i = 0; i < s.positions; ++i)
            acc += net.w1(h, i * s.vocab + x[i]);
        z[h] = acc;
    }
    return z;
}

inline std::vector< double > preactivations(const TwoLayerNet& net, const Matrix& e)
{
    const auto& s = net.shape();
    std::vector< double > z(s.hidden);
    for (std::size_t h = 0; h < s.hidden; ++h)
    {
        double acc = net.b1(h);
        for (std::size_t i = 0; i < s.input_dim(); ++i)
            acc += net.w1(h, i) * e.data[i];
        z[h] = acc;
    }
    return z;
}

inline double output0(const TwoLayerNet& net, const std::vector< double >& z)
{
    const auto& s = net.shape();
    double f = net.b2(0);
    for (std::size_t h = 0; h < s.hidden; ++h)
        f += net.w2(0, h) * activate(s.activation, z[h]);
    return f;
}

/// dF/dz_h for the scalar objective, given raw output f.
inline std::vector< double > hidden_sensitivity(const TwoLayerNet& net, const std::vector< double >& z, double dr)
{
    const auto& s = net.shape();
    std::vector< double > d(s.hidden);
    for (std::size_t h = 0; h < s.hidden; ++h)
        d[h] = dr * net.w2(0, h) * activate_derivative(s.activation, z[h]);
    return d;
}

template < typename Input >
ParamGradient grad_params_impl(const TwoLayerNet& net, const Input& x, const Readout& r)
{
    const auto& s = net.shape();
    const auto z = preactivations(net, x);
    const double f = output0(net, z);
    const double dr = readout_derivative(r, f);
    const auto dz = hidden_sensitivity(net, z, dr);

    ParamGradient g{s, std::vector< double >(s.param_count(), 0.0)};
    const std::size_t in = s.input_dim();
    for (std::size_t h = 0; h < s.hidden; ++h)
    {
        if constexpr (std::is_same_v< Input, TokenSequence >)
        {
            for (std::size_t i = 0; i < s.positions; ++i)
                g.values[h * in + i * s.vocab + x[i]] = dz[h];
        }
        else
        {
            for (std::size_t i = 0; i < in; ++i)
                g.values[h * in + i] = dz[h] * x.data[i];
        }
        g.values[s.b1_offset() + h] = dz[h];
        g.values[s.w2_offset() + h] = dr * activate(s.activation, z[h]);
    }
    g.values[s.b2_offset()] = dr;
    return g;
}

template < typename Input >
Matrix grad_input_impl(const TwoLayerNet& net, const Input& x, const Readout& r)
{
    const auto& s = net.shape();
    const auto z = preactivations(net, x);
    const auto dz = hidden_sensitivity(net, z, readout_derivative(r, output0(net, z)));
    Matrix d(s.positions, s.vocab);
    for (std::size_t h = 0; h < s.hidden; ++h)
    {
        if (dz[h] == 0.0)
            continue;
        for (std::size_t i = 0; i < s.input_dim(); ++i)
            d.data[i] += dz[h] * net.w1(h, i);
    }
    return d;
}
} // namespace detail

/// All raw outputs for a one-hot input.
inline std::vector< double > forward_all(const TwoLayerNet& net, const TokenSequence& x)
{
    detail::check_tokens(net.shape(), x);
    const auto& s = net.shape();
    const auto z = detail::preactivations(net, x);
    std::vector< double > y(s.outputs);
    for (std::size_t o = 0; o < s.outputs; ++o)
    {
        double acc = net.b2(o);
        for (std::size_t h = 0; h < s.hidden; ++h)
            acc += net.w2(o, h) * activate(s.activation, z[h]);
        y[o] = acc;
    }
    return y;
}

inline double forward(const TwoLayerNet& net, const TokenSequence& x, const Readout& r = {})
{
    detail::check_tokens(net.shape(), x);
    return apply_readout(r, detail::output0(net, detail::preactivations(net, x)));
}

/// Forward pass on a relaxed (real-valued) n x |V| encoding.
inline double forward(const TwoLayerNet& net, const Matrix& e, const Readout& r = {})
{
    detail::check_relaxed(net.shape(), e);
    return apply_readout(r, detail::output0(net, detail::preactivations(net, e)));
}

inline ParamGradient grad_params(const TwoLayerNet& net, const TokenSequence& x, const Readout& r = {})
{
    detail::check_tokens(net.shape(), x);
    return detail::grad_params_impl(net, x, r);
}

inline ParamGradient grad_params(const TwoLayerNet& net, const Matrix& e, const Readout& r = {})
{
    detail::check_relaxed(net.shape(), e);
    return detail::grad_params_impl(net, e, r);
}

/// Df(E0): partial derivatives with respect to every one-hot coordinate.
inline Matrix grad_input(const TwoLayerNet& net, const TokenSequence& x, const Readout& r = {})
{
    detail::check_tokens(net.shape(), x);
    return detail::grad_input_impl(net, x, r);
}

inline Matrix grad_input(const TwoLayerNet& net, const Matrix& e, const Readout& r = {})
{
    detail::check_relaxed(net.shape(), e);
    return detail::grad_input_impl(net, e, r);
}

inline ParamState sgd_step(const ParamState& p, const ParamGradient& g, double lr)
{
    require(p.shape == g.shape && p.values.size() == g.values.size(), ErrorKind::InvalidInput,
            "gradient shape does not match parameter state");
    require(lr > 0.0 && std::isfinite(lr), ErrorKind::InvalidParameter, "learning rate must be positive and finite");
    require(std::all_of(g.values.begin(), g.values.end(), [](double v) { return std::isfinite(v); }), ErrorKind::Numeric,
            "non-finite gradient entry");
    ParamState next{p.shape, p.values, p.step + 1};
    for (std::size_t i = 0; i < next.values.size(); ++i)
        next.values[i] -= lr * g.values[i];
    return next;
}

/// Gaussian-initialized network; deterministic given seed.
inline TwoLayerNet random_net(const NetShape& shape, std::uint64_t seed, double scale = 1.0)
{
    TwoLayerNet net(shape);
    Rng rng(seed);
    std::normal_distribution< double > dist(0.0, scale);
    for (auto& v : net.params())
        v = dist(rng);
    return net;
}

// --- JSON ------------------------------------------------------------------

inline nlohmann::json shape_to_json(const NetShape& s)
{
    return {{"positions", s.positions},
            {"vocab", s.vocab},
            {"hidden", s.hidden},
            {"outputs", s.outputs},
            {"activation", std::string(to_string(s.activation))}};
}

inline NetShape shape_from_json(const nlohmann::json& j)
{
    try
    {
        NetShape s{j.at("positions").get< std::size_t >(), j.at("vocab").get< std::size_t >(),
                   j.at("hidden").get< std::size_t >(), j.at("outputs").get< std::size_t >(),
                   activation_from_string(j.at("activation").get< std::string >())};
        validate_shape(s);
        return s;
    }
    catch (const nlohmann::json::exception& e)
    {
        fail(ErrorKind::Integrity, std::string("bad network shape: ") + e.what());
    }
}

inline nlohmann::json readout_to_json(const Readout& r)
{
    if (r.kind == Readout::Kind::Output0)
        return {{"kind", "output0"}};
    return {{"kind", "surrogate"}, {"C", r.C}};
}

inline Readout readout_from_json(const nlohmann::json& j)
{
    const auto kind = j.at("kind").get< std::string >();
    if (kind == "output0")
        return {};
    require(kind == "surrogate", ErrorKind::Integrity, "unknown readout kind '" + kind + "'");
    Readout r{Readout::Kind::Surrogate, j.at("C").get< double >()};
    require(r.C > 0.0, ErrorKind::Integrity, "surrogate constant must be positive");
    return r;
}

namespace detail
{
inline std::vector< double > slice(const std::vector< double >& v, std::size_t from, std::size_t count)
{
    return {v.begin() + static_cast< std::ptrdiff_t >(from), v.begin() + static_cast< std::ptrdiff_t >(from + count)};
}
} // namespace detail

/// Self-describing network document. Doubles are written in shortest
/// round-trip form, so parsing restores every bit.
inline nlohmann::json net_to_json(const TwoLayerNet& net)
{
    const auto& s = net.shape();
    const auto& p = net.params();
    nlohmann::json j = shape_to_json(s);
    j["format"] = "fh.net/1";
    j["W1"] = detail::slice(p, s.w1_offset(), s.hidden * s.input_dim());
    j["b1"] = detail::slice(p, s.b1_offset(), s.hidden);
    j["W2"] = detail::slice(p, s.w2_offset(), s.outputs * s.hidden);
    j["b2"] = detail::slice(p, s.b2_offset(), s.outputs);
    return j;
}

inline TwoLayerNet net_from_json(const nlohmann::json& j)
{
    try
    {
        require(j.at("format").get< std::string >() == "fh.net/1", ErrorKind::Integrity, "unsupported network format");
        const auto s = shape_from_json(j);
        std::vector< double > params;
        params.reserve(s.param_count());
        const std::pair< const char*, std::size_t > blocks[] = {
            {"W1", s.hidden * s.input_dim()}, {"b1", s.hidden}, {"W2", s.outputs * s.hidden}, {"b2", s.outputs}};
        for (const auto& [name, count] : blocks)
        {
            const auto v = j.at(name).get< std::vector< double > >();
            require(v.size() == count, ErrorKind::Integrity,
                    std::string(name) + " has " + std::to_string(v.size()) + " entries, expected " + std::to_string(count));
            params.insert(params.end(), v.begin(), v.end());
        }
        return TwoLayerNet(s, std::move(params));
    }
    catch (const nlohmann::json::exception& e)
    {
        fail(ErrorKind::Integrity, std::string("bad network document: ") + e.what());
    }
}
} // namespace fh

#endif // FH_OBJECTIVE_HPP
