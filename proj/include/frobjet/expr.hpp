#pragma once

// Exact symbolic expression kernel: canonical fractions of multivariate
// polynomials over Q in a fixed indeterminate universe (base coordinates,
// jet variables, times, lambda, eps, auxiliary covector families), extended
// by opaque exp/log/sqrt atoms.
//
// Canonical form: Expr = num/den with num, den expanded polynomials
// (non-negative exponents), gcd(num, den) = 1, den monic under the term
// order, den free of sqrt atoms and (single-class) exp factors.  exp atoms
// obey exp(a)*exp(b) = exp(a+b) and exp(n*log x) = x^n; sqrt atoms obey
// sqrt(a)^2 = a.  Everything is immutable; all operations are pure.

#include <algorithm>
#include <cassert>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "rational.hpp"

namespace frobjet {

// ---------------------------------------------------------------------------
// errors

enum class Errc {
    Syntax,
    UnknownIdentifier,
    DivideByZero,
    DomainError,
    NotExact,
    DegreeTooLow,
    DegreeMismatch,
    MixedChart,
    DegenerateMetric,
    IntegrabilityFailure,
    NotSemisimple,
    NoClosedForm,
    NotInvertibleLeadingTerm,
    NotRationalInLambda,
    JetOrderExceedsFixture,
    WindowTooSmall,
    MissingFixture,
    NoSolutionInAnsatz,
    NoPolynomialSolution,
    ConfigError,
};

class Error : public std::runtime_error {
  public:
    Errc code;
    Error(Errc c, const std::string& msg) : std::runtime_error(msg), code(c) {}
};

// ---------------------------------------------------------------------------
// indeterminates

enum class Fam : uint8_t {
    Eps = 0,   // deformation parameter
    Lambda,    // spectral parameter
    BaseV,     // flat coordinates v^k and jets v^{k,s}
    BaseU,     // canonical coordinates u^k and jets
    Time,      // t^{alpha,p}: coord=alpha, order=p
    OnePt,     // tau-cover one-point functions f_{alpha,p}
    CovP,      // formal test covector families (jets allowed)
    CovQ,
    CovR,
};

inline bool fam_has_jets(Fam f) {
    return f == Fam::BaseV || f == Fam::BaseU || f == Fam::CovP ||
           f == Fam::CovQ || f == Fam::CovR;
}

struct Var {
    Fam fam{Fam::Eps};
    int16_t coord{0};
    int16_t order{0};

    friend bool operator==(const Var&, const Var&) = default;
};

inline int var_cmp(const Var& a, const Var& b) {
    if (a.fam != b.fam) return a.fam < b.fam ? -1 : 1;
    if (a.coord != b.coord) return a.coord < b.coord ? -1 : 1;
    if (a.order != b.order) return a.order < b.order ? -1 : 1;
    return 0;
}
inline bool operator<(const Var& a, const Var& b) { return var_cmp(a, b) < 0; }

inline Var v_eps() { return {Fam::Eps, 0, 0}; }
inline Var v_lambda() { return {Fam::Lambda, 0, 0}; }
inline Var v_base(Fam f, int coord, int order = 0) {
    return {f, static_cast<int16_t>(coord), static_cast<int16_t>(order)};
}
inline Var v_time(int alpha, int p) {
    return {Fam::Time, static_cast<int16_t>(alpha), static_cast<int16_t>(p)};
}
inline Var v_onept(int alpha, int p) {
    return {Fam::OnePt, static_cast<int16_t>(alpha), static_cast<int16_t>(p)};
}

inline std::string var_name(const Var& v) {
    auto jet = [&](const char* stem) {
        std::string s = stem + std::to_string(v.coord);
        if (v.order > 0) s += "_" + std::to_string(v.order);
        return s;
    };
    switch (v.fam) {
        case Fam::Eps: return "eps";
        case Fam::Lambda: return "lambda";
        case Fam::BaseV: return jet("v");
        case Fam::BaseU: return jet("u");
        case Fam::Time:
            return "t" + std::to_string(v.coord) + "_" + std::to_string(v.order);
        case Fam::OnePt:
            return "f" + std::to_string(v.coord) + "_" + std::to_string(v.order);
        case Fam::CovP: return jet("pa");
        case Fam::CovQ: return jet("pb");
        case Fam::CovR: return jet("pc");
    }
    return "?";
}

// ---------------------------------------------------------------------------
// monomials and polynomials

class Expr;
using ExprPtr = std::shared_ptr<const Expr>;

enum class AtomKind : uint8_t { Log = 0, Sqrt = 1 };

struct Atom {
    AtomKind kind;
    ExprPtr arg;
};
using AtomPtr = std::shared_ptr<const Atom>;

int expr_cmp(const Expr& a, const Expr& b);

inline int atom_cmp(const Atom& a, const Atom& b) {
    if (a.kind != b.kind) return a.kind < b.kind ? -1 : 1;
    if (a.arg == b.arg) return 0;
    return expr_cmp(*a.arg, *b.arg);
}

struct Monomial {
    Rational coeff{0};
    std::vector<std::pair<Var, int>> vars;       // sorted asc, exp != 0
    std::vector<std::pair<AtomPtr, int>> atoms;  // sorted asc, exp != 0
    ExprPtr exp_arg;                             // factor exp(exp_arg), or null
};

inline long mono_grade(const Monomial& m) {
    long g = 0;
    for (auto& [v, e] : m.vars) g += e;
    for (auto& [a, e] : m.atoms) g += e;
    return g;
}

// term order: graded, then lexicographic over the sorted factor lists, then
// the exp-part. Ignores the coefficient. Compatible with multiplication.
inline int mono_cmp(const Monomial& a, const Monomial& b) {
    long ga = mono_grade(a), gb = mono_grade(b);
    if (ga != gb) return ga < gb ? -1 : 1;
    size_t i = 0, j = 0;
    while (i < a.vars.size() && j < b.vars.size()) {
        int c = var_cmp(a.vars[i].first, b.vars[j].first);
        if (c < 0) return 1;  // a has an earlier variable -> larger
        if (c > 0) return -1;
        if (a.vars[i].second != b.vars[j].second)
            return a.vars[i].second > b.vars[j].second ? 1 : -1;
        ++i, ++j;
    }
    if (i < a.vars.size()) return 1;
    if (j < b.vars.size()) return -1;
    i = j = 0;
    while (i < a.atoms.size() && j < b.atoms.size()) {
        int c = atom_cmp(*a.atoms[i].first, *b.atoms[j].first);
        if (c < 0) return 1;
        if (c > 0) return -1;
        if (a.atoms[i].second != b.atoms[j].second)
            return a.atoms[i].second > b.atoms[j].second ? 1 : -1;
        ++i, ++j;
    }
    if (i < a.atoms.size()) return 1;
    if (j < b.atoms.size()) return -1;
    bool ea = static_cast<bool>(a.exp_arg), eb = static_cast<bool>(b.exp_arg);
    if (ea != eb) return ea ? 1 : -1;
    if (ea) return expr_cmp(*a.exp_arg, *b.exp_arg);
    return 0;
}

struct Poly {
    std::vector<Monomial> terms;  // sorted desc by mono_cmp, coeff != 0

    bool is_zero() const { return terms.empty(); }
    bool is_constant() const {
        return terms.empty() ||
               (terms.size() == 1 && terms[0].vars.empty() &&
                terms[0].atoms.empty() && !terms[0].exp_arg);
    }
};

inline Poly poly_zero() { return {}; }

inline Poly poly_const(const Rational& c) {
    Poly p;
    if (c != 0) p.terms.push_back(Monomial{c, {}, {}, nullptr});
    return p;
}

inline Poly poly_mono(Monomial m) {
    Poly p;
    if (m.coeff != 0) p.terms.push_back(std::move(m));
    return p;
}

inline Poly poly_var(const Var& v, int exp = 1) {
    Monomial m{Rational(1), {{v, exp}}, {}, nullptr};
    return poly_mono(std::move(m));
}

inline void poly_sort_combine(Poly& p) {
    std::sort(p.terms.begin(), p.terms.end(),
              [](const Monomial& a, const Monomial& b) { return mono_cmp(a, b) > 0; });
    std::vector<Monomial> out;
    out.reserve(p.terms.size());
    for (auto& m : p.terms) {
        if (!out.empty() && mono_cmp(out.back(), m) == 0)
            out.back().coeff += m.coeff;
        else
            out.push_back(std::move(m));
        if (!out.empty() && out.back().coeff == 0) out.pop_back();
    }
    p.terms = std::move(out);
}

inline Poly poly_add(const Poly& a, const Poly& b) {
    Poly r;
    r.terms.reserve(a.terms.size() + b.terms.size());
    size_t i = 0, j = 0;
    while (i < a.terms.size() && j < b.terms.size()) {
        int c = mono_cmp(a.terms[i], b.terms[j]);
        if (c > 0)
            r.terms.push_back(a.terms[i++]);
        else if (c < 0)
            r.terms.push_back(b.terms[j++]);
        else {
            Monomial m = a.terms[i++];
            m.coeff += b.terms[j++].coeff;
            if (m.coeff != 0) r.terms.push_back(std::move(m));
        }
    }
    for (; i < a.terms.size(); ++i) r.terms.push_back(a.terms[i]);
    for (; j < b.terms.size(); ++j) r.terms.push_back(b.terms[j]);
    return r;
}

inline Poly poly_neg(Poly p) {
    for (auto& m : p.terms) m.coeff = -m.coeff;
    return p;
}

inline Poly poly_scale(Poly p, const Rational& c) {
    if (c == 0) return {};
    for (auto& m : p.terms) m.coeff *= c;
    return p;
}

inline bool poly_equal(const Poly& a, const Poly& b) {
    if (a.terms.size() != b.terms.size()) return false;
    for (size_t i = 0; i < a.terms.size(); ++i) {
        if (a.terms[i].coeff != b.terms[i].coeff) return false;
        if (mono_cmp(a.terms[i], b.terms[i]) != 0) return false;
    }
    return true;
}

inline int poly_cmp(const Poly& a, const Poly& b) {
    if (a.terms.size() != b.terms.size())
        return a.terms.size() < b.terms.size() ? -1 : 1;
    for (size_t i = 0; i < a.terms.size(); ++i) {
        int c = mono_cmp(a.terms[i], b.terms[i]);
        if (c != 0) return c;
        if (a.terms[i].coeff != b.terms[i].coeff)
            return a.terms[i].coeff < b.terms[i].coeff ? -1 : 1;
    }
    return 0;
}

// ---------------------------------------------------------------------------
// Expr: canonical fraction

class Expr {
  public:
    Expr() : num_(), den_(poly_const(1)) {}

    static Expr constant(const Rational& c) {
        Expr e;
        e.num_ = poly_const(c);
        return e;
    }
    static Expr integer(long n) { return constant(Rational(n)); }
    static Expr variable(const Var& v) {
        Expr e;
        e.num_ = poly_var(v);
        return e;
    }

    static Expr fraction(Poly num, Poly den);
    static Expr make_exp(const Expr& arg);
    static Expr make_log(const Expr& arg);
    static Expr make_sqrt(const Expr& arg);

    const Poly& num() const { return num_; }
    const Poly& den() const { return den_; }

    bool is_zero() const { return num_.is_zero(); }
    bool is_one() const {
        return den_.is_constant() && num_.is_constant() && !num_.is_zero() &&
               num_.terms[0].coeff == 1 && den_.terms[0].coeff == 1;
    }
    bool is_rational() const { return num_.is_constant() && den_.is_constant(); }
    std::optional<Rational> as_rational() const {
        if (!is_rational()) return std::nullopt;
        if (num_.is_zero()) return Rational(0);
        return num_.terms[0].coeff / den_.terms[0].coeff;
    }
    bool den_is_one() const {
        return den_.is_constant() && den_.terms[0].coeff == 1;
    }

    friend Expr operator+(const Expr& a, const Expr& b);
    friend Expr operator-(const Expr& a, const Expr& b);
    friend Expr operator-(const Expr& a);
    friend Expr operator*(const Expr& a, const Expr& b);
    friend Expr operator/(const Expr& a, const Expr& b);
    Expr& operator+=(const Expr& b) { return *this = *this + b; }
    Expr& operator-=(const Expr& b) { return *this = *this - b; }
    Expr& operator*=(const Expr& b) { return *this = *this * b; }
    Expr& operator/=(const Expr& b) { return *this = *this / b; }

    Expr pow(long k) const;

    friend bool operator==(const Expr& a, const Expr& b) {
        return poly_equal(a.num_, b.num_) && poly_equal(a.den_, b.den_);
    }
    friend bool operator!=(const Expr& a, const Expr& b) { return !(a == b); }

    std::string str() const;

  private:
    Poly num_, den_;
};

inline int expr_cmp(const Expr& a, const Expr& b) {
    int c = poly_cmp(a.num(), b.num());
    if (c != 0) return c;
    return poly_cmp(a.den(), b.den());
}

inline ExprPtr make_ptr(Expr e) { return std::make_shared<const Expr>(std::move(e)); }

// ---------------------------------------------------------------------------
// monomial normalization (atom laws) and multiplication

// Normalizes a raw monomial: sorts/combines factors, applies sqrt(a)^2 = a,
// sqrt(a)^-1 = sqrt(a)/a and exp(n log x) = x^n. `carry` accumulates the
// non-monomial multiplier produced by those rewrites.
inline Monomial normalize_monomial(Monomial m, Expr& carry, bool& pure);

struct MonoProd {
    Monomial m;
    Expr carry;  // full product is m * carry
    bool pure;
};

inline MonoProd mono_mul(const Monomial& a, const Monomial& b) {
    Monomial r;
    r.coeff = a.coeff * b.coeff;
    r.vars.reserve(a.vars.size() + b.vars.size());
    size_t i = 0, j = 0;
    while (i < a.vars.size() && j < b.vars.size()) {
        int c = var_cmp(a.vars[i].first, b.vars[j].first);
        if (c < 0)
            r.vars.push_back(a.vars[i++]);
        else if (c > 0)
            r.vars.push_back(b.vars[j++]);
        else {
            int e = a.vars[i].second + b.vars[j].second;
            if (e != 0) r.vars.push_back({a.vars[i].first, e});
            ++i, ++j;
        }
    }
    for (; i < a.vars.size(); ++i) r.vars.push_back(a.vars[i]);
    for (; j < b.vars.size(); ++j) r.vars.push_back(b.vars[j]);

    // atoms: merge; rewrites handled by normalize_monomial
    r.atoms.reserve(a.atoms.size() + b.atoms.size());
    i = j = 0;
    while (i < a.atoms.size() && j < b.atoms.size()) {
        int c = atom_cmp(*a.atoms[i].first, *b.atoms[j].first);
        if (c < 0)
            r.atoms.push_back(a.atoms[i++]);
        else if (c > 0)
            r.atoms.push_back(b.atoms[j++]);
        else {
            int e = a.atoms[i].second + b.atoms[j].second;
            if (e != 0) r.atoms.push_back({a.atoms[i].first, e});
            ++i, ++j;
        }
    }
    for (; i < a.atoms.size(); ++i) r.atoms.push_back(a.atoms[i]);
    for (; j < b.atoms.size(); ++j) r.atoms.push_back(b.atoms[j]);

    MonoProd out{std::move(r), Expr::integer(1), true};

    // exp parts add
    if (a.exp_arg && b.exp_arg) {
        Expr s = *a.exp_arg + *b.exp_arg;
        out.m.exp_arg = s.is_zero() ? nullptr : make_ptr(std::move(s));
    } else if (a.exp_arg) {
        out.m.exp_arg = a.exp_arg;
    } else if (b.exp_arg) {
        out.m.exp_arg = b.exp_arg;
    }

    bool pure = true;
    out.m = normalize_monomial(std::move(out.m), out.carry, pure);
    out.pure = pure;
    return out;
}

// Full polynomial product as a canonical Expr (handles atom-law carries).
Expr poly_mul_full(const Poly& a, const Poly& b);

// Raw product used when both inputs are known to be atom-carry-free.
inline Poly poly_mul_plain(const Poly& a, const Poly& b) {
    Poly r;
    r.terms.reserve(a.terms.size() * b.terms.size());
    for (auto& ma : a.terms)
        for (auto& mb : b.terms) {
            MonoProd p = mono_mul(ma, mb);
            assert(p.pure);
            if (p.m.coeff != 0) r.terms.push_back(std::move(p.m));
        }
    poly_sort_combine(r);
    return r;
}

inline bool poly_has_atoms(const Poly& p) {
    for (auto& m : p.terms)
        if (!m.atoms.empty() || m.exp_arg) return true;
    return false;
}

inline bool poly_has_sqrt(const Poly& p) {
    for (auto& m : p.terms)
        for (auto& [a, e] : m.atoms)
            if (a->kind == AtomKind::Sqrt) return true;
    return false;
}

// ---------------------------------------------------------------------------
// gcd machinery (formal, local dense representation)

namespace detail {

// Key universe for one gcd computation: plain variables then atoms.
struct KeyTable {
    std::vector<Var> vars;
    std::vector<AtomPtr> atoms;

    int nkeys() const { return int(vars.size() + atoms.size()); }
};

using FTerm = std::pair<std::vector<int>, Rational>;
struct FPoly {
    std::vector<FTerm> terms;  // sorted desc by exponent vector (lex)
    bool is_zero() const { return terms.empty(); }
};

inline int fvec_cmp(const std::vector<int>& a, const std::vector<int>& b) {
    long ga = 0, gb = 0;
    for (int e : a) ga += e;
    for (int e : b) gb += e;
    if (ga != gb) return ga < gb ? -1 : 1;
    for (size_t i = 0; i < a.size(); ++i)
        if (a[i] != b[i]) return a[i] > b[i] ? 1 : -1;
    return 0;
}

inline void fpoly_normalize(FPoly& p) {
    std::sort(p.terms.begin(), p.terms.end(),
              [](const FTerm& x, const FTerm& y) { return fvec_cmp(x.first, y.first) > 0; });
    std::vector<FTerm> out;
    for (auto& t : p.terms) {
        if (!out.empty() && out.back().first == t.first)
            out.back().second += t.second;
        else
            out.push_back(t);
        if (!out.empty() && out.back().second == 0) out.pop_back();
    }
    p.terms = std::move(out);
}

inline FPoly fpoly_mul(const FPoly& a, const FPoly& b) {
    FPoly r;
    r.terms.reserve(a.terms.size() * b.terms.size());
    for (auto& ta : a.terms)
        for (auto& tb : b.terms) {
            std::vector<int> e(ta.first.size());
            for (size_t k = 0; k < e.size(); ++k) e[k] = ta.first[k] + tb.first[k];
            r.terms.push_back({std::move(e), ta.second * tb.second});
        }
    fpoly_normalize(r);
    return r;
}

inline FPoly fpoly_sub(const FPoly& a, const FPoly& b) {
    FPoly r = a;
    for (auto& t : b.terms) r.terms.push_back({t.first, -t.second});
    fpoly_normalize(r);
    return r;
}

inline int fpoly_degree(const FPoly& p, int key) {
    int d = 0;
    for (auto& t : p.terms) d = std::max(d, t.first[key]);
    return d;
}

// coefficient of key^d as an FPoly (exponent at `key` zeroed)
inline FPoly fpoly_coeff(const FPoly& p, int key, int d) {
    FPoly r;
    for (auto& t : p.terms)
        if (t.first[key] == d) {
            auto e = t.first;
            e[key] = 0;
            r.terms.push_back({std::move(e), t.second});
        }
    fpoly_normalize(r);
    return r;
}

inline FPoly fpoly_shift(const FPoly& p, int key, int d) {
    FPoly r = p;
    for (auto& t : r.terms) t.first[key] += d;
    return r;
}

inline std::optional<FPoly> fpoly_try_div(const FPoly& a, const FPoly& b);

inline FPoly fpoly_gcd(FPoly a, FPoly b, int nkeys);

// exact division, nullopt if not divisible
inline std::optional<FPoly> fpoly_try_div(const FPoly& a, const FPoly& b) {
    if (b.is_zero()) return std::nullopt;
    FPoly rem = a, q;
    const auto& lt = b.terms.front();
    while (!rem.is_zero()) {
        const auto& rt = rem.terms.front();
        std::vector<int> qe(rt.first.size());
        for (size_t k = 0; k < qe.size(); ++k) {
            qe[k] = rt.first[k] - lt.first[k];
            if (qe[k] < 0) return std::nullopt;
        }
        Rational qc = rt.second / lt.second;
        FPoly qt;
        qt.terms.push_back({qe, qc});
        q.terms.push_back({std::move(qe), qc});
        rem = fpoly_sub(rem, fpoly_mul(qt, b));
    }
    fpoly_normalize(q);
    return q;
}

inline FPoly fpoly_content_wrt(const FPoly& p, int key, int nkeys) {
    FPoly c;
    int d = fpoly_degree(p, key);
    for (int k = 0; k <= d; ++k) {
        FPoly ck = fpoly_coeff(p, key, k);
        if (ck.is_zero()) continue;
        c = c.is_zero() ? ck : fpoly_gcd(c, ck, nkeys);
        if (c.terms.size() == 1) {
            bool constant = true;
            for (int e : c.terms[0].first) constant &= (e == 0);
            if (constant) break;
        }
    }
    return c;
}

inline FPoly fpoly_monic(FPoly p) {
    if (p.is_zero()) return p;
    Rational lc = p.terms.front().second;
    for (auto& t : p.terms) t.second /= lc;
    return p;
}

inline FPoly fpoly_one(int nkeys) {
    FPoly p;
    p.terms.push_back({std::vector<int>(nkeys, 0), Rational(1)});
    return p;
}

// primitive PRS gcd
inline FPoly fpoly_gcd(FPoly a, FPoly b, int nkeys) {
    if (a.is_zero()) return fpoly_monic(b);
    if (b.is_zero()) return fpoly_monic(a);

    // common monomial part
    std::vector<int> mins(nkeys, INT32_MAX);
    for (auto* p : {&a, &b})
        for (auto& t : p->terms)
            for (int k = 0; k < nkeys; ++k) mins[k] = std::min(mins[k], t.first[k]);
    FPoly monoc;
    monoc.terms.push_back({mins, Rational(1)});

    auto strip = [&](FPoly& p) {
        for (auto& t : p.terms)
            for (int k = 0; k < nkeys; ++k) t.first[k] -= mins[k] == INT32_MAX ? 0 : mins[k];
    };
    strip(a);
    strip(b);

    // pick main key: the highest key occurring in either
    int main_key = -1;
    for (int k = nkeys - 1; k >= 0 && main_key < 0; --k)
        if (fpoly_degree(a, k) > 0 || fpoly_degree(b, k) > 0) main_key = k;
    if (main_key < 0) return fpoly_monic(monoc);  // both constants

    int da = fpoly_degree(a, main_key), db = fpoly_degree(b, main_key);
    if (da == 0 || db == 0) {
        // gcd(content wrt main key, other)
        FPoly g;
        if (da == 0)
            g = fpoly_gcd(a, fpoly_content_wrt(b, main_key, nkeys), nkeys);
        else
            g = fpoly_gcd(b, fpoly_content_wrt(a, main_key, nkeys), nkeys);
        return fpoly_monic(fpoly_mul(monoc, g));
    }

    FPoly ca = fpoly_content_wrt(a, main_key, nkeys);
    FPoly cb = fpoly_content_wrt(b, main_key, nkeys);
    FPoly A = *fpoly_try_div(a, ca);
    FPoly B = *fpoly_try_div(b, cb);
    FPoly cont = fpoly_gcd(ca, cb, nkeys);

    if (fpoly_degree(A, main_key) < fpoly_degree(B, main_key)) std::swap(A, B);
    // primitive PRS
    int guard = 0;
    while (true) {
        if (++guard > 512) throw Error(Errc::DomainError, "gcd: PRS did not terminate");
        int dA = fpoly_degree(A, main_key), dB = fpoly_degree(B, main_key);
        // pseudo-remainder of A by B
        FPoly R = A;
        while (!R.is_zero() && fpoly_degree(R, main_key) >= dB) {
            int dR = fpoly_degree(R, main_key);
            FPoly lcR = fpoly_coeff(R, main_key, dR);
            FPoly lcB = fpoly_coeff(B, main_key, dB);
            R = fpoly_sub(fpoly_mul(R, lcB),
                          fpoly_mul(fpoly_shift(fpoly_mul(B, lcR), main_key, dR - dB),
                                    fpoly_one(nkeys)));
            if (!R.is_zero() && fpoly_degree(R, main_key) >= dR) {
                // cancellation of the top term is guaranteed; degree must drop
                // unless numerical identity failed
                throw Error(Errc::DomainError, "gcd: pseudo-division stalled");
            }
        }
        if (R.is_zero()) {
            FPoly cB2 = fpoly_content_wrt(B, main_key, nkeys);
            FPoly pp = *fpoly_try_div(B, cB2);
            return fpoly_monic(fpoly_mul(monoc, fpoly_mul(cont, pp)));
        }
        if (fpoly_degree(R, main_key) == 0) return fpoly_monic(fpoly_mul(monoc, cont));
        FPoly cR = fpoly_content_wrt(R, main_key, nkeys);
        A = B;
        B = *fpoly_try_div(R, cR);
    }
}

}  // namespace detail

// translate Poly <-> FPoly over a shared key table
namespace detail {

inline void collect_keys(const Poly& p, KeyTable& kt) {
    for (auto& m : p.terms) {
        for (auto& [v, e] : m.vars)
            if (std::find(kt.vars.begin(), kt.vars.end(), v) == kt.vars.end())
                kt.vars.push_back(v);
        for (auto& [a, e] : m.atoms) {
            bool found = false;
            for (auto& b : kt.atoms)
                if (atom_cmp(*a, *b) == 0) { found = true; break; }
            if (!found) kt.atoms.push_back(a);
        }
    }
}

inline void sort_keys(KeyTable& kt) {
    std::sort(kt.vars.begin(), kt.vars.end());
    std::sort(kt.atoms.begin(), kt.atoms.end(),
              [](const AtomPtr& a, const AtomPtr& b) { return atom_cmp(*a, *b) < 0; });
}

inline FPoly to_fpoly(const Poly& p, const KeyTable& kt) {
    FPoly f;
    int n = kt.nkeys();
    for (auto& m : p.terms) {
        std::vector<int> e(n, 0);
        for (auto& [v, ex] : m.vars) {
            auto it = std::lower_bound(kt.vars.begin(), kt.vars.end(), v);
            e[size_t(it - kt.vars.begin())] = ex;
        }
        for (auto& [a, ex] : m.atoms) {
            for (size_t k = 0; k < kt.atoms.size(); ++k)
                if (atom_cmp(*a, *kt.atoms[k]) == 0) {
                    e[kt.vars.size() + k] = ex;
                    break;
                }
        }
        f.terms.push_back({std::move(e), m.coeff});
    }
    fpoly_normalize(f);
    return f;
}

inline Poly from_fpoly(const FPoly& f, const KeyTable& kt) {
    Poly p;
    for (auto& t : f.terms) {
        Monomial m;
        m.coeff = t.second;
        for (size_t k = 0; k < kt.vars.size(); ++k)
            if (t.first[k] != 0) m.vars.push_back({kt.vars[k], t.first[k]});
        for (size_t k = 0; k < kt.atoms.size(); ++k)
            if (t.first[kt.vars.size() + k] != 0)
                m.atoms.push_back({kt.atoms[k], t.first[kt.vars.size() + k]});
        p.terms.push_back(std::move(m));
    }
    poly_sort_combine(p);
    return p;
}

// split a poly into exp-classes: list of (arg-or-null, exp-free poly)
inline std::vector<std::pair<ExprPtr, Poly>> exp_classes(const Poly& p) {
    std::vector<std::pair<ExprPtr, Poly>> classes;
    for (auto& m : p.terms) {
        Monomial stripped = m;
        stripped.exp_arg = nullptr;
        bool placed = false;
        for (auto& [arg, cls] : classes) {
            bool match = (!arg && !m.exp_arg) ||
                         (arg && m.exp_arg && expr_cmp(*arg, *m.exp_arg) == 0);
            if (match) {
                cls.terms.push_back(stripped);
                placed = true;
                break;
            }
        }
        if (!placed) classes.push_back({m.exp_arg, poly_mono(stripped)});
    }
    for (auto& [arg, cls] : classes) poly_sort_combine(cls);
    return classes;
}

}  // namespace detail

// gcd of two true polynomials; exp factors are treated as units class-wise
inline Poly poly_gcd(const Poly& a, const Poly& b) {
    if (a.is_zero() || b.is_zero()) return a.is_zero() ? b : a;
    auto ca = detail::exp_classes(a);
    auto cb = detail::exp_classes(b);
    detail::KeyTable kt;
    for (auto& [arg, cls] : ca) detail::collect_keys(cls, kt);
    for (auto& [arg, cls] : cb) detail::collect_keys(cls, kt);
    detail::sort_keys(kt);
    detail::FPoly g;
    bool first = true;
    for (auto* cl : {&ca, &cb})
        for (auto& [arg, cls] : *cl) {
            auto f = detail::to_fpoly(cls, kt);
            g = first ? std::move(f) : detail::fpoly_gcd(g, f, kt.nkeys());
            first = false;
            if (g.terms.size() == 1) {
                bool constant = true;
                for (int e : g.terms[0].first) constant &= (e == 0);
                if (constant) return poly_const(1);
            }
        }
    return detail::from_fpoly(g, kt);
}

// exact division of polynomials (monomial-level; exp parts ride along in the
// dividend). Returns nullopt if not exactly divisible.
inline std::optional<Poly> poly_try_div(const Poly& a, const Poly& b) {
    if (b.is_zero()) return std::nullopt;
    if (a.is_zero()) return poly_zero();
    Poly rem = a, q;
    const Monomial& lt = b.terms.front();
    int guard = 0;
    while (!rem.is_zero()) {
        if (++guard > 100000) return std::nullopt;
        const Monomial& rt = rem.terms.front();
        // quotient monomial rt / lt
        Monomial qm;
        qm.coeff = rt.coeff / lt.coeff;
        {
            size_t i = 0, j = 0;
            bool ok = true;
            std::vector<std::pair<Var, int>> vs;
            while (j < lt.vars.size()) {
                while (i < rt.vars.size() && var_cmp(rt.vars[i].first, lt.vars[j].first) < 0)
                    vs.push_back(rt.vars[i++]);
                if (i >= rt.vars.size() || var_cmp(rt.vars[i].first, lt.vars[j].first) != 0) {
                    ok = false;
                    break;
                }
                int e = rt.vars[i].second - lt.vars[j].second;
                if (e < 0) { ok = false; break; }
                if (e > 0) vs.push_back({rt.vars[i].first, e});
                ++i, ++j;
            }
            if (!ok) return std::nullopt;
            for (; i < rt.vars.size(); ++i) vs.push_back(rt.vars[i]);
            qm.vars = std::move(vs);
        }
        {
            size_t i = 0, j = 0;
            bool ok = true;
            std::vector<std::pair<AtomPtr, int>> as;
            while (j < lt.atoms.size()) {
                while (i < rt.atoms.size() && atom_cmp(*rt.atoms[i].first, *lt.atoms[j].first) < 0)
                    as.push_back(rt.atoms[i++]);
                if (i >= rt.atoms.size() ||
                    atom_cmp(*rt.atoms[i].first, *lt.atoms[j].first) != 0) {
                    ok = false;
                    break;
                }
                int e = rt.atoms[i].second - lt.atoms[j].second;
                if (e < 0) { ok = false; break; }
                if (e > 0) as.push_back({rt.atoms[i].first, e});
                ++i, ++j;
            }
            if (!ok) return std::nullopt;
            for (; i < rt.atoms.size(); ++i) as.push_back(rt.atoms[i]);
            qm.atoms = std::move(as);
        }
        if (lt.exp_arg) {
            if (!rt.exp_arg) return std::nullopt;
            Expr d = *rt.exp_arg - *lt.exp_arg;
            qm.exp_arg = d.is_zero() ? nullptr : make_ptr(std::move(d));
        } else {
            qm.exp_arg = rt.exp_arg;
        }
        q.terms.push_back(qm);
        // rem -= qm * b  (plain products: divisor is canonical, quotient
        // exponents stay within the dividend's, no atom carries possible)
        Poly sub;
        sub.terms.reserve(b.terms.size());
        for (auto& mb : b.terms) {
            MonoProd pr = mono_mul(qm, mb);
            if (!pr.pure) return std::nullopt;
            pr.m.coeff = -pr.m.coeff;
            if (pr.m.coeff != 0) sub.terms.push_back(std::move(pr.m));
        }
        poly_sort_combine(sub);
        Poly next = poly_add(rem, sub);
        if (!next.is_zero() && !rem.is_zero() &&
            mono_cmp(next.terms.front(), rem.terms.front()) >= 0)
            return std::nullopt;
        rem = std::move(next);
    }
    poly_sort_combine(q);
    return q;
}

// ---------------------------------------------------------------------------
// fraction normalization

inline Expr Expr::fraction(Poly num, Poly den) {
    if (den.is_zero()) throw Error(Errc::DivideByZero, "division by zero expression");
    Expr out;
    if (num.is_zero()) return out;

    // 1. clear negative exponents (vars and log atoms) by scaling both sides
    {
        std::map<Var, int> vmin;
        std::vector<std::pair<AtomPtr, int>> amin;
        auto scan = [&](const Poly& p) {
            for (auto& m : p.terms) {
                for (auto& [v, e] : m.vars)
                    if (e < 0) {
                        auto [it, ins] = vmin.insert({v, e});
                        if (!ins) it->second = std::min(it->second, e);
                    }
                for (auto& [a, e] : m.atoms)
                    if (e < 0) {
                        bool found = false;
                        for (auto& [b, be] : amin)
                            if (atom_cmp(*a, *b) == 0) {
                                be = std::min(be, e);
                                found = true;
                            }
                        if (!found) amin.push_back({a, e});
                    }
            }
        };
        scan(num);
        scan(den);
        if (!vmin.empty() || !amin.empty()) {
            Monomial shift;
            shift.coeff = 1;
            for (auto& [v, e] : vmin) shift.vars.push_back({v, -e});
            for (auto& [a, e] : amin) shift.atoms.push_back({a, -e});
            std::sort(shift.atoms.begin(), shift.atoms.end(),
                      [](auto& x, auto& y) { return atom_cmp(*x.first, *y.first) < 0; });
            auto apply = [&](Poly& p) {
                Poly r;
                r.terms.reserve(p.terms.size());
                for (auto& m : p.terms) {
                    MonoProd pr = mono_mul(m, shift);
                    // shift contains only vars/log powers: always pure
                    r.terms.push_back(std::move(pr.m));
                }
                poly_sort_combine(r);
                p = std::move(r);
            };
            apply(num);
            apply(den);
        }
    }

    // 2. rationalize sqrt atoms out of the denominator
    int guard = 0;
    while (poly_has_sqrt(den)) {
        if (++guard > 16)
            throw Error(Errc::DomainError, "fraction: nested sqrt denominators");
        AtomPtr X;
        for (auto& m : den.terms) {
            for (auto& [a, e] : m.atoms)
                if (a->kind == AtomKind::Sqrt) { X = a; break; }
            if (X) break;
        }
        Poly d1, d0;
        for (auto& m : den.terms) {
            bool has = false;
            Monomial mm = m;
            for (size_t k = 0; k < mm.atoms.size(); ++k)
                if (atom_cmp(*mm.atoms[k].first, *X) == 0) {
                    has = true;
                    mm.atoms.erase(mm.atoms.begin() + long(k));
                    break;
                }
            (has ? d1 : d0).terms.push_back(std::move(mm));
        }
        poly_sort_combine(d1);
        poly_sort_combine(d0);
        Expr Xe;
        Xe.num_ = poly_mono(Monomial{Rational(1), {}, {{X, 1}}, nullptr});
        Xe.den_ = poly_const(1);
        Expr D1 = Expr::fraction(d1, poly_const(1));
        Expr D0 = Expr::fraction(d0, poly_const(1));
        Expr A = *X->arg;
        Expr N = Expr::fraction(num, poly_const(1));
        // 1/(X d1 + d0) = (X d1 - d0) / (A d1^2 - d0^2)
        return (N * (Xe * D1 - D0)) / (A * D1 * D1 - D0 * D0);
    }

    // 3. strip a shared exp factor from the denominator
    {
        bool any_exp = false, uniform = true;
        ExprPtr arg0 = den.terms.front().exp_arg;
        for (auto& m : den.terms) {
            if (m.exp_arg) any_exp = true;
            bool same = (!arg0 && !m.exp_arg) ||
                        (arg0 && m.exp_arg && expr_cmp(*arg0, *m.exp_arg) == 0);
            if (!same) uniform = false;
        }
        if (any_exp && uniform && arg0) {
            for (auto& m : den.terms) m.exp_arg = nullptr;
            Expr neg = -*arg0;
            ExprPtr negp = make_ptr(std::move(neg));
            Poly n2;
            for (auto& m : num.terms) {
                Monomial mm = m;
                if (mm.exp_arg) {
                    Expr s = *mm.exp_arg + *negp;
                    mm.exp_arg = s.is_zero() ? nullptr : make_ptr(std::move(s));
                } else {
                    mm.exp_arg = negp;
                }
                n2.terms.push_back(std::move(mm));
            }
            poly_sort_combine(n2);
            num = std::move(n2);
        }
    }

    // 4/5. cancel gcd (includes monomial content)
    if (!den.is_constant()) {
        Poly g = poly_gcd(num, den);
        if (!g.is_constant()) {
            auto qn = poly_try_div(num, g);
            auto qd = poly_try_div(den, g);
            if (qn && qd) {
                num = std::move(*qn);
                den = std::move(*qd);
            }
        }
    } else {
        // cancel common monomial content against a constant denominator: none
    }

    // 6. monic denominator
    Rational lc = den.terms.front().coeff;
    if (lc != 1) {
        num = poly_scale(std::move(num), Rational(1) / lc);
        den = poly_scale(std::move(den), Rational(1) / lc);
    }

    out.num_ = std::move(num);
    out.den_ = std::move(den);
    return out;
}

inline Expr poly_mul_full(const Poly& a, const Poly& b) {
    Poly plain;
    plain.terms.reserve(a.terms.size() * b.terms.size());
    std::vector<Expr> carries;
    for (auto& ma : a.terms)
        for (auto& mb : b.terms) {
            MonoProd p = mono_mul(ma, mb);
            if (p.m.coeff == 0) continue;
            if (p.pure) {
                plain.terms.push_back(std::move(p.m));
            } else {
                Expr base;
                base = Expr::fraction(poly_mono(std::move(p.m)), poly_const(1));
                carries.push_back(base * p.carry);
            }
        }
    poly_sort_combine(plain);
    Expr r = Expr::fraction(std::move(plain), poly_const(1));
    for (auto& c : carries) r += c;
    return r;
}

inline Expr operator+(const Expr& a, const Expr& b) {
    if (a.is_zero()) return b;
    if (b.is_zero()) return a;
    if (poly_equal(a.den_, b.den_))
        return Expr::fraction(poly_add(a.num_, b.num_), a.den_);
    if (a.den_is_one() && b.den_is_one())
        return Expr::fraction(poly_add(a.num_, b.num_), poly_const(1));
    Expr n1d2 = poly_mul_full(a.num_, b.den_);
    Expr n2d1 = poly_mul_full(b.num_, a.den_);
    Expr d = poly_mul_full(a.den_, b.den_);
    Expr s = n1d2 + n2d1;
    return s / d;
}

inline Expr operator-(const Expr& a) {
    Expr r = a;
    Poly n = r.num();
    Expr out;
    out = Expr::fraction(poly_neg(std::move(n)), r.den());
    return out;
}

inline Expr operator-(const Expr& a, const Expr& b) { return a + (-b); }

inline Expr operator*(const Expr& a, const Expr& b) {
    if (a.is_zero() || b.is_zero()) return Expr();
    if (a.is_one()) return b;
    if (b.is_one()) return a;
    Expr n = poly_mul_full(a.num_, b.num_);
    if (a.den_is_one() && b.den_is_one()) return n;
    Expr d = poly_mul_full(a.den_, b.den_);
    return n / d;
}

inline Expr operator/(const Expr& a, const Expr& b) {
    if (b.is_zero()) throw Error(Errc::DivideByZero, "division by zero expression");
    if (a.is_zero()) return Expr();
    // (an/ad)/(bn/bd) = an*bd / (ad*bn)
    Expr n = poly_mul_full(a.num_, b.den_);
    Expr d = poly_mul_full(a.den_, b.num_);
    // n, d are canonical fractions; combine
    Expr num_poly = poly_mul_full(n.num_, d.den_);
    Expr den_poly = poly_mul_full(n.den_, d.num_);
    if (num_poly.den_is_one() && den_poly.den_is_one())
        return Expr::fraction(num_poly.num_, den_poly.num_);
    return num_poly / den_poly;
}

inline Expr Expr::pow(long k) const {
    if (k == 0) return Expr::integer(1);
    if (is_zero()) {
        if (k < 0) throw Error(Errc::DivideByZero, "zero to a negative power");
        return Expr();
    }
    Expr base = *this;
    if (k < 0) {
        base = Expr::integer(1) / base;
        k = -k;
    }
    Expr r = Expr::integer(1);
    while (k > 0) {
        if (k & 1) r *= base;
        base = base * base;
        k >>= 1;
    }
    return r;
}

// ---------------------------------------------------------------------------
// atom constructors

inline Monomial normalize_monomial(Monomial m, Expr& carry, bool& pure) {
    pure = true;
    // sqrt powers: sqrt(a)^(2k+r) -> a^k * sqrt(a)^r with r in {0,1}
    std::vector<std::pair<AtomPtr, int>> atoms;
    atoms.reserve(m.atoms.size());
    for (auto& [a, e] : m.atoms) {
        if (e == 0) continue;
        if (a->kind == AtomKind::Sqrt) {
            long k = e >= 0 ? e / 2 : -((-e + 1) / 2);
            int r = int(e - 2 * k);
            if (k != 0) {
                carry *= a->arg->pow(k);
                pure = false;
            }
            if (r != 0) atoms.push_back({a, r});
        } else {
            atoms.push_back({a, e});
        }
    }
    m.atoms = std::move(atoms);
    // exp part: extract integer/half-integer multiples of log atoms
    if (m.exp_arg) {
        const Expr& A = *m.exp_arg;
        if (A.is_zero()) {
            m.exp_arg = nullptr;
        } else if (A.den_is_one()) {
            Poly keep;
            Expr extracted = Expr::integer(1);
            bool any = false;
            for (auto& t : A.num().terms) {
                bool is_log_term = t.vars.empty() && !t.exp_arg && t.atoms.size() == 1 &&
                                   t.atoms[0].first->kind == AtomKind::Log &&
                                   t.atoms[0].second == 1;
                if (is_log_term) {
                    Rational c = t.coeff;
                    const Expr& X = *t.atoms[0].first->arg;
                    if (is_integer(c)) {
                        extracted *= X.pow(to_long(rat_num(c)));
                        any = true;
                        continue;
                    }
                    Rational c2 = c * 2;
                    if (is_integer(c2)) {
                        extracted *= Expr::make_sqrt(X).pow(to_long(rat_num(c2)));
                        any = true;
                        continue;
                    }
                }
                keep.terms.push_back(t);
            }
            if (any) {
                poly_sort_combine(keep);
                Expr rest = Expr::fraction(std::move(keep), poly_const(1));
                m.exp_arg = rest.is_zero() ? nullptr : make_ptr(std::move(rest));
                carry *= extracted;
                pure = false;
            }
        }
    }
    return m;
}

inline Expr Expr::make_exp(const Expr& arg) {
    Monomial m;
    m.coeff = 1;
    m.exp_arg = arg.is_zero() ? nullptr : make_ptr(arg);
    Expr carry = Expr::integer(1);
    bool pure = true;
    m = normalize_monomial(std::move(m), carry, pure);
    Expr base = Expr::fraction(poly_mono(std::move(m)), poly_const(1));
    return pure ? base : base * carry;
}

inline Expr Expr::make_log(const Expr& arg) {
    if (arg.is_zero()) throw Error(Errc::DomainError, "log(0)");
    if (arg.is_one()) return Expr();
    // log(exp(a)) = a for a bare exp factor
    if (arg.den_is_one() && arg.num().terms.size() == 1) {
        const Monomial& m = arg.num().terms[0];
        if (m.coeff == 1 && m.vars.empty() && m.atoms.empty() && m.exp_arg)
            return *m.exp_arg;
    }
    Monomial m;
    m.coeff = 1;
    m.atoms.push_back({std::make_shared<const Atom>(Atom{AtomKind::Log, make_ptr(arg)}), 1});
    return Expr::fraction(poly_mono(std::move(m)), poly_const(1));
}

inline Expr Expr::make_sqrt(const Expr& arg) {
    if (arg.is_zero()) return Expr();
    if (auto q = arg.as_rational()) {
        SquareSplit sp = split_square(*q);
        if (sp.residue == 1) return Expr::constant(sp.root);
        Monomial m;
        m.coeff = sp.root;
        m.atoms.push_back({std::make_shared<const Atom>(
                               Atom{AtomKind::Sqrt, make_ptr(Expr::constant(Rational(sp.residue)))}),
                           1});
        return Expr::fraction(poly_mono(std::move(m)), poly_const(1));
    }
    // single-monomial argument: pull out squares and exp halves
    if (arg.den_is_one() && arg.num().terms.size() == 1) {
        const Monomial& am = arg.num().terms[0];
        SquareSplit sp = split_square(am.coeff);
        Monomial outer, residue;
        outer.coeff = sp.root;
        residue.coeff = Rational(sp.residue);
        for (auto& [v, e] : am.vars) {
            long k = e >= 0 ? e / 2 : -((-e + 1) / 2);
            int r = int(e - 2 * k);
            if (k != 0) outer.vars.push_back({v, int(k)});
            if (r != 0) residue.vars.push_back({v, r});
        }
        for (auto& [a, e] : am.atoms) residue.atoms.push_back({a, e});
        if (am.exp_arg) {
            Expr half = *am.exp_arg * Expr::constant(Rational(1, 2));
            outer.exp_arg = make_ptr(std::move(half));
        }
        Expr outer_e = Expr::fraction(poly_mono(std::move(outer)), poly_const(1));
        bool residue_trivial = residue.vars.empty() && residue.atoms.empty() &&
                               residue.coeff == 1;
        if (residue_trivial) return outer_e;
        Expr res_e = Expr::fraction(poly_mono(std::move(residue)), poly_const(1));
        Monomial sm;
        sm.coeff = 1;
        sm.atoms.push_back(
            {std::make_shared<const Atom>(Atom{AtomKind::Sqrt, make_ptr(std::move(res_e))}), 1});
        return outer_e * Expr::fraction(poly_mono(std::move(sm)), poly_const(1));
    }
    // general argument: extract a perfect-square rational content
    Monomial m;
    m.coeff = 1;
    m.atoms.push_back({std::make_shared<const Atom>(Atom{AtomKind::Sqrt, make_ptr(arg)}), 1});
    return Expr::fraction(poly_mono(std::move(m)), poly_const(1));
}

// ---------------------------------------------------------------------------
// variable collection, substitution, differentiation

inline void collect_vars(const Expr& e, std::set<Var>& out);

inline void collect_vars(const Poly& p, std::set<Var>& out) {
    for (auto& m : p.terms) {
        for (auto& [v, e] : m.vars) out.insert(v);
        for (auto& [a, e] : m.atoms) collect_vars(*a->arg, out);
        if (m.exp_arg) collect_vars(*m.exp_arg, out);
    }
}

inline void collect_vars(const Expr& e, std::set<Var>& out) {
    collect_vars(e.num(), out);
    collect_vars(e.den(), out);
}

inline std::set<Var> vars_of(const Expr& e) {
    std::set<Var> s;
    collect_vars(e, s);
    return s;
}

inline bool depends_on(const Expr& e, const Var& v) {
    return vars_of(e).count(v) > 0;
}

using Subst = std::map<Var, Expr>;

inline Expr subst(const Expr& e, const Subst& s);

inline Expr subst_poly(const Poly& p, const Subst& s) {
    Expr acc;
    for (auto& m : p.terms) {
        Monomial keep;
        keep.coeff = m.coeff;
        Expr factor = Expr::integer(1);
        bool changed = false;
        for (auto& [v, e] : m.vars) {
            auto it = s.find(v);
            if (it == s.end())
                keep.vars.push_back({v, e});
            else {
                factor *= it->second.pow(e);
                changed = true;
            }
        }
        for (auto& [a, e] : m.atoms) {
            Expr na = subst(*a->arg, s);
            if (na == *a->arg) {
                keep.atoms.push_back({a, e});
            } else {
                changed = true;
                Expr rebuilt = a->kind == AtomKind::Log ? Expr::make_log(na)
                                                        : Expr::make_sqrt(na);
                factor *= rebuilt.pow(e);
            }
        }
        if (m.exp_arg) {
            Expr na = subst(*m.exp_arg, s);
            if (na == *m.exp_arg) {
                keep.exp_arg = m.exp_arg;
            } else {
                changed = true;
                factor *= Expr::make_exp(na);
            }
        }
        Expr term = Expr::fraction(poly_mono(std::move(keep)), poly_const(1));
        acc += changed ? term * factor : term;
    }
    return acc;
}

inline Expr subst(const Expr& e, const Subst& s) {
    if (s.empty()) return e;
    // fast reject
    bool touches = false;
    for (auto& v : vars_of(e))
        if (s.count(v)) { touches = true; break; }
    if (!touches) return e;
    Expr n = subst_poly(e.num(), s);
    Expr d = subst_poly(e.den(), s);
    return n / d;
}

inline Expr subst1(const Expr& e, const Var& v, const Expr& val) {
    Subst s;
    s.insert({v, val});
    return subst(e, s);
}

inline Expr diff(const Expr& e, const Var& x);

inline Expr diff_poly(const Poly& p, const Var& x) {
    Poly plain;
    std::vector<Expr> extra;
    for (auto& m : p.terms) {
        for (size_t k = 0; k < m.vars.size(); ++k) {
            if (!(m.vars[k].first == x)) continue;
            Monomial d = m;
            d.coeff *= m.vars[k].second;
            if (m.vars[k].second == 1)
                d.vars.erase(d.vars.begin() + long(k));
            else
                d.vars[k].second -= 1;
            plain.terms.push_back(std::move(d));
        }
        for (size_t k = 0; k < m.atoms.size(); ++k) {
            const Atom& a = *m.atoms[k].first;
            Expr darg = diff(*a.arg, x);
            if (darg.is_zero()) continue;
            int e = m.atoms[k].second;
            if (a.kind == AtomKind::Log) {
                Monomial d = m;
                d.coeff *= e;
                if (e == 1)
                    d.atoms.erase(d.atoms.begin() + long(k));
                else
                    d.atoms[k].second -= 1;
                Expr base = Expr::fraction(poly_mono(std::move(d)), poly_const(1));
                extra.push_back(base * darg / *a.arg);
            } else {  // sqrt: d(sqrt(A)^e) = (e/2) sqrt(A)^e * dA / A
                Expr base = Expr::fraction(poly_mono(Monomial(m)), poly_const(1));
                extra.push_back(base * Expr::constant(Rational(e, 2)) * darg / *a.arg);
            }
        }
        if (m.exp_arg) {
            Expr darg = diff(*m.exp_arg, x);
            if (!darg.is_zero()) {
                Expr base = Expr::fraction(poly_mono(Monomial(m)), poly_const(1));
                extra.push_back(base * darg);
            }
        }
    }
    poly_sort_combine(plain);
    Expr r = Expr::fraction(std::move(plain), poly_const(1));
    for (auto& t : extra) r += t;
    return r;
}

inline Expr diff(const Expr& e, const Var& x) {
    if (e.den_is_one()) return diff_poly(e.num(), x);
    Expr dn = diff_poly(e.num(), x);
    Expr dd = diff_poly(e.den(), x);
    Expr den = Expr::fraction(e.den(), poly_const(1));
    Expr num = Expr::fraction(e.num(), poly_const(1));
    if (dd.is_zero()) return dn / den;
    return (dn * den - num * dd) / (den * den);
}

// collect an expression as a polynomial in one variable; the denominator must
// not involve that variable
inline std::map<int, Expr> collect_in(const Expr& e, const Var& x) {
    if (depends_on(Expr::fraction(e.den(), poly_const(1)), x))
        throw Error(Errc::DomainError,
                    "collect_in: denominator depends on " + var_name(x));
    std::map<int, Poly> buckets;
    for (auto& m : e.num().terms) {
        // x inside an atom argument makes plain collection unsound
        for (auto& [a, ee] : m.atoms)
            if (depends_on(*a->arg, x))
                throw Error(Errc::DomainError, "collect_in: variable under an atom");
        if (m.exp_arg && depends_on(*m.exp_arg, x))
            throw Error(Errc::DomainError, "collect_in: variable under exp");
        int deg = 0;
        Monomial mm = m;
        for (size_t k = 0; k < mm.vars.size(); ++k)
            if (mm.vars[k].first == x) {
                deg = mm.vars[k].second;
                mm.vars.erase(mm.vars.begin() + long(k));
                break;
            }
        buckets[deg].terms.push_back(std::move(mm));
    }
    std::map<int, Expr> out;
    for (auto& [d, p] : buckets) {
        poly_sort_combine(p);
        Expr c = Expr::fraction(std::move(p), e.den());
        if (!c.is_zero()) out[d] = std::move(c);
    }
    return out;
}

inline int degree_in(const Expr& e, const Var& x) {
    int d = 0;
    for (auto& m : e.num().terms)
        for (auto& [v, ee] : m.vars)
            if (v == x) d = std::max(d, ee);
    return d;
}

// evaluate with rational substitutions for every variable present
inline Rational eval_rational(const Expr& e, const std::map<Var, Rational>& vals) {
    Subst s;
    for (auto& [v, q] : vals) s.insert({v, Expr::constant(q)});
    Expr r = subst(e, s);
    auto q = r.as_rational();
    if (!q) throw Error(Errc::DomainError, "eval_rational: result not rational");
    return *q;
}

// drop every monomial whose eps-power exceeds the cutoff (numerator side;
// the denominator must be eps-free, which holds everywhere we truncate)
inline Expr truncate_eps(const Expr& e, int max_power) {
    Var eps = v_eps();
    if (depends_on(Expr::fraction(e.den(), poly_const(1)), eps))
        throw Error(Errc::DomainError, "truncate_eps: eps in denominator");
    Poly keep;
    for (auto& m : e.num().terms) {
        int p = 0;
        for (auto& [v, ee] : m.vars)
            if (v == eps) p = ee;
        if (p <= max_power) keep.terms.push_back(m);
    }
    poly_sort_combine(keep);
    return Expr::fraction(std::move(keep), e.den());
}

inline Expr eps_coefficient(const Expr& e, int power) {
    auto parts = collect_in(e, v_eps());
    auto it = parts.find(power);
    return it == parts.end() ? Expr() : it->second;
}

// ---------------------------------------------------------------------------
// printing

namespace detail {

inline void print_rational(std::ostream& os, const Rational& q) { os << q.str(); }

void print_expr(std::ostream& os, const Expr& e);

inline void print_monomial(std::ostream& os, const Monomial& m, bool lead) {
    Rational c = m.coeff;
    if (c < 0) {
        os << (lead ? "-" : " - ");
        c = -c;
    } else if (!lead) {
        os << " + ";
    }
    bool printed = false;
    bool bare = m.vars.empty() && m.atoms.empty() && !m.exp_arg;
    if (c != 1 || bare) {
        print_rational(os, c);
        printed = true;
    }
    auto sep = [&]() {
        if (printed) os << "*";
        printed = true;
    };
    for (auto& [v, e] : m.vars) {
        sep();
        os << var_name(v);
        if (e != 1) os << "^" << e;
    }
    for (auto& [a, e] : m.atoms) {
        sep();
        os << (a->kind == AtomKind::Log ? "log(" : "sqrt(");
        print_expr(os, *a->arg);
        os << ")";
        if (e != 1) os << "^" << e;
    }
    if (m.exp_arg) {
        sep();
        os << "exp(";
        print_expr(os, *m.exp_arg);
        os << ")";
    }
}

inline void print_poly(std::ostream& os, const Poly& p) {
    if (p.is_zero()) {
        os << "0";
        return;
    }
    bool lead = true;
    for (auto& m : p.terms) {
        print_monomial(os, m, lead);
        lead = false;
    }
}

inline void print_expr(std::ostream& os, const Expr& e) {
    if (e.den_is_one()) {
        print_poly(os, e.num());
        return;
    }
    if (e.den().terms.size() == 1) {
        // monomial denominator: print as a Laurent product
        const Monomial& d = e.den().terms[0];
        if (e.num().terms.size() == 1) {
            Monomial m = e.num().terms[0];
            m.coeff /= d.coeff;
            for (auto& [v, ee] : d.vars) {
                bool merged = false;
                for (auto& [w, we] : m.vars)
                    if (w == v) {
                        we -= ee;
                        merged = true;
                    }
                if (!merged) m.vars.push_back({v, -ee});
            }
            std::sort(m.vars.begin(), m.vars.end(),
                      [](auto& a, auto& b) { return a.first < b.first; });
            m.vars.erase(std::remove_if(m.vars.begin(), m.vars.end(),
                                        [](auto& p2) { return p2.second == 0; }),
                         m.vars.end());
            for (auto& [a, ee] : d.atoms) {
                bool merged = false;
                for (auto& [b, be] : m.atoms)
                    if (atom_cmp(*a, *b) == 0) {
                        be -= ee;
                        merged = true;
                    }
                if (!merged) m.atoms.push_back({a, -ee});
            }
            print_monomial(os, m, true);
            return;
        }
        os << "(";
        print_poly(os, e.num());
        os << ")*(";
        print_poly(os, e.den());
        os << ")^-1";
        return;
    }
    os << "(";
    print_poly(os, e.num());
    os << ")/(";
    print_poly(os, e.den());
    os << ")";
}

}  // namespace detail

inline std::string Expr::str() const {
    std::ostringstream os;
    detail::print_expr(os, *this);
    return os.str();
}

inline std::string to_string(const Expr& e) { return e.str(); }

}  // namespace frobjet
