#pragma once

#include <boost/multiprecision/cpp_int.hpp>
#include <stdexcept>
#include <string>

namespace frobjet {

// Exact arbitrary-precision rational scalar. boost keeps the invariants
// (positive denominator, reduced fraction) for us.
using Rational = boost::multiprecision::cpp_rational;
using Integer = boost::multiprecision::cpp_int;

inline Integer rat_num(const Rational& q) { return boost::multiprecision::numerator(q); }
inline Integer rat_den(const Rational& q) { return boost::multiprecision::denominator(q); }

inline bool is_integer(const Rational& q) { return rat_den(q) == 1; }

inline long to_long(const Integer& n) {
    return n.convert_to<long>();
}

inline std::string rat_str(const Rational& q) {
    return q.str();
}

inline Rational rat_pow(const Rational& base, long e) {
    if (e == 0) return Rational(1);
    if (base == 0) {
        if (e < 0) throw std::domain_error("rat_pow: 0 to a negative power");
        return Rational(0);
    }
    Rational b = e < 0 ? Rational(1) / base : base;
    long n = e < 0 ? -e : e;
    Rational r(1);
    while (n > 0) {
        if (n & 1) r *= b;
        b *= b;
        n >>= 1;
    }
    return r;
}

inline Integer int_gcd(Integer a, Integer b) {
    return boost::multiprecision::gcd(a, b);
}

// factorial / double factorial, used by combinatorial constants
inline Rational factorial(long n) {
    Rational r(1);
    for (long k = 2; k <= n; ++k) r *= k;
    return r;
}

// (2k-1)!! style double factorial with the convention (-1)!! = 1
inline Rational double_factorial(long n) {
    if (n <= 0) return Rational(1);
    Rational r(1);
    for (long k = n; k >= 1; k -= 2) r *= k;
    return r;
}

inline Rational binomial(long n, long k) {
    if (k < 0 || k > n) return Rational(0);
    Rational r(1);
    for (long j = 0; j < k; ++j) {
        r *= Rational(n - j);
        r /= Rational(j + 1);
    }
    return r;
}

// Extract the largest perfect-square rational factor: q = s^2 * r with r a
// squarefree integer (sign carried by r). Used by the sqrt normal form.
struct SquareSplit {
    Rational root;      // s
    Integer residue;    // r, squarefree (possibly negative or 1)
};

inline SquareSplit split_square(const Rational& q) {
    if (q == 0) return {Rational(0), Integer(1)};
    // q = n/d = (n*d)/d^2, so sqrt(q) = sqrt(n*d)/d
    Integer nd = rat_num(q) * rat_den(q);
    Integer d = rat_den(q);
    Integer sign = nd < 0 ? -1 : 1;
    nd = boost::multiprecision::abs(nd);
    Integer s = 1, r = 1;
    // trial division; arguments here are tiny in practice
    for (Integer p = 2; p * p <= nd; ++p) {
        if (nd % p != 0) continue;
        int e = 0;
        while (nd % p == 0) { nd /= p; ++e; }
        for (int i = 0; i < e / 2; ++i) s *= p;
        if (e % 2) r *= p;
    }
    r *= nd; // leftover prime
    return {Rational(s) / Rational(d), r * sign};
}

} // namespace frobjet
