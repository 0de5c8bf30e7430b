#pragma once

// Recursive-descent parser for the expression grammar:
//   identifiers  v<k>, u<k> (base coordinates), v<k>_<s>, u<k>_<s> (jets,
//                s >= 1), t<k>_<p> (times), f<k>_<p> (one-point functions),
//                lambda, eps, pa/pb/pc<k>[_<s>] (formal covectors)
//   literals     decimal integers; rationals are formed by division
//   operators    + - * / ^ (integer exponents, possibly negative)
//   functions    exp(...), log(...), sqrt(...)
// Whitespace is insignificant. parse(print(e)) == e for canonical e.

#include <cctype>
#include <string>

#include "expr.hpp"

namespace frobjet {

namespace detail {

class Parser {
  public:
    explicit Parser(const std::string& text) : s_(text) {}

    Expr parse() {
        Expr e = expression();
        skip_ws();
        if (pos_ != s_.size()) fail("unexpected trailing input");
        return e;
    }

  private:
    const std::string& s_;
    size_t pos_ = 0;

    [[noreturn]] void fail(const std::string& msg, Errc code = Errc::Syntax) const {
        size_t line = 1, col = 1;
        for (size_t i = 0; i < pos_ && i < s_.size(); ++i) {
            if (s_[i] == '\n') {
                ++line;
                col = 1;
            } else {
                ++col;
            }
        }
        throw Error(code, "parse error at line " + std::to_string(line) + ", column " +
                              std::to_string(col) + ": " + msg);
    }

    void skip_ws() {
        while (pos_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[pos_]))) ++pos_;
    }

    bool eat(char c) {
        skip_ws();
        if (pos_ < s_.size() && s_[pos_] == c) {
            ++pos_;
            return true;
        }
        return false;
    }

    char peek() {
        skip_ws();
        return pos_ < s_.size() ? s_[pos_] : '\0';
    }

    Expr expression() {
        Expr e = term();
        while (true) {
            if (eat('+'))
                e += term();
            else if (eat('-'))
                e -= term();
            else
                return e;
        }
    }

    Expr term() {
        Expr e = factor();
        while (true) {
            if (eat('*'))
                e *= factor();
            else if (eat('/')) {
                Expr d = factor();
                if (d.is_zero()) fail("division by zero");
                e /= d;
            } else {
                return e;
            }
        }
    }

    Expr factor() {
        if (eat('-')) return -factor();
        Expr base = primary();
        if (eat('^')) {
            bool neg = eat('-');
            skip_ws();
            if (pos_ >= s_.size() || !std::isdigit(static_cast<unsigned char>(s_[pos_])))
                fail("expected integer exponent after '^'");
            long e = read_integer();
            if (neg && base.is_zero()) fail("division by zero");
            return base.pow(neg ? -e : e);
        }
        return base;
    }

    long read_integer() {
        size_t start = pos_;
        while (pos_ < s_.size() && std::isdigit(static_cast<unsigned char>(s_[pos_]))) ++pos_;
        return std::stol(s_.substr(start, pos_ - start));
    }

    Expr primary() {
        skip_ws();
        if (pos_ >= s_.size()) fail("unexpected end of input");
        char c = s_[pos_];
        if (c == '(') {
            ++pos_;
            Expr e = expression();
            if (!eat(')')) fail("expected ')'");
            return e;
        }
        if (std::isdigit(static_cast<unsigned char>(c))) {
            size_t start = pos_;
            while (pos_ < s_.size() && std::isdigit(static_cast<unsigned char>(s_[pos_]))) ++pos_;
            return Expr::constant(Rational(Integer(s_.substr(start, pos_ - start))));
        }
        if (std::isalpha(static_cast<unsigned char>(c))) return identifier();
        fail(std::string("unexpected character '") + c + "'");
    }

    Expr identifier() {
        size_t start = pos_;
        while (pos_ < s_.size() && std::isalpha(static_cast<unsigned char>(s_[pos_]))) ++pos_;
        std::string head = s_.substr(start, pos_ - start);

        if (head == "exp" || head == "log" || head == "sqrt") {
            if (!eat('(')) fail("expected '(' after " + head);
            Expr arg = expression();
            if (!eat(')')) fail("expected ')'");
            if (head == "exp") return Expr::make_exp(arg);
            if (head == "log") {
                if (arg.is_zero()) fail("log(0)", Errc::DomainError);
                return Expr::make_log(arg);
            }
            return Expr::make_sqrt(arg);
        }
        if (head == "lambda") return Expr::variable(v_lambda());
        if (head == "eps") return Expr::variable(v_eps());

        // indexed families
        Fam fam;
        bool needs_sub = false, allows_jet = false;
        if (head == "v") {
            fam = Fam::BaseV;
            allows_jet = true;
        } else if (head == "u") {
            fam = Fam::BaseU;
            allows_jet = true;
        } else if (head == "t") {
            fam = Fam::Time;
            needs_sub = true;
        } else if (head == "f") {
            fam = Fam::OnePt;
            needs_sub = true;
        } else if (head == "pa") {
            fam = Fam::CovP;
            allows_jet = true;
        } else if (head == "pb") {
            fam = Fam::CovQ;
            allows_jet = true;
        } else if (head == "pc") {
            fam = Fam::CovR;
            allows_jet = true;
        } else {
            pos_ = start;
            fail("unknown identifier '" + head + "'", Errc::UnknownIdentifier);
        }

        if (pos_ >= s_.size() || !std::isdigit(static_cast<unsigned char>(s_[pos_]))) {
            pos_ = start;
            fail("identifier '" + head + "' requires an index", Errc::UnknownIdentifier);
        }
        long coord = read_integer();
        if (coord < 1) {
            pos_ = start;
            fail("coordinate index must be >= 1", Errc::UnknownIdentifier);
        }
        long sub = -1;
        if (pos_ < s_.size() && s_[pos_] == '_') {
            ++pos_;
            if (pos_ >= s_.size() || !std::isdigit(static_cast<unsigned char>(s_[pos_])))
                fail("expected integer after '_'");
            sub = read_integer();
        }
        if (needs_sub) {
            if (sub < 0) {
                pos_ = start;
                fail("'" + head + std::to_string(coord) + "' requires a _<level> suffix",
                     Errc::UnknownIdentifier);
            }
            return Expr::variable(v_base(fam, int(coord), int(sub)));
        }
        if (sub == 0) {
            pos_ = start;
            fail("jet order must be >= 1", Errc::UnknownIdentifier);
        }
        if (sub > 0 && !allows_jet) {
            pos_ = start;
            fail("'" + head + "' does not take a jet suffix", Errc::UnknownIdentifier);
        }
        return Expr::variable(v_base(fam, int(coord), sub > 0 ? int(sub) : 0));
    }
};

}  // namespace detail

inline Expr parse(const std::string& text) {
    detail::Parser p(text);
    return p.parse();
}

}  // namespace frobjet
