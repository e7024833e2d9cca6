#pragma once

// Rule-based final-answer extraction and the answer equivalence relation.

#include <algorithm>
#include <cctype>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <boost/multiprecision/cpp_int.hpp>

namespace mmupt {

using Rational = boost::multiprecision::cpp_rational;

/// num/den in lowest terms; the denominator may be negative.
inline Rational make_rational(boost::multiprecision::cpp_int num, boost::multiprecision::cpp_int den) {
  if (den < 0) {
    num = -num;
    den = -den;
  }
  return Rational(num, den);
}

enum class AnswerKind { none, numeric, choice, text };

inline std::string_view to_string(AnswerKind k) {
  switch (k) {
    case AnswerKind::numeric: return "numeric";
    case AnswerKind::choice: return "choice";
    case AnswerKind::text: return "text";
    case AnswerKind::none: break;
  }
  return "none";
}

inline std::optional<AnswerKind> answer_kind_from_string(std::string_view s) {
  if (s == "none") return AnswerKind::none;
  if (s == "numeric") return AnswerKind::numeric;
  if (s == "choice") return AnswerKind::choice;
  if (s == "text") return AnswerKind::text;
  return std::nullopt;
}

/// A canonicalized final answer. `value` is engaged iff kind == numeric.
struct ExtractedAnswer {
  AnswerKind kind = AnswerKind::none;
  std::string canonical;
  std::optional<Rational> value;

  bool is_none() const noexcept { return kind == AnswerKind::none; }
};

namespace detail {

inline constexpr std::size_t kMaxFractionDigits = 12;

inline bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }
inline bool is_digit(char c) { return c >= '0' && c <= '9'; }

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  return s;
}

inline std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

inline std::string collapse_whitespace(std::string_view s) {
  std::string out;
  bool pending = false;
  for (char c : trim(s)) {
    if (is_space(c)) {
      pending = true;
      continue;
    }
    if (pending) out.push_back(' ');
    pending = false;
    out.push_back(c);
  }
  return out;
}

// Strips wrapping "$...$", trailing sentence punctuation and whitespace.
inline std::string_view strip_decoration(std::string_view s) {
  for (;;) {
    const std::string_view before = s;
    s = trim(s);
    while (!s.empty() && (s.back() == '.' || s.back() == ',' || s.back() == ';' || s.back() == '!'))
      s.remove_suffix(1);
    s = trim(s);
    if (s.size() >= 2 && s.front() == '$' && s.back() == '$') s = s.substr(1, s.size() - 2);
    if (s == before) return s;
  }
}

// Digits-only unsigned integer.
inline std::optional<boost::multiprecision::cpp_int> parse_digits(std::string_view s) {
  if (s.empty() || !std::all_of(s.begin(), s.end(), is_digit)) return std::nullopt;
  boost::multiprecision::cpp_int v = 0;
  for (char c : s) v = v * 10 + (c - '0');
  return v;
}

// [sign] digits [. digits]; extra fractional digits are truncated.
inline std::optional<Rational> parse_decimal(std::string_view s) {
  bool negative = false;
  if (!s.empty() && (s.front() == '-' || s.front() == '+')) {
    negative = s.front() == '-';
    s.remove_prefix(1);
  }
  const auto dot = s.find('.');
  std::string_view whole = s.substr(0, dot);
  std::string_view frac = dot == std::string_view::npos ? std::string_view{} : s.substr(dot + 1);
  if (dot != std::string_view::npos && frac.empty()) return std::nullopt;
  if (whole.empty() && frac.empty()) return std::nullopt;
  if (whole.empty()) whole = "0";
  if (frac.size() > kMaxFractionDigits) frac = frac.substr(0, kMaxFractionDigits);
  auto w = parse_digits(whole);
  if (!w) return std::nullopt;
  Rational value(*w);
  if (!frac.empty()) {
    auto f = parse_digits(frac);
    if (!f) return std::nullopt;
    boost::multiprecision::cpp_int scale = 1;
    for (std::size_t i = 0; i < frac.size(); ++i) scale *= 10;
    value += Rational(*f, scale);
  }
  return negative ? Rational(-value) : value;
}

// Integers, decimals, "a/b" and "\frac{a}{b}" (with optional sign).
inline std::optional<Rational> parse_number(std::string_view s) {
  s = trim(s);
  if (s.empty()) return std::nullopt;
  bool negative = false;
  std::string_view body = s;
  if (body.front() == '-' || body.front() == '+') {
    negative = body.front() == '-';
    body = trim(body.substr(1));
  }
  for (std::string_view cmd : {"\\frac", "\\dfrac", "\\tfrac"}) {
    if (body.substr(0, cmd.size()) != cmd) continue;
    std::string_view rest = body.substr(cmd.size());
    if (rest.empty() || rest.front() != '{') return std::nullopt;
    const auto close1 = rest.find('}');
    if (close1 == std::string_view::npos || close1 + 1 >= rest.size() || rest[close1 + 1] != '{') return std::nullopt;
    const auto close2 = rest.find('}', close1 + 2);
    if (close2 != rest.size() - 1) return std::nullopt;
    auto num = parse_decimal(trim(rest.substr(1, close1 - 1)));
    auto den = parse_decimal(trim(rest.substr(close1 + 2, close2 - close1 - 2)));
    if (!num || !den || *den == 0) return std::nullopt;
    Rational v = *num / *den;
    return negative ? Rational(-v) : v;
  }
  if (body.empty() || body.front() == '-' || body.front() == '+') return std::nullopt;
  const auto slash = body.find('/');
  if (slash != std::string_view::npos) {
    auto num = parse_decimal(trim(body.substr(0, slash)));
    auto den = parse_decimal(trim(body.substr(slash + 1)));
    if (!num || !den || *den == 0) return std::nullopt;
    Rational v = *num / *den;
    return negative ? Rational(-v) : v;
  }
  auto v = parse_decimal(body);
  if (!v) return std::nullopt;
  return negative ? Rational(-*v) : *v;
}

inline std::string rational_to_string(const Rational& v) {
  const auto num = boost::multiprecision::numerator(v);
  const auto den = boost::multiprecision::denominator(v);
  if (den == 1) return num.str();
  return num.str() + "/" + den.str();
}

// "(B)", "B", "(b)" -> 'B'. Bare letters must be uppercase.
inline std::optional<char> parse_choice(std::string_view s) {
  s = trim(s);
  if (s.size() == 3 && s.front() == '(' && s.back() == ')') {
    const char c = static_cast<char>(std::toupper(static_cast<unsigned char>(s[1])));
    if (c >= 'A' && c <= 'E') return c;
    return std::nullopt;
  }
  if (s.size() == 1 && s[0] >= 'A' && s[0] <= 'E') return s[0];
  return std::nullopt;
}

inline bool is_word_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0 || c == '_'; }

// Content of the last balanced \boxed{...}; nullopt if absent or malformed.
inline std::optional<std::string_view> last_boxed(std::string_view text) {
  constexpr std::string_view marker = "\\boxed{";
  std::size_t pos = text.rfind(marker);
  while (pos != std::string_view::npos) {
    const std::size_t start = pos + marker.size();
    int depth = 1;
    for (std::size_t i = start; i < text.size(); ++i) {
      if (text[i] == '{') ++depth;
      if (text[i] == '}' && --depth == 0) return text.substr(start, i - start);
    }
    if (pos == 0) break;
    pos = text.rfind(marker, pos - 1);
  }
  return std::nullopt;
}

// Text after the last "answer is" / "answer:" (case-insensitive), up to end of line.
inline std::optional<std::string_view> after_answer_phrase(std::string_view text) {
  const std::string low = lower(text);
  std::size_t best = std::string::npos;
  std::size_t best_end = 0;
  for (std::string_view phrase : {"answer is", "answer:"}) {
    const std::size_t p = low.rfind(phrase);
    if (p != std::string::npos && (best == std::string::npos || p > best)) {
      best = p;
      best_end = p + phrase.size();
    }
  }
  if (best == std::string::npos) return std::nullopt;
  std::string_view rest = text.substr(best_end);
  if (const auto nl = rest.find('\n'); nl != std::string_view::npos) rest = rest.substr(0, nl);
  rest = trim(rest);
  if (rest.empty()) return std::nullopt;
  return rest;
}

// A standalone option letter: last "(X)" anywhere, else a trailing bare letter.
inline std::optional<char> standalone_choice(std::string_view text) {
  std::optional<char> found;
  for (std::size_t i = 0; i + 2 < text.size(); ++i) {
    if (text[i] == '(' && text[i + 2] == ')') {
      const char c = text[i + 1];
      if (c >= 'A' && c <= 'E') found = c;
    }
  }
  if (found) return found;
  std::string_view s = strip_decoration(text);
  if (!s.empty() && s.back() >= 'A' && s.back() <= 'E' && (s.size() == 1 || !is_word_char(s[s.size() - 2])))
    return s.back();
  return std::nullopt;
}

// Last numeric literal: [-]digits[.digits][/digits[.digits]].
inline std::optional<std::string_view> last_number_literal(std::string_view text) {
  std::optional<std::string_view> found;
  std::size_t i = 0;
  while (i < text.size()) {
    if (!is_digit(text[i]) || (i > 0 && (is_word_char(text[i - 1]) || text[i - 1] == '.'))) {
      ++i;
      continue;
    }
    std::size_t start = i;
    if (start > 0 && text[start - 1] == '-' && (start == 1 || !is_word_char(text[start - 2]))) --start;
    auto scan_decimal = [&](std::size_t j) {
      while (j < text.size() && is_digit(text[j])) ++j;
      if (j + 1 < text.size() && text[j] == '.' && is_digit(text[j + 1])) {
        ++j;
        while (j < text.size() && is_digit(text[j])) ++j;
      }
      return j;
    };
    std::size_t end = scan_decimal(i);
    if (end + 1 < text.size() && text[end] == '/' && is_digit(text[end + 1])) end = scan_decimal(end + 1);
    found = text.substr(start, end - start);
    i = end;
  }
  return found;
}

}  // namespace detail

/// Classify an already-isolated answer string. Idempotent on canonical forms.
inline ExtractedAnswer canonicalize(std::string_view raw) {
  const std::string_view s = detail::strip_decoration(raw);
  if (s.empty()) return {};
  if (auto v = detail::parse_number(detail::lower(s))) {
    return ExtractedAnswer{AnswerKind::numeric, detail::rational_to_string(*v), std::move(*v)};
  }
  if (auto c = detail::parse_choice(s)) return ExtractedAnswer{AnswerKind::choice, std::string(1, *c), std::nullopt};
  std::string text = detail::collapse_whitespace(detail::lower(s));
  if (text.empty()) return {};
  return ExtractedAnswer{AnswerKind::text, std::move(text), std::nullopt};
}

inline ExtractedAnswer numeric_answer(const Rational& v) {
  return ExtractedAnswer{AnswerKind::numeric, detail::rational_to_string(v), v};
}

inline ExtractedAnswer choice_answer(char letter) { return canonicalize(std::string(1, letter)); }

/// Extraction rules, first match wins:
///   1. last \boxed{...}
///   2. text after the last "answer is" / "Answer:"
///   3. a standalone option letter A-E, parenthesized or trailing
///   4. the last numeric literal
/// Anything else is kind none. Total: never throws on malformed input.
inline ExtractedAnswer extract(std::string_view response_text) {
  if (auto boxed = detail::last_boxed(response_text)) {
    if (auto a = canonicalize(*boxed); !a.is_none()) return a;
  }
  if (auto tail = detail::after_answer_phrase(response_text)) {
    if (auto a = canonicalize(*tail); !a.is_none()) return a;
  }
  if (auto c = detail::standalone_choice(response_text)) return choice_answer(*c);
  if (auto num = detail::last_number_literal(response_text)) return canonicalize(*num);
  return {};
}

/// Kinds match and canonical forms agree (exact rational value for numerics).
/// `none` is equivalent to nothing, itself included.
inline bool equivalent(const ExtractedAnswer& a, const ExtractedAnswer& b) {
  if (a.kind != b.kind || a.kind == AnswerKind::none) return false;
  if (a.kind == AnswerKind::numeric) return a.value && b.value && *a.value == *b.value;
  return a.canonical == b.canonical;
}

}  // namespace mmupt
