#pragma once

#include <cstdint>
#include <numeric>
#include <ostream>
#include <stdexcept>

namespace ttsim {

/// Exact rational number with a positive denominator.
///
/// Products of rationals grow their terms without bound, so after every
/// multiplication the value is renormalized: when the denominator exceeds
/// `kMaxDenominator` it is replaced by the nearest fraction with denominator
/// `kMaxDenominator` (round half away from zero). The result is platform
/// independent, which is what matters for replay determinism.
class Rational {
 public:
  static constexpr std::int64_t kMaxDenominator = std::int64_t{1} << 32;

  constexpr Rational() = default;
  constexpr Rational(std::int64_t value) : num_(value), den_(1) {}  // NOLINT(implicit)
  Rational(std::int64_t num, std::int64_t den) { assign(num, den); }

  static Rational from_i128(__int128 num, __int128 den) {
    Rational r;
    r.assign_wide(num, den);
    return r;
  }

  constexpr std::int64_t num() const { return num_; }
  constexpr std::int64_t den() const { return den_; }

  double to_double() const { return static_cast<double>(num_) / static_cast<double>(den_); }

  bool positive() const { return num_ > 0; }

  friend Rational operator*(const Rational& a, const Rational& b) {
    return from_i128(static_cast<__int128>(a.num_) * b.num_,
                     static_cast<__int128>(a.den_) * b.den_);
  }
  friend Rational operator/(const Rational& a, const Rational& b) {
    if (b.num_ == 0) throw std::domain_error("rational division by zero");
    return from_i128(static_cast<__int128>(a.num_) * b.den_,
                     static_cast<__int128>(a.den_) * b.num_);
  }
  friend Rational operator+(const Rational& a, const Rational& b) {
    return from_i128(static_cast<__int128>(a.num_) * b.den_ + static_cast<__int128>(b.num_) * a.den_,
                     static_cast<__int128>(a.den_) * b.den_);
  }
  friend Rational operator-(const Rational& a, const Rational& b) {
    return from_i128(static_cast<__int128>(a.num_) * b.den_ - static_cast<__int128>(b.num_) * a.den_,
                     static_cast<__int128>(a.den_) * b.den_);
  }

  friend bool operator==(const Rational& a, const Rational& b) {
    return a.num_ == b.num_ && a.den_ == b.den_;
  }
  friend std::strong_ordering operator<=>(const Rational& a, const Rational& b) {
    __int128 l = static_cast<__int128>(a.num_) * b.den_;
    __int128 r = static_cast<__int128>(b.num_) * a.den_;
    if (l < r) return std::strong_ordering::less;
    if (l > r) return std::strong_ordering::greater;
    return std::strong_ordering::equal;
  }

  friend std::ostream& operator<<(std::ostream& os, const Rational& r) {
    return os << r.num_ << '/' << r.den_;
  }

 private:
  void assign(std::int64_t num, std::int64_t den) { assign_wide(num, den); }

  static __int128 gcd128(__int128 a, __int128 b) {
    if (a < 0) a = -a;
    if (b < 0) b = -b;
    while (b != 0) {
      __int128 t = a % b;
      a = b;
      b = t;
    }
    return a;
  }

  void assign_wide(__int128 num, __int128 den) {
    if (den == 0) throw std::domain_error("rational with zero denominator");
    if (den < 0) {
      num = -num;
      den = -den;
    }
    __int128 g = gcd128(num, den);
    if (g > 1) {
      num /= g;
      den /= g;
    }
    if (den > kMaxDenominator) {
      // nearest fraction over kMaxDenominator
      __int128 scaled = num * kMaxDenominator;
      __int128 q = scaled / den;
      __int128 rem = scaled % den;
      if (rem < 0) rem = -rem;
      if (2 * rem >= den) q += (scaled < 0) ? -1 : 1;
      num = q;
      den = kMaxDenominator;
      g = gcd128(num, den);
      if (g > 1) {
        num /= g;
        den /= g;
      }
    }
    if (num > INT64_MAX || num < INT64_MIN) throw std::overflow_error("rational overflow");
    num_ = static_cast<std::int64_t>(num);
    den_ = static_cast<std::int64_t>(den);
  }

  std::int64_t num_ = 0;
  std::int64_t den_ = 1;
};

}  // namespace ttsim
