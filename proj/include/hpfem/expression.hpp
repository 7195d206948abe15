#pragma once

#include "hpfem/types.hpp"

#include <map>
#include <string>

namespace hpfem
{

/// Polynomial in x, y, z with real coefficients.
class Polynomial
{
public:
  Polynomial() = default;
  static Polynomial constant(double c);
  /// The coordinate x_k (k = 0, 1, 2).
  static Polynomial coordinate(int k);

  /// Parse numbers, x, y, z, + - * /, ^ with nonnegative integer exponents and
  /// parentheses. Division only by constants. Throws InputError.
  static Polynomial parse(const std::string& text);

  double operator()(const Vec3& x) const;
  Polynomial derivative(int k) const;
  int degree() const;
  bool is_zero() const { return terms_.empty(); }
  const std::map<MultiIndex, double>& terms() const { return terms_; }

  Polynomial operator+(const Polynomial& o) const;
  Polynomial operator-(const Polynomial& o) const;
  Polynomial operator*(const Polynomial& o) const;
  Polynomial operator*(double s) const;
  Polynomial operator-() const { return *this * -1.0; }
  bool operator==(const Polynomial& o) const = default;

private:
  void add(const MultiIndex& m, double c);
  std::map<MultiIndex, double> terms_;
};

} // namespace hpfem
