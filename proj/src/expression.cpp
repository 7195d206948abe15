#include "hpfem/expression.hpp"

#include <cctype>
#include <cmath>
#include <cstdlib>

namespace hpfem
{

Polynomial Polynomial::constant(double c)
{
  Polynomial p;
  p.add({0, 0, 0}, c);
  return p;
}

Polynomial Polynomial::coordinate(int k)
{
  Polynomial p;
  MultiIndex m{0, 0, 0};
  m[k] = 1;
  p.add(m, 1.0);
  return p;
}

void Polynomial::add(const MultiIndex& m, double c)
{
  if (c == 0.0)
    return;
  auto it = terms_.find(m);
  if (it == terms_.end())
    terms_.emplace(m, c);
  else if ((it->second += c) == 0.0)
    terms_.erase(it);
}

double Polynomial::operator()(const Vec3& x) const
{
  double s = 0.0;
  for (const auto& [m, c] : terms_)
  {
    double t = c;
    for (int k = 0; k < 3; ++k)
      for (int e = 0; e < m[k]; ++e)
        t *= x[k];
    s += t;
  }
  return s;
}

Polynomial Polynomial::derivative(int k) const
{
  Polynomial d;
  for (const auto& [m, c] : terms_)
    if (m[k] > 0)
    {
      MultiIndex n = m;
      --n[k];
      d.add(n, c * m[k]);
    }
  return d;
}

int Polynomial::degree() const
{
  int d = 0;
  for (const auto& [m, c] : terms_)
    d = std::max(d, m[0] + m[1] + m[2]);
  return d;
}

Polynomial Polynomial::operator+(const Polynomial& o) const
{
  Polynomial r = *this;
  for (const auto& [m, c] : o.terms_)
    r.add(m, c);
  return r;
}

Polynomial Polynomial::operator-(const Polynomial& o) const { return *this + o * -1.0; }

Polynomial Polynomial::operator*(const Polynomial& o) const
{
  Polynomial r;
  for (const auto& [a, ca] : terms_)
    for (const auto& [b, cb] : o.terms_)
      r.add({a[0] + b[0], a[1] + b[1], a[2] + b[2]}, ca * cb);
  return r;
}

Polynomial Polynomial::operator*(double s) const
{
  Polynomial r;
  for (const auto& [m, c] : terms_)
    r.add(m, c * s);
  return r;
}

namespace
{

// expr := term (('+'|'-') term)*
// term := factor (('*'|'/') factor)*
// factor := ('+'|'-') factor | power
// power := atom ('^' integer)?
class Parser
{
public:
  explicit Parser(const std::string& s) : s_(s) {}

  Polynomial run()
  {
    Polynomial p = expr();
    skip();
    if (pos_ != s_.size())
      fail("unexpected '" + std::string(1, s_[pos_]) + "'");
    return p;
  }

private:
  [[noreturn]] void fail(const std::string& what) const
  {
    throw InputError("expression '" + s_ + "': " + what + " at position " + std::to_string(pos_));
  }

  void skip()
  {
    while (pos_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[pos_])))
      ++pos_;
  }

  bool accept(char c)
  {
    skip();
    if (pos_ < s_.size() && s_[pos_] == c)
    {
      ++pos_;
      return true;
    }
    return false;
  }

  Polynomial expr()
  {
    Polynomial p = term();
    for (;;)
    {
      if (accept('+'))
        p = p + term();
      else if (accept('-'))
        p = p - term();
      else
        return p;
    }
  }

  Polynomial term()
  {
    Polynomial p = factor();
    for (;;)
    {
      if (accept('*'))
        p = p * factor();
      else if (accept('/'))
      {
        const Polynomial q = factor();
        if (q.degree() > 0 || q.is_zero())
          fail("division by a non-constant or zero");
        p = p * (1.0 / q.terms().begin()->second);
      }
      else
        return p;
    }
  }

  Polynomial factor()
  {
    if (accept('-'))
      return -factor();
    if (accept('+'))
      return factor();
    return power();
  }

  Polynomial power()
  {
    const Polynomial base = atom();
    if (!accept('^'))
      return base;
    skip();
    const std::size_t start = pos_;
    while (pos_ < s_.size() && std::isdigit(static_cast<unsigned char>(s_[pos_])))
      ++pos_;
    if (start == pos_)
      fail("exponent must be a nonnegative integer");
    const int n = std::atoi(s_.substr(start, pos_ - start).c_str());
    Polynomial r = Polynomial::constant(1.0);
    for (int i = 0; i < n; ++i)
      r = r * base;
    return r;
  }

  Polynomial atom()
  {
    skip();
    if (pos_ >= s_.size())
      fail("unexpected end");
    const char c = s_[pos_];
    if (accept('('))
    {
      Polynomial p = expr();
      if (!accept(')'))
        fail("missing ')'");
      return p;
    }
    if (c == 'x' || c == 'y' || c == 'z')
    {
      ++pos_;
      return Polynomial::coordinate(c - 'x');
    }
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '.')
    {
      const char* begin = s_.c_str() + pos_;
      char* end = nullptr;
      const double v = std::strtod(begin, &end);
      if (end == begin)
        fail("bad number");
      pos_ += static_cast<std::size_t>(end - begin);
      return Polynomial::constant(v);
    }
    fail("unexpected '" + std::string(1, c) + "'");
  }

  const std::string& s_;
  std::size_t pos_ = 0;
};

} // namespace

Polynomial Polynomial::parse(const std::string& text) { return Parser(text).run(); }

} // namespace hpfem
