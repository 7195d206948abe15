#pragma once

#include <Eigen/Core>

#include <array>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace hpfem
{

// Points, Jacobians and small tensors are stored in 3x3 containers; only the
// leading d entries / d x d block are meaningful for dimension d.
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

using ElementId = int;
using VertexId = int;

constexpr int max_dim = 3;

/// Base class of all errors raised by the library.
class Error : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

/// Invalid input data or configuration.
class InputError : public Error
{
public:
  using Error::Error;
};

/// A numerical procedure failed (singular system, no convergence, ...).
class SolverError : public Error
{
public:
  using Error::Error;
};

/// Multi-index j in N_0^d, padded with zeros beyond d.
using MultiIndex = std::array<int, max_dim>;

inline int ipow(int base, int exp)
{
  int r = 1;
  for (int i = 0; i < exp; ++i)
    r *= base;
  return r;
}

/// Lexicographic enumeration of {0..n-1}^d with direction 0 running fastest.
inline MultiIndex unflatten(int index, int n, int dim)
{
  MultiIndex j{0, 0, 0};
  for (int k = 0; k < dim; ++k)
  {
    j[k] = index % n;
    index /= n;
  }
  return j;
}

inline int flatten(const MultiIndex& j, int n, int dim)
{
  int index = 0;
  for (int k = dim - 1; k >= 0; --k)
    index = index * n + j[k];
  return index;
}

} // namespace hpfem
