#pragma once

#include <complex>
#include <cstdint>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace psz {

using Complex = std::complex<double>;
using CVector = Eigen::VectorXcd;
using CMatrix = Eigen::MatrixXcd;
using Vec3 = Eigen::Vector3d;

/// Base class for all pszsim exceptions.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class GeometryError : public Error {
 public:
  using Error::Error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class ProtocolError : public Error {
 public:
  using Error::Error;
};

class SingularSystemError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Thrown when an adaptive update produces a non-finite filter entry.
/// `node` is -1 for the centralized algorithm.
class DivergenceError : public Error {
 public:
  DivergenceError(std::string algorithm, int node, long iteration)
      : Error("divergence in " + algorithm +
              (node >= 0 ? " at node " + std::to_string(node) : std::string{}) +
              ", iteration " + std::to_string(iteration)),
        algorithm(std::move(algorithm)),
        node(node),
        iteration(iteration) {}

  std::string algorithm;
  int node = -1;
  long iteration = 0;
};

/// Counts complex additions/multiplications of the frequency-domain
/// processing step (the filter update given the error signal). Transform
/// cost is modeled analytically, never counted here.
struct MacCounter {
  double additions = 0.0;
  double multiplications = 0.0;

  MacCounter& operator+=(const MacCounter& o) {
    additions += o.additions;
    multiplications += o.multiplications;
    return *this;
  }
};

enum class PointSet { control, validation };

enum class TargetMode { planewave, oracle };

/// M x L complex frequency-domain transfer matrix, bright rows first.
struct ATFMatrix {
  double freq = 0.0;
  CMatrix entries;            // M x L
  Eigen::Index bright_rows = 0;

  Eigen::Index mics() const { return entries.rows(); }
  Eigen::Index speakers() const { return entries.cols(); }
  Eigen::Index dark_rows() const { return entries.rows() - bright_rows; }

  auto bright() const { return entries.topRows(bright_rows); }
  auto dark() const { return entries.bottomRows(dark_rows()); }
};

/// Length-L complex loudspeaker weight vector.
struct ControlFilter {
  CVector weights;
  double freq = 0.0;
};

/// Sound pressure at the M control points, bright-first.
struct PressureField {
  CVector values;
};

struct ErrorVector {
  CVector values;
};

/// Target sound pressure at the M evaluation points, bright-first.
/// In planewave mode the dark entries are exactly zero.
struct DesiredField {
  double freq = 0.0;
  CVector values;
  Eigen::Index bright_count = 0;

  TargetMode mode = TargetMode::planewave;

  auto bright() const { return values.head(bright_count); }
  auto dark() const { return values.tail(values.size() - bright_count); }
};

}  // namespace psz
