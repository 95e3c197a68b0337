#pragma once

// Scalar reverse-mode automatic differentiation.
//
// A Tape records elementary operations in evaluation order (which is a
// topological order of the expression DAG). Each node stores the indices of its
// inputs together with the local partial derivatives, so the backward sweep is a
// single reverse pass of multiply-accumulates. Tapes are rebuilt for every
// evaluation.

#include <cmath>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace structnerf::ad {

class NonFiniteError : public std::runtime_error {
 public:
  NonFiniteError(std::size_t node, std::string_view op);
  std::size_t node() const { return node_; }

 private:
  std::size_t node_;
};

/// Flat parameter vector with named slices (one per tensor).
class ParamStore {
 public:
  struct Slice {
    std::string name;
    std::size_t offset = 0;
    std::size_t length = 0;
  };

  /// Appends a slice of `length` values initialised to `fill`. Returns its offset.
  std::size_t add(std::string name, std::size_t length, double fill = 0.0);

  std::span<double> slice(std::string_view name);
  std::span<const double> slice(std::string_view name) const;
  const Slice& slice_info(std::string_view name) const;
  bool has_slice(std::string_view name) const;

  std::vector<double>& values() { return values_; }
  const std::vector<double>& values() const { return values_; }
  const std::vector<Slice>& slices() const { return slices_; }
  std::size_t size() const { return values_.size(); }

  bool all_finite() const;

  /// Free-form key=value text carried through serialization (model config etc.).
  std::string metadata;

  friend bool operator==(const ParamStore& a, const ParamStore& b);

 private:
  std::vector<Slice> slices_;
  std::vector<double> values_;
};

// Binary layout (all integers little-endian):
//   char[8]  magic "SNRFPRM\0"
//   u32      version (= 1)
//   u32      slice count S
//   u64      total value count
//   u32      metadata byte length, followed by the metadata bytes
//   S times: u32 name length, name bytes, u64 offset, u64 length
//   f64[total] payload, IEEE-754 little-endian
void write_params(std::ostream& out, const ParamStore& params);
ParamStore read_params(std::istream& in);
void save_params(const std::string& path, const ParamStore& params);
ParamStore load_params(const std::string& path);

class Tape;

/// Handle to a tape node. A Var without a tape is a constant.
class Var {
 public:
  static constexpr std::uint32_t kConstant = std::numeric_limits<std::uint32_t>::max();

  Var() = default;
  Var(double constant) : value_(constant) {}  // NOLINT(google-explicit-constructor)

  double value() const { return value_; }
  std::uint32_t index() const { return index_; }
  Tape* tape() const { return tape_; }
  bool is_constant() const { return tape_ == nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::uint32_t index, double value) : tape_(tape), index_(index), value_(value) {}

  Tape* tape_ = nullptr;
  std::uint32_t index_ = kConstant;
  double value_ = 0.0;
};

enum class Op : std::uint8_t {
  kLeaf,
  kAdd,
  kSub,
  kMul,
  kDiv,
  kNeg,
  kExp,
  kLog,
  kRelu,
  kSin,
  kCos,
  kReciprocal,
  kSqrt,
  kAbs,
  kSoftplus,
  kSigmoid,
  kCustom,
};

std::string_view op_name(Op op);

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  Var variable(double value);

  /// Records a node with arbitrary inputs and caller-supplied local partials.
  /// Used to splice results computed on a separate tape into this one.
  Var custom(std::span<const Var> inputs, double value, std::span<const double> partials);

  Var unary(Op op, const Var& x, double value, double partial);
  Var binary(Op op, const Var& a, const Var& b, double value, double pa, double pb);

  void mark_output(const Var& v);
  const std::vector<std::uint32_t>& outputs() const { return outputs_; }

  std::size_t size() const { return nodes_.size(); }
  double value(std::uint32_t node) const { return values_[node]; }
  Op op(std::uint32_t node) const { return nodes_[node].op; }

  /// Reverse sweep from a single marked output (or `output` if given).
  /// Returns the adjoint of every node.
  std::vector<double> adjoints() const;
  std::vector<double> adjoints(const Var& output) const;

  void clear();

  /// When true (default), every recorded value is checked for finiteness.
  bool check_finite = true;

 private:
  struct Node {
    std::uint32_t first_edge;
    std::uint32_t edge_count;
    Op op;
  };
  struct Edge {
    std::uint32_t input;
    double partial;
  };

  Var push(Op op, double value);
  void push_edge(const Var& input, double partial);

  std::vector<Node> nodes_;
  std::vector<double> values_;
  std::vector<Edge> edges_;
  std::vector<std::uint32_t> outputs_;
};

// Arithmetic on Var. Mixed Var/double arguments go through the implicit
// constant constructor.
Var operator+(const Var& a, const Var& b);
Var operator-(const Var& a, const Var& b);
Var operator*(const Var& a, const Var& b);
Var operator/(const Var& a, const Var& b);
Var operator-(const Var& a);
Var& operator+=(Var& a, const Var& b);
Var& operator-=(Var& a, const Var& b);
Var& operator*=(Var& a, const Var& b);
Var& operator/=(Var& a, const Var& b);

Var exp(const Var& x);
Var log(const Var& x);
Var relu(const Var& x);
Var sin(const Var& x);
Var cos(const Var& x);
Var reciprocal(const Var& x);
Var sqrt(const Var& x);
Var abs(const Var& x);
Var softplus(const Var& x);
Var sigmoid(const Var& x);

// Plain-double counterparts so templated code can call the same names.
inline double relu(double x) { return x > 0.0 ? x : 0.0; }
inline double reciprocal(double x) { return 1.0 / x; }
inline double softplus(double x) { return x > 30.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }
inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double value_of(double x) { return x; }
inline double value_of(const Var& x) { return x.value(); }

/// Result of recording a scalar closure over a ParamStore.
struct Evaluation {
  double value = 0.0;
  Tape tape;
  Var output;
  std::vector<Var> params;  // one leaf per ParamStore value, in order
};

using TapeClosure = std::function<Var(Tape&, std::span<const Var>)>;

/// Records `closure` with one leaf per parameter. Throws NonFiniteError naming
/// the first non-finite node.
Evaluation forward_eval(const TapeClosure& closure, const ParamStore& params);

/// Gradient of the single recorded output with respect to every parameter.
/// Throws std::logic_error if the tape has more than one marked output.
std::vector<double> backward(const Evaluation& eval);

struct GradCheckReport {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
  double tolerance = 0.0;
  bool passed = false;
};

/// Loss with an analytic gradient: returns the value and, when `grad` is
/// non-null, writes the gradient (sized to params.size()).
using LossFunction = std::function<double(const ParamStore&, std::vector<double>* grad)>;

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  double abs_floor = 1e-6;
  std::size_t max_coords = 100;  // random subset size; all coords when params are fewer
  std::uint64_t seed = 0;
};

/// Compares the analytic gradient against central finite differences on a
/// random subset of coordinates. The per-coordinate error is
/// |g - fd| / max(|g|, |fd|, abs_floor).
GradCheckReport check_gradients(const LossFunction& loss, const ParamStore& params,
                                const GradCheckOptions& options);
GradCheckReport check_gradients(const TapeClosure& closure, const ParamStore& params,
                                const GradCheckOptions& options);

}  // namespace structnerf::ad
