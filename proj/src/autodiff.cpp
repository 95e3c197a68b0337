#include "structnerf/autodiff.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <random>

namespace structnerf::ad {

NonFiniteError::NonFiniteError(std::size_t node, std::string_view op)
    : std::runtime_error("non-finite value at tape node " + std::to_string(node) + " (" +
                         std::string(op) + ")"),
      node_(node) {}

std::string_view op_name(Op op) {
  switch (op) {
    case Op::kLeaf: return "leaf";
    case Op::kAdd: return "add";
    case Op::kSub: return "sub";
    case Op::kMul: return "mul";
    case Op::kDiv: return "div";
    case Op::kNeg: return "neg";
    case Op::kExp: return "exp";
    case Op::kLog: return "log";
    case Op::kRelu: return "relu";
    case Op::kSin: return "sin";
    case Op::kCos: return "cos";
    case Op::kReciprocal: return "reciprocal";
    case Op::kSqrt: return "sqrt";
    case Op::kAbs: return "abs";
    case Op::kSoftplus: return "softplus";
    case Op::kSigmoid: return "sigmoid";
    case Op::kCustom: return "custom";
  }
  return "?";
}

// ---------------------------------------------------------------- ParamStore

std::size_t ParamStore::add(std::string name, std::size_t length, double fill) {
  if (has_slice(name)) throw std::invalid_argument("duplicate parameter slice: " + name);
  const std::size_t offset = values_.size();
  slices_.push_back({std::move(name), offset, length});
  values_.resize(offset + length, fill);
  return offset;
}

bool ParamStore::has_slice(std::string_view name) const {
  return std::any_of(slices_.begin(), slices_.end(), [&](const Slice& s) { return s.name == name; });
}

const ParamStore::Slice& ParamStore::slice_info(std::string_view name) const {
  for (const auto& s : slices_)
    if (s.name == name) return s;
  throw std::out_of_range("no parameter slice named " + std::string(name));
}

std::span<double> ParamStore::slice(std::string_view name) {
  const auto& s = slice_info(name);
  return {values_.data() + s.offset, s.length};
}

std::span<const double> ParamStore::slice(std::string_view name) const {
  const auto& s = slice_info(name);
  return {values_.data() + s.offset, s.length};
}

bool ParamStore::all_finite() const {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

bool operator==(const ParamStore& a, const ParamStore& b) {
  if (a.metadata != b.metadata || a.slices_.size() != b.slices_.size()) return false;
  for (std::size_t i = 0; i < a.slices_.size(); ++i) {
    const auto& x = a.slices_[i];
    const auto& y = b.slices_[i];
    if (x.name != y.name || x.offset != y.offset || x.length != y.length) return false;
  }
  // Bitwise comparison so that NaN payloads and signed zeros round-trip too.
  return a.values_.size() == b.values_.size() &&
         std::memcmp(a.values_.data(), b.values_.data(), a.values_.size() * sizeof(double)) == 0;
}

namespace {

constexpr char kMagic[8] = {'S', 'N', 'R', 'F', 'P', 'R', 'M', '\0'};
constexpr std::uint32_t kVersion = 1;

template <typename U>
void put_le(std::ostream& out, U v) {
  unsigned char buf[sizeof(U)];
  for (std::size_t i = 0; i < sizeof(U); ++i) buf[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  out.write(reinterpret_cast<const char*>(buf), sizeof(U));
}

template <typename U>
U get_le(std::istream& in) {
  unsigned char buf[sizeof(U)];
  if (!in.read(reinterpret_cast<char*>(buf), sizeof(U))) throw std::runtime_error("truncated parameter file");
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(buf[i]) << (8 * i);
  return v;
}

std::string get_string(std::istream& in, std::size_t n) {
  std::string s(n, '\0');
  if (n > 0 && !in.read(s.data(), static_cast<std::streamsize>(n)))
    throw std::runtime_error("truncated parameter file");
  return s;
}

}  // namespace

void write_params(std::ostream& out, const ParamStore& params) {
  out.write(kMagic, sizeof(kMagic));
  put_le<std::uint32_t>(out, kVersion);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(params.slices().size()));
  put_le<std::uint64_t>(out, params.size());
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(params.metadata.size()));
  out.write(params.metadata.data(), static_cast<std::streamsize>(params.metadata.size()));
  for (const auto& s : params.slices()) {
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(s.name.size()));
    out.write(s.name.data(), static_cast<std::streamsize>(s.name.size()));
    put_le<std::uint64_t>(out, s.offset);
    put_le<std::uint64_t>(out, s.length);
  }
  for (double v : params.values()) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  if (!out) throw std::runtime_error("failed writing parameter file");
}

ParamStore read_params(std::istream& in) {
  char magic[8];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw std::runtime_error("not a parameter file (bad magic)");
  const auto version = get_le<std::uint32_t>(in);
  if (version != kVersion) throw std::runtime_error("unsupported parameter file version " + std::to_string(version));
  const auto n_slices = get_le<std::uint32_t>(in);
  const auto total = get_le<std::uint64_t>(in);
  ParamStore params;
  params.metadata = get_string(in, get_le<std::uint32_t>(in));
  std::uint64_t expected_offset = 0;
  for (std::uint32_t i = 0; i < n_slices; ++i) {
    std::string name = get_string(in, get_le<std::uint32_t>(in));
    const auto offset = get_le<std::uint64_t>(in);
    const auto length = get_le<std::uint64_t>(in);
    if (offset != expected_offset) throw std::runtime_error("parameter slice table is not contiguous");
    params.add(std::move(name), length);
    expected_offset += length;
  }
  if (expected_offset != total) throw std::runtime_error("parameter slice lengths do not sum to total");
  for (auto& v : params.values()) v = std::bit_cast<double>(get_le<std::uint64_t>(in));
  return params;
}

void save_params(const std::string& path, const ParamStore& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  write_params(out, params);
}

ParamStore load_params(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  return read_params(in);
}

// ---------------------------------------------------------------------- Tape

Var Tape::push(Op op, double value) {
  const auto index = static_cast<std::uint32_t>(nodes_.size());
  if (check_finite && !std::isfinite(value)) throw NonFiniteError(index, op_name(op));
  nodes_.push_back({static_cast<std::uint32_t>(edges_.size()), 0, op});
  values_.push_back(value);
  return Var(this, index, value);
}

void Tape::push_edge(const Var& input, double partial) {
  if (input.is_constant()) return;
  if (input.tape() != this) throw std::logic_error("mixing variables from different tapes");
  edges_.push_back({input.index(), partial});
  ++nodes_.back().edge_count;
}

Var Tape::variable(double value) { return push(Op::kLeaf, value); }

Var Tape::unary(Op op, const Var& x, double value, double partial) {
  Var out = push(op, value);
  push_edge(x, partial);
  return out;
}

Var Tape::binary(Op op, const Var& a, const Var& b, double value, double pa, double pb) {
  Var out = push(op, value);
  push_edge(a, pa);
  push_edge(b, pb);
  return out;
}

Var Tape::custom(std::span<const Var> inputs, double value, std::span<const double> partials) {
  if (inputs.size() != partials.size()) throw std::invalid_argument("custom node: inputs/partials size mismatch");
  Var out = push(Op::kCustom, value);
  for (std::size_t i = 0; i < inputs.size(); ++i) push_edge(inputs[i], partials[i]);
  return out;
}

void Tape::mark_output(const Var& v) {
  if (v.is_constant()) {
    // A constant output still needs a node so backward() has something to seed.
    outputs_.push_back(variable(v.value()).index());
    return;
  }
  if (v.tape() != this) throw std::logic_error("output belongs to a different tape");
  outputs_.push_back(v.index());
}

std::vector<double> Tape::adjoints() const {
  if (outputs_.size() != 1)
    throw std::logic_error("backward requires exactly one scalar output, tape has " + std::to_string(outputs_.size()));
  std::vector<double> adj(nodes_.size(), 0.0);
  adj[outputs_.front()] = 1.0;
  for (std::size_t i = nodes_.size(); i-- > 0;) {
    const double a = adj[i];
    if (a == 0.0) continue;
    const Node& n = nodes_[i];
    for (std::uint32_t e = n.first_edge; e < n.first_edge + n.edge_count; ++e) adj[edges_[e].input] += edges_[e].partial * a;
  }
  return adj;
}

std::vector<double> Tape::adjoints(const Var& output) const {
  std::vector<double> adj(nodes_.size(), 0.0);
  if (output.is_constant()) return adj;
  adj[output.index()] = 1.0;
  for (std::size_t i = output.index() + 1; i-- > 0;) {
    const double a = adj[i];
    if (a == 0.0) continue;
    const Node& n = nodes_[i];
    for (std::uint32_t e = n.first_edge; e < n.first_edge + n.edge_count; ++e) adj[edges_[e].input] += edges_[e].partial * a;
  }
  return adj;
}

void Tape::clear() {
  nodes_.clear();
  values_.clear();
  edges_.clear();
  outputs_.clear();
}

// ----------------------------------------------------------------- operators

namespace {

Tape* tape_of(const Var& a, const Var& b) {
  if (a.tape() && b.tape() && a.tape() != b.tape()) throw std::logic_error("mixing variables from different tapes");
  return a.tape() ? a.tape() : b.tape();
}

}  // namespace

Var operator+(const Var& a, const Var& b) {
  Tape* t = tape_of(a, b);
  const double v = a.value() + b.value();
  return t ? t->binary(Op::kAdd, a, b, v, 1.0, 1.0) : Var(v);
}

Var operator-(const Var& a, const Var& b) {
  Tape* t = tape_of(a, b);
  const double v = a.value() - b.value();
  return t ? t->binary(Op::kSub, a, b, v, 1.0, -1.0) : Var(v);
}

Var operator*(const Var& a, const Var& b) {
  Tape* t = tape_of(a, b);
  const double v = a.value() * b.value();
  return t ? t->binary(Op::kMul, a, b, v, b.value(), a.value()) : Var(v);
}

Var operator/(const Var& a, const Var& b) {
  Tape* t = tape_of(a, b);
  const double inv = 1.0 / b.value();
  const double v = a.value() * inv;
  return t ? t->binary(Op::kDiv, a, b, v, inv, -v * inv) : Var(v);
}

Var operator-(const Var& a) { return a.tape() ? a.tape()->unary(Op::kNeg, a, -a.value(), -1.0) : Var(-a.value()); }

Var& operator+=(Var& a, const Var& b) { return a = a + b; }
Var& operator-=(Var& a, const Var& b) { return a = a - b; }
Var& operator*=(Var& a, const Var& b) { return a = a * b; }
Var& operator/=(Var& a, const Var& b) { return a = a / b; }

#define STRUCTNERF_UNARY(fn, op, value_expr, partial_expr)             \
  Var fn(const Var& x) {                                               \
    const double xv = x.value();                                       \
    const double v = (value_expr);                                     \
    if (x.is_constant()) return Var(v);                                \
    return x.tape()->unary(op, x, v, (partial_expr));                  \
  }

STRUCTNERF_UNARY(exp, Op::kExp, std::exp(xv), v)
STRUCTNERF_UNARY(log, Op::kLog, std::log(xv), 1.0 / xv)
STRUCTNERF_UNARY(relu, Op::kRelu, xv > 0.0 ? xv : 0.0, xv > 0.0 ? 1.0 : 0.0)
STRUCTNERF_UNARY(sin, Op::kSin, std::sin(xv), std::cos(xv))
STRUCTNERF_UNARY(cos, Op::kCos, std::cos(xv), -std::sin(xv))
STRUCTNERF_UNARY(reciprocal, Op::kReciprocal, 1.0 / xv, -v * v)
STRUCTNERF_UNARY(sqrt, Op::kSqrt, std::sqrt(xv), 0.5 / v)
STRUCTNERF_UNARY(abs, Op::kAbs, std::abs(xv), xv > 0.0 ? 1.0 : (xv < 0.0 ? -1.0 : 0.0))
STRUCTNERF_UNARY(softplus, Op::kSoftplus, structnerf::ad::softplus(xv), structnerf::ad::sigmoid(xv))
STRUCTNERF_UNARY(sigmoid, Op::kSigmoid, structnerf::ad::sigmoid(xv), v * (1.0 - v))

#undef STRUCTNERF_UNARY

// -------------------------------------------------------------- evaluation

Evaluation forward_eval(const TapeClosure& closure, const ParamStore& params) {
  Evaluation eval;
  eval.params.reserve(params.size());
  for (double v : params.values()) eval.params.push_back(eval.tape.variable(v));
  eval.output = closure(eval.tape, eval.params);
  eval.tape.mark_output(eval.output);
  eval.value = eval.output.value();
  return eval;
}

std::vector<double> backward(const Evaluation& eval) {
  const auto adj = eval.tape.adjoints();
  std::vector<double> grad(eval.params.size());
  for (std::size_t i = 0; i < grad.size(); ++i) grad[i] = adj[eval.params[i].index()];
  return grad;
}

GradCheckReport check_gradients(const LossFunction& loss, const ParamStore& params, const GradCheckOptions& options) {
  if (!(options.step > 0.0)) throw std::invalid_argument("check_gradients: step must be positive");
  GradCheckReport report;
  report.tolerance = options.tolerance;

  std::vector<double> grad(params.size(), 0.0);
  loss(params, &grad);

  std::vector<std::size_t> coords(params.size());
  std::iota(coords.begin(), coords.end(), std::size_t{0});
  if (coords.size() > options.max_coords) {
    std::mt19937_64 rng(options.seed);
    std::shuffle(coords.begin(), coords.end(), rng);
    coords.resize(options.max_coords);
    std::sort(coords.begin(), coords.end());
  }

  ParamStore probe = params;
  for (std::size_t i : coords) {
    const double x0 = params.values()[i];
    probe.values()[i] = x0 + options.step;
    const double fp = loss(probe, nullptr);
    probe.values()[i] = x0 - options.step;
    const double fm = loss(probe, nullptr);
    probe.values()[i] = x0;
    const double fd = (fp - fm) / (2.0 * options.step);
    const double abs_err = std::abs(grad[i] - fd);
    const double rel_err = abs_err / std::max({std::abs(grad[i]), std::abs(fd), options.abs_floor});
    if (rel_err > report.max_rel_error) {
      report.max_rel_error = rel_err;
      report.worst_index = i;
    }
    report.max_abs_error = std::max(report.max_abs_error, abs_err);
    ++report.checked;
  }
  report.passed = report.max_rel_error <= options.tolerance;
  return report;
}

GradCheckReport check_gradients(const TapeClosure& closure, const ParamStore& params, const GradCheckOptions& options) {
  LossFunction loss = [&](const ParamStore& p, std::vector<double>* grad) {
    if (grad) {
      auto eval = forward_eval(closure, p);
      *grad = backward(eval);
      return eval.value;
    }
    // Value-only evaluation: no leaves needed, constants propagate without a tape.
    Tape scratch;
    std::vector<Var> leaves(p.values().begin(), p.values().end());
    return closure(scratch, leaves).value();
  };
  return check_gradients(loss, params, options);
}

}  // namespace structnerf::ad
