#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "bohl/log_vector.hpp"
#include "bohl/switching.hpp"

namespace bohl {

struct StructureTags {
  bool diagonal = false;
  bool upper_triangular = false;
  bool bounded = false;
};

class LinearSystem;

// Piecewise-constant coefficient matrix: one phase matrix per segment, chosen
// by an index rule.
struct PiecewisePhases {
  std::vector<Matrix> phases;
  std::function<std::size_t(std::size_t)> phase_of;  // segment index -> phase index
};

// One-dimensional system with a constant rate per segment.
struct ScalarPiecewise {
  std::function<double(std::size_t)> rate_of;  // segment index -> rate
};

// General callable coefficients.  When `exact` is present it evaluates the
// normalized solution from a unit initial value at a clock time directly;
// otherwise the solution is produced by adaptive stepping.  `exact_ratio`
// optionally supplies window-relative log ratios that stay precise on the
// huge-clock grids where absolute logs would cancel.
struct GeneralCallable {
  std::function<Matrix(double)> coeff;
  std::function<LogVector(const Vector&, double)> exact;
  std::function<double(const Vector&, const TimePoint&, double, Norm)> exact_ratio;
};

// Direct sum of independent subsystems.
struct BlockDiagonal {
  std::vector<std::shared_ptr<const LinearSystem>> blocks;
};

using SystemBody = std::variant<PiecewisePhases, ScalarPiecewise, GeneralCallable, BlockDiagonal>;

class LinearSystem {
 public:
  LinearSystem(std::string name, int dimension, SwitchingSequence seq, SystemBody body,
               std::optional<double> bound, StructureTags tags)
      : name_(std::move(name)),
        dim_(dimension),
        seq_(std::move(seq)),
        body_(std::move(body)),
        bound_(bound),
        tags_(tags) {
    if (dim_ <= 0) throw std::invalid_argument("dimension must be positive");
    validate();
  }

  const std::string& name() const { return name_; }
  int dimension() const { return dim_; }
  const SwitchingSequence& sequence() const { return seq_; }
  const SystemBody& body() const { return body_; }
  std::optional<double> bound() const { return bound_; }
  const StructureTags& tags() const { return tags_; }
  double horizon() const { return seq_.horizon(); }

  bool is_piecewise() const { return std::holds_alternative<PiecewisePhases>(body_); }
  bool is_scalar() const { return std::holds_alternative<ScalarPiecewise>(body_); }
  bool is_general() const { return std::holds_alternative<GeneralCallable>(body_); }
  bool is_block() const { return std::holds_alternative<BlockDiagonal>(body_); }

  const Matrix& phase_matrix(std::size_t segment) const {
    const auto& pw = std::get<PiecewisePhases>(body_);
    return pw.phases.at(pw.phase_of(segment));
  }

  double scalar_rate(std::size_t segment) const {
    return std::get<ScalarPiecewise>(body_).rate_of(segment);
  }

  // Coefficient matrix at clock time t (boundaries left-attributed).
  Matrix coefficient(double t) const {
    if (is_piecewise()) return phase_matrix(seq_.segment_of(t));
    if (is_scalar()) {
      Matrix m(1, 1);
      m(0, 0) = scalar_rate(seq_.segment_of(t));
      return m;
    }
    if (is_general()) return std::get<GeneralCallable>(body_).coeff(t);
    const auto& bd = std::get<BlockDiagonal>(body_);
    Matrix m = Matrix::Zero(dim_, dim_);
    Eigen::Index at = 0;
    for (const auto& b : bd.blocks) {
      Eigen::Index n = b->dimension();
      m.block(at, at, n, n) = b->coefficient(t);
      at += n;
    }
    return m;
  }

 private:
  void validate() const {
    if (is_piecewise()) {
      const auto& pw = std::get<PiecewisePhases>(body_);
      for (const auto& p : pw.phases) {
        if (p.rows() != dim_ || p.cols() != dim_)
          throw std::invalid_argument(name_ + ": phase matrix has wrong dimension");
        double nrm = p.operatorNorm();
        if (bound_ && nrm > *bound_ * (1.0 + 1e-12))
          throw std::invalid_argument(name_ + ": phase norm exceeds declared bound");
        if (tags_.upper_triangular || tags_.diagonal) {
          for (Eigen::Index i = 0; i < p.rows(); ++i)
            for (Eigen::Index j = 0; j < i; ++j)
              if (p(i, j) != 0.0)
                throw std::invalid_argument(name_ + ": sub-diagonal entry contradicts structure tag");
        }
        if (tags_.diagonal) {
          for (Eigen::Index i = 0; i < p.rows(); ++i)
            for (Eigen::Index j = i + 1; j < p.cols(); ++j)
              if (p(i, j) != 0.0)
                throw std::invalid_argument(name_ + ": off-diagonal entry contradicts diagonal tag");
        }
      }
    }
    if (is_scalar() && dim_ != 1)
      throw std::invalid_argument(name_ + ": scalar body requires dimension 1");
  }

  std::string name_;
  int dim_;
  SwitchingSequence seq_;
  SystemBody body_;
  std::optional<double> bound_;
  StructureTags tags_;
};

// System rescaling x' = (gamma A(gamma t) + b I) x: segment lengths divide by
// gamma, every phase maps to gamma*A + b*I, and either spectrum maps to
// gamma*spectrum + b.
inline LinearSystem scale_shift(const LinearSystem& sys, double gamma, double b) {
  if (!(gamma > 0.0)) throw std::invalid_argument("scale factor must be positive");
  const auto& seq = sys.sequence();
  std::vector<double> gaps(seq.segment_count());
  for (std::size_t k = 0; k < gaps.size(); ++k) gaps[k] = seq.gap(k) / gamma;
  SwitchingSequence new_seq(gamma == 1.0 ? seq.kind() : SequenceKind::custom, std::move(gaps));

  std::optional<double> new_bound;
  if (sys.bound()) new_bound = gamma * *sys.bound() + std::abs(b);
  StructureTags tags = sys.tags();
  std::string name = sys.name() + "_scaled";

  if (sys.is_piecewise()) {
    auto pw = std::get<PiecewisePhases>(sys.body());
    for (auto& p : pw.phases)
      p = (gamma * p + b * Matrix::Identity(p.rows(), p.cols())).eval();
    return LinearSystem(name, sys.dimension(), std::move(new_seq), std::move(pw), new_bound, tags);
  }
  if (sys.is_scalar()) {
    auto sc = std::get<ScalarPiecewise>(sys.body());
    auto inner = sc.rate_of;
    sc.rate_of = [inner, gamma, b](std::size_t k) { return gamma * inner(k) + b; };
    return LinearSystem(name, 1, std::move(new_seq), std::move(sc), new_bound, tags);
  }
  if (sys.is_general()) {
    auto gc = std::get<GeneralCallable>(sys.body());
    auto inner_coeff = gc.coeff;
    auto inner_exact = gc.exact;
    int d = sys.dimension();
    gc.coeff = [inner_coeff, gamma, b, d](double t) -> Matrix {
      return gamma * inner_coeff(gamma * t) + b * Matrix::Identity(d, d);
    };
    if (inner_exact) {
      gc.exact = [inner_exact, gamma, b](const Vector& xi, double t) {
        LogVector lv = inner_exact(xi, gamma * t);
        lv.log_mag += b * t;
        return lv;
      };
    }
    gc.exact_ratio = nullptr;  // ratio hooks are tied to the original time grid
    return LinearSystem(name, d, std::move(new_seq), std::move(gc), new_bound, tags);
  }
  const auto& bd = std::get<BlockDiagonal>(sys.body());
  BlockDiagonal out;
  for (const auto& blk : bd.blocks)
    out.blocks.push_back(std::make_shared<const LinearSystem>(scale_shift(*blk, gamma, b)));
  return LinearSystem(name, sys.dimension(), std::move(new_seq), std::move(out), new_bound, tags);
}

}  // namespace bohl
