#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <vector>

#include "bohl/exponents.hpp"

namespace bohl {

// Deterministic unit-direction sample: coordinate axes plus an angular grid
// (d = 2) or seeded gaussian points (d >= 3), antipodes identified.
inline std::vector<Vector> direction_sample(int d, int n, std::uint64_t seed = 0) {
  std::vector<Vector> dirs;
  for (int i = 0; i < d; ++i) {
    Vector e = Vector::Zero(d);
    e[i] = 1.0;
    dirs.push_back(e);
  }
  if (d == 1) return dirs;
  if (d == 2) {
    for (int i = 0; i < n; ++i) {
      double th = M_PI * double(i) / double(n);
      Vector v(2);
      v << std::cos(th), std::sin(th);
      dirs.push_back(v);
    }
  } else {
    std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
    std::normal_distribution<double> gauss;
    for (int i = 0; i < n; ++i) {
      Vector v(d);
      for (int j = 0; j < d; ++j) v[j] = gauss(rng);
      if (v.norm() < 1e-6) {
        --i;
        continue;
      }
      dirs.push_back(v.normalized());
    }
  }
  for (auto& v : dirs) {
    for (int j = 0; j < d; ++j) {
      if (v[j] != 0.0) {
        if (v[j] < 0.0) v = -v;
        break;
      }
    }
  }
  std::vector<Vector> out;
  for (const auto& v : dirs) {
    bool dup = false;
    for (const auto& w : out)
      if ((v - w).norm() < 1e-9) {
        dup = true;
        break;
      }
    if (!dup) out.push_back(v);
  }
  return out;
}

namespace detail {

// Log quantity split as sum_r rate*dt + bounded.  Growth rates gamma of the
// same magnitude as the rates cancel against the rate part exactly, so the
// bounded content survives even when rate*dt is of order 1e62.
struct RateMass {
  std::vector<std::pair<double, double>> parts;  // (rate, accumulated dt)
  double bounded = 0.0;

  void add_rate(double r, double dt) {
    for (auto& [pr, pdt] : parts)
      if (pr == r) {
        pdt += dt;
        return;
      }
    if (parts.size() < 8)
      parts.emplace_back(r, dt);
    else
      bounded += r * dt;  // many distinct rates only occur on short horizons
  }
  void add(const RateMass& o) {
    for (const auto& [r, dt] : o.parts) add_rate(r, dt);
    bounded += o.bounded;
  }
  // sum_r (sign*(r - gamma) + alpha) dt + sign*bounded
  double need(double gamma, double alpha, int sign) const {
    CompensatedSum acc;
    for (const auto& [r, dt] : parts) acc.add((sign * (r - gamma) + alpha) * dt);
    acc.add(sign * bounded);
    return acc.value();
  }
};

struct ScaledPiece {
  Matrix m;        // normalized
  double rate;     // dominant exponent rate
  double bounded;  // remainder of the log scale
};

// e^{A dt} in scaled form, by the closed plane formula when available.
inline ScaledPiece scaled_segment_matrix(const Matrix& a, double dt) {
  if (a.rows() == 2 && a(1, 0) == 0.0) {
    double p = a(0, 0), q = a(1, 1), c = a(0, 1);
    double m = std::max(p, q);
    Matrix r(2, 2);
    r << std::exp((p - m) * dt), c * dt * psi1(std::abs(p - q) * dt), 0.0,
        std::exp((q - m) * dt);
    double f = r.norm();
    return {r / f, m, std::log(f)};
  }
  bool diag = true;
  for (Eigen::Index i = 0; i < a.rows() && diag; ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j)
      if (i != j && a(i, j) != 0.0) {
        diag = false;
        break;
      }
  if (diag) {
    double m = a.diagonal().maxCoeff();
    Matrix r = Matrix::Zero(a.rows(), a.cols());
    for (Eigen::Index i = 0; i < a.rows(); ++i) r(i, i) = std::exp((a(i, i) - m) * dt);
    double f = r.norm();
    return {r / f, m, std::log(f)};
  }
  ScaledMatrix sm = expm_log_scaled(a, dt);
  return {sm.m, 0.0, sm.log_scale};
}

// ln sigma_min(e^{A dt}) as a rate split.
inline RateMass sigma_min_piece(const Matrix& a, double dt) {
  RateMass out;
  if (a.rows() == 1) {
    out.add_rate(a(0, 0), dt);
    return out;
  }
  if (a.rows() == 2 && a(1, 0) == 0.0) {
    // sigma_min = |det| / sigma_max, and ln|det| = tr(A) dt exactly
    ScaledPiece sp = scaled_segment_matrix(a, dt);
    double smax = sp.m.jacobiSvd().singularValues()[0];
    out.add_rate(std::min(a(0, 0), a(1, 1)), dt);
    out.bounded -= sp.bounded + std::log(smax);
    return out;
  }
  ScaledMatrix sm = expm_log_scaled(a, dt);
  auto sv = sm.m.jacobiSvd().singularValues();
  double smin = sv[sv.size() - 1];
  if (smin > 1e-280) {
    out.bounded = sm.log_scale + std::log(smin);
    return out;
  }
  double acc = a.trace() * dt;
  for (Eigen::Index j = 0; j + 1 < sv.size(); ++j) acc -= sm.log_scale + std::log(sv[j]);
  out.bounded = acc;
  return out;
}

}  // namespace detail

struct DichotomyCertificate {
  double K = 1.0;
  double alpha = 0.0;
  int rank = 0;
  Matrix pseudo_stable;  // d x rank, orthonormal columns
};

struct DichotomyVerdict {
  bool admits = false;
  std::optional<DichotomyCertificate> cert;
  std::vector<std::string> witnesses;
};

struct DichotomyOptions {
  double alpha_min = 0.004;
  int n_directions = 16;
  std::uint64_t seed = 0;
  int max_times = 36;
  int dense_tail = 24;  // always keep the last boundaries in the time sample
  Norm norm = Norm::euclidean;
};

// Per-system data reused across growth rates: direction estimates and caches,
// a time sample, pairwise transfer-operator norms (by scaled matrix chains)
// and smallest singular values (by scaled chains plus exact determinants).
class DichotomyContext {
 public:
  DichotomyContext(const LinearSystem& sys, const DichotomyOptions& opts = {})
      : sys_(&sys), opts_(opts) {
    if (sys.dimension() > 4)
      throw std::invalid_argument("direction-sweep dichotomy testing is limited to dimension <= 4");
    dirs_ = direction_sample(sys.dimension(), std::max(opts.n_directions, 4 * sys.dimension()),
                             opts.seed);
    WindowGrid grid = make_default_grid(sys, {10.0, 6});
    if (grid.lengths.size() > 10) {
      std::vector<double> thin;
      double stride = double(grid.lengths.size() - 1) / 9.0;
      for (int i = 0; i < 10; ++i) thin.push_back(grid.lengths[std::size_t(i * stride)]);
      thin.back() = grid.lengths.back();
      grid.lengths = thin;
    }
    for (const auto& v : dirs_) {
      caches_.emplace_back(std::make_unique<TrajectoryCache>(sys, v));
      estimates_.push_back(
          bohl_interval_sweep(*caches_.back(), sys.sequence(), grid, {opts.norm, 0.02}));
    }
    build_times();
    build_transfers();
    deltas_.assign(dirs_.size(), {});
    dirs_at_.assign(dirs_.size(), {});
    for (std::size_t i = 0; i < dirs_.size(); ++i) {
      deltas_[i].resize(pairs_.size());
      for (std::size_t p = 0; p < pairs_.size(); ++p)
        deltas_[i][p] = caches_[i]->ratio_len(times_[pairs_[p].first], pair_len_[p], Norm::euclidean);
      dirs_at_[i].reserve(times_.size());
      for (const auto& tp : times_) dirs_at_[i].push_back(caches_[i]->at(tp).direction);
    }
  }

  const LinearSystem& system() const { return *sys_; }
  const std::vector<Vector>& directions() const { return dirs_; }
  const std::vector<BohlIntervalEstimate>& estimates() const { return estimates_; }

  // Candidate growth rates drawn from the per-direction estimates.
  std::vector<double> rate_seeds() const {
    std::vector<double> s;
    for (const auto& e : estimates_) {
      s.push_back(e.lower);
      s.push_back(e.upper);
      s.push_back(0.5 * (e.lower + e.upper));
    }
    return s;
  }

  DichotomyVerdict test(double gamma) const {
    DichotomyVerdict v;
    std::vector<std::size_t> stable, unstable;
    for (std::size_t i = 0; i < dirs_.size(); ++i) {
      const auto& e = estimates_[i];
      if (e.upper + e.margin < gamma - opts_.alpha_min)
        stable.push_back(i);
      else if (e.lower - e.margin > gamma + opts_.alpha_min)
        unstable.push_back(i);
      else {
        std::ostringstream os;
        os << "direction " << i << " straddles gamma=" << gamma << ": windowed rates span ["
           << e.lower << ", " << e.upper << "]";
        v.witnesses.push_back(os.str());
        return v;
      }
    }
    auto w_idx = pivot_subset(stable);
    int d = sys_->dimension();
    int r = int(w_idx.size());
    std::vector<std::size_t> v_idx;
    if (r < d) {
      v_idx = complete_basis(w_idx, unstable);
      if (int(w_idx.size() + v_idx.size()) != d) {
        v.witnesses.push_back("growing directions do not complement the decaying span (rank " +
                              std::to_string(r) + ")");
        return v;
      }
    }

    // cache the middle-rank projected norms once per verdict
    std::vector<double> proj_stable, proj_unstable;
    if (r > 0 && r < d) {
      proj_stable.resize(pairs_.size());
      proj_unstable.resize(pairs_.size());
      for (std::size_t p = 0; p < pairs_.size(); ++p) {
        proj_stable[p] = projected_norm(p, w_idx, v_idx, true);
        proj_unstable[p] = projected_norm(p, w_idx, v_idx, false);
      }
    }
    // the certificate rate cannot exceed the observed distance from gamma to
    // the classified growth rates
    double alpha_cap = std::numeric_limits<double>::infinity();
    for (std::size_t i : stable) alpha_cap = std::min(alpha_cap, gamma - estimates_[i].upper);
    for (std::size_t i : unstable) alpha_cap = std::min(alpha_cap, estimates_[i].lower - gamma);
    double alpha_star = -1.0, lnk_star = 0.0;
    for (double alpha : alpha_candidates(alpha_cap)) {
      std::optional<double> up, dn;
      if (r == d)
        up = saturated_lnk([&](std::size_t p) { return transfer_norm_[p].need(gamma, alpha, +1); });
      else if (r == 0)
        up = 0.0;
      else
        up = saturated_lnk([&](std::size_t p) {
          return proj_stable[p] - gamma * pair_len_[p] + alpha * pair_len_[p];
        });
      if (!up) continue;
      if (r == 0)
        dn = saturated_lnk(
            [&](std::size_t p) { return transfer_sigma_min_[p].need(gamma, alpha, -1); });
      else if (r == d)
        dn = 0.0;
      else
        dn = saturated_lnk([&](std::size_t p) {
          return proj_unstable[p] + gamma * pair_len_[p] + alpha * pair_len_[p];
        });
      if (!dn) continue;
      alpha_star = alpha;
      lnk_star = std::max(*up, *dn);
      break;
    }
    if (alpha_star < 0.0) {
      v.witnesses.push_back(
          "no uniform constant: transition norms grow along the horizon at gamma=" +
          std::to_string(gamma));
      return v;
    }
    v.admits = true;
    DichotomyCertificate cert;
    cert.alpha = alpha_star;
    cert.K = std::exp(std::min(700.0, std::max(0.0, lnk_star)));
    cert.rank = r;
    cert.pseudo_stable = basis_matrix(w_idx);
    v.cert = cert;
    return v;
  }

 private:
  void build_times() {
    const auto& seq = sys_->sequence();
    std::size_t n = seq.segment_count();
    std::vector<std::size_t> idx;
    std::size_t budget = std::size_t(std::max(8, opts_.max_times));
    std::size_t tail = std::min<std::size_t>(std::size_t(opts_.dense_tail), n + 1);
    std::size_t head_budget = budget > tail ? budget - tail : 1;
    std::size_t stride = std::max<std::size_t>(1, (n + 1) / head_budget);
    for (std::size_t k = 0; k <= n; k += stride) idx.push_back(k);
    for (std::size_t k = n + 1 - tail; k <= n; ++k) idx.push_back(k);
    std::sort(idx.begin(), idx.end());
    idx.erase(std::unique(idx.begin(), idx.end()), idx.end());
    for (std::size_t k : idx) times_.push_back(switching_time(seq, k));
    // interior points of the dominating segments
    for (std::size_t k = 0; k < n; ++k)
      if (seq.gap(k) > seq.horizon() / 64.0)
        times_.push_back(make_timepoint(seq, k, seq.gap(k) / 2.0));
    std::sort(times_.begin(), times_.end(),
              [](const TimePoint& a, const TimePoint& b) { return a.clock_value() < b.clock_value(); });
    for (std::size_t a = 0; a < times_.size(); ++a)
      for (std::size_t b = a + 1; b < times_.size(); ++b) {
        double len = duration(seq, times_[a], times_[b]);
        if (len > 0.0) {
          pairs_.emplace_back(a, b);
          pair_len_.push_back(len);
        }
      }
    for (auto& c : caches_)
      if (c->needs_prepare()) c->prepare(times_);
  }

  // Transfer-operator norms ln||X(t)X(s)^{-1}|| and ln sigma_min for every
  // sampled pair, kept as rate splits.  Piecewise systems chain scaled
  // per-segment exponentials; general systems go through the coordinate
  // solution basis (their horizons are moderate).
  void build_transfers() {
    std::size_t t = times_.size();
    transfer_norm_.assign(pairs_.size(), {});
    transfer_sigma_min_.assign(pairs_.size(), {});
    std::map<std::pair<std::size_t, std::size_t>, std::size_t> pair_index;
    for (std::size_t p = 0; p < pairs_.size(); ++p) pair_index[pairs_[p]] = p;

    if (sys_->is_general()) {
      int d = sys_->dimension();
      for (std::size_t p = 0; p < pairs_.size(); ++p) {
        auto [a, b] = pairs_[p];
        Matrix frame(d, d);
        for (int j = 0; j < d; ++j) frame.col(j) = coord_dir(j, a);
        Eigen::FullPivLU<Matrix> lu(frame);
        if (!lu.isInvertible()) {
          transfer_norm_[p].bounded = 700.0;
          transfer_sigma_min_[p].bounded = -700.0;
          continue;
        }
        Matrix inv = lu.inverse();
        double mx = -std::numeric_limits<double>::infinity();
        std::vector<double> expo(static_cast<std::size_t>(d), 0.0);
        for (int j = 0; j < d; ++j) {
          expo[std::size_t(j)] = coord_delta(j, p);
          mx = std::max(mx, expo[std::size_t(j)]);
        }
        Matrix m = Matrix::Zero(d, d);
        for (int j = 0; j < d; ++j)
          m += std::exp(expo[std::size_t(j)] - mx) * coord_dir(j, b) * inv.row(j);
        auto sv = m.jacobiSvd().singularValues();
        transfer_norm_[p].bounded = mx + std::log(std::max(sv[0], 1e-300));
        transfer_sigma_min_[p].bounded = mx + std::log(std::max(sv[sv.size() - 1], 1e-300));
      }
      return;
    }

    // consecutive scaled transfers, then chained products per start index
    std::size_t n_steps = t - 1;
    std::vector<detail::ScaledPiece> step(n_steps);
    std::vector<detail::RateMass> step_norm(n_steps), step_sigma(n_steps);
    const auto& seq = sys_->sequence();
    for (std::size_t i = 0; i < n_steps; ++i) {
      Matrix acc = Matrix::Identity(sys_->dimension(), sys_->dimension());
      detail::RateMass norm_mass, sigma_mass;
      TimePoint from = times_[i];
      double len = duration(seq, times_[i], times_[i + 1]);
      std::size_t k = from.segment;
      double off = from.offset;
      double left = len;
      while (left > 0.0) {
        double rem = seq.gap(k) - off;
        double dt = (left <= rem || k + 1 >= seq.segment_count()) ? left : rem;
        if (dt > 0.0) {
          Matrix a = segment_matrix(k);
          detail::ScaledPiece piece = detail::scaled_segment_matrix(a, dt);
          Matrix prod = piece.m * acc;
          double f = prod.norm();
          acc = prod / f;
          norm_mass.add_rate(piece.rate, dt);
          norm_mass.bounded += piece.bounded + std::log(f);
          sigma_mass.add(segment_sigma_min(k, a, dt));
        }
        left -= dt;
        ++k;
        off = 0.0;
      }
      step[i] = {acc, 0.0, 0.0};
      step_norm[i] = std::move(norm_mass);
      step_sigma[i] = std::move(sigma_mass);
    }
    for (std::size_t a = 0; a < t; ++a) {
      Matrix acc = Matrix::Identity(sys_->dimension(), sys_->dimension());
      detail::RateMass norm_mass, sigma_mass;
      for (std::size_t b = a + 1; b < t; ++b) {
        Matrix prod = step[b - 1].m * acc;
        double f = prod.norm();
        acc = prod / f;
        norm_mass.add(step_norm[b - 1]);
        norm_mass.bounded += std::log(f);
        sigma_mass.add(step_sigma[b - 1]);
        auto it = pair_index.find({a, b});
        if (it == pair_index.end()) continue;
        auto sv = acc.jacobiSvd().singularValues();
        transfer_norm_[it->second] = norm_mass;
        transfer_norm_[it->second].bounded += std::log(std::max(sv[0], 1e-300));
        transfer_sigma_min_[it->second] = sigma_mass;
      }
    }
  }

  Matrix segment_matrix(std::size_t k) const {
    if (sys_->is_piecewise()) return sys_->phase_matrix(k);
    if (sys_->is_scalar()) {
      Matrix m(1, 1);
      m(0, 0) = sys_->scalar_rate(k);
      return m;
    }
    // block-diagonal: constant within each merged segment
    const auto& seq = sys_->sequence();
    return sys_->coefficient(seq.time(k) + 0.5 * seq.gap(k));
  }

  // Exact ln sigma_min over one constant piece; block structure is split so
  // per-block results stay in log range.
  detail::RateMass segment_sigma_min(std::size_t k, const Matrix& a, double dt) const {
    if (sys_->is_block()) {
      const auto& bd = std::get<BlockDiagonal>(sys_->body());
      double clock = sys_->sequence().time(k) + 0.5 * sys_->sequence().gap(k);
      detail::RateMass best;
      double best_val = std::numeric_limits<double>::infinity();
      for (const auto& blk : bd.blocks) {
        detail::RateMass m = detail::sigma_min_piece(blk->coefficient(clock), dt);
        double val = m.need(0.0, 0.0, +1);
        if (val < best_val) {
          best_val = val;
          best = std::move(m);
        }
      }
      return best;
    }
    return detail::sigma_min_piece(a, dt);
  }

  Vector coord_dir(int j, std::size_t time_idx) const {
    return dirs_at_[std::size_t(j)][time_idx];  // axes are the first d directions
  }
  double coord_delta(int j, std::size_t pair) const { return deltas_[std::size_t(j)][pair]; }

  // Well-conditioned subset spanning the same space.
  std::vector<std::size_t> pivot_subset(const std::vector<std::size_t>& idx) const {
    if (idx.empty()) return {};
    Matrix m(sys_->dimension(), Eigen::Index(idx.size()));
    for (std::size_t j = 0; j < idx.size(); ++j) m.col(Eigen::Index(j)) = dirs_[idx[j]];
    Eigen::ColPivHouseholderQR<Matrix> qr(m);
    qr.setThreshold(1e-6);
    int r = int(qr.rank());
    std::vector<std::size_t> out;
    for (int j = 0; j < r; ++j) out.push_back(idx[std::size_t(qr.colsPermutation().indices()[j])]);
    return out;
  }

  // Growing directions completing the decaying span to a full basis.
  std::vector<std::size_t> complete_basis(const std::vector<std::size_t>& w_idx,
                                          const std::vector<std::size_t>& grow) const {
    int d = sys_->dimension();
    Matrix m(d, Eigen::Index(w_idx.size() + grow.size()));
    Eigen::Index col = 0;
    for (std::size_t i : w_idx) m.col(col++) = dirs_[i];
    for (std::size_t i : grow) m.col(col++) = dirs_[i];
    Eigen::ColPivHouseholderQR<Matrix> qr(m);
    qr.setThreshold(1e-6);
    int r = int(qr.rank());
    if (r != d) return {};
    std::vector<std::size_t> out;
    for (int j = 0; j < r; ++j) {
      auto p = std::size_t(qr.colsPermutation().indices()[j]);
      if (p >= w_idx.size()) out.push_back(grow[p - w_idx.size()]);
    }
    if (out.size() != std::size_t(d) - w_idx.size()) return {};
    return out;
  }

  Matrix basis_matrix(const std::vector<std::size_t>& idx) const {
    if (idx.empty()) return Matrix::Zero(sys_->dimension(), 0);
    Matrix m(sys_->dimension(), Eigen::Index(idx.size()));
    for (std::size_t j = 0; j < idx.size(); ++j) m.col(Eigen::Index(j)) = dirs_[idx[j]];
    Eigen::HouseholderQR<Matrix> qr(m);
    return qr.householderQ() * Matrix::Identity(sys_->dimension(), Eigen::Index(idx.size()));
  }

  std::vector<double> alpha_candidates(double cap) const {
    double top = std::max(std::isfinite(cap) ? 0.999 * cap : 10.0, 2.0 * opts_.alpha_min);
    std::vector<double> cands;
    for (double a = top; a > opts_.alpha_min; a *= 0.6) cands.push_back(a);
    cands.push_back(opts_.alpha_min);
    return cands;
  }

  // Projected transition norm through the decaying span (stable side) or the
  // growing complement (unstable side).  A frame that loses invertibility
  // means the transported subspaces lost transversality, which is itself
  // blow-up evidence.
  double projected_norm(std::size_t pair, const std::vector<std::size_t>& w_idx,
                        const std::vector<std::size_t>& v_idx, bool stable_side) const {
    int d = sys_->dimension();
    auto [a, b] = pairs_[pair];
    const auto& basis_idx = stable_side ? w_idx : v_idx;
    const auto& other_idx = stable_side ? v_idx : w_idx;
    std::size_t anchor = stable_side ? a : b;
    std::size_t target = stable_side ? b : a;
    Matrix frame(d, d);
    Eigen::Index col = 0;
    for (std::size_t i : basis_idx) frame.col(col++) = dirs_at_[i][anchor];
    for (std::size_t i : other_idx) frame.col(col++) = dirs_at_[i][anchor];
    Eigen::FullPivLU<Matrix> lu(frame);
    if (!lu.isInvertible()) return 700.0;  // transversality lost
    Matrix dual = lu.inverse().topRows(Eigen::Index(basis_idx.size()));

    double mx = -std::numeric_limits<double>::infinity();
    std::vector<double> expo(basis_idx.size());
    for (std::size_t j = 0; j < basis_idx.size(); ++j) {
      double delta = deltas_[basis_idx[j]][pair];
      expo[j] = stable_side ? delta : -delta;
      mx = std::max(mx, expo[j]);
    }
    Matrix m = Matrix::Zero(d, d);
    for (std::size_t j = 0; j < basis_idx.size(); ++j)
      m += std::exp(expo[j] - mx) * dirs_at_[basis_idx[j]][target] * dual.row(Eigen::Index(j));
    double nrm = m.norm();
    if (!(nrm > 0.0)) return -std::numeric_limits<double>::infinity();
    return mx + std::log(nrm);
  }

  // ln K required over expanding sample prefixes; nullopt when it keeps
  // growing (no uniform constant).
  template <class F>
  std::optional<double> saturated_lnk(F&& need_of) const {
    std::size_t q = times_.size();
    std::vector<double> max_by_prefix(4, -std::numeric_limits<double>::infinity());
    for (std::size_t p = 0; p < pairs_.size(); ++p) {
      double need = need_of(p);
      std::size_t bucket = std::min<std::size_t>((4 * pairs_[p].second) / (q + 1), 3);
      max_by_prefix[bucket] = std::max(max_by_prefix[bucket], need);
    }
    double run = -std::numeric_limits<double>::infinity();
    std::vector<double> cum(4);
    for (int i = 0; i < 4; ++i) {
      run = std::max(run, max_by_prefix[std::size_t(i)]);
      cum[std::size_t(i)] = run;
    }
    if (cum[3] > cum[2] + 0.5 || cum[3] > cum[1] + 1.0) return std::nullopt;
    // slow monotone creep of the requirement is growth too
    bool rising = max_by_prefix[1] > max_by_prefix[0] && max_by_prefix[2] > max_by_prefix[1] &&
                  max_by_prefix[3] > max_by_prefix[2] &&
                  max_by_prefix[3] > max_by_prefix[0] + 0.25;
    if (rising) return std::nullopt;
    return cum[3];
  }

  const LinearSystem* sys_;
  DichotomyOptions opts_;
  std::vector<Vector> dirs_;
  std::vector<std::unique_ptr<TrajectoryCache>> caches_;
  std::vector<BohlIntervalEstimate> estimates_;
  std::vector<TimePoint> times_;
  std::vector<std::pair<std::size_t, std::size_t>> pairs_;
  std::vector<double> pair_len_;
  std::vector<std::vector<double>> deltas_;
  std::vector<std::vector<Vector>> dirs_at_;
  std::vector<detail::RateMass> transfer_norm_;
  std::vector<detail::RateMass> transfer_sigma_min_;
};

inline DichotomyVerdict dichotomy_test(const LinearSystem& sys, double gamma,
                                       const DichotomyOptions& opts = {}) {
  DichotomyContext ctx(sys, opts);
  return ctx.test(gamma);
}

}  // namespace bohl
