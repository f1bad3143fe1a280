#include "otbr/ot.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "otbr/io.hpp"

namespace otbr {

ConvergenceError::ConvergenceError(std::size_t iterations, double rowResidual, double colResidual)
    : std::runtime_error("sinkhorn did not converge after " + std::to_string(iterations) +
                         " iterations (row residual " + std::to_string(rowResidual) + ", column residual " +
                         std::to_string(colResidual) + ")"),
      iterations_(iterations), rowResidual_(rowResidual), colResidual_(colResidual) {}

Marginal Marginal::uniform(std::size_t n) { return {std::vector<double>(n, 1.0 / static_cast<double>(n))}; }

double Marginal::total() const {
  double s = 0.0;
  for (double v : mass) s += v;
  return s;
}

std::string to_string(SolverKind k) { return k == SolverKind::Exact ? "exact" : "sinkhorn"; }

SolverKind parse_solver(const std::string& s) {
  if (s == "exact") return SolverKind::Exact;
  if (s == "sinkhorn") return SolverKind::Sinkhorn;
  throw std::invalid_argument("unknown solver \"" + s + "\"");
}

namespace {

void validate(const Marginal& a, const Marginal& b, const Matrix& c) {
  if (a.size() == 0 || b.size() == 0) throw MarginalError("marginals must be non-empty");
  for (const auto* m : {&a, &b})
    for (std::size_t i = 0; i < m->size(); ++i)
      if (!std::isfinite(m->mass[i]) || m->mass[i] < 0.0)
        throw MarginalError("marginal entry " + std::to_string(i) + " is negative or non-finite");
  const double ta = a.total(), tb = b.total();
  if (!(ta > 0.0)) throw MarginalError("marginals carry no mass");
  if (std::fabs(ta - tb) > 1e-7)
    throw MarginalError("marginal totals differ: " + std::to_string(ta) + " vs " + std::to_string(tb));
  if (c.rows() != a.size() || c.cols() != b.size())
    throw DimensionError("cost is " + std::to_string(c.rows()) + "x" + std::to_string(c.cols()) + ", marginals need " +
                         std::to_string(a.size()) + "x" + std::to_string(b.size()));
  if (!c.all_finite()) throw NumericError("cost matrix has non-finite entries");
}

std::vector<std::size_t> support_of(const Marginal& m) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < m.size(); ++i)
    if (m.mass[i] > 0.0) idx.push_back(i);
  return idx;
}

Matrix restrict_cost(const Matrix& c, const std::vector<std::size_t>& rows, const std::vector<std::size_t>& cols) {
  Matrix out(rows.size(), cols.size());
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < cols.size(); ++j) out(i, j) = c(rows[i], cols[j]);
  return out;
}

Matrix expand_plan(const Matrix& p, const std::vector<std::size_t>& rows, const std::vector<std::size_t>& cols,
                   std::size_t n, std::size_t m) {
  Matrix out(n, m);
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < cols.size(); ++j) out(rows[i], cols[j]) = p(i, j);
  return out;
}

std::vector<double> pick(const Marginal& m, const std::vector<std::size_t>& idx) {
  std::vector<double> v;
  for (std::size_t i : idx) v.push_back(m.mass[i]);
  return v;
}

class TransportSimplex {
 public:
  TransportSimplex(std::vector<double> a, std::vector<double> b, const Matrix& c)
      : n_(a.size()), m_(b.size()), c_(c), x_(n_ * m_, 0.0), basic_(n_ * m_, 0), u_(n_), v_(m_) {
    northwest(std::move(a), std::move(b));
    double mx = 0.0;
    for (double v : c.values()) mx = std::max(mx, std::fabs(v));
    tol_ = 1e-12 * mx;
  }

  std::size_t solve() {
    const std::size_t maxIter = 50 * n_ * m_ + 10000;
    std::size_t degenerateRun = 0, iter = 0;
    for (; iter < maxIter; ++iter) {
      potentials();
      const bool bland = degenerateRun > 2 * (n_ + m_);
      std::size_t enter = pricing(bland);
      if (enter == kNone) return iter;
      degenerateRun = pivot(enter) ? 0 : degenerateRun + 1;
    }
    throw NumericError("transport simplex exceeded " + std::to_string(maxIter) + " pivots");
  }

  Matrix plan() const { return Matrix(n_, m_, x_); }

 private:
  static constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();

  void northwest(std::vector<double> a, std::vector<double> b) {
    std::size_t i = 0, j = 0;
    while (true) {
      const double q = std::min(a[i], b[j]);
      x_[i * m_ + j] = q;
      basic_[i * m_ + j] = 1;
      a[i] -= q;
      b[j] -= q;
      if (i == n_ - 1 && j == m_ - 1) break;
      if (j == m_ - 1 || (i < n_ - 1 && a[i] <= b[j]))
        ++i;
      else
        ++j;
    }
  }

  void adjacency() {
    rowAdj_.assign(n_, {});
    colAdj_.assign(m_, {});
    for (std::size_t i = 0; i < n_; ++i)
      for (std::size_t j = 0; j < m_; ++j)
        if (basic_[i * m_ + j]) {
          rowAdj_[i].push_back(j);
          colAdj_[j].push_back(i);
        }
  }

  // u_i + v_j = c_ij on the basis tree, u_0 = 0
  void potentials() {
    adjacency();
    std::vector<char> rowSeen(n_, 0), colSeen(m_, 0);
    std::vector<std::size_t> stack{0};  // node ids: rows [0, n), cols [n, n+m)
    u_[0] = 0.0;
    rowSeen[0] = 1;
    while (!stack.empty()) {
      std::size_t node = stack.back();
      stack.pop_back();
      if (node < n_) {
        for (std::size_t j : rowAdj_[node])
          if (!colSeen[j]) {
            colSeen[j] = 1;
            v_[j] = c_(node, j) - u_[node];
            stack.push_back(n_ + j);
          }
      } else {
        const std::size_t j = node - n_;
        for (std::size_t i : colAdj_[j])
          if (!rowSeen[i]) {
            rowSeen[i] = 1;
            u_[i] = c_(i, j) - v_[j];
            stack.push_back(i);
          }
      }
    }
  }

  std::size_t pricing(bool bland) const {
    std::size_t best = kNone;
    double bestVal = -tol_;
    for (std::size_t i = 0; i < n_; ++i) {
      const double ui = u_[i];
      for (std::size_t j = 0; j < m_; ++j) {
        const std::size_t k = i * m_ + j;
        if (basic_[k]) continue;
        const double d = c_(i, j) - ui - v_[j];
        if (d < bestVal) {
          best = k;
          if (bland) return best;
          bestVal = d;
        }
      }
    }
    return best;
  }

  // returns true when the pivot moved positive mass
  bool pivot(std::size_t enter) {
    const std::size_t p = enter / m_, q = enter % m_;
    // path in the tree from column q to row p
    const std::size_t N = n_ + m_;
    std::vector<std::size_t> parent(N, kNone);
    std::vector<char> seen(N, 0);
    std::vector<std::size_t> queue{p};
    seen[p] = 1;
    for (std::size_t h = 0; h < queue.size(); ++h) {
      std::size_t node = queue[h];
      if (node == n_ + q) break;
      if (node < n_) {
        for (std::size_t j : rowAdj_[node])
          if (!seen[n_ + j]) {
            seen[n_ + j] = 1;
            parent[n_ + j] = node;
            queue.push_back(n_ + j);
          }
      } else {
        for (std::size_t i : colAdj_[node - n_])
          if (!seen[i]) {
            seen[i] = 1;
            parent[i] = node;
            queue.push_back(i);
          }
      }
    }
    // walk back from column q; edges alternate minus, plus, ...
    std::vector<std::size_t> minus, plus;
    std::size_t node = n_ + q;
    bool sign = false;
    while (node != p) {
      std::size_t par = parent[node];
      std::size_t cell = node < n_ ? node * m_ + (par - n_) : par * m_ + (node - n_);
      (sign ? plus : minus).push_back(cell);
      sign = !sign;
      node = par;
    }
    std::size_t leave = kNone;
    double theta = std::numeric_limits<double>::infinity();
    for (std::size_t cell : minus)
      if (x_[cell] < theta || (x_[cell] == theta && cell < leave)) {
        theta = x_[cell];
        leave = cell;
      }
    for (std::size_t cell : plus) x_[cell] += theta;
    for (std::size_t cell : minus) x_[cell] -= theta;
    x_[enter] = theta;
    x_[leave] = 0.0;
    basic_[enter] = 1;
    basic_[leave] = 0;
    return theta > 0.0;
  }

  std::size_t n_, m_;
  const Matrix& c_;
  std::vector<double> x_;
  std::vector<char> basic_;
  std::vector<double> u_, v_;
  std::vector<std::vector<std::size_t>> rowAdj_, colAdj_;
  double tol_ = 0.0;
};

}  // namespace

double transport_cost(const Matrix& plan, const Matrix& cost) {
  double s = 0.0;
  for (std::size_t k = 0; k < plan.size(); ++k) s += plan.values()[k] * cost.values()[k];
  return s;
}

TransportPlan solve_exact(const Marginal& source, const Marginal& target, const Matrix& cost) {
  validate(source, target, cost);
  auto rows = support_of(source), cols = support_of(target);
  Matrix sub = restrict_cost(cost, rows, cols);
  TransportSimplex simplex(pick(source, rows), pick(target, cols), sub);
  std::size_t iters = simplex.solve();
  TransportPlan out;
  out.plan = expand_plan(simplex.plan(), rows, cols, source.size(), target.size());
  out.source = source;
  out.target = target;
  out.objective = transport_cost(out.plan, cost);
  out.solver = SolverKind::Exact;
  out.iterations = iters;
  return out;
}

namespace {

double log_sum_exp(const std::vector<double>& v) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double x : v) mx = std::max(mx, x);
  if (!std::isfinite(mx)) return mx;
  double s = 0.0;
  for (double x : v) s += std::exp(x - mx);
  return mx + std::log(s);
}

}  // namespace

TransportPlan solve_sinkhorn(const Marginal& source, const Marginal& target, const Matrix& cost, double epsilon,
                             std::size_t maxIterations, double tolerance) {
  validate(source, target, cost);
  if (!(epsilon > 0.0) || !std::isfinite(epsilon)) throw NumericError("sinkhorn epsilon must be positive");
  auto rows = support_of(source), cols = support_of(target);
  const std::size_t n = rows.size(), m = cols.size();
  Matrix C = restrict_cost(cost, rows, cols);
  std::vector<double> a = pick(source, rows), b = pick(target, cols);
  std::vector<double> la(n), lb(m), f(n, 0.0), g(m, 0.0), buf;
  for (std::size_t i = 0; i < n; ++i) la[i] = std::log(a[i]);
  for (std::size_t j = 0; j < m; ++j) lb[j] = std::log(b[j]);

  auto plan_entries = [&]() {
    Matrix P(n, m);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) P(i, j) = std::exp((f[i] + g[j] - C(i, j)) / epsilon);
    return P;
  };
  auto residuals = [&](const Matrix& P, double& rowRes, double& colRes) {
    rowRes = colRes = 0.0;
    std::vector<double> cs(m, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      double rs = 0.0;
      for (std::size_t j = 0; j < m; ++j) {
        rs += P(i, j);
        cs[j] += P(i, j);
      }
      rowRes = std::max(rowRes, std::fabs(rs - a[i]));
    }
    for (std::size_t j = 0; j < m; ++j) colRes = std::max(colRes, std::fabs(cs[j] - b[j]));
  };

  std::size_t it = 0;
  double rowRes = 0.0, colRes = 0.0;
  bool converged = false;
  for (; it < maxIterations; ++it) {
    buf.resize(m);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < m; ++j) buf[j] = (g[j] - C(i, j)) / epsilon;
      f[i] = epsilon * (la[i] - log_sum_exp(buf));
    }
    buf.resize(n);
    for (std::size_t j = 0; j < m; ++j) {
      for (std::size_t i = 0; i < n; ++i) buf[i] = (f[i] - C(i, j)) / epsilon;
      g[j] = epsilon * (lb[j] - log_sum_exp(buf));
    }
    if (it % 10 == 9 || it + 1 == maxIterations || it < 2) {
      residuals(plan_entries(), rowRes, colRes);
      if (!std::isfinite(rowRes) || !std::isfinite(colRes)) throw NumericError("sinkhorn produced non-finite mass");
      if (rowRes < tolerance) {
        converged = true;
        ++it;
        break;
      }
    }
  }
  if (!converged) throw ConvergenceError(it, rowRes, colRes);

  // round onto the transport polytope
  Matrix P = plan_entries();
  for (std::size_t i = 0; i < n; ++i) {
    double rs = 0.0;
    for (std::size_t j = 0; j < m; ++j) rs += P(i, j);
    const double s = rs > a[i] ? a[i] / rs : 1.0;
    for (std::size_t j = 0; j < m; ++j) P(i, j) *= s;
  }
  for (std::size_t j = 0; j < m; ++j) {
    double cs = 0.0;
    for (std::size_t i = 0; i < n; ++i) cs += P(i, j);
    const double s = cs > b[j] ? b[j] / cs : 1.0;
    for (std::size_t i = 0; i < n; ++i) P(i, j) *= s;
  }
  std::vector<double> er(n), ec(m, 0.0);
  double erTotal = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double rs = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      rs += P(i, j);
      ec[j] += P(i, j);
    }
    er[i] = std::max(0.0, a[i] - rs);
    erTotal += er[i];
  }
  for (std::size_t j = 0; j < m; ++j) ec[j] = std::max(0.0, b[j] - ec[j]);
  if (erTotal > 0.0)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) P(i, j) += er[i] * ec[j] / erTotal;

  TransportPlan out;
  out.plan = expand_plan(P, rows, cols, source.size(), target.size());
  out.source = source;
  out.target = target;
  out.objective = transport_cost(out.plan, cost);
  out.solver = SolverKind::Sinkhorn;
  out.epsilon = epsilon;
  out.iterations = it;
  return out;
}

FeasibilityReport check_plan(const TransportPlan& plan) {
  return check_plan(plan, plan.solver == SolverKind::Exact ? kExactTolerance : kSinkhornTolerance);
}

FeasibilityReport check_plan(const TransportPlan& tp, double tolerance) {
  const Matrix& P = tp.plan;
  if (P.rows() != tp.source.size() || P.cols() != tp.target.size())
    throw DimensionError("plan shape does not match its marginals");
  FeasibilityReport r;
  r.tolerance = tolerance;
  r.minEntry = std::numeric_limits<double>::infinity();
  std::vector<double> cs(P.cols(), 0.0);
  bool finite = true;
  for (std::size_t i = 0; i < P.rows(); ++i) {
    double rs = 0.0;
    for (std::size_t j = 0; j < P.cols(); ++j) {
      const double v = P(i, j);
      if (!std::isfinite(v)) finite = false;
      rs += v;
      cs[j] += v;
      if (v > 0.0) ++r.support;
      if (v < r.minEntry) {
        r.minEntry = v;
        r.minRow = i;
        r.minCol = j;
      }
    }
    r.maxRowViolation = std::max(r.maxRowViolation, std::fabs(rs - tp.source.mass[i]));
  }
  for (std::size_t j = 0; j < P.cols(); ++j)
    r.maxColViolation = std::max(r.maxColViolation, std::fabs(cs[j] - tp.target.mass[j]));
  r.pass = finite && r.maxRowViolation <= tolerance && r.maxColViolation <= tolerance && r.minEntry >= -tolerance;
  return r;
}

void write_plan_csv(const TransportPlan& plan, const std::filesystem::path& path) {
  std::ostringstream os;
  os.precision(17);
  os << "row,col,mass\n";
  for (std::size_t i = 0; i < plan.plan.rows(); ++i)
    for (std::size_t j = 0; j < plan.plan.cols(); ++j)
      if (plan.plan(i, j) != 0.0) os << i << ',' << j << ',' << plan.plan(i, j) << '\n';
  write_file_atomic(path, os.str());
}

}  // namespace otbr
