#include "occp/qp.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace occp {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kEps = std::numeric_limits<double>::epsilon();

// Working factorisation: the first q columns of J span the normals of the
// active rows, R (q x q, upper triangular) relates them to those normals.
struct Factor {
  Eigen::MatrixXd J;
  Eigen::MatrixXd R;
  int q = 0;
  double r_norm = 1.0;

  // z: primal step direction, r: change of the active multipliers.
  void directions(const Eigen::VectorXd& d, Eigen::VectorXd& z, Eigen::VectorXd& r) const {
    const int n = static_cast<int>(J.rows());
    z = J.rightCols(n - q) * d.tail(n - q);
    r = R.topLeftCorner(q, q).triangularView<Eigen::Upper>().solve(d.head(q));
  }

  // Appends a row whose normal maps to d = J' n. Returns false when the row
  // is linearly dependent on the active set.
  bool add(Eigen::VectorXd d) {
    const int n = static_cast<int>(J.rows());
    for (int j = n - 1; j > q; --j) {
      double cc = d(j - 1), ss = d(j);
      const double h = std::hypot(cc, ss);
      if (h == 0.0) continue;
      d(j) = 0.0;
      ss /= h;
      cc /= h;
      if (cc < 0.0) {
        cc = -cc;
        ss = -ss;
        d(j - 1) = -h;
      } else {
        d(j - 1) = h;
      }
      const double xny = ss / (1.0 + cc);
      for (int k = 0; k < n; ++k) {
        const double t1 = J(k, j - 1), t2 = J(k, j);
        J(k, j - 1) = t1 * cc + t2 * ss;
        J(k, j) = xny * (t1 + J(k, j - 1)) - t2;
      }
    }
    ++q;
    R.col(q - 1).head(q) = d.head(q);
    if (std::abs(d(q - 1)) <= kEps * r_norm) return false;
    r_norm = std::max(r_norm, std::abs(d(q - 1)));
    return true;
  }

  // Removes active slot `slot`, shifting the later slots (and the pending
  // candidate stored at index q) down by one.
  void remove(int slot, std::vector<int>& A, Eigen::VectorXd& u) {
    const int n = static_cast<int>(J.rows());
    for (int i = slot; i < q - 1; ++i) {
      A[i] = A[i + 1];
      u(i) = u(i + 1);
      R.col(i) = R.col(i + 1);
    }
    A[q - 1] = A[q];
    u(q - 1) = u(q);
    A[q] = -1;
    u(q) = 0.0;
    R.col(q - 1).head(q).setZero();
    --q;
    for (int j = slot; j < q; ++j) {
      double cc = R(j, j), ss = R(j + 1, j);
      const double h = std::hypot(cc, ss);
      if (h == 0.0) continue;
      cc /= h;
      ss /= h;
      R(j + 1, j) = 0.0;
      if (cc < 0.0) {
        R(j, j) = -h;
        cc = -cc;
        ss = -ss;
      } else {
        R(j, j) = h;
      }
      const double xny = ss / (1.0 + cc);
      for (int k = j + 1; k < q; ++k) {
        const double t1 = R(j, k), t2 = R(j + 1, k);
        R(j, k) = t1 * cc + t2 * ss;
        R(j + 1, k) = xny * (t1 + R(j, k)) - t2;
      }
      for (int k = 0; k < n; ++k) {
        const double t1 = J(k, j), t2 = J(k, j + 1);
        J(k, j) = t1 * cc + t2 * ss;
        J(k, j + 1) = xny * (J(k, j) + t1) - t2;
      }
    }
  }
};

}  // namespace

DenseQp::DenseQp(const Eigen::MatrixXd& H) : H_(H), llt_(H) {
  if (H.rows() != H.cols() || llt_.info() != Eigen::Success)
    throw std::invalid_argument("DenseQp: H must be symmetric positive definite");
  const Eigen::Index n = H.rows();
  J0_ = llt_.matrixU().solve(Eigen::MatrixXd::Identity(n, n));
  c1_ = H.trace();
  c2_ = J0_.trace();
}

QpResult DenseQp::solve(const Eigen::VectorXd& b, const Eigen::MatrixXd& Aeq,
                        const Eigen::VectorXd& beq, const Eigen::MatrixXd& Ain,
                        const Eigen::VectorXd& bin) const {
  const int n = size();
  const int me = static_cast<int>(Aeq.rows()), mi = static_cast<int>(Ain.rows());
  if (b.size() != n || (me > 0 && Aeq.cols() != n) || beq.size() != me ||
      (mi > 0 && Ain.cols() != n) || bin.size() != mi)
    throw std::invalid_argument("DenseQp::solve: dimension mismatch");

  QpResult res;
  res.multipliers = Eigen::VectorXd::Zero(mi);
  Factor F{J0_, Eigen::MatrixXd::Zero(n, n), 0, 1.0};
  Eigen::VectorXd x = llt_.solve(b);
  Eigen::VectorXd u = Eigen::VectorXd::Zero(n + 1);
  std::vector<int> A(n + 1, -1);  // row ids; equality rows are stored as -(i + 2)
  Eigen::VectorXd z, r;

  for (int i = 0; i < me; ++i) {
    const Eigen::VectorXd np = Aeq.row(i).transpose();
    const Eigen::VectorXd d = F.J.transpose() * np;
    F.directions(d, z, r);
    double t = 0.0;
    if (z.squaredNorm() > kEps) t = (beq(i) - np.dot(x)) / z.dot(np);
    x += t * z;
    u(F.q) = t;
    u.head(F.q) -= t * r;
    A[F.q] = -(i + 2);
    if (!F.add(d)) throw std::invalid_argument("DenseQp::solve: dependent equality rows");
  }

  // Inequality rows in the form s_i(x) = bin_i - Ain_i x >= 0.
  auto slack = [&](int i) { return bin(i) - Ain.row(i).dot(x); };
  std::vector<char> in_set(mi, 0), excluded(mi, 0);
  const double tol = std::max(1.0, static_cast<double>(mi)) * kEps * c1_ * c2_ * 100.0;
  const int budget = 10 * (n + mi) + 50;

  for (int iter = 0; iter < budget; ++iter) {
    res.iterations = iter + 1;
    int p = -1;
    double worst = -tol;
    for (int i = 0; i < mi; ++i) {
      if (in_set[i] || excluded[i]) continue;
      const double s = slack(i);
      if (s < worst) {
        worst = s;
        p = i;
      }
    }
    if (p < 0) {
      for (int k = me; k < F.q; ++k) res.multipliers(A[k]) = u(k);
      for (int k = me; k < F.q; ++k) res.active.push_back(A[k]);
      res.x = x;
      return res;
    }

    const Eigen::VectorXd x_old = x, u_old = u;
    const std::vector<int> A_old = A;
    const Factor F_old = F;
    const Eigen::VectorXd np = -Ain.row(p).transpose();
    u(F.q) = 0.0;
    A[F.q] = p;

    bool added = false;
    while (!added) {
      const Eigen::VectorXd d = F.J.transpose() * np;
      F.directions(d, z, r);
      double t1 = kInf;
      int drop = -1;
      for (int k = me; k < F.q; ++k)
        if (r(k) > 0.0 && u(k) / r(k) < t1) {
          t1 = u(k) / r(k);
          drop = k;
        }
      const double zn = z.dot(np);
      const double t2 = std::abs(zn) > kEps ? -slack(p) / zn : kInf;
      const double t = std::min(t1, t2);
      if (!std::isfinite(t)) {
        res.feasible = false;
        res.x = x;
        return res;
      }
      if (!std::isfinite(t2)) {
        // Only the multipliers move; drop the blocking row and retry.
        u.head(F.q) -= t * r;
        u(F.q) += t;
        in_set[A[drop]] = 0;
        F.remove(drop, A, u);
        continue;
      }
      x += t * z;
      u.head(F.q) -= t * r;
      u(F.q) += t;
      if (t == t2) {
        if (!F.add(d)) {
          // Degenerate row: restore and never pick it again in this solve.
          x = x_old;
          u = u_old;
          A = A_old;
          F = F_old;
          excluded[p] = 1;
          break;
        }
        in_set[p] = 1;
        added = true;
      } else {
        in_set[A[drop]] = 0;
        F.remove(drop, A, u);
      }
    }
  }
  res.feasible = false;
  res.x = x;
  return res;
}

}  // namespace occp
