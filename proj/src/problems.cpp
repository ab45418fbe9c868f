#include "aas/problems.hpp"

#include <cmath>

#include "aas/error.hpp"

namespace aas {

using Eigen::ArrayXd;
using Eigen::ArrayXXd;
using Eigen::Index;
using Eigen::MatrixXd;

ArrayXXd Problem::exact_solution(const PointBatch& x) const {
  check_batch(x, dim(), "exact_solution");
  return exact().evaluate(x);
}

ArrayXXd Problem::source(const PointBatch& x) const {
  check_batch(x, dim(), "source");
  return apply_operator(exact().derivatives(x, 2), x);
}

ArrayXXd Problem::residual(const Field& u, const PointBatch& x) const {
  check_batch(x, dim(), "residual");
  if (u.input_dim() != dim() || u.output_dim() != outputs()) fail("residual: model shape does not fit " + name());
  const ArrayXXd r = apply_operator(u.derivatives(x, 2), x) - source(x);
  if (!r.allFinite()) training_abort("non-finite residual");
  return r;
}

ArrayXd Problem::residual_sq(const Field& u, const PointBatch& x) const {
  return residual(u, x).square().rowwise().sum();
}

bool Problem::on_boundary(const Eigen::RowVectorXd& p) {
  return std::abs(p.cwiseAbs().maxCoeff() - 1.0) <= 1e-12;
}

ArrayXXd Problem::boundary_residual(const Field& u, const PointBatch& xb) const {
  check_batch(xb, dim(), "boundary_residual");
  for (Index i = 0; i < xb.rows(); ++i)
    if (!on_boundary(xb.row(i))) fail("boundary_residual: point " + std::to_string(i) + " is not on the boundary");
  return u.evaluate(xb) - exact().evaluate(xb);
}

diff::Var Problem::residual_tape(const Mlp& net, std::span<const diff::Var> params, const PointBatch& x,
                                 const ArrayXXd& s) const {
  check_batch(x, dim(), "residual_tape");
  return diff::add_const(apply_operator(net.jets_on_tape(params, x, 2), x), -s.matrix());
}

diff::Var Problem::boundary_tape(const Mlp& net, std::span<const diff::Var> params, const PointBatch& xb,
                                 const ArrayXXd& g) const {
  check_batch(xb, dim(), "boundary_tape");
  diff::Tape& tape = *params[0].tape();
  const diff::Var u = net.forward_stacked(params, tape.constant(xb), StackLayout{xb.rows(), 0, false});
  return diff::add_const(u, -g.matrix());
}

PointBatch Problem::sample_domain(Index n, Rng& rng) const {
  if (n < 1) fail("sample_domain: need at least one point");
  PointBatch x(n, dim());
  for (Index i = 0; i < n; ++i)
    for (int k = 0; k < dim(); ++k) x(i, k) = rng.uniform(-1.0, 1.0);
  return x;
}

PointBatch Problem::sample_boundary(Index n, Rng& rng) const {
  if (n < 1) fail("sample_boundary: need at least one point");
  PointBatch x(n, dim());
  for (Index i = 0; i < n; ++i) {
    const auto face = static_cast<int>(rng.below(2 * static_cast<std::uint64_t>(dim())));
    for (int k = 0; k < dim(); ++k) x(i, k) = rng.uniform(-1.0, 1.0);
    x(i, face / 2) = (face % 2 == 0) ? -1.0 : 1.0;
  }
  return x;
}

namespace {

using alg::cmul;
using alg::col;

template <class Derived>
class ProblemBase : public Problem {
 public:
  ArrayXXd apply_operator(const DiffResult& u, const PointBatch& x) const override {
    return Derived::op(u, x);
  }
  diff::Var apply_operator(const Jets<diff::Var>& u, const PointBatch& x) const override {
    return Derived::op(u, x);
  }
  const Field& exact() const override { return exact_; }

 protected:
  explicit ProblemBase(ClosureField exact) : exact_(std::move(exact)) {}

 private:
  ClosureField exact_;
};

template <class T>
T peak(const T& a, const T& b, double ca, double cb) {
  using std::exp;
  const T da = a - ca, db = b - cb;
  return exp(-1000.0 * (da * da + db * db));
}

// -lap u = s
class OnePeak final : public ProblemBase<OnePeak> {
 public:
  OnePeak()
      : ProblemBase(ClosureField::from(2, 1, [](const auto* x, auto* out) { out[0] = peak(x[0], x[1], 0.5, 0.5); })) {}
  std::string name() const override { return "one_peak"; }
  int dim() const override { return 2; }
  int outputs() const override { return 1; }
  int equations() const override { return 1; }
  ErrorMetric metric() const override { return ErrorMetric::GridMse; }

  template <class M>
  static M op(const Jets<M>& u, const PointBatch&) {
    return -(u.hess[0] + u.hess[1]);
  }
};

// -div(u grad v) + lap u = s with v = |x|^2, i.e. -2 x.grad u - 4u + lap u
class TwoPeak final : public ProblemBase<TwoPeak> {
 public:
  TwoPeak()
      : ProblemBase(ClosureField::from(2, 1, [](const auto* x, auto* out) {
          out[0] = peak(x[0], x[1], 0.5, 0.5) + peak(x[0], x[1], -0.5, -0.5);
        })) {}
  std::string name() const override { return "two_peak"; }
  int dim() const override { return 2; }
  int outputs() const override { return 1; }
  int equations() const override { return 1; }
  ErrorMetric metric() const override { return ErrorMetric::GridMse; }

  template <class M>
  static M op(const Jets<M>& u, const PointBatch& x) {
    const ArrayXd x0 = x.col(0).array(), x1 = x.col(1).array();
    const M transport = (cmul(u.grad[0], x0) + cmul(u.grad[1], x1)) * -2.0;
    return transport + u.value * -4.0 + (u.hess[0] + u.hess[1]);
  }
};

// -lap u + u - u^3 = s in ten dimensions
class Nonlinear10d final : public ProblemBase<Nonlinear10d> {
 public:
  Nonlinear10d()
      : ProblemBase(ClosureField::from(10, 1, [](const auto* x, auto* out) {
          using std::exp;
          auto r2 = x[0] * x[0];
          for (int k = 1; k < 10; ++k) r2 = r2 + x[k] * x[k];
          out[0] = exp(-10.0 * r2);
        })) {}
  std::string name() const override { return "nl10d"; }
  int dim() const override { return 10; }
  int outputs() const override { return 1; }
  int equations() const override { return 1; }
  ErrorMetric metric() const override { return ErrorMetric::RelativeL2; }

  template <class M>
  static M op(const Jets<M>& u, const PointBatch&) {
    M lap = u.hess[0];
    for (std::size_t k = 1; k < u.hess.size(); ++k) lap = lap + u.hess[k];
    return -lap + u.value - u.value * u.value * u.value;
  }
};

// Parametric 2D Burgers system over (t, x, y, nu), posed on the computational cube.
// u_t + u u_x + v u_y - nu (u_xx + u_yy) = 0, same for v.
class Burgers4d final : public ProblemBase<Burgers4d> {
 public:
  Burgers4d()
      : ProblemBase(ClosureField::from(4, 2, [](const auto* c, auto* out) {
          using std::exp;
          const auto t = (c[0] + 1.0) * 0.5, xx = (c[1] + 1.0) * 0.5, yy = (c[2] + 1.0) * 0.5;
          const auto nu = BurgersMap::nu_min + (c[3] + 1.0) * (0.5 * (1.0 - BurgersMap::nu_min));
          const auto w = 1.0 / ((1.0 + exp((xx * -4.0 + yy * 4.0 - t) / (nu * 32.0))) * 4.0);
          out[0] = 0.75 - w;
          out[1] = 0.75 + w;
        })) {}
  std::string name() const override { return "burgers4d"; }
  int dim() const override { return 4; }
  int outputs() const override { return 2; }
  int equations() const override { return 2; }
  ErrorMetric metric() const override { return ErrorMetric::RelativeL2; }

  template <class M>
  static M op(const Jets<M>& j, const PointBatch& x) {
    ArrayXd nu(x.rows());
    for (Index i = 0; i < x.rows(); ++i) nu(i) = BurgersMap::nu(x(i, 3));
    // d/dt = 2 d/dc0, d/dx = 2 d/dc1, d2/dx2 = 4 d2/dc1^2
    const M u = col(j.value, 0), v = col(j.value, 1);
    auto eq = [&](Index o) -> M {
      const M adv = col(j.grad[0], o) + u * col(j.grad[1], o) + v * col(j.grad[2], o);
      return adv * 2.0 - cmul(col(j.hess[1], o) + col(j.hess[2], o), nu) * 4.0;
    };
    return alg::hcat(eq(0), eq(1));
  }
};

}  // namespace

std::unique_ptr<Problem> make_problem(const std::string& name) {
  if (name == "one_peak") return std::make_unique<OnePeak>();
  if (name == "two_peak") return std::make_unique<TwoPeak>();
  if (name == "nl10d") return std::make_unique<Nonlinear10d>();
  if (name == "burgers4d") return std::make_unique<Burgers4d>();
  config_error("unknown problem '" + name + "'");
}

std::vector<std::string> problem_names() { return {"burgers4d", "nl10d", "one_peak", "two_peak"}; }

}  // namespace aas
