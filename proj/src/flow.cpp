#include "aas/flow.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "aas/error.hpp"
#include "aas/fastmath.hpp"

namespace aas {

using Eigen::ArrayXd;
using Eigen::ArrayXXd;
using Eigen::Index;
using Eigen::MatrixXd;

namespace {

ArrayXXd log_sech2(const ArrayXXd& y) {
  const ArrayXXd a = y.abs();
  return 2.0 * std::numbers::ln2 - 2.0 * a - 2.0 * (-2.0 * a).exp().log1p();
}

double std_normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

MatrixXd selection(int dim, const std::vector<int>& idx) {
  MatrixXd s = MatrixXd::Zero(dim, static_cast<Index>(idx.size()));
  for (std::size_t j = 0; j < idx.size(); ++j) s(idx[j], static_cast<Index>(j)) = 1.0;
  return s;
}

}  // namespace

std::vector<FlowModel::Split> FlowModel::make_splits(int dim, int layers) {
  std::vector<Split> out;
  for (int l = 0; l < layers; ++l) {
    std::vector<int> a, b;
    if (dim == 2) {
      a = {0};
      b = {1};
    } else {
      const bool halves = (l / 2) % 2 == 0;
      for (int k = 0; k < dim; ++k) {
        const bool first = halves ? k < dim / 2 : k % 2 == 0;
        (first ? a : b).push_back(k);
      }
    }
    Split s;
    s.passive = (l % 2 == 0) ? a : b;
    s.active = (l % 2 == 0) ? b : a;
    s.sel_active = selection(dim, s.active);
    s.sel_passive = selection(dim, s.passive);
    out.push_back(std::move(s));
  }
  return out;
}

FlowModel::FlowModel(const FlowConfig& cfg, Rng& rng) : cfg_(cfg) {
  if (cfg.dim < 2) fail("flow: dimension must be at least 2");
  if (cfg.layers < 1 || cfg.hidden < 1 || cfg.depth < 1) fail("flow: layer counts must be positive");
  if (!(cfg.scale_bound > 0.0)) fail("flow: scale bound must be positive");
  splits_ = make_splits(cfg.dim, cfg.layers);
  for (const Split& s : splits_) {
    std::vector<int> widths{static_cast<int>(s.passive.size())};
    for (int h = 0; h < cfg.depth; ++h) widths.push_back(cfg.hidden);
    widths.push_back(3 * static_cast<int>(s.active.size()));
    nets_.push_back(Mlp::random(widths, rng, true));
  }
  if (cfg.mixture) {
    const MixturePrior& p = cfg.prior;
    const Index c = p.means.rows();
    if (c < 1 || p.means.cols() != cfg.dim || p.sigmas.size() != c || p.weights.size() != c)
      fail("flow: mixture prior shapes are inconsistent");
    if ((p.sigmas.array() <= 0.0).any() || (p.weights.array() < 0.0).any() ||
        std::abs(p.weights.sum() - 1.0) > 1e-9)
      fail("flow: mixture prior needs positive sigmas and weights summing to 1");
    for (Index j = 0; j < c; ++j) {
      double lt = 0.0;
      for (int k = 0; k < cfg.dim; ++k) {
        const double m = p.means(j, k), s = p.sigmas(j);
        lt += std::log(std_normal_cdf((1.0 - m) / s) - std_normal_cdf((-1.0 - m) / s));
      }
      log_trunc_.push_back(lt);
    }
  }
}

MatrixXd FlowModel::clamp_checked(const PointBatch& x, const char* who) const {
  check_batch(x, dim(), who);
  if (!x.allFinite() || x.cwiseAbs().maxCoeff() > 1.0)
    fail(std::string(who) + ": point outside the closed hypercube");
  const double lim = 1.0 - kBoundaryClamp;
  return x.cwiseMax(-lim).cwiseMin(lim);
}

FlowModel::Coupling FlowModel::coupling(std::size_t l, const MatrixXd& y) const {
  const Split& sp = splits_[l];
  const Index na = static_cast<Index>(sp.active.size());
  const ArrayXXd c = nets_[l].evaluate(fast_tanh((y * sp.sel_passive).array()).matrix());
  Coupling k;
  k.a = (cfg_.scale_bound * fast_tanh(c.leftCols(na) / cfg_.scale_bound)).exp() - 1.0;
  k.shift = c.middleCols(na, na);
  k.centre = c.rightCols(na);
  return k;
}

FlowModel::Mapped FlowModel::forward(const PointBatch& x_in) const {
  const MatrixXd x = clamp_checked(x_in, "flow forward");
  MatrixXd y = x.array().atanh().matrix();
  ArrayXd logdet = -(-x.array().square()).log1p().rowwise().sum();
  for (std::size_t l = 0; l < splits_.size(); ++l) {
    const Split& sp = splits_[l];
    const Coupling k = coupling(l, y);
    const ArrayXXd ya = y * sp.sel_active;
    const ArrayXXd th = fast_tanh(ya - k.centre);
    logdet += (1.0 + k.a * (1.0 - th.square())).log().rowwise().sum();
    const MatrixXd out = (ya + k.shift + k.a * th).matrix();
    y = y * sp.sel_passive * sp.sel_passive.transpose() + out * sp.sel_active.transpose();
  }
  logdet += log_sech2(y.array()).rowwise().sum();
  return {fast_tanh(y.array()).matrix(), logdet};
}

PointBatch FlowModel::inverse(const PointBatch& z_in) const {
  const MatrixXd z = clamp_checked(z_in, "flow inverse");
  MatrixXd y = z.array().atanh().matrix();
  for (std::size_t l = splits_.size(); l-- > 0;) {
    const Split& sp = splits_[l];
    const Coupling k = coupling(l, y);
    const ArrayXXd target = y * sp.sel_active;
    // g(v) = v + shift + a tanh(v - centre) is increasing with slope between
    // 1 and 1 + a, so v lies within |a| of target - shift. Safeguarded Newton.
    ArrayXXd v(target.rows(), target.cols());
    for (Index j = 0; j < target.cols(); ++j)
      for (Index i = 0; i < target.rows(); ++i) {
        const double a = k.a(i, j), c = k.centre(i, j), goal = target(i, j) - k.shift(i, j);
        double lo = goal - std::abs(a), hi = goal + std::abs(a), w = goal;
        for (int it = 0; it < 100; ++it) {
          const double th = std::tanh(w - c);
          const double f = w + a * th - goal;
          if (f > 0.0) hi = w; else lo = w;
          double next = w - f / (1.0 + a * (1.0 - th * th));
          if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
          if (std::abs(next - w) <= 1e-14 * (1.0 + std::abs(w))) {
            w = next;
            break;
          }
          w = next;
        }
        v(i, j) = w;
      }
    y = y * sp.sel_passive * sp.sel_passive.transpose() + v.matrix() * sp.sel_active.transpose();
  }
  return fast_tanh(y.array()).matrix();
}

ArrayXd FlowModel::prior_log_density(const MatrixXd& z) const {
  const Index n = z.rows();
  if (!cfg_.mixture) return ArrayXd::Constant(n, -cfg_.dim * std::numbers::ln2);
  const MixturePrior& p = cfg_.prior;
  const Index c = p.means.rows();
  ArrayXXd q(n, c);
  for (Index j = 0; j < c; ++j) {
    const double s = p.sigmas(j);
    const double k = std::log(p.weights(j)) - cfg_.dim * std::log(s * std::sqrt(2.0 * std::numbers::pi)) - log_trunc_[j];
    q.col(j) = -(z.rowwise() - p.means.row(j)).array().square().rowwise().sum() / (2.0 * s * s) + k;
  }
  const ArrayXd m = q.rowwise().maxCoeff();
  return m + (q.colwise() - m).exp().rowwise().sum().log();
}

MatrixXd FlowModel::prior_sample(Index n, Rng& rng) const {
  MatrixXd z(n, cfg_.dim);
  const double lim = 1.0 - kBoundaryClamp;
  if (!cfg_.mixture) {
    for (Index i = 0; i < n; ++i)
      for (int k = 0; k < cfg_.dim; ++k) z(i, k) = rng.uniform(-1.0, 1.0);
    return z.cwiseMax(-lim).cwiseMin(lim);
  }
  const MixturePrior& p = cfg_.prior;
  for (Index i = 0; i < n; ++i) {
    const double u = rng.uniform();
    Index j = 0;
    double acc = p.weights(0);
    while (u >= acc && j + 1 < p.weights.size()) acc += p.weights(++j);
    for (int k = 0; k < cfg_.dim; ++k) {
      double v;
      do v = p.means(j, k) + p.sigmas(j) * rng.normal();
      while (v <= -1.0 || v >= 1.0);
      z(i, k) = v;
    }
  }
  return z.cwiseMax(-lim).cwiseMin(lim);
}

ArrayXd FlowModel::log_density_values(const PointBatch& x) const {
  const Mapped m = forward(x);
  return prior_log_density(m.z) + m.logdet;
}

PointBatch FlowModel::sample(Index n, Rng& rng) const {
  if (n < 1) fail("flow sample: need at least one point");
  return inverse(prior_sample(n, rng));
}

std::vector<diff::Var> FlowModel::bind(diff::Tape& tape) const {
  std::vector<diff::Var> out;
  for (const Mlp& net : nets_) {
    auto p = net.bind(tape);
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

JetVar FlowModel::prior_log_density_jet(const JetVar& z) const {
  const Index n = z.v.rows();
  if (!cfg_.mixture) {
    diff::Tape& t = *z.v.tape();
    JetVar r{t.constant(MatrixXd::Constant(n, 1, -cfg_.dim * std::numbers::ln2)), {}};
    for (int k = 0; k < z.tangents(); ++k) r.d.push_back(t.constant(MatrixXd::Zero(n, 1)));
    return r;
  }
  const MixturePrior& p = cfg_.prior;
  const Index c = p.means.rows();
  // shift by the current log density; any constant shift is exact for logsumexp
  const ArrayXd m = prior_log_density(z.v.value());
  JetVar total;
  for (Index j = 0; j < c; ++j) {
    const double s = p.sigmas(j);
    const double k = std::log(p.weights(j)) - cfg_.dim * std::log(s * std::sqrt(2.0 * std::numbers::pi)) - log_trunc_[j];
    JetVar diffs = jet::add_const(z, -p.means.row(j).replicate(n, 1));
    JetVar q = jet::scale(jet::sum_cols(jet::square(diffs)), -1.0 / (2.0 * s * s));
    JetVar e = jet::exp(jet::add_const(q, (k - m).matrix()));
    total = (j == 0) ? e : jet::add(total, e);
  }
  return jet::add_const(jet::log(total), m.matrix());
}

LogDensityJet FlowModel::log_density_jet(std::span<const diff::Var> params, const PointBatch& x_in) const {
  if (params.size() != 2 * static_cast<std::size_t>(nets_[0].layers()) * nets_.size())
    fail("flow: wrong parameter count");
  const MatrixXd x = clamp_checked(x_in, "flow density");
  const Index n = x.rows();
  diff::Tape& tape = *params[0].tape();
  JetVar xin = jet::seed(tape, x, true);
  JetVar y = jet::atanh(xin);
  JetVar logdet = jet::scale(jet::sum_cols(jet::log1m_sq(xin)), -1.0);
  std::size_t off = 0;
  for (std::size_t l = 0; l < splits_.size(); ++l) {
    const Split& sp = splits_[l];
    const Mlp& net = nets_[l];
    const Index na = static_cast<Index>(sp.active.size());
    const std::size_t np = 2 * static_cast<std::size_t>(net.layers());
    JetVar yp = jet::matmul_const(y, sp.sel_passive);
    const StackLayout layout{n, dim(), false};
    diff::Var out = net.forward_stacked(params.subspan(off, np), jet::stack(jet::tanh(yp)), layout);
    off += np;
    JetVar c = jet::unstack(out, n, dim());
    JetVar s = jet::scale(jet::tanh(jet::scale(jet::slice_cols(c, 0, na), 1.0 / cfg_.scale_bound)), cfg_.scale_bound);
    JetVar a = jet::add_scalar(jet::exp(s), -1.0);
    JetVar ya = jet::matmul_const(y, sp.sel_active);
    JetVar th = jet::tanh(jet::sub(ya, jet::slice_cols(c, 2 * na, na)));
    JetVar slope = jet::add_scalar(jet::mul(a, jet::add_scalar(jet::scale(jet::square(th), -1.0), 1.0)), 1.0);
    logdet = jet::add(logdet, jet::sum_cols(jet::log(slope)));
    ya = jet::add(jet::add(ya, jet::slice_cols(c, na, na)), jet::mul(a, th));
    y = jet::add(jet::matmul_const(yp, sp.sel_passive.transpose()), jet::matmul_const(ya, sp.sel_active.transpose()));
  }
  logdet = jet::add(logdet, jet::sum_cols(jet::log_sech2(y)));
  JetVar logp = jet::add(prior_log_density_jet(jet::tanh(y)), logdet);
  return {logp.v, logp.d};
}

DensityEval FlowModel::log_density(const PointBatch& x) const {
  diff::Tape tape;
  std::vector<diff::Var> p;
  for (const MatrixXd* m : parameters()) p.push_back(tape.constant(*m));
  LogDensityJet j = log_density_jet(p, x);
  DensityEval r;
  r.log_density = j.log_p.value().col(0).array();
  r.density = r.log_density.exp();
  r.grad.resize(x.rows(), dim());
  for (int k = 0; k < dim(); ++k) r.grad.col(k) = r.density * j.grad_log_p[k].value().col(0).array();
  return r;
}

std::vector<MatrixXd*> FlowModel::parameters() {
  std::vector<MatrixXd*> out;
  for (Mlp& net : nets_) {
    auto p = net.parameters();
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

std::vector<const MatrixXd*> FlowModel::parameters() const {
  std::vector<const MatrixXd*> out;
  for (const Mlp& net : nets_) {
    auto p = net.parameters();
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

std::size_t FlowModel::parameter_count() const {
  std::size_t c = 0;
  for (const Mlp& net : nets_) c += net.parameter_count();
  return c;
}

}  // namespace aas
