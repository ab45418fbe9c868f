#include "aas/engine.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <optional>

#include "aas/diagnostics.hpp"
#include "aas/error.hpp"
#include "aas/objectives.hpp"

namespace aas {

using Eigen::ArrayXd;
using Eigen::ArrayXXd;
using Eigen::Index;
using Eigen::MatrixXd;

AdamState adam_init(std::span<const MatrixXd* const> params) {
  AdamState s;
  for (const MatrixXd* p : params) {
    s.m.push_back(MatrixXd::Zero(p->rows(), p->cols()));
    s.v.push_back(MatrixXd::Zero(p->rows(), p->cols()));
  }
  return s;
}

void adam_step(std::span<MatrixXd* const> params, std::span<const MatrixXd> grads, AdamState& s, double lr) {
  if (params.size() != grads.size() || params.size() != s.m.size()) fail("adam_step: parameter count mismatch");
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (grads[k].rows() != params[k]->rows() || grads[k].cols() != params[k]->cols())
      fail("adam_step: gradient shape mismatch");
    if (!grads[k].allFinite()) training_abort("adam_step: non-finite gradient");
  }
  ++s.step;
  const double c1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(s.step));
  const double c2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(s.step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    s.m[k] = kAdamBeta1 * s.m[k] + (1.0 - kAdamBeta1) * grads[k];
    s.v[k] = kAdamBeta2 * s.v[k] + (1.0 - kAdamBeta2) * grads[k].cwiseAbs2();
    params[k]->array() -= lr * (s.m[k].array() / c1) / ((s.v[k].array() / c2).sqrt() + kAdamEps);
  }
}

std::string method_name(Method m) {
  switch (m) {
    case Method::Aas: return "aas";
    case Method::Pinn: return "pinn";
    case Method::Rar: return "rar";
  }
  return "?";
}

Method parse_method(const std::string& s) {
  if (s == "aas") return Method::Aas;
  if (s == "pinn") return Method::Pinn;
  if (s == "rar") return Method::Rar;
  config_error("unknown method '" + s + "' (expected aas, pinn or rar)");
}

int TrainConfig::boundary_batch_size() const {
  if (boundary_batch > 0) return boundary_batch;
  const long b = static_cast<long>(batch) * n_boundary / n_interior;
  return static_cast<int>(std::max(1L, b));
}

int TrainConfig::rar_add_size() const { return rar_add > 0 ? rar_add : std::max(1, n_interior / 10); }

void validate(const TrainConfig& c) {
  if (c.problem.empty()) config_error("problem required");
  auto at_least = [](long v, long lo, const char* key) {
    if (v < lo) config_error(std::string(key) + " must be >= " + std::to_string(lo) + ", got " + std::to_string(v));
  };
  at_least(c.stages, 1, "engine.stages");
  at_least(c.min_steps, 1, "engine.min_steps");
  at_least(c.max_steps, 1, "engine.max_steps");
  at_least(c.batch, 1, "engine.m");
  at_least(c.boundary_batch, 0, "engine.boundary_batch");
  at_least(c.n_interior, 1, "engine.n_r");
  at_least(c.n_boundary, 1, "engine.n_b");
  at_least(c.beta_period, 1, "engine.beta_period");
  at_least(c.net_depth, 1, "net.depth");
  at_least(c.net_width, 1, "net.width");
  at_least(c.flow_layers, 1, "flow.layers");
  at_least(c.flow_hidden, 1, "flow.hidden");
  at_least(c.flow_depth, 1, "flow.depth");
  at_least(c.rar_add, 0, "rar.add");
  at_least(c.rar_pool_factor, 1, "rar.pool_factor");
  at_least(c.eval_points, 2, "eval.points");
  at_least(c.w_draws, 1, "eval.w_draws");
  at_least(c.w_projections, 1, "eval.w_projections");
  if (!(c.lr_theta >= 0.0) || !(c.lr_alpha >= 0.0)) config_error("learning rates must be nonnegative");
  if (!(c.lr_theta_decay > 0.0 && c.lr_theta_decay <= 1.0)) config_error("engine.lr_theta_decay must lie in (0, 1]");
  if (!(c.gamma > 0.0)) config_error("engine.gamma must be positive");
  if (!(c.beta >= 0.0)) config_error("engine.beta must be nonnegative");
  if (!(c.beta_decay > 0.0 && c.beta_decay <= 1.0)) config_error("engine.beta_decay must lie in (0, 1]");
  if (!(c.flow_scale_bound > 0.0)) config_error("flow.scale_bound must be positive");
  if (!(c.divergence_limit > 0.0)) config_error("engine.divergence_limit must be positive");
}

double beta_at(const TrainConfig& cfg, int stage) {
  return cfg.beta * std::pow(cfg.beta_decay, static_cast<double>(stage / cfg.beta_period));
}

Rng& TrainState::rng(const std::string& label) {
  auto it = rngs.find(label);
  if (it == rngs.end()) fail("no random stream labelled '" + label + "'");
  return it->second;
}

BatchSampler::BatchSampler(Index n, Rng& rng) : perm_(n), rng_(&rng) {
  if (n < 1) fail("BatchSampler: empty set");
  std::iota(perm_.begin(), perm_.end(), Index{0});
  reshuffle();
}

void BatchSampler::reshuffle() {
  for (std::size_t i = perm_.size() - 1; i > 0; --i) std::swap(perm_[i], perm_[rng_->below(i + 1)]);
  pos_ = 0;
}

std::vector<Index> BatchSampler::next(Index m) {
  std::vector<Index> out;
  out.reserve(m);
  while (static_cast<Index>(out.size()) < m) {
    if (pos_ == perm_.size()) reshuffle();
    out.push_back(perm_[pos_++]);
  }
  return out;
}

PointBatch take_rows(const PointBatch& x, std::span<const Index> idx) {
  PointBatch out(static_cast<Index>(idx.size()), x.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Index>(i)) = x.row(idx[i]);
  return out;
}

ArrayXXd take_rows(const ArrayXXd& x, std::span<const Index> idx) {
  ArrayXXd out(static_cast<Index>(idx.size()), x.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Index>(i)) = x.row(idx[i]);
  return out;
}

PointBatch regenerate_training_set(const FlowModel& flow, Regeneration mode, Index n, Rng& rng,
                                   const PointBatch& existing) {
  PointBatch fresh = flow.sample(n, rng);
  if (mode == Regeneration::Replace) return fresh;
  if (existing.rows() > 0 && existing.cols() != fresh.cols()) fail("regenerate: dimension mismatch");
  PointBatch out(existing.rows() + n, fresh.cols());
  out.topRows(existing.rows()) = existing;
  out.bottomRows(n) = fresh;
  return out;
}

std::vector<Index> top_residuals(const ArrayXd& abs_r, Index count) {
  std::vector<Index> idx(abs_r.size());
  std::iota(idx.begin(), idx.end(), Index{0});
  count = std::min<Index>(count, abs_r.size());
  std::partial_sort(idx.begin(), idx.begin() + count, idx.end(), [&](Index a, Index b) {
    return abs_r(a) > abs_r(b) || (abs_r(a) == abs_r(b) && a < b);
  });
  idx.resize(count);
  return idx;
}

FlowConfig flow_config(const TrainConfig& cfg, int dim) {
  FlowConfig f;
  f.dim = dim;
  f.layers = cfg.flow_layers;
  f.hidden = cfg.flow_hidden;
  f.depth = cfg.flow_depth;
  f.scale_bound = cfg.flow_scale_bound;
  f.mixture = cfg.flow_mixture_prior;
  if (f.mixture) {
    // two fixed components on the main diagonal
    f.prior.means = MatrixXd(2, dim);
    f.prior.means.row(0).setConstant(0.5);
    f.prior.means.row(1).setConstant(-0.5);
    f.prior.sigmas = Eigen::VectorXd::Constant(2, 0.5);
    f.prior.weights = Eigen::VectorXd::Constant(2, 0.5);
  }
  return f;
}

namespace {

constexpr Index kResidualChunk = 2048;
constexpr Index kInvertibilityProbe = 256;
constexpr double kInvertibilityTol = 1e-4;

const char* const kStreams[] = {"net-init",    "flow-init", "initial-set", "boundary-set", "min-batch",
                                "boundary-batch", "max-batch", "flow-sample", "rar-pool"};

ArrayXd residual_sq_chunked(const Mlp& net, const Problem& p, const PointBatch& x) {
  ArrayXd out(x.rows());
  for (Index s = 0; s < x.rows(); s += kResidualChunk) {
    const Index len = std::min(kResidualChunk, x.rows() - s);
    out.segment(s, len) = p.residual_sq(net, x.middleRows(s, len));
  }
  return out;
}

std::vector<MatrixXd> grads_of(diff::Tape& tape, std::span<const diff::Var> prm, double sign = 1.0) {
  std::vector<MatrixXd> g;
  g.reserve(prm.size());
  for (const diff::Var& v : prm) g.push_back(sign * tape.grad(v));
  return g;
}

struct Evaluation {
  PointBatch test;       // uniform points for Var(r^2) and relative L2
  PointBatch reference;  // uniform points standing in for the uniform measure
  std::uint64_t w_seed = 0;
};

class Trainer {
 public:
  Trainer(const TrainConfig& cfg, Method method, const Problem& problem, const TrainHooks& hooks)
      : cfg_(cfg), hooks_(hooks), problem_(&problem) {
    validate(cfg_);
    st_.method = method;
    for (const char* label : kStreams) st_.rngs.emplace(label, stream(cfg_.seed, label));
    const int D = problem_->dim();
    std::vector<int> widths{D};
    for (int l = 0; l < cfg_.net_depth; ++l) widths.push_back(cfg_.net_width);
    widths.push_back(problem_->outputs());
    st_.net = Mlp::random(widths, st_.rng("net-init"));
    st_.flow = FlowModel(flow_config(cfg_, D), st_.rng("flow-init"));
    st_.interior = problem_->sample_domain(cfg_.n_interior, st_.rng("initial-set"));
    st_.boundary = problem_->sample_boundary(cfg_.n_boundary, st_.rng("boundary-set"));
    st_.lr_theta = cfg_.lr_theta;
    st_.adam_theta = adam_init(const_net().parameters());
    st_.adam_alpha = adam_init(const_flow().parameters());

    Rng eval = stream(cfg_.seed, "eval-set");
    ev_.test = problem_->sample_domain(cfg_.eval_points, eval);
    Rng ref = stream(cfg_.seed, "wasserstein-reference");
    ev_.reference = problem_->sample_domain(cfg_.w_draws, ref);
    ev_.w_seed = derive_seed(cfg_.seed, "wasserstein");
    if (hooks_.prepare) hooks_.prepare(st_);
  }

  TrainState run() {
    const auto start = std::chrono::steady_clock::now();
    std::optional<double> first_loss;
    while (st_.stage < cfg_.stages) {
      TrainState snapshot = st_;
      const std::optional<double> first_before = first_loss;
      try {
        PointBatch used = st_.interior;
        StageRecord rec = run_stage(first_loss);
        rec.wallclock_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        st_.history.push_back(rec);
        ++st_.stage;
        if (hooks_.stage_done) hooks_.stage_done(st_, rec, used);
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::Training) throw;
        const bool loss_blowup = diverged_;
        diverged_ = false;
        if (!loss_blowup || st_.divergences >= 1) {
          if (hooks_.aborted) hooks_.aborted(st_, e.what());
          throw;
        }
        // First blow-up: restore the stage-start state with a halved rate.
        const int count = st_.divergences + 1;
        const double lr = st_.lr_theta * 0.5;
        st_ = std::move(snapshot);
        st_.divergences = count;
        st_.lr_theta = lr;
        first_loss = first_before;
      }
    }
    return st_;
  }

 private:
  const Mlp& const_net() const { return st_.net; }
  const FlowModel& const_flow() const { return st_.flow; }

  StageRecord run_stage(std::optional<double>& first_loss) {
    const int k = st_.stage;
    StageRecord rec;
    rec.stage = k;
    rec.train_size = st_.interior.rows();
    min_phase(rec, first_loss);
    if (st_.method == Method::Aas) {
      rec.beta = beta_at(cfg_, k);
      max_phase(rec);
      check_invertibility();
      st_.interior = regenerate_training_set(st_.flow, cfg_.regeneration, cfg_.n_interior, st_.rng("flow-sample"),
                                             st_.interior);
    } else if (st_.method == Method::Rar) {
      refine();
    }
    if (cfg_.resample_boundary) st_.boundary = problem_->sample_boundary(cfg_.n_boundary, st_.rng("boundary-set"));
    measure(rec);
    return rec;
  }

  void min_phase(StageRecord& rec, std::optional<double>& first_loss) {
    const ArrayXXd source = problem_->source(st_.interior);
    const ArrayXXd g = problem_->exact_solution(st_.boundary);
    BatchSampler interior(st_.interior.rows(), st_.rng("min-batch"));
    BatchSampler boundary(st_.boundary.rows(), st_.rng("boundary-batch"));
    double loss_sum = 0.0, boundary_sum = 0.0;
    const double lr = st_.lr_theta * std::pow(cfg_.lr_theta_decay, st_.stage);
    diverged_ = true;  // any training failure in here counts as a blow-up
    for (int step = 0; step < cfg_.min_steps; ++step) {
      const auto bi = interior.next(cfg_.batch);
      const auto bb = boundary.next(cfg_.boundary_batch_size());
      diff::Tape tape;
      const auto prm = st_.net.bind(tape);
      const MinTape m = min_loss_tape(st_.net, prm, *problem_, take_rows(st_.interior, bi), take_rows(source, bi),
                                      take_rows(st_.boundary, bb), take_rows(g, bb), cfg_.gamma);
      const double loss = m.parts.total;
      if (!first_loss && std::isfinite(loss)) first_loss = loss;
      const double limit = cfg_.divergence_limit * std::max(1.0, first_loss.value_or(1.0));
      if (!std::isfinite(loss) || loss > limit) {
        training_abort("min loss diverged at stage " + std::to_string(st_.stage) + " step " + std::to_string(step) +
                       " (loss " + std::to_string(loss) + ")");
      }
      tape.backward(m.loss);
      const auto grads = grads_of(tape, prm);
      adam_step(st_.net.parameters(), grads, st_.adam_theta, lr);
      loss_sum += loss;
      boundary_sum += m.parts.boundary;
    }
    diverged_ = false;
    rec.min_loss = loss_sum / cfg_.min_steps;
    rec.boundary_loss = boundary_sum / cfg_.min_steps;
  }

  void max_phase(StageRecord& rec) {
    // theta is frozen here, so r^2 on the set is fixed. The reference density
    // is the flow as it stood at the start of the stage.
    const ArrayXd r2 = residual_sq_chunked(st_.net, *problem_, st_.interior);
    if (r2.maxCoeff() < kDegenerateResidual) {
      rec.flow_frozen = true;
      return;
    }
    const ArrayXd ref = st_.flow.log_density_values(st_.interior).exp();
    BatchSampler sampler(st_.interior.rows(), st_.rng("max-batch"));
    double obj_sum = 0.0;
    for (int step = 0; step < cfg_.max_steps; ++step) {
      const auto bi = sampler.next(cfg_.batch);
      ArrayXd r2b(bi.size()), refb(bi.size());
      for (std::size_t i = 0; i < bi.size(); ++i) {
        r2b(i) = r2(bi[i]);
        refb(i) = ref(bi[i]);
      }
      diff::Tape tape;
      const auto prm = st_.flow.bind(tape);
      const MaxTape m = max_objective_tape(st_.flow, prm, take_rows(st_.interior, bi), r2b, refb, rec.beta);
      if (!std::isfinite(m.parts.total)) training_abort("max objective is not finite at stage " + std::to_string(st_.stage));
      tape.backward(m.objective);
      adam_step(st_.flow.parameters(), grads_of(tape, prm, -1.0), st_.adam_alpha, cfg_.lr_alpha);
      obj_sum += m.parts.total;
      rec.rejected += m.parts.rejected;
    }
    rec.max_objective = obj_sum / cfg_.max_steps;
  }

  void check_invertibility() {
    Rng probe(derive_seed(cfg_.seed, "invertibility-" + std::to_string(st_.stage)));
    const MatrixXd z = st_.flow.prior_sample(kInvertibilityProbe, probe);
    const PointBatch x = st_.flow.inverse(z);
    const double err = (st_.flow.forward(x).z - z).cwiseAbs().maxCoeff();
    if (!(err <= kInvertibilityTol))
      training_abort("flow lost invertibility at stage " + std::to_string(st_.stage) + " (round trip " +
                     std::to_string(err) + ")");
  }

  void refine() {
    const Index pool_n = static_cast<Index>(cfg_.rar_pool_factor) * cfg_.n_interior;
    const PointBatch pool = problem_->sample_domain(pool_n, st_.rng("rar-pool"));
    const ArrayXd abs_r = residual_sq_chunked(st_.net, *problem_, pool).sqrt();
    const auto pick = top_residuals(abs_r, cfg_.rar_add_size());
    PointBatch grown(st_.interior.rows() + static_cast<Index>(pick.size()), st_.interior.cols());
    grown.topRows(st_.interior.rows()) = st_.interior;
    grown.bottomRows(static_cast<Index>(pick.size())) = take_rows(pool, pick);
    st_.interior = std::move(grown);
  }

  void measure(StageRecord& rec) {
    rec.error = solution_error(st_.net, *problem_, ev_.test);
    const ArrayXd r2 = residual_sq_chunked(st_.net, *problem_, ev_.test);
    rec.var_r2 = sample_variance(r2);
    if (r2.maxCoeff() >= kDegenerateResidual) {
      rec.sliced_w = residual_wasserstein(residual_distribution(ev_.test, r2), ev_.reference, cfg_.w_draws,
                                          cfg_.w_projections, ev_.w_seed);
    }
  }

  TrainConfig cfg_;
  TrainHooks hooks_;
  const Problem* problem_;
  TrainState st_;
  Evaluation ev_;
  bool diverged_ = false;
};

}  // namespace

TrainState train(const TrainConfig& cfg, Method method, const Problem& problem, const TrainHooks& hooks) {
  return Trainer(cfg, method, problem, hooks).run();
}

TrainState train(const TrainConfig& cfg, Method method, const TrainHooks& hooks) {
  if (cfg.problem.empty()) config_error("problem required");
  const auto problem = make_problem(cfg.problem);
  return train(cfg, method, *problem, hooks);
}

TrainState train_aas(const TrainConfig& cfg, const TrainHooks& hooks) { return train(cfg, Method::Aas, hooks); }
TrainState train_uniform_pinn(const TrainConfig& cfg, const TrainHooks& hooks) {
  return train(cfg, Method::Pinn, hooks);
}
TrainState train_rar(const TrainConfig& cfg, const TrainHooks& hooks) { return train(cfg, Method::Rar, hooks); }

}  // namespace aas
