#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "aas/flow.hpp"
#include "aas/network.hpp"
#include "aas/problems.hpp"
#include "aas/rng.hpp"

namespace aas {

// ---- Adam ----------------------------------------------------------------------

struct AdamState {
  std::vector<Eigen::MatrixXd> m, v;
  long step = 0;
};

inline constexpr double kAdamBeta1 = 0.9;
inline constexpr double kAdamBeta2 = 0.999;
inline constexpr double kAdamEps = 1e-8;

AdamState adam_init(std::span<const Eigen::MatrixXd* const> params);
/// One bias-corrected descent step on `params`. Fails on a non-finite gradient.
void adam_step(std::span<Eigen::MatrixXd* const> params, std::span<const Eigen::MatrixXd> grads, AdamState& state,
               double lr);

// ---- configuration ---------------------------------------------------------------

enum class Method { Aas, Pinn, Rar };
enum class Regeneration { Replace, Augment };

std::string method_name(Method m);
Method parse_method(const std::string& s);

struct TrainConfig {
  std::string problem;
  int stages = 100;        // M
  int min_steps = 100;     // j, theta updates per stage
  int max_steps = 100;     // alpha updates per stage
  int batch = 500;         // m
  int boundary_batch = 0;  // 0: m * N_b / N_r
  int n_interior = 20000;  // N_r
  int n_boundary = 4000;   // N_b
  double lr_theta = 1e-3;
  double lr_alpha = 1e-4;
  double lr_theta_decay = 1.0;  // theta rate factor per stage
  double gamma = 1.0;
  double beta = 5.0;
  double beta_decay = 1.0;  // factor per period
  int beta_period = 100;
  Regeneration regeneration = Regeneration::Replace;
  bool resample_boundary = false;
  std::uint64_t seed = 0;

  int net_depth = 4;
  int net_width = 64;

  int flow_layers = 6;
  int flow_hidden = 24;
  int flow_depth = 2;
  double flow_scale_bound = 2.0;
  bool flow_mixture_prior = false;

  int rar_add = 0;  // points appended per stage; 0: N_r / 10
  int rar_pool_factor = 10;

  int eval_points = 10000;  // Var(r^2), relative L2 and Wasserstein reference sets
  int w_draws = 10000;
  int w_projections = 64;
  double divergence_limit = 1e6;

  int boundary_batch_size() const;
  int rar_add_size() const;
};

/// Constraint check; throws a config error. Rates may be zero here (frozen runs).
void validate(const TrainConfig& cfg);

/// beta_0 * factor^floor(k / period).
double beta_at(const TrainConfig& cfg, int stage);

// ---- state and history ---------------------------------------------------------------

struct StageRecord {
  int stage = 0;
  double min_loss = 0.0;       // mean total min-step loss over the stage
  double boundary_loss = 0.0;  // mean boundary term
  double max_objective = 0.0;  // mean max-step objective, 0 when no max step ran
  double error = 0.0;
  double var_r2 = 0.0;
  double sliced_w = 0.0;
  double beta = 0.0;
  double wallclock_s = 0.0;
  Eigen::Index train_size = 0;
  Eigen::Index rejected = 0;  // max-step points with an underflowed reference density
  bool flow_frozen = false;
};

struct TrainState {
  Method method = Method::Aas;
  int stage = 0;  // next stage to run
  PointBatch interior, boundary;
  Mlp net;
  FlowModel flow;
  AdamState adam_theta, adam_alpha;
  double lr_theta = 0.0;
  int divergences = 0;
  std::map<std::string, Rng> rngs;  // labelled streams
  std::vector<StageRecord> history;

  Rng& rng(const std::string& label);
};

struct TrainHooks {
  /// Called once the initial state is built, before the first stage.
  std::function<void(TrainState&)> prepare;
  /// After every stage; `trained_on` is the interior set used in that stage.
  std::function<void(const TrainState&, const StageRecord&, const PointBatch& trained_on)> stage_done;
  /// Before an abort propagates.
  std::function<void(const TrainState&, const std::string&)> aborted;
};

TrainState train(const TrainConfig& cfg, Method method, const TrainHooks& hooks = {});
/// Same, on a caller-supplied problem; cfg.problem is then only a label.
TrainState train(const TrainConfig& cfg, Method method, const Problem& problem, const TrainHooks& hooks = {});
TrainState train_aas(const TrainConfig& cfg, const TrainHooks& hooks = {});
TrainState train_uniform_pinn(const TrainConfig& cfg, const TrainHooks& hooks = {});
TrainState train_rar(const TrainConfig& cfg, const TrainHooks& hooks = {});

/// replace: n fresh flow samples; augment: existing followed by n fresh samples.
PointBatch regenerate_training_set(const FlowModel& flow, Regeneration mode, Eigen::Index n, Rng& rng,
                                   const PointBatch& existing);

/// Indices of the `count` largest |r|, ties broken by the lower index.
std::vector<Eigen::Index> top_residuals(const Eigen::ArrayXd& abs_r, Eigen::Index count);

/// Draws batches without replacement, reshuffling when exhausted.
class BatchSampler {
 public:
  BatchSampler(Eigen::Index n, Rng& rng);
  std::vector<Eigen::Index> next(Eigen::Index m);

 private:
  void reshuffle();
  std::vector<Eigen::Index> perm_;
  std::size_t pos_ = 0;
  Rng* rng_;
};

PointBatch take_rows(const PointBatch& x, std::span<const Eigen::Index> idx);
Eigen::ArrayXXd take_rows(const Eigen::ArrayXXd& x, std::span<const Eigen::Index> idx);

/// FlowConfig implied by the run configuration for a D-dimensional problem.
FlowConfig flow_config(const TrainConfig& cfg, int dim);

}  // namespace aas
