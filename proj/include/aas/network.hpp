#pragma once

#include <Eigen/Dense>

#include <functional>
#include <span>
#include <vector>

#include "aas/dual.hpp"
#include "aas/jets.hpp"
#include "aas/rng.hpp"
#include "aas/tape.hpp"

namespace aas {

/// Anything that can be evaluated and input-differentiated on a batch: the
/// solution network, or an analytic closure standing in for one.
class Field {
 public:
  virtual ~Field() = default;
  virtual int input_dim() const = 0;
  virtual int output_dim() const = 0;
  virtual Eigen::ArrayXXd evaluate(const PointBatch& x) const = 0;
  /// order 1: value and gradient; order 2: additionally the Hessian diagonal.
  virtual DiffResult derivatives(const PointBatch& x, int order) const = 0;
};

void check_order(int order);
void check_batch(const PointBatch& x, int dim, const char* who);

/// Row-block layout of a stacked jet: [value; d_1..d_K; h_1..h_K], each block n rows.
struct StackLayout {
  Eigen::Index n = 0;
  int tangents = 0;
  bool hessian = false;

  Eigen::Index blocks() const { return 1 + tangents * (hessian ? 2 : 1); }
};

/// Fully connected network: tanh on hidden layers, identity on the output.
/// Used as the PDE solution model and as the coupling-layer conditioner.
class Mlp final : public Field {
 public:
  Mlp() = default;
  /// widths = {input, hidden..., output}. Parameters start at zero.
  explicit Mlp(std::vector<int> widths);

  /// Weights ~ N(0, 1/fan_in), zero biases. `zero_output` zeroes the last layer.
  static Mlp random(std::vector<int> widths, Rng& rng, bool zero_output = false);

  int input_dim() const override { return widths_.front(); }
  int output_dim() const override { return widths_.back(); }
  const std::vector<int>& widths() const { return widths_; }
  int layers() const { return static_cast<int>(weights_.size()); }

  Eigen::ArrayXXd evaluate(const PointBatch& x) const override;
  DiffResult derivatives(const PointBatch& x, int order) const override;

  /// Propagates a stacked jet through the network without recording.
  Eigen::MatrixXd forward_stacked(const Eigen::MatrixXd& stacked, const StackLayout& layout) const;

  /// Parameter leaves on `tape`, ordered W0, b0, W1, b1, ...
  std::vector<diff::Var> bind(diff::Tape& tape) const;
  /// Recorded propagation of a stacked jet; `params` from bind().
  diff::Var forward_stacked(std::span<const diff::Var> params, const diff::Var& stacked,
                            const StackLayout& layout) const;
  /// Jets of the network outputs at constant inputs x, on the tape.
  Jets<diff::Var> jets_on_tape(std::span<const diff::Var> params, const PointBatch& x, int order) const;

  /// Same order as bind().
  std::vector<Eigen::MatrixXd*> parameters();
  std::vector<const Eigen::MatrixXd*> parameters() const;
  std::size_t parameter_count() const;

  Eigen::MatrixXd& weight(int layer) { return weights_[layer]; }
  Eigen::MatrixXd& bias(int layer) { return biases_[layer]; }
  const Eigen::MatrixXd& weight(int layer) const { return weights_[layer]; }
  const Eigen::MatrixXd& bias(int layer) const { return biases_[layer]; }

 private:
  std::vector<int> widths_;
  std::vector<Eigen::MatrixXd> weights_;  // in x out
  std::vector<Eigen::MatrixXd> biases_;   // 1 x out
};

using SolutionNet = Mlp;

/// Analytic field wrapped so it can be differentiated like a network. The
/// callable is instantiated for double and Dual2; derivatives are exact.
class ClosureField final : public Field {
 public:
  using PlainFn = std::function<void(const double* x, double* out)>;
  using DualFn = std::function<void(const Dual2* x, Dual2* out)>;

  ClosureField() = default;
  ClosureField(int input_dim, int output_dim, PlainFn plain, DualFn dual)
      : in_(input_dim), out_(output_dim), plain_(std::move(plain)), dual_(std::move(dual)) {}

  /// `f` must be callable as f(const T* x, T* out) for T in {double, Dual2}.
  template <class F>
  static ClosureField from(int input_dim, int output_dim, F f) {
    return ClosureField(
        input_dim, output_dim, [f](const double* x, double* out) { f(x, out); },
        [f](const Dual2* x, Dual2* out) { f(x, out); });
  }

  int input_dim() const override { return in_; }
  int output_dim() const override { return out_; }
  Eigen::ArrayXXd evaluate(const PointBatch& x) const override;
  DiffResult derivatives(const PointBatch& x, int order) const override;

 private:
  int in_ = 0, out_ = 0;
  PlainFn plain_;
  DualFn dual_;
};

}  // namespace aas
