#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "dgail/types.hpp"

namespace dgail::ag {

struct Param {
  Mat value;
  Mat grad;
  Mat m;  // Adam first moment
  Mat v;  // Adam second moment
  long long step = 0;
  bool trainable = true;
};

/// Flat named parameter set shared by policy, value, and discriminator
/// networks. Gradients are accumulated here by Tape::backward.
struct ParamStore {
  std::map<std::string, Param> params;

  bool has(const std::string& name) const { return params.count(name) > 0; }
  Mat& value(const std::string& name);
  const Mat& value(const std::string& name) const;
  Mat& grad(const std::string& name);
  void add(const std::string& name, Mat init);
  void zero_grad();
  /// Names matching a prefix, in sorted order.
  std::vector<std::string> names_with_prefix(const std::string& prefix) const;
};

struct Node {
  Mat val;
  Mat grad;
  std::function<void()> back;  // empty for leaves and constants
};
using NodeP = std::shared_ptr<Node>;

class Tape;

/// Handle to a node in the computation graph. All values are dense column
/// vectors or matrices of 64-bit floats.
class Var {
 public:
  Var() = default;
  Var(NodeP n, Tape* t) : n_(std::move(n)), tape_(t) {}
  bool valid() const { return static_cast<bool>(n_); }
  const Mat& val() const { return n_->val; }
  double scalar() const { return n_->val(0, 0); }
  Node* node() const { return n_.get(); }
  const NodeP& ptr() const { return n_; }
  Tape* tape() const { return tape_; }

 private:
  NodeP n_;
  Tape* tape_ = nullptr;
};

/// Records ops in creation order (a valid topological order); backward visits
/// each node exactly once in reverse.
class Tape {
 public:
  explicit Tape(bool grad_enabled = true) : grad_(grad_enabled) {}
  bool grad_enabled() const { return grad_; }

  Var constant(Mat v);
  /// Leaf backed by a named parameter; cached so repeated lookups share a node.
  Var param(ParamStore& store, const std::string& name);
  /// Registers a new op output. The caller sets node()->back afterwards.
  Var make(Mat val);

  /// Seeds d(loss)/d(loss) = 1, runs the reverse sweep, and flushes leaf
  /// gradients into the parameter store.
  void backward(const Var& scalar_loss, ParamStore& store);

  std::size_t size() const { return order_.size(); }

 private:
  bool grad_;
  std::vector<NodeP> order_;
  std::vector<std::pair<std::string, NodeP>> leaves_;
  std::unordered_map<std::string, Var> param_cache_;
};

// -- ops ----------------------------------------------------------------------

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var matvec(const Var& W, const Var& x);
/// W*x + b with shape checking; faults name the mismatching node.
Var linear(const Var& W, const Var& x, const Var& b);
Var relu(const Var& x);
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);
/// Max-subtracted softmax; faults on non-finite logits.
Var softmax(const Var& logits);
Var log_softmax(const Var& logits);
Var pick(const Var& x, int index);
Var dot(const Var& a, const Var& b);
Var concat(const std::vector<Var>& parts);
Var sigmoid(const Var& x);
/// Numerically stable binary cross entropy on a logit; gradient sigma(z)-label.
Var bce_with_logits(const Var& logit, double label);
/// General matrix product A * B.
Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);
/// Concatenate equal-height column vectors into one matrix.
Var hstack(const std::vector<Var>& cols);
/// M + b broadcast across columns (b is a column vector).
Var bias_cols(const Var& m, const Var& b);
/// out_j = dot(q, keys[j]).
Var stack_dots(const Var& q, const std::vector<Var>& keys);
/// out = sum_j p_j * values[j].
Var weighted_sum(const Var& probs, const std::vector<Var>& values);
/// Scalar sum_j w_j * terms[j] (terms are 1x1).
Var weighted_sum_scalars(const std::vector<Var>& terms, const std::vector<double>& weights);
/// Stop-gradient copy.
Var detach(const Var& x);
/// (v - target)^2 on a 1x1 var.
Var squared_error(const Var& v, double target);
/// Clipped PPO surrogate term -min(ratio*A, clip(ratio)*A) as a function of the
/// fresh log-probability; ratio = exp(logp_new - logp_old).
Var ppo_term(const Var& logp_new, double logp_old, double advantage, double clip_eps);

/// Scaled dot-product attention over explicit key/value lists. An empty list
/// yields a zero vector that contributes no gradient.
Var attention(const Var& query, const std::vector<Var>& keys, const std::vector<Var>& values);

// -- optimizer / verification -------------------------------------------------

struct AdamwConfig {
  double lr = 1e-3;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Decoupled weight-decay Adam over trainable parameters accepted by `filter`
/// (null filter = all). Zeroes all gradients afterward and checks finiteness.
void adamw_update(ParamStore& store, const AdamwConfig& cfg,
                  const std::function<bool(const std::string&)>& filter = nullptr);

/// Central-difference gradient check (h per coordinate) on a random ~5%
/// coordinate subset of the trainable parameters. `f(store, with_grad)` must
/// return the loss and, when with_grad is set, leave analytic gradients in the
/// store. Returns max |analytic - numeric| / max(1, |numeric|).
double grad_check(const std::function<double(ParamStore&, bool)>& f, ParamStore& store,
                  std::uint64_t seed, double h = 1e-5, double sample_fraction = 0.05);

}  // namespace dgail::ag
