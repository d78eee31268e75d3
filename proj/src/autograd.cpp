#include "dgail/autograd.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

namespace dgail::ag {

// -- ParamStore ---------------------------------------------------------------

Mat& ParamStore::value(const std::string& name) {
  auto it = params.find(name);
  if (it == params.end()) throw std::out_of_range("ParamStore: no parameter '" + name + "'");
  return it->second.value;
}

const Mat& ParamStore::value(const std::string& name) const {
  auto it = params.find(name);
  if (it == params.end()) throw std::out_of_range("ParamStore: no parameter '" + name + "'");
  return it->second.value;
}

Mat& ParamStore::grad(const std::string& name) {
  auto it = params.find(name);
  if (it == params.end()) throw std::out_of_range("ParamStore: no parameter '" + name + "'");
  return it->second.grad;
}

void ParamStore::add(const std::string& name, Mat init) {
  if (has(name)) throw std::invalid_argument("ParamStore: duplicate parameter '" + name + "'");
  Param p;
  p.grad = Mat::Zero(init.rows(), init.cols());
  p.m = Mat::Zero(init.rows(), init.cols());
  p.v = Mat::Zero(init.rows(), init.cols());
  p.value = std::move(init);
  params.emplace(name, std::move(p));
}

void ParamStore::zero_grad() {
  for (auto& [name, p] : params) p.grad.setZero();
}

std::vector<std::string> ParamStore::names_with_prefix(const std::string& prefix) const {
  std::vector<std::string> out;
  for (const auto& [name, p] : params)
    if (name.rfind(prefix, 0) == 0) out.push_back(name);
  return out;
}

// -- Tape ---------------------------------------------------------------------

Var Tape::constant(Mat v) {
  auto n = std::make_shared<Node>();
  n->val = std::move(v);
  if (grad_) {
    n->grad = Mat::Zero(n->val.rows(), n->val.cols());
    order_.push_back(n);
  }
  return Var(n, this);
}

Var Tape::param(ParamStore& store, const std::string& name) {
  auto it = param_cache_.find(name);
  if (it != param_cache_.end()) return it->second;
  Var v = constant(store.value(name));
  if (grad_) leaves_.emplace_back(name, v.ptr());
  param_cache_.emplace(name, v);
  return v;
}

Var Tape::make(Mat val) {
  auto n = std::make_shared<Node>();
  n->val = std::move(val);
  if (grad_) {
    n->grad = Mat::Zero(n->val.rows(), n->val.cols());
    order_.push_back(n);
  }
  return Var(n, this);
}

void Tape::backward(const Var& scalar_loss, ParamStore& store) {
  if (!grad_) throw std::logic_error("Tape::backward on a no-grad tape");
  if (scalar_loss.val().size() != 1)
    throw std::invalid_argument("Tape::backward: loss must be scalar");
  scalar_loss.node()->grad(0, 0) += 1.0;
  for (auto it = order_.rbegin(); it != order_.rend(); ++it)
    if ((*it)->back) (*it)->back();
  for (auto& [name, node] : leaves_) store.grad(name) += node->grad;
}

// -- op helpers ---------------------------------------------------------------

namespace {

Tape* tape_of(const Var& v) {
  if (!v.valid()) throw std::invalid_argument("op on empty Var");
  return v.tape();
}

void check_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.val().rows() != b.val().rows() || a.val().cols() != b.val().cols())
    throw std::invalid_argument(std::string(op) + ": shape mismatch (" +
                                std::to_string(a.val().rows()) + "x" +
                                std::to_string(a.val().cols()) + " vs " +
                                std::to_string(b.val().rows()) + "x" +
                                std::to_string(b.val().cols()) + ")");
}

}  // namespace

Var add(const Var& a, const Var& b) {
  check_same_shape(a, b, "add");
  Tape* t = tape_of(a);
  Var out = t->make(a.val() + b.val());
  if (t->grad_enabled()) {
    Node* o = out.node();
    NodeP an = a.ptr(), bn = b.ptr();
    o->back = [o, an, bn] {
      an->grad += o->grad;
      bn->grad += o->grad;
    };
  }
  return out;
}

Var sub(const Var& a, const Var& b) {
  check_same_shape(a, b, "sub");
  Tape* t = tape_of(a);
  Var out = t->make(a.val() - b.val());
  if (t->grad_enabled()) {
    Node* o = out.node();
    NodeP an = a.ptr(), bn = b.ptr();
    o->back = [o, an, bn] {
      an->grad += o->grad;
      bn->grad -= o->grad;
    };
  }
  return out;
}

Var scale(const Var& a, double s) {
  Tape* t = tape_of(a);
  Var out = t->make(a.val() * s);
  if (t->grad_enabled()) {
    Node* o = out.node();
    NodeP an = a.ptr();
    o->back = [o, an, s] { an->grad += s * o->grad; };
  }
  return out;
}

Var matvec(const Var& W, const Var& x) {
  if (W.val().cols() != x.val().rows() || x.val().cols() != 1)
    throw std::invalid_argument("matvec: shape mismatch " + std::to_string(W.val().rows()) +
                                "x" + std::to_string(W.val().cols()) + " * " +
                                std::to_string(x.val().rows()) + "x" +
                                std::to_string(x.val().cols()));
  Tape* t = tape_of(W);
  Var out = t->make(W.val() * x.val());
  if (t->grad_enabled()) {
    Node* o = out.node();
    NodeP wn = W.ptr(), xn = x.ptr();
    o->back = [o, wn, xn] {
      wn->grad.noalias() += o->grad * xn->val.transpose();
      xn->grad.noalias() += wn->val.transpose() * o->grad;
    };
  }
  return out;
}

Var linear(const Var& W, const Var& x, const Var& b) { return add(matvec(W, x), b); }

Var matmul(const Var& a, const Var& b) {
  if (a.val().cols() != b.val().rows())
    throw std::invalid_argument("matmul: inner dimensions disagree");
  Tape* t = tape_of(a);
  Var out = t->make(a.val() * b.val());
  if (t->grad_enabled()) {
    Node* o = out.node();
    NodeP an = a.ptr(), bn = b.ptr();
    o->back = [o, an, bn] {
      an->grad.noalias() += o->grad * bn->val.transpose();
      bn->grad.noalias() += an->val.transpose() * o->grad;
    };
  }
  return out;
}

Var transpose(const Var& a) {
  Tape* t = tape_of(a);
  Var out = t->make(a.val().transpose());
  if (t->grad_enabled()) {
    Node* o = out.node();
    NodeP an = a.ptr();
    o->back = [o, an] { an->grad += o->grad.transpose(); };
  }
  return out;
}

Var hstack(const std::vector<Var>& cols) {
  if (cols.empty()) throw std::invalid_argument("hstack: empty input");
  const Eigen::Index rows = cols[0].val().rows();
  Mat v(rows, static_cast<Eigen::Index>(cols.size()));
  for (std::size_t j = 0; j < cols.size(); ++j) {
    if (cols[j].val().rows() != rows || cols[j].val().cols() != 1)
      throw std::invalid_argument("hstack: inputs must be equal-height column vectors");
    v.col(static_cast<Eigen::Index>(j)) = cols[j].val();
  }
  Tape* t = tape_of(cols[0]);
  Var out = t->make(std::move(v));
  if (t->grad_enabled()) {
    Node* o = out.node();
    std::vector<NodeP> cs;
    cs.reserve(cols.size());
    for (const auto& c : cols) cs.push_back(c.ptr());
    o->back = [o, cs] {
      for (std::size_t j = 0; j < cs.size(); ++j)
        cs[j]->grad += o->grad.col(static_cast<Eigen::Index>(j));
    };
  }
  return out;
}

Var bias_cols(const Var& m, const Var& b) {
  if (b.val().cols() != 1 || b.val().rows() != m.val().rows())
    throw std::invalid_argument("bias_cols: bias must be a matching column vector");
  Tape* t = tape_of(m);
  Var out = t->make(m.val().colwise() + Eigen::VectorXd(b.val().col(0)));
  if (t->grad_enabled()) {
    Node* o = out.node();
    NodeP mn = m.ptr(), bn = b.ptr();
    o->back = [o, mn, bn] {
      mn->grad += o->grad;
      bn->grad += o->grad.rowwise().sum();
    };
  }
  return out;
}

Var relu(const Var& x) {
  Tape* t = tape_of(x);
  Var out = t->make(x.val().cwiseMax(0.0));
  if (t->grad_enabled()) {
    Node* o = out.node();
    NodeP xn = x.ptr();
    o->back = [o, xn] {
      xn->grad.array() += (xn->val.array() > 0.0).cast<double>() * o->grad.array();
    };
  }
  return out;
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
  check_same_shape(x, gamma, "layer_norm");
  check_same_shape(x, beta, "layer_norm");
  Tape* t = tape_of(x);
  const double n = static_cast<double>(x.val().size());
  const double mu = x.val().mean();
  const double var = (x.val().array() - mu).square().mean();
  const double inv = 1.0 / std::sqrt(var + eps);
  Mat xhat = (x.val().array() - mu).matrix() * inv;
  Var out = t->make((gamma.val().array() * xhat.array() + beta.val().array()).matrix());
  if (t->grad_enabled()) {
    Node* o = out.node();
    NodeP xn = x.ptr(), gn = gamma.ptr(), bn = beta.ptr();
    o->back = [o, xn, gn, bn, xhat, inv, n] {
      gn->grad.array() += o->grad.array() * xhat.array();
      bn->grad += o->grad;
      Mat dxhat = (o->grad.array() * gn->val.array()).matrix();
      const double m1 = dxhat.mean();
      const double m2 = (dxhat.array() * xhat.array()).mean();
      xn->grad.array() += inv * (dxhat.array() - m1 - xhat.array() * m2);
      (void)n;
    };
  }
  return out;
}

Var softmax(const Var& logits) {
  if (!logits.val().allFinite())
    throw std::domain_error("softmax: non-finite logit");
  Tape* t = tape_of(logits);
  const double mx = logits.val().maxCoeff();
  Mat e = (logits.val().array() - mx).exp().matrix();
  Mat p = e / e.sum();
  Var out = t->make(p);
  if (t->grad_enabled()) {
    Node* o = out.node();
    NodeP ln = logits.ptr();
    o->back = [o, ln] {
      const Mat& p = o->val;
      const double s = (o->grad.array() * p.array()).sum();
      ln->grad.array() += p.array() * (o->grad.array() - s);
    };
  }
  return out;
}

Var log_softmax(const Var& logits) {
  if (!logits.val().allFinite())
    throw std::domain_error("log_softmax: non-finite logit");
  Tape* t = tape_of(logits);
  const double mx = logits.val().maxCoeff();
  const double lse = mx + std::log((logits.val().array() - mx).exp().sum());
  Var out = t->make((logits.val().array() - lse).matrix());
  if (t->grad_enabled()) {
    Node* o = out.node();
    NodeP ln = logits.ptr();
    o->back = [o, ln] {
      const Mat p = o->val.array().exp().matrix();
      const double s = o->grad.sum();
      ln->grad.array() += o->grad.array() - p.array() * s;
    };
  }
  return out;
}

Var pick(const Var& x, int index) {
  if (index < 0 || index >= x.val().size())
    throw std::out_of_range("pick: index " + std::to_string(index) + " out of range");
  Tape* t = tape_of(x);
  Var out = t->make(Mat::Constant(1, 1, x.val()(index)));
  if (t->grad_enabled()) {
    Node* o = out.node();
    NodeP xn = x.ptr();
    o->back = [o, xn, index] { xn->grad(index) += o->grad(0, 0); };
  }
  return out;
}

Var dot(const Var& a, const Var& b) {
  check_same_shape(a, b, "dot");
  Tape* t = tape_of(a);
  Var out = t->make(Mat::Constant(1, 1, (a.val().array() * b.val().array()).sum()));
  if (t->grad_enabled()) {
    Node* o = out.node();
    NodeP an = a.ptr(), bn = b.ptr();
    o->back = [o, an, bn] {
      const double g = o->grad(0, 0);
      an->grad += g * bn->val;
      bn->grad += g * an->val;
    };
  }
  return out;
}

Var concat(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat: empty input");
  Tape* t = tape_of(parts[0]);
  Eigen::Index rows = 0;
  for (const auto& p : parts) rows += p.val().rows();
  Mat v(rows, 1);
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    v.block(at, 0, p.val().rows(), 1) = p.val();
    at += p.val().rows();
  }
  Var out = t->make(std::move(v));
  if (t->grad_enabled()) {
    Node* o = out.node();
    std::vector<NodeP> ps;
    for (const auto& p : parts) ps.push_back(p.ptr());
    o->back = [o, ps] {
      Eigen::Index at = 0;
      for (const auto& p : ps) {
        p->grad += o->grad.block(at, 0, p->val.rows(), 1);
        at += p->val.rows();
      }
    };
  }
  return out;
}

Var sigmoid(const Var& x) {
  Tape* t = tape_of(x);
  Mat v = (1.0 / (1.0 + (-x.val().array()).exp())).matrix();
  Var out = t->make(std::move(v));
  if (t->grad_enabled()) {
    Node* o = out.node();
    NodeP xn = x.ptr();
    o->back = [o, xn] {
      xn->grad.array() += o->grad.array() * o->val.array() * (1.0 - o->val.array());
    };
  }
  return out;
}

Var bce_with_logits(const Var& logit, double label) {
  if (logit.val().size() != 1) throw std::invalid_argument("bce_with_logits: scalar logit expected");
  const double z = logit.scalar();
  if (!std::isfinite(z)) throw std::domain_error("bce_with_logits: non-finite logit");
  Tape* t = tape_of(logit);
  const double loss = std::max(z, 0.0) - z * label + std::log1p(std::exp(-std::abs(z)));
  Var out = t->make(Mat::Constant(1, 1, loss));
  if (t->grad_enabled()) {
    Node* o = out.node();
    NodeP zn = logit.ptr();
    o->back = [o, zn, z, label] {
      const double sig = 1.0 / (1.0 + std::exp(-z));
      zn->grad(0, 0) += o->grad(0, 0) * (sig - label);
    };
  }
  return out;
}

Var stack_dots(const Var& q, const std::vector<Var>& keys) {
  if (keys.empty()) throw std::invalid_argument("stack_dots: empty key list");
  Tape* t = tape_of(q);
  Mat v(static_cast<Eigen::Index>(keys.size()), 1);
  for (std::size_t j = 0; j < keys.size(); ++j)
    v(static_cast<Eigen::Index>(j), 0) = (q.val().array() * keys[j].val().array()).sum();
  Var out = t->make(std::move(v));
  if (t->grad_enabled()) {
    Node* o = out.node();
    NodeP qn = q.ptr();
    std::vector<NodeP> ks;
    for (const auto& k : keys) ks.push_back(k.ptr());
    o->back = [o, qn, ks] {
      for (std::size_t j = 0; j < ks.size(); ++j) {
        const double g = o->grad(static_cast<Eigen::Index>(j), 0);
        qn->grad += g * ks[j]->val;
        ks[j]->grad += g * qn->val;
      }
    };
  }
  return out;
}

Var weighted_sum(const Var& probs, const std::vector<Var>& values) {
  if (values.empty()) throw std::invalid_argument("weighted_sum: empty value list");
  if (probs.val().rows() != static_cast<Eigen::Index>(values.size()))
    throw std::invalid_argument("weighted_sum: weight/value count mismatch");
  Tape* t = tape_of(probs);
  Mat v = Mat::Zero(values[0].val().rows(), 1);
  for (std::size_t j = 0; j < values.size(); ++j)
    v += probs.val()(static_cast<Eigen::Index>(j), 0) * values[j].val();
  Var out = t->make(std::move(v));
  if (t->grad_enabled()) {
    Node* o = out.node();
    NodeP pn = probs.ptr();
    std::vector<NodeP> vs;
    for (const auto& x : values) vs.push_back(x.ptr());
    o->back = [o, pn, vs] {
      for (std::size_t j = 0; j < vs.size(); ++j) {
        pn->grad(static_cast<Eigen::Index>(j), 0) += (o->grad.array() * vs[j]->val.array()).sum();
        vs[j]->grad += pn->val(static_cast<Eigen::Index>(j), 0) * o->grad;
      }
    };
  }
  return out;
}

Var weighted_sum_scalars(const std::vector<Var>& terms, const std::vector<double>& weights) {
  if (terms.empty()) throw std::invalid_argument("weighted_sum_scalars: empty input");
  if (terms.size() != weights.size())
    throw std::invalid_argument("weighted_sum_scalars: weight count mismatch");
  Tape* t = tape_of(terms[0]);
  double acc = 0.0;
  for (std::size_t i = 0; i < terms.size(); ++i) acc += weights[i] * terms[i].scalar();
  Var out = t->make(Mat::Constant(1, 1, acc));
  if (t->grad_enabled()) {
    Node* o = out.node();
    std::vector<NodeP> ts;
    for (const auto& x : terms) ts.push_back(x.ptr());
    std::vector<double> ws = weights;
    o->back = [o, ts, ws] {
      const double g = o->grad(0, 0);
      for (std::size_t i = 0; i < ts.size(); ++i) ts[i]->grad(0, 0) += g * ws[i];
    };
  }
  return out;
}

Var detach(const Var& x) { return tape_of(x)->constant(x.val()); }

Var squared_error(const Var& v, double target) {
  if (v.val().size() != 1) throw std::invalid_argument("squared_error: scalar expected");
  Tape* t = tape_of(v);
  const double d = v.scalar() - target;
  Var out = t->make(Mat::Constant(1, 1, d * d));
  if (t->grad_enabled()) {
    Node* o = out.node();
    NodeP vn = v.ptr();
    o->back = [o, vn, d] { vn->grad(0, 0) += o->grad(0, 0) * 2.0 * d; };
  }
  return out;
}

Var ppo_term(const Var& logp_new, double logp_old, double advantage, double clip_eps) {
  if (logp_new.val().size() != 1) throw std::invalid_argument("ppo_term: scalar expected");
  Tape* t = tape_of(logp_new);
  const double ratio = std::exp(logp_new.scalar() - logp_old);
  if (!std::isfinite(ratio)) throw std::domain_error("ppo_term: non-finite ratio");
  const double clipped = std::clamp(ratio, 1.0 - clip_eps, 1.0 + clip_eps);
  const double u1 = ratio * advantage;
  const double u2 = clipped * advantage;
  Var out = t->make(Mat::Constant(1, 1, -std::min(u1, u2)));
  if (t->grad_enabled()) {
    Node* o = out.node();
    NodeP zn = logp_new.ptr();
    double d_ratio;
    if (u1 <= u2) {
      d_ratio = -advantage;
    } else {
      const bool interior = ratio > 1.0 - clip_eps && ratio < 1.0 + clip_eps;
      d_ratio = interior ? -advantage : 0.0;
    }
    const double dz = d_ratio * ratio;
    o->back = [o, zn, dz] { zn->grad(0, 0) += o->grad(0, 0) * dz; };
  }
  return out;
}

Var attention(const Var& query, const std::vector<Var>& keys, const std::vector<Var>& values) {
  if (keys.size() != values.size())
    throw std::invalid_argument("attention: key/value count mismatch");
  Tape* t = tape_of(query);
  if (keys.empty()) return t->constant(Mat::Zero(query.val().rows(), 1));
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(query.val().rows()));
  Var logits = scale(stack_dots(query, keys), inv_sqrt_d);
  Var probs = softmax(logits);
  return weighted_sum(probs, values);
}

// -- optimizer ----------------------------------------------------------------

void adamw_update(ParamStore& store, const AdamwConfig& cfg,
                  const std::function<bool(const std::string&)>& filter) {
  for (auto& [name, p] : store.params) {
    if (!p.trainable) continue;
    if (filter && !filter(name)) continue;
    p.step += 1;
    const double t = static_cast<double>(p.step);
    p.m = cfg.beta1 * p.m + (1.0 - cfg.beta1) * p.grad;
    p.v = cfg.beta2 * p.v.array().matrix() +
          (1.0 - cfg.beta2) * p.grad.array().square().matrix();
    const double bc1 = 1.0 - std::pow(cfg.beta1, t);
    const double bc2 = 1.0 - std::pow(cfg.beta2, t);
    Mat mhat = p.m / bc1;
    Mat vhat = p.v / bc2;
    p.value.array() -= cfg.lr * (mhat.array() / (vhat.array().sqrt() + cfg.eps) +
                                 cfg.weight_decay * p.value.array());
    if (!p.value.allFinite())
      throw std::runtime_error("adamw_update: non-finite value in parameter '" + name + "'");
  }
  store.zero_grad();
}

// -- gradient check -----------------------------------------------------------

double grad_check(const std::function<double(ParamStore&, bool)>& f, ParamStore& store,
                  std::uint64_t seed, double h, double sample_fraction) {
  store.zero_grad();
  (void)f(store, true);
  std::map<std::string, Mat> analytic;
  for (auto& [name, p] : store.params) {
    if (!p.trainable) continue;
    if (!p.grad.allFinite())
      throw std::runtime_error("grad_check: non-finite analytic gradient in '" + name + "'");
    analytic[name] = p.grad;
  }
  store.zero_grad();

  std::mt19937_64 rng(derive_seed(seed, 0x6CADC11));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double max_rel = 0.0;
  for (auto& [name, p] : store.params) {
    if (!p.trainable) continue;
    bool sampled_any = false;
    for (Eigen::Index i = 0; i < p.value.size(); ++i) {
      if (u(rng) > sample_fraction && !(i + 1 == p.value.size() && !sampled_any)) continue;
      sampled_any = true;
      const double orig = p.value(i);
      p.value(i) = orig + h;
      const double fp = f(store, false);
      p.value(i) = orig - h;
      const double fm = f(store, false);
      p.value(i) = orig;
      const double numeric = (fp - fm) / (2.0 * h);
      const double rel = std::abs(analytic[name](i) - numeric) /
                         std::max(1.0, std::abs(numeric));
      max_rel = std::max(max_rel, rel);
    }
  }
  return max_rel;
}

}  // namespace dgail::ag
