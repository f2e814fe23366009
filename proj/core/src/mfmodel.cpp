#include "fedlr/mfmodel.hpp"

#include <cmath>
#include <unordered_map>

namespace fedlr {

namespace {

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double softplus(double x) {
  // log(1 + e^x) without overflow on either tail
  if (x > 0.0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

// Per-batch accumulator for the distinct touched items. Grad vectors carry the
// data part only (sum of err * factor, not yet divided by batch size).
struct TouchedItems {
  std::unordered_map<std::int32_t, std::size_t> slot;
  std::vector<std::int32_t> items;
  std::vector<Eigen::VectorXd> grads;

  Eigen::VectorXd& at(std::int32_t item, int dim) {
    auto [it, fresh] = slot.try_emplace(item, items.size());
    if (fresh) {
      items.push_back(item);
      grads.emplace_back(Eigen::VectorXd::Zero(dim));
    }
    return grads[it->second];
  }
  void clear() {
    slot.clear();
    items.clear();
    grads.clear();
  }
};

}  // namespace

GlobalModel init_model(int d, int n_items, double init_std, std::uint64_t seed) {
  if (d < 1 || n_items < 1) throw ConfigError("model dimensions must be positive");
  Rng rng = Rng::keyed(seed, purpose::kModelInit);
  GlobalModel m;
  m.q.resize(d, n_items);
  for (int j = 0; j < n_items; ++j)
    for (int i = 0; i < d; ++i) m.q(i, j) = init_std * rng.next_gaussian();
  return m;
}

Eigen::VectorXd init_user_embedding(int d, double init_std, std::uint64_t seed, int user) {
  Rng rng = Rng::keyed(seed, purpose::kUserInit, 0, static_cast<std::uint64_t>(user));
  Eigen::VectorXd p(d);
  for (int i = 0; i < d; ++i) p[i] = init_std * rng.next_gaussian();
  return p;
}

double predict(const Eigen::VectorXd& p, const Eigen::VectorXd& q) {
  if (p.size() != q.size()) throw TrainError("predict: dimension mismatch");
  return sigmoid(q.dot(p));
}

double bce_logit(double label, double logit) {
  return softplus(logit) - label * logit;
}

double local_loss_dense(const Eigen::VectorXd& p, const Eigen::MatrixXd& q,
                        std::span<const Sample> batch, double weight_decay) {
  double acc = 0.0;
  for (const auto& s : batch) acc += bce_logit(s.label, q.col(s.item).dot(p));
  acc /= static_cast<double>(batch.size());
  return acc + 0.5 * weight_decay * (p.squaredNorm() + q.squaredNorm());
}

double local_loss_lowrank(const Eigen::VectorXd& p, const Eigen::MatrixXd& q,
                          const Eigen::MatrixXd& b, const Eigen::MatrixXd& a,
                          std::span<const Sample> batch, double weight_decay) {
  const Eigen::VectorXd btp = b.transpose() * p;
  double acc = 0.0;
  for (const auto& s : batch)
    acc += bce_logit(s.label, q.col(s.item).dot(p) + a.col(s.item).dot(btp));
  acc /= static_cast<double>(batch.size());
  return acc + 0.5 * weight_decay * (p.squaredNorm() + a.squaredNorm());
}

namespace {

// One simultaneous SGD step on a minibatch, dense path. All gradients are
// evaluated at the incoming (p, ql) point before anything moves.
void sgd_step_dense(Eigen::VectorXd& p, Eigen::MatrixXd& ql, std::span<const Sample> chunk,
                    const LocalConfig& cfg, TouchedItems& touched) {
  const double b = static_cast<double>(chunk.size());
  const int d = static_cast<int>(p.size());
  Eigen::VectorXd gp = Eigen::VectorXd::Zero(d);
  touched.clear();
  for (const auto& s : chunk) {
    const auto qcol = ql.col(s.item);
    const double err = sigmoid(qcol.dot(p)) - static_cast<double>(s.label);
    gp += err * qcol;
    touched.at(s.item, d) += err * p;
  }
  gp /= b;
  gp += cfg.weight_decay * p;
  const Eigen::VectorXd p_next = p - cfg.lr * gp;

  if (cfg.decay_mode == DecayMode::kFull && cfg.weight_decay != 0.0)
    ql *= (1.0 - cfg.item_lr * cfg.weight_decay);
  for (std::size_t k = 0; k < touched.items.size(); ++k) {
    const std::int32_t item = touched.items[k];
    Eigen::VectorXd g = touched.grads[k] / b;
    if (cfg.decay_mode == DecayMode::kTouched) g += cfg.weight_decay * ql.col(item);
    ql.col(item) -= cfg.item_lr * g;
  }
  p = p_next;
}

// Low-rank path: q frozen, coefficients a trainable, effective item column
// q_i + b * a_i. The chain rule routes the item-side data gradient through
// b^T, which is why btp is the only projection product each step needs.
void sgd_step_lowrank(Eigen::VectorXd& p, const Eigen::MatrixXd& q, const Eigen::MatrixXd& b,
                      Eigen::MatrixXd& a, std::span<const Sample> chunk,
                      const LocalConfig& cfg, TouchedItems& touched) {
  const double bs = static_cast<double>(chunk.size());
  const int d = static_cast<int>(p.size());
  const int r = static_cast<int>(a.rows());
  const Eigen::VectorXd btp = b.transpose() * p;
  Eigen::VectorXd gp = Eigen::VectorXd::Zero(d);
  touched.clear();
  for (const auto& s : chunk) {
    const double score = q.col(s.item).dot(p) + a.col(s.item).dot(btp);
    const double err = sigmoid(score) - static_cast<double>(s.label);
    gp += err * (q.col(s.item) + b * a.col(s.item));
    touched.at(s.item, r) += err * btp;
  }
  gp /= bs;
  gp += cfg.weight_decay * p;
  const Eigen::VectorXd p_next = p - cfg.lr * gp;

  if (cfg.decay_mode == DecayMode::kFull && cfg.weight_decay != 0.0)
    a *= (1.0 - cfg.item_lr * cfg.weight_decay);
  for (std::size_t k = 0; k < touched.items.size(); ++k) {
    const std::int32_t item = touched.items[k];
    Eigen::VectorXd g = touched.grads[k] / bs;
    if (cfg.decay_mode == DecayMode::kTouched) g += cfg.weight_decay * a.col(item);
    a.col(item) -= cfg.item_lr * g;
  }
  p = p_next;
}

std::vector<Sample> epoch_samples(const InteractionTable& train, int user,
                                  const LocalConfig& cfg, Rng& shuffle_rng, Rng& negative_rng) {
  const auto& positives = train.interactions(user);
  std::vector<Sample> samples;
  samples.reserve(positives.size() * static_cast<std::size_t>(1 + cfg.negative_ratio));
  for (const auto& it : positives) samples.push_back(Sample{it.item, 1.0f});
  if (cfg.negative_ratio > 0) {
    for (const auto neg : sample_train_negatives(train, user, cfg.negative_ratio, negative_rng))
      samples.push_back(Sample{neg, 0.0f});
  }
  shuffle_rng.shuffle(samples);
  return samples;
}

void check_finite(const Eigen::VectorXd& p, const Eigen::MatrixXd& item_side, int user) {
  if (!p.allFinite() || !item_side.allFinite())
    throw TrainError("local training diverged (non-finite parameters) for user " +
                     std::to_string(user));
}

}  // namespace

DenseResult local_train_dense(ClientState& state, const GlobalModel& model,
                              const InteractionTable& train, const LocalConfig& cfg,
                              Rng& shuffle_rng, Rng& negative_rng) {
  if (cfg.batch_size < 1) throw ConfigError("batch_size must be >= 1");
  Eigen::MatrixXd ql = model.q;
  TouchedItems touched;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto samples = epoch_samples(train, state.user, cfg, shuffle_rng, negative_rng);
    for (std::size_t lo = 0; lo < samples.size(); lo += cfg.batch_size) {
      const std::size_t hi = std::min(samples.size(), lo + cfg.batch_size);
      sgd_step_dense(state.p, ql, std::span(samples).subspan(lo, hi - lo), cfg, touched);
    }
  }
  check_finite(state.p, ql, state.user);
  return DenseResult{ql - model.q};
}

LowRankResult local_train_lowrank(ClientState& state, const GlobalModel& model,
                                  const Eigen::MatrixXd& b, const InteractionTable& train,
                                  const LocalConfig& cfg, Rng& shuffle_rng, Rng& negative_rng) {
  if (cfg.batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (b.rows() != model.q.rows())
    throw TrainError("projection rows do not match model dimension");
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(b.cols(), model.n_items());
  TouchedItems touched;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto samples = epoch_samples(train, state.user, cfg, shuffle_rng, negative_rng);
    for (std::size_t lo = 0; lo < samples.size(); lo += cfg.batch_size) {
      const std::size_t hi = std::min(samples.size(), lo + cfg.batch_size);
      sgd_step_lowrank(state.p, model.q, b, a, std::span(samples).subspan(lo, hi - lo), cfg,
                       touched);
    }
  }
  check_finite(state.p, a, state.user);
  return LowRankResult{std::move(a)};
}

// ===== gradient checks =====

namespace {

double rel_err(double analytic, double fd) {
  const double denom = std::max(std::abs(analytic) + std::abs(fd), 1e-6);
  return std::abs(analytic - fd) / denom;
}

}  // namespace

double gradient_check_dense(const Eigen::VectorXd& p, const Eigen::MatrixXd& q,
                            std::span<const Sample> batch, double weight_decay, double eps) {
  const double b = static_cast<double>(batch.size());
  const int d = static_cast<int>(p.size());
  // analytic side: the same accumulation the training step performs, plus the
  // full-matrix regularizer to match local_loss_dense
  Eigen::VectorXd gp = Eigen::VectorXd::Zero(d);
  Eigen::MatrixXd gq = weight_decay * q;
  for (const auto& s : batch) {
    const double err = sigmoid(q.col(s.item).dot(p)) - static_cast<double>(s.label);
    gp += (err / b) * q.col(s.item);
    gq.col(s.item) += (err / b) * p;
  }
  gp += weight_decay * p;

  double worst = 0.0;
  Eigen::VectorXd pp = p;
  for (int i = 0; i < d; ++i) {
    pp[i] = p[i] + eps;
    const double up = local_loss_dense(pp, q, batch, weight_decay);
    pp[i] = p[i] - eps;
    const double dn = local_loss_dense(pp, q, batch, weight_decay);
    pp[i] = p[i];
    worst = std::max(worst, rel_err(gp[i], (up - dn) / (2.0 * eps)));
  }
  Eigen::MatrixXd qq = q;
  for (int j = 0; j < q.cols(); ++j)
    for (int i = 0; i < q.rows(); ++i) {
      qq(i, j) = q(i, j) + eps;
      const double up = local_loss_dense(p, qq, batch, weight_decay);
      qq(i, j) = q(i, j) - eps;
      const double dn = local_loss_dense(p, qq, batch, weight_decay);
      qq(i, j) = q(i, j);
      worst = std::max(worst, rel_err(gq(i, j), (up - dn) / (2.0 * eps)));
    }
  return worst;
}

double gradient_check_lowrank(const Eigen::VectorXd& p, const Eigen::MatrixXd& q,
                              const Eigen::MatrixXd& b, const Eigen::MatrixXd& a,
                              std::span<const Sample> batch, double weight_decay, double eps) {
  const double bs = static_cast<double>(batch.size());
  const int d = static_cast<int>(p.size());
  const Eigen::VectorXd btp = b.transpose() * p;
  Eigen::VectorXd gp = Eigen::VectorXd::Zero(d);
  Eigen::MatrixXd ga = weight_decay * a;
  for (const auto& s : batch) {
    const double score = q.col(s.item).dot(p) + a.col(s.item).dot(btp);
    const double err = sigmoid(score) - static_cast<double>(s.label);
    gp += (err / bs) * (q.col(s.item) + b * a.col(s.item));
    ga.col(s.item) += (err / bs) * btp;
  }
  gp += weight_decay * p;

  double worst = 0.0;
  Eigen::VectorXd pp = p;
  for (int i = 0; i < d; ++i) {
    pp[i] = p[i] + eps;
    const double up = local_loss_lowrank(pp, q, b, a, batch, weight_decay);
    pp[i] = p[i] - eps;
    const double dn = local_loss_lowrank(pp, q, b, a, batch, weight_decay);
    pp[i] = p[i];
    worst = std::max(worst, rel_err(gp[i], (up - dn) / (2.0 * eps)));
  }
  Eigen::MatrixXd aa = a;
  for (int j = 0; j < a.cols(); ++j)
    for (int i = 0; i < a.rows(); ++i) {
      aa(i, j) = a(i, j) + eps;
      const double up = local_loss_lowrank(p, q, b, aa, batch, weight_decay);
      aa(i, j) = a(i, j) - eps;
      const double dn = local_loss_lowrank(p, q, b, aa, batch, weight_decay);
      aa(i, j) = a(i, j);
      worst = std::max(worst, rel_err(ga(i, j), (up - dn) / (2.0 * eps)));
    }
  return worst;
}

}  // namespace fedlr
