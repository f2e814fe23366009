#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <span>
#include <vector>

#include "fedlr/dataio.hpp"
#include "fedlr/errors.hpp"
#include "fedlr/rng.hpp"

namespace fedlr {

// Matrix-factorization model pieces for the federated simulator. The item
// matrix q is global (d x N, one column per item); user embeddings p live with
// their clients and appear in no upload payload type.

struct GlobalModel {
  Eigen::MatrixXd q;  // d x N
  int d() const { return static_cast<int>(q.rows()); }
  int n_items() const { return static_cast<int>(q.cols()); }
};

GlobalModel init_model(int d, int n_items, double init_std, std::uint64_t seed);
Eigen::VectorXd init_user_embedding(int d, double init_std, std::uint64_t seed, int user);

struct ClientState {
  std::int32_t user = -1;
  Eigen::VectorXd p;  // private user embedding
};

enum class DecayMode {
  kTouched,  // L2 applied to parameters appearing in the batch (keeps deltas sparse)
  kFull,     // L2 applied to the whole item-side matrix every step
};

struct LocalConfig {
  double lr = 0.1;            // user-embedding step size
  double item_lr = 0.1;       // item-side step size (low-rank scaling lands here)
  double weight_decay = 0.0;  // lambda
  int epochs = 1;
  int batch_size = 64;
  int negative_ratio = 4;     // sampled negatives per positive, redrawn every epoch
  DecayMode decay_mode = DecayMode::kTouched;
};

struct Sample {
  std::int32_t item = 0;
  float label = 0.0f;  // 1 = interacted, 0 = sampled negative
};

// sigma(q . p)
double predict(const Eigen::VectorXd& p, const Eigen::VectorXd& q);

// Numerically stable binary cross-entropy of label y against logit s.
double bce_logit(double label, double logit);

// Mean BCE over the batch plus (lambda/2) * (|p|^2 + |item-side trainables|^2).
// The item-side trainable is the full q for the dense path and the coefficient
// matrix a for the low-rank path (q frozen, effective column q_i + b * a_i).
double local_loss_dense(const Eigen::VectorXd& p, const Eigen::MatrixXd& q,
                        std::span<const Sample> batch, double weight_decay);
double local_loss_lowrank(const Eigen::VectorXd& p, const Eigen::MatrixXd& q,
                          const Eigen::MatrixXd& b, const Eigen::MatrixXd& a,
                          std::span<const Sample> batch, double weight_decay);

struct DenseResult {
  Eigen::MatrixXd delta_q;  // d x N
};
struct LowRankResult {
  Eigen::MatrixXd a;  // r x N trained coefficients (starts at zero)
};

// E epochs of minibatch SGD on the client's positives plus freshly sampled
// negatives; p and the item-side parameter step simultaneously from gradients
// taken at the same point. Throws TrainError if parameters go non-finite.
DenseResult local_train_dense(ClientState& state, const GlobalModel& model,
                              const InteractionTable& train, const LocalConfig& cfg,
                              Rng& shuffle_rng, Rng& negative_rng);
LowRankResult local_train_lowrank(ClientState& state, const GlobalModel& model,
                                  const Eigen::MatrixXd& b, const InteractionTable& train,
                                  const LocalConfig& cfg, Rng& shuffle_rng, Rng& negative_rng);

// Max relative error between the analytic batch gradient (the one training
// uses) and central finite differences of the matching local_loss. The finite
// differences touch only loss evaluations, never the gradient code.
double gradient_check_dense(const Eigen::VectorXd& p, const Eigen::MatrixXd& q,
                            std::span<const Sample> batch, double weight_decay,
                            double eps = 1e-5);
double gradient_check_lowrank(const Eigen::VectorXd& p, const Eigen::MatrixXd& q,
                              const Eigen::MatrixXd& b, const Eigen::MatrixXd& a,
                              std::span<const Sample> batch, double weight_decay,
                              double eps = 1e-5);

}  // namespace fedlr
