#pragma once

#include "safelens/data.hpp"
#include "safelens/nn.hpp"

namespace safelens {

struct TrainConfig {
  int64_t epochs = 5;
  int64_t batch_size = 128;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps_adam = 1e-8;
  double lambda = 0.0;      // input-gradient entropy penalty coefficient
  double delta_pen = 1e-10;  // penalty log guard (distinct from the ball eps)
  uint64_t seed = 0;
  int64_t train_subset = 0;  // 0 = full training split
  DType dtype = DType::F64;
};
void validate(const TrainConfig& cfg);

struct TrainHistory {
  std::vector<double> ce;        // per-epoch mean cross-entropy
  std::vector<double> penalty;   // per-epoch mean entropy penalty (0 when lambda=0)
  std::vector<double> train_acc;
  double test_acc = 0.0;
};

// Adam with bias correction over a flat parameter list.
struct AdamState {
  std::vector<Tensor> m, v;
  int64_t t = 0;
};
void adam_step(std::vector<Tensor>& params, const std::vector<Tensor>& grads, AdamState& state,
               const TrainConfig& cfg);

struct PenaltyGraph {
  ag::NodeRef penalty;           // differentiable scalar, mean over the batch
  ag::NodeRef ce;                // the cross-entropy whose input gradient it uses
  GraphParams params;            // lifted with requires_grad
  std::vector<ag::NodeRef> flat; // deterministic parameter order
};

// Per sample: g = d(ce)/dx with the graph retained, p = |g|/sum|g| over that
// sample's features, penalty = -sum p log(p + delta_pen); the batch value is
// the mean. Samples with sum|g| < 1e-20 contribute exactly zero. The returned
// scalar supports a second backward pass to the parameters.
PenaltyGraph entropy_penalty(const Model& m, const Tensor& batch_x,
                             const std::vector<int64_t>& batch_y, double delta_pen);

// Mini-batch Adam on CE plus lambda times the entropy penalty. lambda = 0
// takes a penalty-free path bit-identical to plain CE training. Deterministic
// given cfg.seed (shuffle stream mix_seed(seed,"train/shuffle",epoch)).
std::pair<Model, TrainHistory> train(const Model& init, const Dataset& train_ds,
                                     const Dataset& test_ds, const TrainConfig& cfg);

struct AblationRow {
  double lambda = 0;
  double accuracy = 0;
  double drift = 0;    // mean zero-vs-blur ADS over the evaluation subset
  double entropy = 0;  // mean IG (zero baseline) attribution entropy
};

struct AblationConfig {
  TrainConfig train;
  int64_t eval_subset = 200;
  int64_t ig_steps = 64;
  int64_t blur_kernel = 5;
  double entropy_delta = 1e-10;
};

// Trains one model per lambda from the identical initialization and records
// accuracy, drift and entropy on the first eval_subset test samples.
std::vector<AblationRow> lambda_ablation(const Model& init, const Dataset& train_ds,
                                         const Dataset& test_ds, const std::vector<double>& lambdas,
                                         const AblationConfig& cfg);

std::string ablation_csv(const std::vector<AblationRow>& rows);

}  // namespace safelens
