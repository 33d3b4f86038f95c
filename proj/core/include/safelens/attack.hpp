#pragma once

#include "safelens/data.hpp"
#include "safelens/nn.hpp"

namespace safelens {

struct AttackConfig {
  double eps = 0.1;
  double alpha = 0.025;  // step size; conventional default is eps/4
  int64_t steps = 40;
  int64_t restarts = 1;
  bool random_start = true;
  uint64_t seed = 0;
};

// Throws ContractError unless eps >= 0, steps >= 1, restarts >= 1 and
// (eps == 0 or 0 < alpha <= eps).
void validate(const AttackConfig& cfg);

// Cross-entropy of a single sample; the loss every attack here climbs.
double sample_loss(const Model& m, const Tensor& x, int64_t y);
// Loss and its input gradient in one pass.
std::pair<double, Tensor> loss_and_input_grad(const Model& m, const Tensor& x, int64_t y);

// One signed-gradient step of size eps, clipped to B_eps(x) intersected with
// [0,1]. A zero gradient returns x unchanged.
Tensor fgsm(const Model& m, const Tensor& x, int64_t y, double eps);

// Projected signed-gradient ascent; returns the highest-loss iterate seen
// across all steps and restarts (so the result never has lower loss than the
// start point when random_start is false). Restart r draws from the stream
// mix_seed(cfg.seed, "pgd/restart", r), independent of the restart count.
Tensor pgd(const Model& m, const Tensor& x, int64_t y, const AttackConfig& cfg);

struct AttackOutcome {
  std::vector<char> clean_correct;  // per sample
  std::vector<char> flipped;        // per sample; only meaningful when clean_correct
  int64_t num_clean_correct = 0;
  int64_t num_flipped = 0;
  double rate = 0.0;  // flipped / clean-correct
};

// Runs PGD on every clean-correct sample of `ds` with the per-sample stream
// mix_seed(cfg.seed, "attack/sample", i). Deterministic under any worker
// count. Throws ContractError on an empty dataset.
AttackOutcome evaluate_attack(const Model& m, const Dataset& ds, const AttackConfig& cfg);

// Fraction of clean-correct samples whose PGD output is misclassified.
double adversarial_error(const Model& m, const Dataset& ds, const AttackConfig& cfg);

}  // namespace safelens
