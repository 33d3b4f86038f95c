#include "safelens/attack.hpp"

#include "safelens/error.hpp"
#include "safelens/rng.hpp"
#include "safelens/tensor_ops.hpp"
#include "safelens/thread_pool.hpp"

namespace safelens {

void validate(const AttackConfig& cfg) {
  if (cfg.eps < 0) throw ContractError("attack: eps must be >= 0");
  if (cfg.steps < 1) throw ContractError("attack: steps must be >= 1");
  if (cfg.restarts < 1) throw ContractError("attack: restarts must be >= 1");
  if (cfg.eps > 0 && (cfg.alpha <= 0 || cfg.alpha > cfg.eps))
    throw ContractError("attack: alpha must satisfy 0 < alpha <= eps");
}

double sample_loss(const Model& m, const Tensor& x, int64_t y) {
  const auto params = lift_params(m, false);
  const auto logits = forward_graph(m, params, ag::cst(adapt_input(m, x)));
  return ag::cross_entropy_mean(logits, {y})->value.item();
}

std::pair<double, Tensor> loss_and_input_grad(const Model& m, const Tensor& x, int64_t y) {
  const auto params = lift_params(m, false);
  const auto xv = ag::var(adapt_input(m, x));
  const auto loss = ag::cross_entropy_mean(forward_graph(m, params, xv), {y});
  const auto grads = ag::backward(loss, {xv});
  return {loss->value.item(), ag::grad_or_zeros(grads[0], xv).with_shape(x.shape())};
}

namespace {

struct Box {
  Tensor lo, hi;
};

Box attack_box(const Tensor& x, double eps) {
  return {tk::clamp(tk::add_scalar(x, -eps), 0.0, 1.0), tk::clamp(tk::add_scalar(x, eps), 0.0, 1.0)};
}

Tensor project(const Tensor& t, const Box& box) { return tk::min(tk::max(t, box.lo), box.hi); }

}  // namespace

Tensor fgsm(const Model& m, const Tensor& x, int64_t y, double eps) {
  if (eps < 0) throw ContractError("fgsm: eps must be >= 0");
  const Box box = attack_box(x, eps);
  const auto [loss, grad] = loss_and_input_grad(m, x, y);
  (void)loss;
  return project(tk::add(x, tk::mul_scalar(tk::sign(grad), eps)), box);
}

Tensor pgd(const Model& m, const Tensor& x, int64_t y, const AttackConfig& cfg) {
  validate(cfg);
  if (cfg.eps == 0.0) return x;
  const Box box = attack_box(x, cfg.eps);
  Tensor best_x = x;
  double best_loss = -std::numeric_limits<double>::infinity();
  for (int64_t r = 0; r < cfg.restarts; ++r) {
    Tensor xt = x;
    if (cfg.random_start) {
      Rng rng(mix_seed(cfg.seed, "pgd/restart", static_cast<uint64_t>(r)));
      Tensor u = Tensor::uninit(x.shape(), x.dtype());
      for (int64_t i = 0; i < u.numel(); ++i) u[i] = rng.uniform();
      u.seal("pgd_start");
      xt = tk::add(box.lo, tk::mul(u, tk::sub(box.hi, box.lo)));
    }
    for (int64_t t = 0; t < cfg.steps; ++t) {
      const auto [loss, grad] = loss_and_input_grad(m, xt, y);
      if (loss > best_loss) {
        best_loss = loss;
        best_x = xt;
      }
      xt = project(tk::add(xt, tk::mul_scalar(tk::sign(grad), cfg.alpha)), box);
    }
    const double final_loss = sample_loss(m, xt, y);
    if (final_loss > best_loss) {
      best_loss = final_loss;
      best_x = xt;
    }
  }
  return best_x;
}

AttackOutcome evaluate_attack(const Model& m, const Dataset& ds, const AttackConfig& cfg) {
  validate(cfg);
  const int64_t n = ds.size();
  if (n == 0) throw ContractError("adversarial_error: empty dataset");
  AttackOutcome out;
  out.clean_correct.assign(static_cast<size_t>(n), 0);
  out.flipped.assign(static_cast<size_t>(n), 0);
  parallel_for(n, 1, [&](int64_t lo, int64_t hi) {
    for (int64_t i = lo; i < hi; ++i) {
      const Tensor x = ds.image(i);
      const int64_t y = ds.label(i);
      if (predict_one(m, x) != y) continue;
      out.clean_correct[static_cast<size_t>(i)] = 1;
      AttackConfig per = cfg;
      per.seed = mix_seed(cfg.seed, "attack/sample", static_cast<uint64_t>(i));
      const Tensor x_adv = pgd(m, x, y, per);
      if (predict_one(m, x_adv) != y) out.flipped[static_cast<size_t>(i)] = 1;
    }
  });
  for (int64_t i = 0; i < n; ++i) {
    out.num_clean_correct += out.clean_correct[static_cast<size_t>(i)];
    out.num_flipped += out.flipped[static_cast<size_t>(i)];
  }
  out.rate = out.num_clean_correct == 0
                 ? 0.0
                 : static_cast<double>(out.num_flipped) / static_cast<double>(out.num_clean_correct);
  return out;
}

double adversarial_error(const Model& m, const Dataset& ds, const AttackConfig& cfg) {
  return evaluate_attack(m, ds, cfg).rate;
}

}  // namespace safelens
