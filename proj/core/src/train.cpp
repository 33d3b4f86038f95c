#include "safelens/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "safelens/attribution.hpp"
#include "safelens/error.hpp"
#include "safelens/metrics.hpp"
#include "safelens/report.hpp"
#include "safelens/rng.hpp"
#include "safelens/tensor_ops.hpp"

namespace safelens {

void validate(const TrainConfig& cfg) {
  if (cfg.epochs < 1) throw ContractError("train: epochs must be >= 1");
  if (cfg.batch_size < 1) throw ContractError("train: batch_size must be >= 1");
  if (cfg.lr <= 0) throw ContractError("train: learning rate must be > 0");
  if (cfg.lambda < 0) throw ContractError("train: lambda must be >= 0");
  if (cfg.delta_pen <= 0) throw ContractError("train: delta_pen must be > 0");
  if (cfg.beta1 < 0 || cfg.beta1 >= 1 || cfg.beta2 < 0 || cfg.beta2 >= 1)
    throw ContractError("train: betas must lie in [0,1)");
}

void adam_step(std::vector<Tensor>& params, const std::vector<Tensor>& grads, AdamState& state,
               const TrainConfig& cfg) {
  if (params.size() != grads.size()) throw ContractError("adam_step: arity mismatch");
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.push_back(Tensor::zeros(p.shape(), p.dtype()));
      state.v.push_back(Tensor::zeros(p.shape(), p.dtype()));
    }
  }
  ++state.t;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  for (size_t i = 0; i < params.size(); ++i) {
    Tensor& p = params[i];
    const Tensor& g = grads[i];
    if (!p.same_shape(g)) throw DimensionError("adam_step: gradient shape mismatch");
    Tensor& m = state.m[i];
    Tensor& v = state.v[i];
    for (int64_t j = 0; j < p.numel(); ++j) {
      m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
      v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      p[j] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps_adam);
    }
    m.seal("adam_m");
    v.seal("adam_v");
    p.seal("adam_param");
  }
}

namespace {

// -sum_i p_i log(p_i + delta) per row, mean over rows; rows with vanishing
// gradient mass contribute zero.
ag::NodeRef penalty_from_grad(const ag::NodeRef& gx, double delta_pen) {
  const int64_t n = gx->value.dim(0);
  const int64_t d = gx->value.numel() / n;
  ag::NodeRef flat = ag::reshape(gx, {n, d});
  ag::NodeRef a = ag::abs(flat);
  ag::NodeRef s = ag::sum_to(a, {n, 1});
  Tensor bump = Tensor::zeros({n, 1}, gx->value.dtype());
  for (int64_t i = 0; i < n; ++i)
    if (s->value[i] < 1e-20) bump[i] = 1.0;
  ag::NodeRef p = ag::div(a, ag::add(s, ag::cst(std::move(bump))));
  ag::NodeRef plog = ag::mul(p, ag::log(ag::add_scalar(p, delta_pen)));
  return ag::mean_all(ag::neg(ag::sum_to(plog, {n, 1})));
}

struct FlatIndex {
  std::vector<std::pair<size_t, std::string>> names;  // (layer, param name)
};

FlatIndex flat_index(const Model& m) {
  FlatIndex idx;
  for (size_t i = 0; i < m.params.size(); ++i)
    for (const auto& [name, t] : m.params[i]) idx.names.emplace_back(i, name);
  return idx;
}

Tensor to_dtype_batch(const Tensor& t, DType d) {
  if (t.dtype() == d) return t;
  return t.as_dtype(d);
}

}  // namespace

PenaltyGraph entropy_penalty(const Model& m, const Tensor& batch_x,
                             const std::vector<int64_t>& batch_y, double delta_pen) {
  if (batch_x.rank() < 1 || batch_x.dim(0) < 1 ||
      batch_x.dim(0) * shape_numel(m.meta.input_shape) != batch_x.numel())
    throw ContractError("entropy_penalty: batch must be nonempty and batched");
  if (delta_pen <= 0) throw ContractError("entropy_penalty: delta_pen must be > 0");
  PenaltyGraph out;
  out.params = lift_params(m, true);
  out.flat = flat_params(out.params);
  const ag::NodeRef xv = ag::var(adapt_batch(m, batch_x));
  const ag::NodeRef logits = forward_graph(m, out.params, xv);
  out.ce = ag::cross_entropy_mean(logits, batch_y);
  const auto grads = ag::backward(out.ce, {xv}, {.create_graph = true});
  if (!grads[0]) {
    out.penalty = ag::cst(Tensor::scalar(0.0, batch_x.dtype()));
    return out;
  }
  out.penalty = penalty_from_grad(grads[0], delta_pen);
  return out;
}

std::pair<Model, TrainHistory> train(const Model& init, const Dataset& train_ds,
                                     const Dataset& test_ds, const TrainConfig& cfg) {
  validate(cfg);
  if (train_ds.size() == 0) throw ContractError("train: empty training set");

  Model model = init;
  if (cfg.dtype == DType::F32)
    for (auto& layer : model.params)
      for (auto& [name, t] : layer) t = t.as_dtype(DType::F32);
  model.meta.dtype = cfg.dtype;
  model.meta.dataset = train_ds.name;

  const int64_t total =
      cfg.train_subset > 0 ? std::min<int64_t>(cfg.train_subset, train_ds.size()) : train_ds.size();
  const FlatIndex idx = flat_index(model);
  AdamState adam;
  TrainHistory hist;

  std::vector<int64_t> order(static_cast<size_t>(total));
  std::iota(order.begin(), order.end(), 0);

  for (int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng shuffle_rng(mix_seed(cfg.seed, "train/shuffle", static_cast<uint64_t>(epoch)));
    shuffle_rng.shuffle(order);
    double ce_sum = 0.0, pen_sum = 0.0;
    int64_t correct = 0;
    for (int64_t lo = 0; lo < total; lo += cfg.batch_size) {
      const int64_t hi = std::min<int64_t>(total, lo + cfg.batch_size);
      const std::vector<int64_t> batch_idx(order.begin() + lo, order.begin() + hi);
      Tensor bx = adapt_batch(model, to_dtype_batch(gather_images(train_ds, batch_idx), cfg.dtype));
      std::vector<int64_t> by(batch_idx.size());
      for (size_t i = 0; i < batch_idx.size(); ++i) by[i] = train_ds.label(batch_idx[i]);

      try {
        GraphParams params = lift_params(model, true);
        std::vector<ag::NodeRef> flat = flat_params(params);
        ag::NodeRef total_loss, ce;
        double pen_value = 0.0;
        if (cfg.lambda > 0.0) {
          const ag::NodeRef xv = ag::var(bx);
          const ag::NodeRef logits = forward_graph(model, params, xv);
          ce = ag::cross_entropy_mean(logits, by);
          const auto gx = ag::backward(ce, {xv}, {.create_graph = true});
          ag::NodeRef penalty = gx[0] ? penalty_from_grad(gx[0], cfg.delta_pen)
                                      : ag::cst(Tensor::scalar(0.0, bx.dtype()));
          pen_value = penalty->value.item();
          total_loss = ag::add(ce, ag::mul_scalar(penalty, cfg.lambda));
          const auto pred = tk::row_argmax(logits->value);
          for (size_t i = 0; i < by.size(); ++i)
            if (pred[i] == by[i]) ++correct;
        } else {
          const ag::NodeRef logits = forward_graph(model, params, ag::cst(bx));
          ce = ag::cross_entropy_mean(logits, by);
          total_loss = ce;
          const auto pred = tk::row_argmax(logits->value);
          for (size_t i = 0; i < by.size(); ++i)
            if (pred[i] == by[i]) ++correct;
        }
        const double ce_value = ce->value.item();
        if (!std::isfinite(ce_value))
          throw TrainingError("train: loss diverged at epoch " + std::to_string(epoch) + " batch " +
                              std::to_string(lo / cfg.batch_size));
        ce_sum += ce_value * static_cast<double>(hi - lo);
        pen_sum += pen_value * static_cast<double>(hi - lo);

        const auto grads = ag::backward(total_loss, flat);
        std::vector<Tensor> pvals, gvals;
        pvals.reserve(flat.size());
        gvals.reserve(flat.size());
        for (size_t i = 0; i < flat.size(); ++i) {
          pvals.push_back(flat[i]->value);
          gvals.push_back(ag::grad_or_zeros(grads[i], flat[i]));
        }
        adam_step(pvals, gvals, adam, cfg);
        for (size_t i = 0; i < idx.names.size(); ++i)
          model.params[idx.names[i].first][idx.names[i].second] = std::move(pvals[i]);
      } catch (const DomainError& e) {
        throw TrainingError("train: numeric failure at epoch " + std::to_string(epoch) + " batch " +
                            std::to_string(lo / cfg.batch_size) + ": " + e.what());
      }
    }
    hist.ce.push_back(ce_sum / static_cast<double>(total));
    hist.penalty.push_back(pen_sum / static_cast<double>(total));
    hist.train_acc.push_back(static_cast<double>(correct) / static_cast<double>(total));
  }
  if (test_ds.size() > 0) hist.test_acc = accuracy(model, test_ds.images, test_ds.labels);
  return {std::move(model), std::move(hist)};
}

std::vector<AblationRow> lambda_ablation(const Model& init, const Dataset& train_ds,
                                         const Dataset& test_ds, const std::vector<double>& lambdas,
                                         const AblationConfig& cfg) {
  if (lambdas.empty()) throw ContractError("lambda_ablation: empty lambda list");
  if (!std::is_sorted(lambdas.begin(), lambdas.end()))
    throw ContractError("lambda_ablation: lambdas must be sorted ascending");
  const Dataset eval = take(test_ds, std::min<int64_t>(cfg.eval_subset, test_ds.size()));
  std::vector<AblationRow> rows;
  for (const double lambda : lambdas) {
    TrainConfig tc = cfg.train;
    tc.lambda = lambda;
    auto [model, hist] = train(init, train_ds, test_ds, tc);
    AblationRow row;
    row.lambda = lambda;
    row.accuracy = hist.test_acc;
    double drift_sum = 0.0, entropy_sum = 0.0;
    for (int64_t i = 0; i < eval.size(); ++i) {
      const Tensor x = eval.image(i);
      const int64_t target = predict_one(model, x);
      const uint64_t seed_i = mix_seed(tc.seed, "ablation/sample", static_cast<uint64_t>(i));
      const Tensor zero = make_baseline(x, {BaselineKind::Zero}, seed_i);
      const Tensor blur = make_baseline(x, {BaselineKind::Blur, cfg.blur_kernel}, seed_i);
      const auto a_zero = integrated_gradients(model, x, zero, cfg.ig_steps, target);
      const auto a_blur = integrated_gradients(model, x, blur, cfg.ig_steps, target);
      drift_sum += attribution_drift(a_zero, a_blur);
      entropy_sum += attribution_entropy(a_zero, cfg.entropy_delta);
    }
    row.drift = drift_sum / static_cast<double>(eval.size());
    row.entropy = entropy_sum / static_cast<double>(eval.size());
    rows.push_back(row);
  }
  return rows;
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::ostringstream os;
  os << "lambda,accuracy,drift,entropy\n";
  for (const auto& r : rows)
    os << fmt_fixed(r.lambda) << "," << fmt_fixed(r.accuracy) << "," << fmt_fixed(r.drift) << ","
       << fmt_fixed(r.entropy) << "\n";
  return os.str();
}

}  // namespace safelens
