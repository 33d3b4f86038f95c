#include "safelens/evaluate.hpp"

#include <cmath>
#include <filesystem>
#include <sstream>
#include <thread>

#include "json.hpp"
#include "safelens/attack.hpp"
#include "safelens/attribution.hpp"
#include "safelens/bounds.hpp"
#include "safelens/error.hpp"
#include "safelens/metrics.hpp"
#include "safelens/model_io.hpp"
#include "safelens/rng.hpp"
#include "safelens/thread_pool.hpp"

namespace safelens {

namespace fs = std::filesystem;

namespace {

std::string join(const std::string& dir, const std::string& name) {
  return (fs::path(dir) / name).string();
}

std::string checkpoint_filename(const ModelConfig& mc) {
  if (mc.checkpoint.empty()) return mc.name + ".slm";
  return fs::path(mc.checkpoint).filename().string();
}

Shape model_input_shape(const std::string& arch, const Dataset& ds) {
  if (arch == "mlp") return {shape_numel(ds.sample_shape())};
  return ds.sample_shape();
}

std::string g9(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

}  // namespace

void prepare_run(const RunConfig& cfg, const std::string& outdir) {
  fs::create_directories(outdir);
  const int threads = cfg.threads > 0 ? cfg.threads
                                      : std::max(1u, std::thread::hardware_concurrency());
  ThreadPool::instance().set_threads(threads);
  write_text_file(join(outdir, "resolved_config.json"), resolved_config(cfg));
}

void run_train(const RunConfig& cfg, const std::string& outdir) {
  validate_paths(cfg, CommandNeeds::TrainData);
  RunConfig resolved = cfg;
  for (auto& mc : resolved.models) mc.checkpoint = checkpoint_filename(mc);
  prepare_run(resolved, outdir);

  const Dataset train_ds = load_split(cfg, "train");
  const Dataset test_ds = load_split(cfg, "test");
  nlohmann::json summary = nlohmann::json::array();
  for (const auto& mc : resolved.models) {
    Model init = build_model(mc.arch, model_input_shape(mc.arch, train_ds), train_ds.num_classes,
                             mc.hidden, cfg.seed, cfg.train.dtype);
    init.meta.config_digest = config_digest(resolved);
    auto [model, hist] = train(init, train_ds, test_ds, cfg.train);
    model.meta.config_digest = init.meta.config_digest;
    save_model(model, join(outdir, mc.checkpoint));

    std::ostringstream os;
    os << "epoch,ce,penalty,train_acc\n";
    for (size_t e = 0; e < hist.ce.size(); ++e)
      os << e << "," << fmt_fixed(hist.ce[e]) << "," << fmt_fixed(hist.penalty[e]) << ","
         << fmt_fixed(hist.train_acc[e]) << "\n";
    write_text_file(join(outdir, mc.name + "_history.csv"), os.str());
    summary.push_back({{"model", mc.name},
                       {"checkpoint", mc.checkpoint},
                       {"test_acc", hist.test_acc},
                       {"params", param_count(model)},
                       {"epochs", cfg.train.epochs},
                       {"lambda", cfg.train.lambda}});
  }
  write_text_file(join(outdir, "train_summary.json"), summary.dump(2) + "\n");
}

SafetyRow evaluate_model_row(const RunConfig& cfg, const ModelConfig& mc, const Model& model,
                             const Dataset& test, std::string* certificates_csv) {
  SafetyRow row;
  row.model = mc.name;
  row.dataset = test.name;
  row.config_digest = config_digest(cfg);
  std::string stage = "accuracy";
  try {
    row.accuracy = accuracy(model, test.images, test.labels);

    stage = "attack";
    const Dataset attack_set = take(test, std::min<int64_t>(cfg.dataset.attack_subset, test.size()));
    row.attack_samples = attack_set.size();
    const AttackOutcome attack_out = evaluate_attack(model, attack_set, cfg.attack_config());
    row.adv_error = attack_out.rate;

    stage = "verify";
    const Dataset verify_set = take(test, std::min<int64_t>(cfg.dataset.verify_subset, test.size()));
    row.verify_samples = verify_set.size();
    const double veps = cfg.verify_eps();
    const int64_t vn = verify_set.size();
    std::vector<VerifyResult> ibp_res(static_cast<size_t>(vn)), crown_res(static_cast<size_t>(vn));
    std::vector<char> pgd_flip(static_cast<size_t>(vn), 0);
    std::vector<int64_t> yhat(static_cast<size_t>(vn), 0);
    AttackConfig pgd_cfg = cfg.attack_config();
    pgd_cfg.eps = veps;
    pgd_cfg.alpha = std::min(pgd_cfg.alpha, veps > 0 ? veps / 4.0 : 1.0);
    parallel_for(vn, 1, [&](int64_t lo, int64_t hi) {
      for (int64_t i = lo; i < hi; ++i) {
        const Tensor x = verify_set.image(i);
        const int64_t y = predict_one(model, x);
        yhat[static_cast<size_t>(i)] = y;
        ibp_res[static_cast<size_t>(i)] = ibp_certify(model, x, veps, y);
        crown_res[static_cast<size_t>(i)] = crown_ibp_certify(model, x, veps, y);
        if (veps > 0) {
          AttackConfig per = pgd_cfg;
          per.seed = mix_seed(pgd_cfg.seed, "verify/sample", static_cast<uint64_t>(i));
          const Tensor adv = pgd(model, x, y, per);
          if (predict_one(model, adv) != y) pgd_flip[static_cast<size_t>(i)] = 1;
        }
      }
    });
    int64_t ibp_cert = 0, crown_cert = 0;
    std::ostringstream certs;
    for (int64_t i = 0; i < vn; ++i) {
      const auto& ir = ibp_res[static_cast<size_t>(i)];
      const auto& cr = crown_res[static_cast<size_t>(i)];
      ibp_cert += ir.status == VerifyStatus::Certified;
      crown_cert += cr.status == VerifyStatus::Certified;
      certs << mc.name << "," << i << ",ibp," << verify_status_name(ir.status) << ","
            << g9(ir.min_margin()) << "\n";
      certs << mc.name << "," << i << ",crown_ibp," << verify_status_name(cr.status) << ","
            << g9(cr.min_margin()) << "\n";
      certs << mc.name << "," << i << ",pgd,"
            << (pgd_flip[static_cast<size_t>(i)] ? "falsified" : "unknown") << ",\n";
    }
    if (certificates_csv) *certificates_csv += certs.str();
    row.formal_verif = static_cast<double>(ibp_cert) / static_cast<double>(vn);
    row.crown_ibp = static_cast<double>(crown_cert) / static_cast<double>(vn);
    row.ibp_pass = row.formal_verif >= cfg.verify.threshold;
    row.crown_pass = row.crown_ibp >= cfg.verify.threshold;

    stage = "attribution";
    const Dataset eval_set = take(test, std::min<int64_t>(cfg.dataset.eval_subset, test.size()));
    row.eval_samples = eval_set.size();
    const int64_t en = eval_set.size();
    std::vector<double> ig_entropy(static_cast<size_t>(en)), drift(static_cast<size_t>(en)),
        sg_entropy(static_cast<size_t>(en)), del_auc_v(static_cast<size_t>(en)),
        ins_auc_v(static_cast<size_t>(en));
    const auto& ab = cfg.attribution;
    parallel_for(en, 1, [&](int64_t lo, int64_t hi) {
      for (int64_t i = lo; i < hi; ++i) {
        const Tensor x = eval_set.image(i);
        const int64_t target = predict_one(model, x);
        const uint64_t si = mix_seed(cfg.seed, "eval/sample", static_cast<uint64_t>(i));
        const Tensor zero = make_baseline(x, {BaselineKind::Zero, ab.blur_kernel, ab.sg_sigma}, si);
        const Tensor blur = make_baseline(x, {BaselineKind::Blur, ab.blur_kernel, ab.sg_sigma}, si);
        const auto ig_zero = integrated_gradients(model, x, zero, ab.ig_steps, target);
        const auto ig_blur = integrated_gradients(model, x, blur, ab.ig_steps, target);
        const auto sg = smoothgrad_sq(model, x, ab.sg_samples, ab.sg_sigma, target, si);
        ig_entropy[static_cast<size_t>(i)] = attribution_entropy(ig_zero, ab.entropy_delta);
        drift[static_cast<size_t>(i)] = attribution_drift(ig_zero, ig_blur);
        sg_entropy[static_cast<size_t>(i)] = attribution_entropy(sg, ab.entropy_delta);
        del_auc_v[static_cast<size_t>(i)] = auc(deletion_curve(model, x, ig_zero, ab.curve_steps));
        ins_auc_v[static_cast<size_t>(i)] = auc(insertion_curve(model, x, ig_zero, ab.curve_steps));
      }
    });
    const auto mean = [](const std::vector<double>& v) {
      double s = 0;
      for (double x : v) s += x;
      return v.empty() ? 0.0 : s / static_cast<double>(v.size());
    };
    row.entropy = mean(ig_entropy);
    row.drift = mean(drift);
    row.smoothgrad2 = mean(sg_entropy);
    row.del_auc = mean(del_auc_v);
    row.ins_auc = mean(ins_auc_v);
  } catch (const Error& e) {
    throw Error("evaluate stage '" + stage + "' failed for model '" + mc.name + "': " + e.what());
  }
  return row;
}

void run_evaluate(const RunConfig& cfg, const std::string& outdir) {
  validate_paths(cfg, CommandNeeds::CheckpointAndData);
  prepare_run(cfg, outdir);
  const Dataset test = load_split(cfg, "test");
  std::vector<SafetyRow> rows;
  std::string certs = "model,sample_id,method,status,min_margin\n";
  for (const auto& mc : cfg.models) {
    try {
      const Model model = load_model(mc.checkpoint);
      rows.push_back(evaluate_model_row(cfg, mc, model, test, &certs));
    } catch (const Error&) {
      write_report_csv(join(outdir, "report.partial.csv"), rows, /*partial=*/true);
      write_text_file(join(outdir, "certificates.csv"), certs);
      throw;
    }
  }
  write_report_csv(join(outdir, "report.csv"), rows);
  write_report_json(join(outdir, "report.json"), rows);
  write_text_file(join(outdir, "certificates.csv"), certs);
}

void run_attack_cmd(const RunConfig& cfg, const std::string& outdir) {
  validate_paths(cfg, CommandNeeds::CheckpointAndData);
  prepare_run(cfg, outdir);
  const Dataset test = load_split(cfg, "test");
  std::ostringstream samples;
  samples << "model,sample_id,clean_correct,flipped\n";
  std::ostringstream summary;
  summary << "model,eps,alpha,steps,restarts,samples,clean_correct,flipped,adv_error\n";
  for (const auto& mc : cfg.models) {
    const Model model = load_model(mc.checkpoint);
    const Dataset subset = take(test, std::min<int64_t>(cfg.dataset.attack_subset, test.size()));
    const AttackConfig ac = cfg.attack_config();
    const AttackOutcome out = evaluate_attack(model, subset, ac);
    for (int64_t i = 0; i < subset.size(); ++i)
      samples << mc.name << "," << i << "," << int(out.clean_correct[static_cast<size_t>(i)]) << ","
              << int(out.flipped[static_cast<size_t>(i)]) << "\n";
    summary << mc.name << "," << g9(ac.eps) << "," << g9(ac.alpha) << "," << ac.steps << ","
            << ac.restarts << "," << subset.size() << "," << out.num_clean_correct << ","
            << out.num_flipped << "," << fmt_fixed(out.rate) << "\n";
  }
  write_text_file(join(outdir, "attack_samples.csv"), samples.str());
  write_text_file(join(outdir, "attack_summary.csv"), summary.str());
}

void run_verify_cmd(const RunConfig& cfg, const std::string& outdir) {
  validate_paths(cfg, CommandNeeds::CheckpointAndData);
  prepare_run(cfg, outdir);
  const Dataset test = load_split(cfg, "test");
  std::string certs = "model,sample_id,method,status,min_margin\n";
  std::ostringstream summary;
  summary << "model,method,eps,samples,certified,rate,threshold,pass\n";
  const double veps = cfg.verify_eps();
  for (const auto& mc : cfg.models) {
    const Model model = load_model(mc.checkpoint);
    const Dataset subset = take(test, std::min<int64_t>(cfg.dataset.verify_subset, test.size()));
    const int64_t n = subset.size();
    for (const auto& method_name : cfg.verify.methods) {
      const VerifyMethod method = verify_method_from_name(method_name);
      std::vector<VerifyResult> res(static_cast<size_t>(n));
      parallel_for(n, 1, [&](int64_t lo, int64_t hi) {
        for (int64_t i = lo; i < hi; ++i) {
          const Tensor x = subset.image(i);
          res[static_cast<size_t>(i)] = certify(model, x, veps, predict_one(model, x), method);
        }
      });
      int64_t cert = 0;
      for (int64_t i = 0; i < n; ++i) {
        const auto& r = res[static_cast<size_t>(i)];
        cert += r.status == VerifyStatus::Certified;
        certs += mc.name + "," + std::to_string(i) + "," + method_name + "," +
                 verify_status_name(r.status) + "," + g9(r.min_margin()) + "\n";
      }
      const double rate = static_cast<double>(cert) / static_cast<double>(n);
      summary << mc.name << "," << method_name << "," << g9(veps) << "," << n << "," << cert << ","
              << fmt_fixed(rate) << "," << fmt_fixed(cfg.verify.threshold) << ","
              << (rate >= cfg.verify.threshold ? 1 : 0) << "\n";
    }
  }
  write_text_file(join(outdir, "certificates.csv"), certs);
  write_text_file(join(outdir, "verify_summary.csv"), summary.str());
}

void run_attribute_cmd(const RunConfig& cfg, const std::string& outdir) {
  validate_paths(cfg, CommandNeeds::CheckpointAndData);
  prepare_run(cfg, outdir);
  const Dataset test = load_split(cfg, "test");
  const auto& ab = cfg.attribution;
  std::ostringstream maps;
  maps << "model,sample_id,method,baseline,channel,row,col,value\n";
  for (const auto& mc : cfg.models) {
    const Model model = load_model(mc.checkpoint);
    const Dataset subset = take(test, std::min<int64_t>(cfg.dataset.eval_subset, test.size()));
    for (int64_t i = 0; i < subset.size(); ++i) {
      const Tensor x = subset.image(i);
      const int64_t target = predict_one(model, x);
      const uint64_t si = mix_seed(cfg.seed, "eval/sample", static_cast<uint64_t>(i));
      for (const auto& bname : ab.baselines) {
        BaselineSpec bs{baseline_from_name(bname), ab.blur_kernel, ab.sg_sigma};
        const Tensor baseline = make_baseline(x, bs, si);
        const auto map = integrated_gradients(model, x, baseline, ab.ig_steps, target);
        const Shape s = x.shape();  // model input sample shape
        const int64_t c = s.size() == 3 ? s[0] : 1;
        const int64_t h = s.size() == 3 ? s[1] : 1;
        const int64_t w = s.size() == 3 ? s[2] : s[0];
        for (int64_t ch = 0; ch < c; ++ch)
          for (int64_t r = 0; r < h; ++r)
            for (int64_t col = 0; col < w; ++col)
              maps << mc.name << "," << i << ",ig," << bname << "," << ch << "," << r << "," << col
                   << "," << g9(map.scores[(ch * h + r) * w + col]) << "\n";
      }
    }
  }
  write_text_file(join(outdir, "attributions.csv"), maps.str());
}

void run_correlate_cmd(const RunConfig& cfg, const std::vector<std::string>& report_csvs,
                       const std::string& outdir) {
  if (report_csvs.empty()) throw ConfigError("correlate: no report CSVs given");
  prepare_run(cfg, outdir);
  std::vector<SafetyRow> rows;
  for (const auto& path : report_csvs) {
    const auto part = read_report_csv(path);
    rows.insert(rows.end(), part.begin(), part.end());
  }
  write_corr_csv(join(outdir, "correlations.csv"), correlate_rows(rows));
}

void run_ablate_cmd(const RunConfig& cfg, const std::string& outdir) {
  validate_paths(cfg, CommandNeeds::TrainData);
  prepare_run(cfg, outdir);
  const Dataset train_ds = load_split(cfg, "train");
  const Dataset test_ds = load_split(cfg, "test");
  const auto& mc = cfg.models.front();
  Model init = build_model(mc.arch, model_input_shape(mc.arch, train_ds), train_ds.num_classes,
                           mc.hidden, cfg.seed, cfg.train.dtype);
  init.meta.config_digest = config_digest(cfg);
  AblationConfig ac;
  ac.train = cfg.train;
  ac.eval_subset = cfg.dataset.eval_subset;
  ac.ig_steps = cfg.attribution.ig_steps;
  ac.blur_kernel = cfg.attribution.blur_kernel;
  ac.entropy_delta = cfg.attribution.entropy_delta;
  const auto rows = lambda_ablation(init, train_ds, test_ds, cfg.ablation.lambdas, ac);
  write_text_file(join(outdir, "lambda_ablation.csv"), ablation_csv(rows));
}

void run_baseline_sensitivity_cmd(const RunConfig& cfg, const std::string& outdir) {
  validate_paths(cfg, CommandNeeds::CheckpointAndData);
  prepare_run(cfg, outdir);
  const Dataset test = load_split(cfg, "test");
  const auto& mc = cfg.models.front();
  const Model model = load_model(mc.checkpoint);
  const Dataset subset = take(test, std::min<int64_t>(cfg.dataset.eval_subset, test.size()));
  const auto& ab = cfg.attribution;
  constexpr BaselineKind kinds[4] = {BaselineKind::Zero, BaselineKind::Blur,
                                     BaselineKind::GaussianNoise, BaselineKind::Uniform};
  const int64_t n = subset.size();
  // ads_sum[a][b] accumulates drift between baselines a and b.
  double ads_sum[4][4] = {};
  std::vector<std::array<AttributionMap, 4>> maps(static_cast<size_t>(n));
  parallel_for(n, 1, [&](int64_t lo, int64_t hi) {
    for (int64_t i = lo; i < hi; ++i) {
      const Tensor x = subset.image(i);
      const int64_t target = predict_one(model, x);
      const uint64_t si = mix_seed(cfg.seed, "eval/sample", static_cast<uint64_t>(i));
      for (int k = 0; k < 4; ++k) {
        const Tensor b = make_baseline(x, {kinds[k], ab.blur_kernel, ab.sg_sigma}, si);
        maps[static_cast<size_t>(i)][static_cast<size_t>(k)] =
            integrated_gradients(model, x, b, ab.ig_steps, target);
      }
    }
  });
  for (int64_t i = 0; i < n; ++i)
    for (int a = 0; a < 4; ++a)
      for (int b = a + 1; b < 4; ++b) {
        const double d = attribution_drift(maps[static_cast<size_t>(i)][static_cast<size_t>(a)],
                                           maps[static_cast<size_t>(i)][static_cast<size_t>(b)]);
        ads_sum[a][b] += d;
        ads_sum[b][a] += d;
      }

  const auto mean_of = [&](int a, int b) { return ads_sum[a][b] / static_cast<double>(n); };
  std::ostringstream pairs;
  pairs << "baseline_a,baseline_b,mean_ads\n";
  const int pair_idx[4][2] = {{0, 1}, {0, 2}, {0, 3}, {1, 2}};
  for (const auto& p : pair_idx)
    pairs << baseline_name(kinds[p[0]]) << "," << baseline_name(kinds[p[1]]) << ","
          << fmt_fixed(mean_of(p[0], p[1])) << "\n";
  write_text_file(join(outdir, "baseline_pairs.csv"), pairs.str());

  std::ostringstream matrix;
  matrix << "baseline,zero,blur,gaussian,uniform\n";
  for (int a = 0; a < 4; ++a) {
    matrix << baseline_name(kinds[a]);
    for (int b = 0; b < 4; ++b) matrix << "," << fmt_fixed(a == b ? 0.0 : mean_of(a, b));
    matrix << "\n";
  }
  write_text_file(join(outdir, "baseline_matrix.csv"), matrix.str());
}

}  // namespace safelens
