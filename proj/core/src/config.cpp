#include "safelens/config.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>

#include "json.hpp"
#include "safelens/attribution.hpp"
#include "safelens/error.hpp"
#include "safelens/model_io.hpp"
#include "safelens/report.hpp"
#include "safelens/rng.hpp"

namespace safelens {

namespace {

using nlohmann::json;

void reject_unknown(const json& j, const std::string& path, std::initializer_list<const char*> known) {
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (const char* k : known)
      if (key == k) ok = true;
    if (!ok) throw ConfigError(path + "." + key + ": unknown field");
  }
}

template <typename T>
T get_or(const json& j, const char* key, const std::string& path, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(path + "." + key + ": wrong type");
  }
}

std::optional<double> get_opt(const json& j, const char* key, const std::string& path) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  try {
    return j.at(key).get<double>();
  } catch (const json::exception&) {
    throw ConfigError(path + "." + key + ": wrong type");
  }
}

void check(bool ok, const std::string& field, const std::string& message) {
  if (!ok) throw ConfigError(field + ": " + message);
}

DatasetConfig parse_dataset(const json& j) {
  DatasetConfig d;
  reject_unknown(j, "dataset",
                 {"name", "train_images", "train_labels", "test_images", "test_labels",
                  "train_batches", "test_batches", "synthetic_train", "synthetic_test",
                  "synthetic_classes", "synthetic_shape", "synthetic_noise", "eval_subset",
                  "attack_subset", "verify_subset"});
  d.name = get_or<std::string>(j, "name", "dataset", d.name);
  check(d.name == "mnist" || d.name == "fashion_mnist" || d.name == "cifar10" || d.name == "synthetic",
        "dataset.name", "expected mnist/fashion_mnist/cifar10/synthetic, got '" + d.name + "'");
  d.train_images = get_or<std::string>(j, "train_images", "dataset", "");
  d.train_labels = get_or<std::string>(j, "train_labels", "dataset", "");
  d.test_images = get_or<std::string>(j, "test_images", "dataset", "");
  d.test_labels = get_or<std::string>(j, "test_labels", "dataset", "");
  d.train_batches = get_or<std::vector<std::string>>(j, "train_batches", "dataset", {});
  d.test_batches = get_or<std::vector<std::string>>(j, "test_batches", "dataset", {});
  d.synthetic_train = get_or<int64_t>(j, "synthetic_train", "dataset", d.synthetic_train);
  d.synthetic_test = get_or<int64_t>(j, "synthetic_test", "dataset", d.synthetic_test);
  d.synthetic_classes = get_or<int64_t>(j, "synthetic_classes", "dataset", d.synthetic_classes);
  d.synthetic_shape = get_or<Shape>(j, "synthetic_shape", "dataset", d.synthetic_shape);
  d.synthetic_noise = get_or<double>(j, "synthetic_noise", "dataset", d.synthetic_noise);
  d.eval_subset = get_or<int64_t>(j, "eval_subset", "dataset", d.eval_subset);
  d.attack_subset = get_or<int64_t>(j, "attack_subset", "dataset", d.attack_subset);
  d.verify_subset = get_or<int64_t>(j, "verify_subset", "dataset", d.verify_subset);
  check(d.eval_subset > 0, "dataset.eval_subset", "must be positive");
  check(d.attack_subset > 0, "dataset.attack_subset", "must be positive");
  check(d.verify_subset > 0, "dataset.verify_subset", "must be positive");
  if (d.name == "synthetic") {
    check(d.synthetic_train > 0, "dataset.synthetic_train", "must be positive");
    check(d.synthetic_test > 0, "dataset.synthetic_test", "must be positive");
    check(d.synthetic_classes > 1, "dataset.synthetic_classes", "must be > 1");
    check(d.synthetic_shape.size() == 3, "dataset.synthetic_shape", "must be [C,H,W]");
    check(d.synthetic_noise >= 0, "dataset.synthetic_noise", "must be >= 0");
  }
  return d;
}

ModelConfig parse_model(const json& j, const std::string& path) {
  ModelConfig m;
  reject_unknown(j, path, {"name", "arch", "hidden", "checkpoint"});
  m.arch = get_or<std::string>(j, "arch", path, m.arch);
  check(m.arch == "simple_cnn" || m.arch == "mlp" || m.arch == "mini_resnet", path + ".arch",
        "expected simple_cnn/mlp/mini_resnet, got '" + m.arch + "'");
  m.name = get_or<std::string>(j, "name", path, m.arch);
  check(!m.name.empty(), path + ".name", "must not be empty");
  m.hidden = get_or<std::vector<int64_t>>(j, "hidden", path, m.hidden);
  for (int64_t h : m.hidden) check(h > 0, path + ".hidden", "entries must be positive");
  m.checkpoint = get_or<std::string>(j, "checkpoint", path, "");
  return m;
}

TrainConfig parse_train(const json& j, uint64_t seed) {
  TrainConfig t;
  t.seed = seed;
  reject_unknown(j, "train",
                 {"epochs", "batch_size", "lr", "beta1", "beta2", "eps_adam", "lambda", "delta_pen",
                  "train_subset", "dtype"});
  t.epochs = get_or<int64_t>(j, "epochs", "train", t.epochs);
  t.batch_size = get_or<int64_t>(j, "batch_size", "train", t.batch_size);
  t.lr = get_or<double>(j, "lr", "train", t.lr);
  t.beta1 = get_or<double>(j, "beta1", "train", t.beta1);
  t.beta2 = get_or<double>(j, "beta2", "train", t.beta2);
  t.eps_adam = get_or<double>(j, "eps_adam", "train", t.eps_adam);
  t.lambda = get_or<double>(j, "lambda", "train", t.lambda);
  t.delta_pen = get_or<double>(j, "delta_pen", "train", t.delta_pen);
  t.train_subset = get_or<int64_t>(j, "train_subset", "train", t.train_subset);
  const std::string dt = get_or<std::string>(j, "dtype", "train", "f64");
  check(dt == "f32" || dt == "f64", "train.dtype", "expected f32 or f64");
  t.dtype = dt == "f32" ? DType::F32 : DType::F64;
  try {
    validate(t);
  } catch (const ContractError& e) {
    throw ConfigError(std::string("train: ") + e.what());
  }
  check(t.train_subset >= 0, "train.train_subset", "must be >= 0");
  return t;
}

AttackBlock parse_attack(const json& j) {
  AttackBlock a;
  reject_unknown(j, "attack", {"eps", "alpha", "steps", "restarts", "random_start"});
  a.eps = get_opt(j, "eps", "attack");
  a.alpha = get_opt(j, "alpha", "attack");
  a.steps = get_or<int64_t>(j, "steps", "attack", a.steps);
  a.restarts = get_or<int64_t>(j, "restarts", "attack", a.restarts);
  a.random_start = get_or<bool>(j, "random_start", "attack", a.random_start);
  if (a.eps) check(*a.eps >= 0, "attack.eps", "must be >= 0");
  check(a.steps >= 1, "attack.steps", "must be >= 1");
  check(a.restarts >= 1, "attack.restarts", "must be >= 1");
  return a;
}

VerifyBlock parse_verify(const json& j) {
  VerifyBlock v;
  reject_unknown(j, "verify", {"eps", "methods", "threshold"});
  v.eps = get_opt(j, "eps", "verify");
  v.methods = get_or<std::vector<std::string>>(j, "methods", "verify", v.methods);
  v.threshold = get_or<double>(j, "threshold", "verify", v.threshold);
  if (v.eps) check(*v.eps >= 0, "verify.eps", "must be >= 0");
  check(!v.methods.empty(), "verify.methods", "must not be empty");
  for (const auto& m : v.methods)
    check(m == "ibp" || m == "crown_ibp", "verify.methods", "unknown method '" + m + "'");
  check(v.threshold >= 0 && v.threshold <= 1, "verify.threshold", "must lie in [0,1]");
  return v;
}

AttributionBlock parse_attribution(const json& j) {
  AttributionBlock a;
  reject_unknown(j, "attribution",
                 {"ig_steps", "baselines", "sg_samples", "sg_sigma", "entropy_delta", "blur_kernel",
                  "curve_steps", "export_maps"});
  a.ig_steps = get_or<int64_t>(j, "ig_steps", "attribution", a.ig_steps);
  a.baselines = get_or<std::vector<std::string>>(j, "baselines", "attribution", a.baselines);
  a.sg_samples = get_or<int64_t>(j, "sg_samples", "attribution", a.sg_samples);
  a.sg_sigma = get_or<double>(j, "sg_sigma", "attribution", a.sg_sigma);
  a.entropy_delta = get_or<double>(j, "entropy_delta", "attribution", a.entropy_delta);
  a.blur_kernel = get_or<int64_t>(j, "blur_kernel", "attribution", a.blur_kernel);
  a.curve_steps = get_or<int64_t>(j, "curve_steps", "attribution", a.curve_steps);
  a.export_maps = get_or<bool>(j, "export_maps", "attribution", a.export_maps);
  check(a.ig_steps >= 1, "attribution.ig_steps", "must be >= 1");
  check(a.baselines.size() >= 1, "attribution.baselines", "must not be empty");
  for (const auto& b : a.baselines) baseline_from_name(b);
  check(a.sg_samples >= 1, "attribution.sg_samples", "must be >= 1");
  check(a.sg_sigma >= 0, "attribution.sg_sigma", "must be >= 0");
  check(a.entropy_delta > 0, "attribution.entropy_delta", "must be > 0");
  check(a.blur_kernel >= 1 && a.blur_kernel % 2 == 1, "attribution.blur_kernel", "must be odd");
  check(a.curve_steps >= 2, "attribution.curve_steps", "must be >= 2");
  return a;
}

AblationBlock parse_ablation(const json& j) {
  AblationBlock a;
  reject_unknown(j, "ablation", {"lambdas"});
  a.lambdas = get_or<std::vector<double>>(j, "lambdas", "ablation", a.lambdas);
  check(!a.lambdas.empty(), "ablation.lambdas", "must not be empty");
  for (double l : a.lambdas) check(l >= 0, "ablation.lambdas", "entries must be >= 0");
  check(std::is_sorted(a.lambdas.begin(), a.lambdas.end()), "ablation.lambdas",
        "must be sorted ascending");
  return a;
}

}  // namespace

double RunConfig::attack_eps() const {
  if (attack.eps) return *attack.eps;
  return dataset.name == "cifar10" ? 0.3 : 0.1;
}

double RunConfig::attack_alpha() const {
  if (attack.alpha) return *attack.alpha;
  return attack_eps() / 4.0;
}

double RunConfig::verify_eps() const { return verify.eps ? *verify.eps : attack_eps(); }

AttackConfig RunConfig::attack_config() const {
  AttackConfig a;
  a.eps = attack_eps();
  a.alpha = attack_alpha();
  a.steps = attack.steps;
  a.restarts = attack.restarts;
  a.random_start = attack.random_start;
  a.seed = mix_seed(seed, "attack");
  return a;
}

RunConfig parse_config_text(const std::string& text, const std::string& origin) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(origin + ": malformed JSON: " + e.what());
  }
  reject_unknown(j, origin,
                 {"seed", "threads", "output_dir", "dataset", "models", "train", "attack", "verify",
                  "attribution", "ablation"});
  RunConfig cfg;
  cfg.seed = get_or<uint64_t>(j, "seed", origin, 0);
  cfg.threads = get_or<int>(j, "threads", origin, 0);
  check(cfg.threads >= 0, "threads", "must be >= 0");
  cfg.output_dir = get_or<std::string>(j, "output_dir", origin, "");
  cfg.dataset = parse_dataset(j.contains("dataset") ? j.at("dataset") : json::object());
  if (j.contains("models")) {
    check(j.at("models").is_array() && !j.at("models").empty(), "models", "must be a nonempty array");
    for (size_t i = 0; i < j.at("models").size(); ++i)
      cfg.models.push_back(parse_model(j.at("models")[i], "models[" + std::to_string(i) + "]"));
  } else {
    cfg.models.push_back(ModelConfig{});
    cfg.models.back().name = cfg.models.back().arch;
  }
  cfg.train = parse_train(j.contains("train") ? j.at("train") : json::object(), cfg.seed);
  cfg.attack = parse_attack(j.contains("attack") ? j.at("attack") : json::object());
  cfg.verify = parse_verify(j.contains("verify") ? j.at("verify") : json::object());
  cfg.attribution = parse_attribution(j.contains("attribution") ? j.at("attribution") : json::object());
  cfg.ablation = parse_ablation(j.contains("ablation") ? j.at("ablation") : json::object());
  const AttackConfig ac = cfg.attack_config();
  try {
    validate(ac);
  } catch (const ContractError& e) {
    throw ConfigError(std::string("attack: ") + e.what());
  }
  return cfg;
}

RunConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError(path + ": cannot open config file");
  std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return parse_config_text(text, path);
}

namespace {

void need_file(const std::string& p, const std::string& field) {
  check(!p.empty(), field, "required for this dataset/command");
  if (!std::filesystem::exists(p)) throw ConfigError(field + ": file not found: " + p);
}

}  // namespace

void validate_paths(const RunConfig& cfg, CommandNeeds needs) {
  const bool want_train_data = needs == CommandNeeds::TrainData;
  const bool want_test_data = needs == CommandNeeds::TrainData || needs == CommandNeeds::CheckpointAndData;
  const bool want_checkpoint = needs == CommandNeeds::Checkpoint || needs == CommandNeeds::CheckpointAndData;
  if (cfg.dataset.name == "mnist" || cfg.dataset.name == "fashion_mnist") {
    if (want_train_data) {
      need_file(cfg.dataset.train_images, "dataset.train_images");
      need_file(cfg.dataset.train_labels, "dataset.train_labels");
    }
    if (want_test_data) {
      need_file(cfg.dataset.test_images, "dataset.test_images");
      need_file(cfg.dataset.test_labels, "dataset.test_labels");
    }
  } else if (cfg.dataset.name == "cifar10") {
    if (want_train_data) {
      check(!cfg.dataset.train_batches.empty(), "dataset.train_batches", "must not be empty");
      for (size_t i = 0; i < cfg.dataset.train_batches.size(); ++i)
        need_file(cfg.dataset.train_batches[i], "dataset.train_batches[" + std::to_string(i) + "]");
    }
    if (want_test_data) {
      check(!cfg.dataset.test_batches.empty(), "dataset.test_batches", "must not be empty");
      for (size_t i = 0; i < cfg.dataset.test_batches.size(); ++i)
        need_file(cfg.dataset.test_batches[i], "dataset.test_batches[" + std::to_string(i) + "]");
    }
  }
  if (want_checkpoint) {
    for (size_t i = 0; i < cfg.models.size(); ++i) {
      check(!cfg.models[i].checkpoint.empty(), "models[" + std::to_string(i) + "].checkpoint",
            "required for this command");
      need_file(cfg.models[i].checkpoint, "models[" + std::to_string(i) + "].checkpoint");
    }
  }
}

std::string resolved_config(const RunConfig& cfg) {
  json j;
  j["seed"] = cfg.seed;
  j["threads"] = cfg.threads;
  j["output_dir"] = cfg.output_dir;
  j["dataset"] = {
      {"name", cfg.dataset.name},
      {"train_images", cfg.dataset.train_images},
      {"train_labels", cfg.dataset.train_labels},
      {"test_images", cfg.dataset.test_images},
      {"test_labels", cfg.dataset.test_labels},
      {"train_batches", cfg.dataset.train_batches},
      {"test_batches", cfg.dataset.test_batches},
      {"synthetic_train", cfg.dataset.synthetic_train},
      {"synthetic_test", cfg.dataset.synthetic_test},
      {"synthetic_classes", cfg.dataset.synthetic_classes},
      {"synthetic_shape", cfg.dataset.synthetic_shape},
      {"synthetic_noise", cfg.dataset.synthetic_noise},
      {"eval_subset", cfg.dataset.eval_subset},
      {"attack_subset", cfg.dataset.attack_subset},
      {"verify_subset", cfg.dataset.verify_subset},
  };
  j["models"] = json::array();
  for (const auto& m : cfg.models)
    j["models"].push_back({{"name", m.name},
                           {"arch", m.arch},
                           {"hidden", m.hidden},
                           {"checkpoint", m.checkpoint}});
  j["train"] = {
      {"epochs", cfg.train.epochs},
      {"batch_size", cfg.train.batch_size},
      {"lr", cfg.train.lr},
      {"beta1", cfg.train.beta1},
      {"beta2", cfg.train.beta2},
      {"eps_adam", cfg.train.eps_adam},
      {"lambda", cfg.train.lambda},
      {"delta_pen", cfg.train.delta_pen},
      {"train_subset", cfg.train.train_subset},
      {"dtype", cfg.train.dtype == DType::F32 ? "f32" : "f64"},
  };
  j["attack"] = {
      {"eps", cfg.attack_eps()},
      {"alpha", cfg.attack_alpha()},
      {"steps", cfg.attack.steps},
      {"restarts", cfg.attack.restarts},
      {"random_start", cfg.attack.random_start},
  };
  j["verify"] = {
      {"eps", cfg.verify_eps()},
      {"methods", cfg.verify.methods},
      {"threshold", cfg.verify.threshold},
  };
  j["attribution"] = {
      {"ig_steps", cfg.attribution.ig_steps},
      {"baselines", cfg.attribution.baselines},
      {"sg_samples", cfg.attribution.sg_samples},
      {"sg_sigma", cfg.attribution.sg_sigma},
      {"entropy_delta", cfg.attribution.entropy_delta},
      {"blur_kernel", cfg.attribution.blur_kernel},
      {"curve_steps", cfg.attribution.curve_steps},
      {"export_maps", cfg.attribution.export_maps},
  };
  j["ablation"] = {{"lambdas", cfg.ablation.lambdas}};
  return j.dump(2) + "\n";
}

std::string config_digest(const RunConfig& cfg) {
  const std::string text = resolved_config(cfg);
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(fnv1a64(text.data(), text.size())));
  return buf;
}

Dataset load_split(const RunConfig& cfg, const std::string& split) {
  const auto& d = cfg.dataset;
  Dataset out;
  if (d.name == "synthetic") {
    out = make_synthetic(split == "train" ? d.synthetic_train : d.synthetic_test, d.synthetic_classes,
                         d.synthetic_shape, cfg.seed, split, d.synthetic_noise);
  } else if (d.name == "cifar10") {
    out = load_cifar10(split == "train" ? d.train_batches : d.test_batches);
  } else {
    out = split == "train" ? load_idx(d.train_images, d.train_labels)
                           : load_idx(d.test_images, d.test_labels);
  }
  out.name = d.name;
  out.split = split;
  return out;
}

}  // namespace safelens
