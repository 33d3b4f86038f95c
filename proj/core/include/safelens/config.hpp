#pragma once

#include <optional>
#include <string>
#include <vector>

#include "safelens/attack.hpp"
#include "safelens/train.hpp"

namespace safelens {

struct DatasetConfig {
  std::string name = "synthetic";  // mnist | fashion_mnist | cifar10 | synthetic
  std::string train_images, train_labels, test_images, test_labels;  // idx formats
  std::vector<std::string> train_batches, test_batches;              // cifar10
  int64_t synthetic_train = 2048, synthetic_test = 512;
  int64_t synthetic_classes = 4;
  Shape synthetic_shape{1, 12, 12};
  double synthetic_noise = 0.15;
  int64_t eval_subset = 200;
  int64_t attack_subset = 1000;
  int64_t verify_subset = 200;
};

struct ModelConfig {
  std::string name;
  std::string arch = "simple_cnn";  // simple_cnn | mlp | mini_resnet
  std::vector<int64_t> hidden{64};  // mlp only
  std::string checkpoint;           // output of train, input of everything else
};

struct AttackBlock {
  std::optional<double> eps;    // default depends on the dataset
  std::optional<double> alpha;  // default eps/4
  int64_t steps = 40;
  int64_t restarts = 1;
  bool random_start = true;
};

struct VerifyBlock {
  std::optional<double> eps;  // default: the attack eps
  std::vector<std::string> methods{"ibp", "crown_ibp"};
  double threshold = 0.5;  // verified-rate pass mark
};

struct AttributionBlock {
  int64_t ig_steps = 64;
  std::vector<std::string> baselines{"zero", "blur"};
  int64_t sg_samples = 25;
  double sg_sigma = 0.1;
  double entropy_delta = 1e-10;
  int64_t blur_kernel = 5;
  int64_t curve_steps = 20;
  bool export_maps = false;
};

struct AblationBlock {
  std::vector<double> lambdas{0.0, 0.01, 0.05, 0.10};
};

struct RunConfig {
  uint64_t seed = 0;
  int threads = 0;  // 0 = hardware concurrency
  std::string output_dir;
  DatasetConfig dataset;
  std::vector<ModelConfig> models;
  TrainConfig train;
  AttackBlock attack;
  VerifyBlock verify;
  AttributionBlock attribution;
  AblationBlock ablation;

  double attack_eps() const;   // defaults resolved
  double attack_alpha() const;
  double verify_eps() const;
  AttackConfig attack_config() const;  // seed filled from the run seed
};

// Parses and validates ranges/enums. Throws ConfigError with a dotted field
// path on any violation; unknown keys are rejected.
RunConfig parse_config_text(const std::string& text, const std::string& origin = "config");
RunConfig load_config(const std::string& path);

// Which inputs a subcommand reads, for path-existence validation.
enum class CommandNeeds { TrainData, Checkpoint, CheckpointAndData, Nothing };
void validate_paths(const RunConfig& cfg, CommandNeeds needs);

// Snapshot with every default materialized; parsing it back yields the same
// resolved form (idempotent).
std::string resolved_config(const RunConfig& cfg);
std::string config_digest(const RunConfig& cfg);  // fnv1a64 hex of the snapshot

Dataset load_split(const RunConfig& cfg, const std::string& split);

}  // namespace safelens
