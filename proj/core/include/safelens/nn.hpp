#pragma once

#include <map>
#include <string>
#include <vector>

#include "safelens/graph.hpp"
#include "safelens/tensor.hpp"

namespace safelens {

enum class LayerKind { Dense, Conv2d, ReLU, Flatten, AvgPool, ResidualAdd };

const char* layer_kind_name(LayerKind k);
LayerKind layer_kind_from_name(const std::string& name);

struct LayerSpec {
  LayerKind kind{};
  int64_t in_features = 0, out_features = 0;    // Dense
  int64_t in_channels = 0, out_channels = 0;    // Conv2d
  int64_t kernel = 0, stride = 1, padding = 0;  // Conv2d
  int64_t window = 0;                           // AvgPool
  int64_t skip_from = -1;                       // ResidualAdd: earlier layer index (-1 = model input)

  static LayerSpec dense(int64_t in, int64_t out);
  static LayerSpec conv2d(int64_t in_c, int64_t out_c, int64_t kernel, int64_t stride, int64_t pad);
  static LayerSpec relu();
  static LayerSpec flatten();
  static LayerSpec avg_pool(int64_t window);
  static LayerSpec residual_add(int64_t skip_from);
};

struct ModelMeta {
  std::string dataset;
  Shape input_shape;  // per-sample shape, e.g. {1,28,28} or {784}
  int64_t num_classes = 0;
  uint64_t seed = 0;
  std::string config_digest;
  DType dtype = DType::F64;
};

// A layer sequence plus named parameter tensors per layer. Read-only once
// built/trained; safe for concurrent readers.
struct Model {
  std::vector<LayerSpec> layers;
  std::vector<std::map<std::string, Tensor>> params;  // aligned with layers
  ModelMeta meta;
};

// Output shape of a single layer; throws DimensionError on incompatibility.
Shape layer_output_shape(const LayerSpec& layer, const Shape& in,
                         const std::vector<Shape>& earlier = {});
// Per-sample output shapes of every layer; validates the whole chain,
// including ResidualAdd skip targets.
std::vector<Shape> infer_shapes(const std::vector<LayerSpec>& layers, const Shape& input);

Model build_mlp(int64_t input_dim, const std::vector<int64_t>& hidden, int64_t classes,
                uint64_t seed, DType dtype = DType::F64);
// Conv(16,3x3,s1,p1)-ReLU-Conv(32,3x3,s2,p1)-ReLU-AvgPool(2)-Flatten-Dense(128)-ReLU-Dense(k),
// He-uniform init from the run seed. Requires H,W >= 8.
Model build_simple_cnn(const Shape& input_chw, int64_t classes, uint64_t seed,
                       DType dtype = DType::F64);
// Strided stem plus two Conv-ReLU-Conv blocks with identity skips; exercises
// skip-connection bound propagation at desk scale.
Model build_mini_resnet(const Shape& input_chw, int64_t classes, uint64_t seed,
                        DType dtype = DType::F64);
Model build_model(const std::string& arch, const Shape& input_shape, int64_t classes,
                  const std::vector<int64_t>& hidden, uint64_t seed, DType dtype = DType::F64);

int64_t param_count(const Model& m);

using GraphParams = std::vector<std::map<std::string, ag::NodeRef>>;
GraphParams lift_params(const Model& m, bool requires_grad);
std::vector<ag::NodeRef> flat_params(const GraphParams& p);  // deterministic order

// Logits as a graph node. Accepts a single sample (meta.input_shape) or a
// batch with one extra leading axis; the result is [k] or [N,k] accordingly.
ag::NodeRef forward_graph(const Model& m, const GraphParams& params, const ag::NodeRef& x);

// Reshapes a sample (or batch of samples) whose element count matches the
// model input, e.g. [C,H,W] images feeding an MLP. Flat order is preserved.
// A tensor whose element count equals one sample is treated as unbatched.
Tensor adapt_input(const Model& m, const Tensor& x);
// Same, but the leading axis is always the batch axis (kept even for N=1).
Tensor adapt_batch(const Model& m, const Tensor& x);

Tensor forward(const Model& m, const Tensor& x);
std::vector<int64_t> predict(const Model& m, const Tensor& x);  // per-sample argmax
int64_t predict_one(const Model& m, const Tensor& x);
double accuracy(const Model& m, const Tensor& images, const std::vector<int64_t>& labels,
                int64_t batch = 256);

}  // namespace safelens
