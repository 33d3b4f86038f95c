#include "safelens/nn.hpp"

#include <cmath>

#include "safelens/error.hpp"
#include "safelens/rng.hpp"
#include "safelens/tensor_ops.hpp"

namespace safelens {

const char* layer_kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::Dense: return "Dense";
    case LayerKind::Conv2d: return "Conv2d";
    case LayerKind::ReLU: return "ReLU";
    case LayerKind::Flatten: return "Flatten";
    case LayerKind::AvgPool: return "AvgPool";
    case LayerKind::ResidualAdd: return "ResidualAdd";
  }
  throw CapabilityError("unknown layer kind");
}

LayerKind layer_kind_from_name(const std::string& name) {
  if (name == "Dense") return LayerKind::Dense;
  if (name == "Conv2d") return LayerKind::Conv2d;
  if (name == "ReLU") return LayerKind::ReLU;
  if (name == "Flatten") return LayerKind::Flatten;
  if (name == "AvgPool") return LayerKind::AvgPool;
  if (name == "ResidualAdd") return LayerKind::ResidualAdd;
  throw FormatError("unknown layer kind '" + name + "'");
}

LayerSpec LayerSpec::dense(int64_t in, int64_t out) {
  LayerSpec l;
  l.kind = LayerKind::Dense;
  l.in_features = in;
  l.out_features = out;
  return l;
}
LayerSpec LayerSpec::conv2d(int64_t in_c, int64_t out_c, int64_t kernel, int64_t stride, int64_t pad) {
  LayerSpec l;
  l.kind = LayerKind::Conv2d;
  l.in_channels = in_c;
  l.out_channels = out_c;
  l.kernel = kernel;
  l.stride = stride;
  l.padding = pad;
  return l;
}
LayerSpec LayerSpec::relu() {
  LayerSpec l;
  l.kind = LayerKind::ReLU;
  return l;
}
LayerSpec LayerSpec::flatten() {
  LayerSpec l;
  l.kind = LayerKind::Flatten;
  return l;
}
LayerSpec LayerSpec::avg_pool(int64_t window) {
  LayerSpec l;
  l.kind = LayerKind::AvgPool;
  l.window = window;
  return l;
}
LayerSpec LayerSpec::residual_add(int64_t skip_from) {
  LayerSpec l;
  l.kind = LayerKind::ResidualAdd;
  l.skip_from = skip_from;
  return l;
}

Shape layer_output_shape(const LayerSpec& layer, const Shape& in, const std::vector<Shape>& earlier) {
  switch (layer.kind) {
    case LayerKind::Dense:
      if (in.size() != 1 || in[0] != layer.in_features)
        throw DimensionError("Dense expects [" + std::to_string(layer.in_features) + "], got " +
                             shape_str(in));
      return {layer.out_features};
    case LayerKind::Conv2d: {
      if (in.size() != 3 || in[0] != layer.in_channels)
        throw DimensionError("Conv2d expects [" + std::to_string(layer.in_channels) + ",H,W], got " +
                             shape_str(in));
      const auto g = tk::conv_geometry(in, {layer.out_channels, layer.in_channels, layer.kernel, layer.kernel},
                                       layer.stride, layer.padding);
      return {g.out_c, g.out_h, g.out_w};
    }
    case LayerKind::ReLU:
      return in;
    case LayerKind::Flatten:
      return {shape_numel(in)};
    case LayerKind::AvgPool: {
      if (in.size() != 3) throw DimensionError("AvgPool expects [C,H,W], got " + shape_str(in));
      if (layer.window < 1 || in[1] % layer.window != 0 || in[2] % layer.window != 0)
        throw DimensionError("AvgPool window " + std::to_string(layer.window) +
                             " does not divide " + shape_str(in));
      return {in[0], in[1] / layer.window, in[2] / layer.window};
    }
    case LayerKind::ResidualAdd: {
      const int64_t idx = layer.skip_from;
      if (idx < -1 || idx >= static_cast<int64_t>(earlier.size()))
        throw DimensionError("ResidualAdd skip index " + std::to_string(idx) + " out of range");
      const Shape& src = idx == -1 ? earlier.empty() ? in : earlier.front() : earlier[static_cast<size_t>(idx) + 1];
      if (src != in)
        throw DimensionError("ResidualAdd shapes differ: " + shape_str(src) + " vs " + shape_str(in));
      return in;
    }
  }
  throw CapabilityError("unknown layer kind");
}

std::vector<Shape> infer_shapes(const std::vector<LayerSpec>& layers, const Shape& input) {
  // earlier[0] is the model input, earlier[i+1] the output of layer i.
  std::vector<Shape> earlier{input};
  std::vector<Shape> outs;
  for (size_t i = 0; i < layers.size(); ++i) {
    Shape out;
    try {
      out = layer_output_shape(layers[i], earlier.back(), earlier);
    } catch (const DimensionError& e) {
      throw DimensionError("layer " + std::to_string(i) + " (" + layer_kind_name(layers[i].kind) +
                           "): " + e.what());
    }
    earlier.push_back(out);
    outs.push_back(std::move(out));
  }
  return outs;
}

namespace {

Tensor he_uniform(Shape shape, int64_t fan_in, Rng& rng, DType dtype) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
  Tensor t = Tensor::uninit(std::move(shape), dtype);
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(-limit, limit);
  t.seal("he_uniform");
  return t;
}

void init_params(Model& m) {
  m.params.assign(m.layers.size(), {});
  for (size_t i = 0; i < m.layers.size(); ++i) {
    const LayerSpec& l = m.layers[i];
    Rng rng(mix_seed(m.meta.seed, "init/layer", static_cast<uint64_t>(i)));
    if (l.kind == LayerKind::Dense) {
      m.params[i]["weight"] = he_uniform({l.in_features, l.out_features}, l.in_features, rng, m.meta.dtype);
      m.params[i]["bias"] = Tensor::zeros({l.out_features}, m.meta.dtype);
    } else if (l.kind == LayerKind::Conv2d) {
      const int64_t fan_in = l.in_channels * l.kernel * l.kernel;
      m.params[i]["weight"] =
          he_uniform({l.out_channels, l.in_channels, l.kernel, l.kernel}, fan_in, rng, m.meta.dtype);
      m.params[i]["bias"] = Tensor::zeros({l.out_channels}, m.meta.dtype);
    }
  }
}

Model finish_model(std::vector<LayerSpec> layers, Shape input_shape, int64_t classes, uint64_t seed,
                   DType dtype) {
  Model m;
  m.layers = std::move(layers);
  m.meta.input_shape = std::move(input_shape);
  m.meta.num_classes = classes;
  m.meta.seed = seed;
  m.meta.dtype = dtype;
  const auto shapes = infer_shapes(m.layers, m.meta.input_shape);
  if (shapes.empty() || shapes.back() != Shape{classes})
    throw DimensionError("model does not end in a length-" + std::to_string(classes) + " logit vector");
  init_params(m);
  return m;
}

}  // namespace

Model build_mlp(int64_t input_dim, const std::vector<int64_t>& hidden, int64_t classes,
                uint64_t seed, DType dtype) {
  if (input_dim < 1 || classes < 1) throw ContractError("build_mlp: dimensions must be positive");
  for (int64_t h : hidden)
    if (h < 1) throw ContractError("build_mlp: hidden dims must be positive");
  std::vector<LayerSpec> layers;
  int64_t prev = input_dim;
  for (int64_t h : hidden) {
    layers.push_back(LayerSpec::dense(prev, h));
    layers.push_back(LayerSpec::relu());
    prev = h;
  }
  layers.push_back(LayerSpec::dense(prev, classes));
  return finish_model(std::move(layers), {input_dim}, classes, seed, dtype);
}

Model build_simple_cnn(const Shape& input_chw, int64_t classes, uint64_t seed, DType dtype) {
  if (input_chw.size() != 3) throw DimensionError("build_simple_cnn: input must be [C,H,W]");
  if (input_chw[1] < 8 || input_chw[2] < 8)
    throw DimensionError("build_simple_cnn: spatial dims must be >= 8, got " + shape_str(input_chw));
  const int64_t c = input_chw[0];
  std::vector<LayerSpec> layers{
      LayerSpec::conv2d(c, 16, 3, 1, 1),
      LayerSpec::relu(),
      LayerSpec::conv2d(16, 32, 3, 2, 1),
      LayerSpec::relu(),
      LayerSpec::avg_pool(2),
      LayerSpec::flatten(),
  };
  const Shape after = infer_shapes(layers, input_chw).back();
  layers.push_back(LayerSpec::dense(after[0], 128));
  layers.push_back(LayerSpec::relu());
  layers.push_back(LayerSpec::dense(128, classes));
  return finish_model(std::move(layers), input_chw, classes, seed, dtype);
}

Model build_mini_resnet(const Shape& input_chw, int64_t classes, uint64_t seed, DType dtype) {
  if (input_chw.size() != 3) throw DimensionError("build_mini_resnet: input must be [C,H,W]");
  const int64_t c = input_chw[0];
  const int64_t width = 8;
  std::vector<LayerSpec> layers{
      LayerSpec::conv2d(c, width, 3, 2, 1),  // 0 stem
      LayerSpec::relu(),                     // 1
  };
  for (int block = 0; block < 2; ++block) {
    const int64_t entry = static_cast<int64_t>(layers.size()) - 1;  // output feeding the block
    layers.push_back(LayerSpec::conv2d(width, width, 3, 1, 1));
    layers.push_back(LayerSpec::relu());
    layers.push_back(LayerSpec::conv2d(width, width, 3, 1, 1));
    layers.push_back(LayerSpec::residual_add(entry));
    layers.push_back(LayerSpec::relu());
  }
  layers.push_back(LayerSpec::avg_pool(2));
  layers.push_back(LayerSpec::flatten());
  const Shape after = infer_shapes(layers, input_chw).back();
  layers.push_back(LayerSpec::dense(after[0], classes));
  return finish_model(std::move(layers), input_chw, classes, seed, dtype);
}

Model build_model(const std::string& arch, const Shape& input_shape, int64_t classes,
                  const std::vector<int64_t>& hidden, uint64_t seed, DType dtype) {
  if (arch == "simple_cnn") return build_simple_cnn(input_shape, classes, seed, dtype);
  if (arch == "mini_resnet") return build_mini_resnet(input_shape, classes, seed, dtype);
  if (arch == "mlp") return build_mlp(shape_numel(input_shape), hidden, classes, seed, dtype);
  throw ConfigError("unknown architecture '" + arch + "'");
}

int64_t param_count(const Model& m) {
  int64_t n = 0;
  for (const auto& layer : m.params)
    for (const auto& [name, t] : layer) n += t.numel();
  return n;
}

GraphParams lift_params(const Model& m, bool requires_grad) {
  GraphParams out(m.params.size());
  for (size_t i = 0; i < m.params.size(); ++i)
    for (const auto& [name, t] : m.params[i])
      out[i][name] = requires_grad ? ag::var(t) : ag::cst(t);
  return out;
}

std::vector<ag::NodeRef> flat_params(const GraphParams& p) {
  std::vector<ag::NodeRef> out;
  for (const auto& layer : p)
    for (const auto& [name, node] : layer) out.push_back(node);
  return out;
}

ag::NodeRef forward_graph(const Model& m, const GraphParams& params, const ag::NodeRef& x) {
  const size_t in_rank = m.meta.input_shape.size();
  const size_t rank = x->value.rank();
  bool batched;
  if (rank == in_rank)
    batched = false;
  else if (rank == in_rank + 1)
    batched = true;
  else
    throw DimensionError("forward: input rank " + std::to_string(rank) + " incompatible with model input " +
                         shape_str(m.meta.input_shape));
  Shape batch_shape = m.meta.input_shape;
  const int64_t n = batched ? x->value.dim(0) : 1;
  batch_shape.insert(batch_shape.begin(), n);
  if (batched && Shape(x->value.shape()) != batch_shape)
    throw DimensionError("forward: input shape " + shape_str(x->value.shape()) + " does not match " +
                         shape_str(batch_shape));
  if (!batched && x->value.shape() != m.meta.input_shape)
    throw DimensionError("forward: input shape " + shape_str(x->value.shape()) + " does not match " +
                         shape_str(m.meta.input_shape));

  ag::NodeRef h = batched ? x : ag::reshape(x, batch_shape);
  std::vector<ag::NodeRef> outputs;  // outputs[i] = after layer i
  const ag::NodeRef input = h;
  for (size_t i = 0; i < m.layers.size(); ++i) {
    const LayerSpec& l = m.layers[i];
    switch (l.kind) {
      case LayerKind::Dense: {
        const auto& w = params[i].at("weight");
        const auto& b = params[i].at("bias");
        h = ag::add(ag::matmul(h, w), b);
        break;
      }
      case LayerKind::Conv2d: {
        const auto& w = params[i].at("weight");
        const auto& b = params[i].at("bias");
        h = ag::conv2d(h, w, l.stride, l.padding);
        h = ag::add(h, ag::reshape(b, {l.out_channels, 1, 1}));
        break;
      }
      case LayerKind::ReLU:
        h = ag::relu(h);
        break;
      case LayerKind::Flatten:
        h = ag::reshape(h, {n, h->value.numel() / n});
        break;
      case LayerKind::AvgPool:
        h = ag::avg_pool(h, l.window);
        break;
      case LayerKind::ResidualAdd: {
        const ag::NodeRef& src = l.skip_from == -1 ? input : outputs[static_cast<size_t>(l.skip_from)];
        h = ag::add(h, src);
        break;
      }
    }
    outputs.push_back(h);
  }
  if (!batched) h = ag::reshape(h, {m.meta.num_classes});
  return h;
}

Tensor adapt_input(const Model& m, const Tensor& x) {
  const Shape& in = m.meta.input_shape;
  if (x.shape() == in) return x;
  const int64_t sample = shape_numel(in);
  if (x.numel() == sample) return x.with_shape(in);
  if (x.rank() >= 1 && x.dim(0) * sample == x.numel()) {
    Shape bs = in;
    bs.insert(bs.begin(), x.dim(0));
    return x.shape() == bs ? x : x.with_shape(bs);
  }
  throw DimensionError("adapt_input: shape " + shape_str(x.shape()) +
                       " incompatible with model input " + shape_str(in));
}

Tensor adapt_batch(const Model& m, const Tensor& x) {
  const Shape& in = m.meta.input_shape;
  const int64_t sample = shape_numel(in);
  if (x.rank() < 1 || x.numel() == 0 || x.dim(0) * sample != x.numel())
    throw DimensionError("adapt_batch: shape " + shape_str(x.shape()) +
                         " is not a batch of model inputs " + shape_str(in));
  Shape bs = in;
  bs.insert(bs.begin(), x.dim(0));
  return x.shape() == bs ? x : x.with_shape(bs);
}

Tensor forward(const Model& m, const Tensor& x) {
  return forward_graph(m, lift_params(m, false), ag::cst(adapt_input(m, x)))->value;
}

std::vector<int64_t> predict(const Model& m, const Tensor& x) {
  Tensor logits = forward(m, x);
  if (logits.rank() == 1) logits = logits.with_shape({1, logits.dim(0)});
  return tk::row_argmax(logits);
}

int64_t predict_one(const Model& m, const Tensor& x) { return predict(m, x)[0]; }

double accuracy(const Model& m, const Tensor& images, const std::vector<int64_t>& labels,
                int64_t batch) {
  const int64_t n = images.dim(0);
  if (n == 0) throw ContractError("accuracy: empty input");
  if (static_cast<int64_t>(labels.size()) != n) throw DimensionError("accuracy: label count mismatch");
  const int64_t sample = images.numel() / n;
  int64_t correct = 0;
  for (int64_t lo = 0; lo < n; lo += batch) {
    const int64_t hi = std::min(n, lo + batch);
    Shape bs = images.shape();
    bs[0] = hi - lo;
    Tensor chunk = Tensor::uninit(bs, images.dtype());
    std::copy(images.ptr() + lo * sample, images.ptr() + hi * sample, chunk.ptr());
    chunk.seal("accuracy_batch");
    const auto pred = predict(m, chunk);
    for (int64_t i = 0; i < hi - lo; ++i)
      if (pred[static_cast<size_t>(i)] == labels[static_cast<size_t>(lo + i)]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(n);
}

}  // namespace safelens
