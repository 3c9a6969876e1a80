#include "freetrain/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include "freetrain/rng.hpp"

namespace freetrain {

namespace {

template <class... Parts>
std::string cat(const Parts&... parts) {
  std::ostringstream out;
  (out << ... << parts);
  return out.str();
}

void expect(bool ok, const std::string& msg) {
  if (!ok) throw TensorError(msg);
}

struct LayerShape {
  std::string name;
  std::vector<std::size_t> shape;
  std::size_t fan_in;
};

// Parameter names, shapes and fan-ins in creation order.
std::vector<LayerShape> layer_shapes(const ModelSpec& spec) {
  std::vector<LayerShape> out;
  auto dense = [&](const std::string& name, std::size_t in, std::size_t width) {
    out.push_back({name + ".w", {in, width}, in});
    out.push_back({name + ".b", {width}, in});
  };
  std::size_t flat = 0;
  if (spec.kind == ModelKind::Mlp) {
    flat = spec.input_shape[0];
  } else {
    std::size_t c = spec.input_shape[0], h = spec.input_shape[1],
                w = spec.input_shape[2];
    const std::size_t k = static_cast<std::size_t>(spec.kernel);
    const std::size_t win = static_cast<std::size_t>(spec.pool_window);
    for (std::size_t i = 0; i < spec.conv_channels.size(); ++i) {
      const std::size_t co = spec.conv_channels[i];
      const std::string name = cat("conv", i + 1);
      out.push_back({name + ".w", {co, c, k, k}, c * k * k});
      out.push_back({name + ".b", {co}, c * k * k});
      h = h + 2 * spec.padding - k + 1;
      w = w + 2 * spec.padding - k + 1;
      h = (h - win) / win + 1;
      w = (w - win) / win + 1;
      c = co;
    }
    flat = c * h * w;
  }
  for (std::size_t i = 0; i < spec.hidden.size(); ++i) {
    dense(cat("fc", i + 1), flat, spec.hidden[i]);
    flat = spec.hidden[i];
  }
  dense("out", flat, spec.classes);
  return out;
}

}  // namespace

void ModelSpec::validate() const {
  expect(classes >= 2, cat("model spec: expected >= 2 classes, got ", classes));
  if (kind == ModelKind::Mlp) {
    expect(input_shape.size() == 1 && input_shape[0] >= 1,
           cat("mlp spec: input shape expected [D], got ",
               shape_str(input_shape)));
    expect(conv_channels.empty(), "mlp spec: conv_channels must be empty");
  } else {
    expect(input_shape.size() == 3 && input_shape[0] >= 1 &&
               input_shape[1] >= 1 && input_shape[2] >= 1,
           cat("convnet spec: input shape expected [C, H, W], got ",
               shape_str(input_shape)));
    expect(!conv_channels.empty(), "convnet spec: needs at least one conv layer");
    expect(kernel >= 1, cat("convnet spec: kernel expected >= 1, got ", kernel));
    expect(padding >= 0, cat("convnet spec: padding expected >= 0, got ", padding));
    expect(pool_window >= 1,
           cat("convnet spec: pool window expected >= 1, got ", pool_window));
    // Walk the spatial dims through every block so failures name the layer.
    std::size_t h = input_shape[1], w = input_shape[2];
    const std::size_t k = static_cast<std::size_t>(kernel);
    const std::size_t win = static_cast<std::size_t>(pool_window);
    for (std::size_t i = 0; i < conv_channels.size(); ++i) {
      expect(conv_channels[i] >= 1,
             cat("convnet spec: conv", i + 1, " expected >= 1 channels"));
      expect(h + 2 * padding >= k && w + 2 * padding >= k,
             cat("convnet spec: conv", i + 1, " kernel ", k,
                 " larger than its input ", h, "x", w));
      h = h + 2 * padding - k + 1;
      w = w + 2 * padding - k + 1;
      expect(h >= win && w >= win,
             cat("convnet spec: pool", i + 1, " window ", win,
                 " larger than its input ", h, "x", w));
      h = (h - win) / win + 1;
      w = (w - win) / win + 1;
    }
  }
  for (std::size_t width : hidden)
    expect(width >= 1, "model spec: hidden widths must be >= 1");
}

const Tensor& ParamSet::at(const std::string& name) const {
  return values[index_of(name)].second;
}

std::size_t ParamSet::index_of(const std::string& name) const {
  for (std::size_t i = 0; i < values.size(); ++i)
    if (values[i].first == name) return i;
  throw TensorError(cat("parameter \"", name, "\" not found"));
}

ParamSet init_params(const ModelSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng rng(seed);
  ParamSet params;
  for (const LayerShape& layer : layer_shapes(spec)) {
    Tensor t = Tensor::zeros(layer.shape);
    const bool is_weight = layer.name.ends_with(".w");
    if (is_weight) {
      const float stddev =
          std::sqrt(2.0f / static_cast<float>(layer.fan_in));
      for (auto& v : t.data) v = rng.normal(0.0f, stddev);
    }
    params.momentum.push_back(Tensor::zeros(layer.shape));
    params.values.emplace_back(layer.name, std::move(t));
  }
  return params;
}

Model::Model(ModelSpec spec) : spec_(std::move(spec)) { spec_.validate(); }

namespace {

struct BuiltGraph {
  Tape tape;
  NodeId input = 0;
  NodeId logits = 0;
  std::vector<std::pair<std::string, NodeId>> params;
};

BuiltGraph build_graph(const ModelSpec& spec, const ParamSet& params,
                       const Tensor& x) {
  std::vector<std::size_t> want{x.shape.empty() ? 0 : x.shape[0]};
  want.insert(want.end(), spec.input_shape.begin(), spec.input_shape.end());
  expect(x.rank() == want.size() && x.shape == want && x.shape[0] >= 1,
         cat("model input: expected shape [B, ",
             shape_str(spec.input_shape).substr(1), ", got ", shape_str(x.shape)));

  const std::vector<LayerShape> layers = layer_shapes(spec);
  expect(params.values.size() == layers.size(),
         cat("param set: expected ", layers.size(), " parameters, got ",
             params.values.size()));

  BuiltGraph g;
  g.input = g.tape.add_input(x);
  std::vector<std::pair<std::string, NodeId>> by_name;
  for (const auto& [name, value] : params.values)
    by_name.emplace_back(name, g.tape.add_param(value));
  g.params = by_name;
  auto node_of = [&](const std::string& name) -> NodeId {
    for (const auto& [n, id] : by_name)
      if (n == name) return id;
    throw TensorError(cat("parameter \"", name, "\" not found"));
  };

  NodeId h = g.input;
  if (spec.input_scale != 1.0f) {
    OpAttrs scale;
    scale.scalar = spec.input_scale;
    h = g.tape.apply(OpKind::ScalarMul, {h}, scale);
  }
  if (spec.kind == ModelKind::Convnet) {
    OpAttrs conv;
    conv.stride = 1;
    conv.padding = spec.padding;
    OpAttrs pool;
    pool.window = spec.pool_window;
    pool.stride = spec.pool_window;
    for (std::size_t i = 0; i < spec.conv_channels.size(); ++i) {
      const std::string name = cat("conv", i + 1);
      h = g.tape.apply(OpKind::Conv2d,
                       {h, node_of(name + ".w"), node_of(name + ".b")}, conv);
      h = g.tape.apply(OpKind::Relu, {h});
      h = g.tape.apply(OpKind::MaxPool2d, {h}, pool);
    }
    h = g.tape.apply(OpKind::Flatten, {h});
  }
  for (std::size_t i = 0; i < spec.hidden.size(); ++i) {
    const std::string name = cat("fc", i + 1);
    h = g.tape.apply(OpKind::MatMul, {h, node_of(name + ".w")});
    h = g.tape.apply(OpKind::Add, {h, node_of(name + ".b")});
    h = g.tape.apply(OpKind::Relu, {h});
  }
  h = g.tape.apply(OpKind::MatMul, {h, node_of("out.w")});
  g.logits = g.tape.apply(OpKind::Add, {h, node_of("out.b")});
  return g;
}

}  // namespace

ModelForward Model::forward(const ParamSet& params, const Tensor& x,
                            const std::vector<int>& labels, CostLedger& ledger,
                            LossKind loss) const {
  BuiltGraph g = build_graph(spec_, params, x);
  OpAttrs attrs;
  attrs.labels = labels;
  const OpKind head = loss == LossKind::CrossEntropy
                          ? OpKind::SoftmaxCrossEntropy
                          : OpKind::CwMargin;
  const NodeId per_example = g.tape.apply(head, {g.logits}, attrs);
  const NodeId mean = g.tape.apply(OpKind::BatchMean, {per_example});
  g.tape.mark_loss(mean);
  ledger.record(CostLedger::Event::Forward);

  ModelForward fwd;
  fwd.tape = std::move(g.tape);
  fwd.input = g.input;
  fwd.logits = g.logits;
  fwd.loss = mean;
  fwd.params = std::move(g.params);
  return fwd;
}

Tensor Model::logits(const ParamSet& params, const Tensor& x,
                     CostLedger& ledger) const {
  BuiltGraph g = build_graph(spec_, params, x);
  ledger.record(CostLedger::Event::Forward);
  return g.tape.value(g.logits);
}

std::vector<int> Model::predict(const ParamSet& params, const Tensor& x,
                                CostLedger& ledger) const {
  const Tensor z = logits(params, x, ledger);
  const std::size_t batch = z.shape[0], classes = z.shape[1];
  std::vector<int> out(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    const float* row = z.data.data() + b * classes;
    std::size_t best = 0;
    for (std::size_t j = 1; j < classes; ++j)
      if (row[j] > row[best]) best = j;  // ties keep the lowest index
    out[b] = static_cast<int>(best);
  }
  return out;
}

std::vector<std::pair<std::string, Tensor>> named_param_grads(
    const ModelForward& fwd, const GradPair& grads) {
  std::vector<std::pair<std::string, Tensor>> out;
  out.reserve(fwd.params.size());
  for (const auto& [name, id] : fwd.params) {
    auto it = grads.param_grads.find(id);
    expect(it != grads.param_grads.end(),
           cat("gradient for parameter \"", name, "\" missing"));
    out.emplace_back(name, it->second);
  }
  return out;
}

void sgd_step(ParamSet& params,
              const std::vector<std::pair<std::string, Tensor>>& grads, float lr,
              float momentum, float weight_decay, CostLedger& ledger) {
  expect(lr > 0.0f, cat("sgd_step: learning rate expected > 0, got ", lr));
  expect(momentum >= 0.0f && momentum < 1.0f,
         cat("sgd_step: momentum expected in [0, 1), got ", momentum));
  expect(weight_decay >= 0.0f,
         cat("sgd_step: weight decay expected >= 0, got ", weight_decay));
  for (std::size_t i = 0; i < params.values.size(); ++i) {
    auto& [name, theta] = params.values[i];
    const Tensor* grad = nullptr;
    for (const auto& [gname, g] : grads)
      if (gname == name) {
        grad = &g;
        break;
      }
    expect(grad != nullptr, cat("sgd_step: no gradient for parameter \"", name,
                                "\""));
    expect(grad->same_shape(theta),
           cat("sgd_step: gradient for \"", name, "\" expected shape ",
               shape_str(theta.shape), ", got ", shape_str(grad->shape)));
    Tensor& v = params.momentum[i];
    bool finite = true;
    for (std::size_t j = 0; j < theta.numel(); ++j) {
      v.data[j] = momentum * v.data[j] + grad->data[j] +
                  weight_decay * theta.data[j];
      theta.data[j] -= lr * v.data[j];
      finite = finite && std::isfinite(theta.data[j]);
    }
    expect(finite, cat("sgd_step: non-finite update for parameter \"", name,
                       "\""));
  }
  ledger.record(CostLedger::Event::SgdUpdate);
}

namespace {

void put_bytes(std::string& out, const void* p, std::size_t n) {
  out.append(static_cast<const char*>(p), n);
}

void put_u16(std::string& out, std::uint16_t v) {
  const unsigned char b[2] = {static_cast<unsigned char>(v & 0xff),
                              static_cast<unsigned char>(v >> 8)};
  put_bytes(out, b, 2);
}

void put_u32(std::string& out, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                              static_cast<unsigned char>((v >> 8) & 0xff),
                              static_cast<unsigned char>((v >> 16) & 0xff),
                              static_cast<unsigned char>((v >> 24) & 0xff)};
  put_bytes(out, b, 4);
}

void put_f32(std::string& out, float v) {
  put_u32(out, std::bit_cast<std::uint32_t>(v));
}

struct Cursor {
  const unsigned char* p;
  std::size_t size;
  std::size_t at = 0;
  const std::string& path;

  void need(std::size_t n, const char* what) {
    if (at + n > size)
      throw TensorError(cat("checkpoint ", path, ": truncated reading ", what,
                            " (need ", n, " bytes at offset ", at, ", have ",
                            size - at, ")"));
  }
  std::uint16_t u16(const char* what) {
    need(2, what);
    const std::uint16_t v =
        static_cast<std::uint16_t>(p[at] | (p[at + 1] << 8));
    at += 2;
    return v;
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    const std::uint32_t v = static_cast<std::uint32_t>(p[at]) |
                            (static_cast<std::uint32_t>(p[at + 1]) << 8) |
                            (static_cast<std::uint32_t>(p[at + 2]) << 16) |
                            (static_cast<std::uint32_t>(p[at + 3]) << 24);
    at += 4;
    return v;
  }
  std::uint8_t u8(const char* what) {
    need(1, what);
    return p[at++];
  }
};

constexpr std::uint32_t kCheckpointVersion = 1;

}  // namespace

void save_checkpoint(const ParamSet& params, const std::string& path) {
  std::string out;
  put_bytes(out, "FTCK", 4);
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(params.values.size()));
  for (const auto& [name, t] : params.values) {
    expect(name.size() <= 0xffff,
           cat("checkpoint: parameter name too long: \"", name, "\""));
    put_u16(out, static_cast<std::uint16_t>(name.size()));
    put_bytes(out, name.data(), name.size());
    expect(t.rank() <= 0xff, "checkpoint: rank too large");
    out.push_back(static_cast<char>(t.rank()));
    for (std::size_t d : t.shape) put_u32(out, static_cast<std::uint32_t>(d));
    for (float v : t.data) put_f32(out, v);
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  expect(f.good(), cat("checkpoint ", path, ": cannot open for writing"));
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  expect(f.good(), cat("checkpoint ", path, ": write failed"));
}

ParamSet load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f.good()) throw TensorError(cat("checkpoint ", path, ": cannot open"));
  std::string bytes((std::istreambuf_iterator<char>(f)),
                    std::istreambuf_iterator<char>());
  Cursor c{reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size(),
           0, path};
  c.need(4, "magic");
  expect(std::memcmp(bytes.data(), "FTCK", 4) == 0,
         cat("checkpoint ", path, ": expected magic \"FTCK\""));
  c.at = 4;
  const std::uint32_t version = c.u32("version");
  expect(version == kCheckpointVersion,
         cat("checkpoint ", path, ": expected version ", kCheckpointVersion,
             ", got ", version));
  const std::uint32_t count = c.u32("parameter count");
  ParamSet params;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint16_t name_len = c.u16("name length");
    c.need(name_len, "name");
    std::string name(reinterpret_cast<const char*>(c.p + c.at), name_len);
    c.at += name_len;
    const std::uint8_t rank = c.u8("rank");
    std::vector<std::size_t> shape(rank);
    for (auto& d : shape) d = c.u32("dimension");
    const std::size_t numel = shape_numel(shape);
    c.need(numel * 4, "tensor data");
    Tensor t = Tensor::zeros(shape);
    for (std::size_t j = 0; j < numel; ++j) {
      const std::uint32_t raw = c.u32("tensor data");
      t.data[j] = std::bit_cast<float>(raw);
    }
    params.momentum.push_back(Tensor::zeros(shape));
    params.values.emplace_back(std::move(name), std::move(t));
  }
  expect(c.at == bytes.size(),
         cat("checkpoint ", path, ": ", bytes.size() - c.at,
             " trailing bytes after ", count, " parameters"));
  return params;
}

}  // namespace freetrain
