#include "afl/nn.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

#include "afl/errors.h"
#include "binary_io.h"

namespace afl {
namespace {

std::string layer_name(std::size_t i, const char* what) {
  return "l" + std::to_string(i) + "." + what;
}

std::size_t fan_in(const LayerSpec& layer, const Shape& in) {
  return layer.kind == LayerKind::kDense ? shape_size(in) : in[0] * 9;
}

}  // namespace

std::vector<Shape> NetworkSpec::layer_shapes() const {
  std::vector<Shape> shapes{input_shape};
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const LayerSpec& layer = layers[i];
    const Shape& in = shapes.back();
    auto fail = [&](const std::string& why) {
      throw ContractError("network spec: layer " + std::to_string(i) + " " + why + " (input " +
                          shape_str(in) + ")");
    };
    switch (layer.kind) {
      case LayerKind::kDense:
        if (layer.units == 0) fail("dense layer needs units > 0");
        shapes.push_back(Shape{layer.units});
        break;
      case LayerKind::kConv3x3:
        if (in.size() != 3) fail("conv3x3 needs a [C x H x W] input");
        if (layer.units == 0) fail("conv3x3 needs channels > 0");
        shapes.push_back(Shape{layer.units, in[1], in[2]});
        break;
      case LayerKind::kRelu:
      case LayerKind::kSigmoid:
        shapes.push_back(in);
        break;
      case LayerKind::kUpsample2:
        if (in.size() != 3) fail("upsample2 needs a [C x H x W] input");
        shapes.push_back(Shape{in[0], in[1] * 2, in[2] * 2});
        break;
      case LayerKind::kAvgPool2:
        if (in.size() != 3 || in[1] % 2 != 0 || in[2] % 2 != 0) {
          fail("avgpool2 needs a [C x H x W] input with even H, W");
        }
        shapes.push_back(Shape{in[0], in[1] / 2, in[2] / 2});
        break;
    }
  }
  return shapes;
}

NetworkSpec keypoint_network_spec(std::size_t width, std::size_t height, std::size_t keypoints,
                                  std::size_t channels) {
  NetworkSpec spec;
  spec.input_shape = Shape{1, height, width};
  spec.layers = {
      {LayerKind::kAvgPool2},
      {LayerKind::kConv3x3, channels}, {LayerKind::kRelu},
      {LayerKind::kConv3x3, channels}, {LayerKind::kRelu},
      {LayerKind::kConv3x3, channels}, {LayerKind::kRelu},
      {LayerKind::kConv3x3, keypoints},
      {LayerKind::kUpsample2},
      {LayerKind::kSigmoid},
  };
  return spec;
}

NetworkSpec discriminator_spec(std::size_t input_size, std::size_t hidden) {
  NetworkSpec spec;
  spec.input_shape = Shape{input_size};
  spec.layers = {
      {LayerKind::kDense, hidden}, {LayerKind::kRelu},
      {LayerKind::kDense, hidden}, {LayerKind::kRelu},
      {LayerKind::kDense, 1},
  };
  return spec;
}

NetworkSpec classifier_spec(std::size_t features, std::size_t hidden, std::size_t classes) {
  NetworkSpec spec;
  spec.input_shape = Shape{features};
  spec.layers = {
      {LayerKind::kDense, hidden}, {LayerKind::kRelu},
      {LayerKind::kDense, classes},
  };
  return spec;
}

// --- ParamSet ----------------------------------------------------------------------

void ParamSet::add(std::string name, Tensor value) {
  for (const Param& p : params_) {
    if (p.name == name) throw ContractError("param set: duplicate name " + name);
  }
  params_.push_back({std::move(name), leaf(std::move(value), true)});
}

const Var& ParamSet::get(const std::string& name) const {
  for (const Param& p : params_) {
    if (p.name == name) return p.leaf;
  }
  throw ContractError("param set: no parameter named " + name);
}

std::size_t ParamSet::total_count() const {
  std::size_t n = 0;
  for (const Param& p : params_) n += p.leaf.size();
  return n;
}

ParamSet ParamSet::clone() const {
  ParamSet out;
  for (const Param& p : params_) out.add(p.name, p.leaf.value());
  return out;
}

void ParamSet::zero() {
  for (Param& p : params_) {
    auto values = p.leaf.mutable_value().values();
    std::fill(values.begin(), values.end(), 0.0);
  }
}

bool operator==(const ParamSet& a, const ParamSet& b) {
  if (a.params_.size() != b.params_.size()) return false;
  for (std::size_t i = 0; i < a.params_.size(); ++i) {
    if (a.params_[i].name != b.params_[i].name) return false;
    if (!(a.params_[i].leaf.value() == b.params_[i].leaf.value())) return false;
  }
  return true;
}

ParamSet init_params(const NetworkSpec& spec, std::uint64_t seed) {
  const std::vector<Shape> shapes = spec.layer_shapes();
  std::mt19937_64 rng(seed);
  ParamSet params;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& layer = spec.layers[i];
    if (layer.kind != LayerKind::kDense && layer.kind != LayerKind::kConv3x3) continue;
    const Shape& in = shapes[i];
    const std::size_t fin = fan_in(layer, in);
    const double bound = std::sqrt(3.0 / static_cast<double>(fin));
    std::uniform_real_distribution<double> dist(-bound, bound);
    Shape wshape = layer.kind == LayerKind::kDense ? Shape{layer.units, fin}
                                                   : Shape{layer.units, in[0], 3, 3};
    Tensor w(wshape);
    for (double& v : w.values()) v = dist(rng);
    params.add(layer_name(i, "weight"), std::move(w));
    params.add(layer_name(i, "bias"), Tensor(Shape{layer.units}));
  }
  return params;
}

// --- forward -----------------------------------------------------------------------

Var forward(const NetworkSpec& spec, const ParamSet& params, const Var& x) {
  if (x.shape() != spec.input_shape) {
    throw ContractError("forward: input " + shape_str(x.shape()) + " does not match spec input " +
                        shape_str(spec.input_shape));
  }
  const std::vector<Shape> shapes = spec.layer_shapes();
  Var h = x;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& layer = spec.layers[i];
    switch (layer.kind) {
      case LayerKind::kDense: {
        const Var& w = params.get(layer_name(i, "weight"));
        const Var& b = params.get(layer_name(i, "bias"));
        Var col = reshape(h, Shape{h.size(), 1});
        h = reshape(add_bias(matmul(w, col), b), Shape{layer.units});
        break;
      }
      case LayerKind::kConv3x3: {
        const Var& w = params.get(layer_name(i, "weight"));
        const Var& b = params.get(layer_name(i, "bias"));
        const std::size_t cin = h.shape()[0], height = h.shape()[1], width = h.shape()[2];
        Var w2 = reshape(w, Shape{layer.units, cin * 9});
        Var out = add_bias(matmul(w2, im2col3x3(h)), b);
        h = reshape(out, Shape{layer.units, height, width});
        break;
      }
      case LayerKind::kRelu:
        h = relu(h);
        break;
      case LayerKind::kSigmoid:
        h = sigmoid(h);
        break;
      case LayerKind::kUpsample2:
        h = upsample2(h);
        break;
      case LayerKind::kAvgPool2:
        h = scale(sumpool2(h), 0.25);
        break;
    }
  }
  return h;
}

Var forward_keypoint(const NetworkSpec& spec, const ParamSet& f, const Var& image) {
  if (spec.layers.empty() || spec.layers.back().kind != LayerKind::kSigmoid) {
    throw ContractError("forward_keypoint: network must end in a sigmoid");
  }
  Var out = forward(spec, f, image);
  if (out.shape().size() != 3) {
    throw ContractError("forward_keypoint: output " + shape_str(out.shape()) +
                        " is not a heatmap stack");
  }
  return out;
}

Var discriminator_score(const NetworkSpec& spec, const ParamSet& d, const Var& input) {
  Var out = forward(spec, d, input);
  if (out.size() != 1) {
    throw ContractError("discriminator_score: network output " + shape_str(out.shape()) +
                        " is not a single score");
  }
  return reshape(out, Shape{});
}

Var forward_classifier(const NetworkSpec& spec, const ParamSet& c, const Var& x) {
  return softmax(forward(spec, c, x));
}

// --- AFLP --------------------------------------------------------------------------

void save_params(const ParamSet& params, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write " + path.string());
  binary::write_magic(os, "AFLP");
  binary::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(params.size()));
  for (const Param& p : params.params()) {
    binary::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(p.name.size()));
    os.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    const Tensor& t = p.leaf.value();
    binary::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) binary::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(d));
    for (double v : t.values()) binary::write_le<double>(os, v);
  }
  if (!os) throw IoError("write failed for " + path.string());
}

ParamSet load_params(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  binary::expect_magic(is, "AFLP");
  const auto count = binary::read_le<std::uint32_t>(is, "parameter count");
  ParamSet params;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = binary::read_le<std::uint32_t>(is, "name length");
    std::string name(name_len, '\0');
    if (!is.read(name.data(), name_len)) throw IoError("truncated parameter name");
    const auto rank = binary::read_le<std::uint32_t>(is, "rank");
    Shape shape(rank);
    for (auto& d : shape) d = binary::read_le<std::uint32_t>(is, "dimension");
    Tensor t(shape);
    for (double& v : t.values()) v = binary::read_le<double>(is, "tensor data");
    params.add(std::move(name), std::move(t));
  }
  return params;
}

}  // namespace afl
