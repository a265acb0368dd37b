#ifndef AFL_NN_H_
#define AFL_NN_H_

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "afl/autograd.h"
#include "afl/tensor.h"

namespace afl {

enum class LayerKind {
  kDense,     // flattens its input, then W x + b
  kConv3x3,   // same-padded 3x3 convolution over [C x H x W]
  kRelu,
  kSigmoid,
  kUpsample2,  // nearest neighbour, doubles H and W
  kAvgPool2,   // 2x2 mean pooling, halves H and W
};

struct LayerSpec {
  LayerKind kind;
  // Output width (dense) or output channels (conv); unused otherwise.
  std::size_t units = 0;
};

struct NetworkSpec {
  Shape input_shape;
  std::vector<LayerSpec> layers;

  // Shape after every layer; throws ContractError if adjacent layers do not
  // compose.
  std::vector<Shape> layer_shapes() const;
  Shape output_shape() const { return layer_shapes().back(); }
};

// Keypoint network f: avg-pool to a half-resolution grid, three conv3x3+relu
// blocks, a conv3x3 head with one channel per keypoint, upsample back to the
// input grid and squash each map with a sigmoid.
NetworkSpec keypoint_network_spec(std::size_t width, std::size_t height, std::size_t keypoints,
                                  std::size_t channels);

// Critic d: dense -> relu -> dense -> relu -> dense(1), no terminal squashing.
NetworkSpec discriminator_spec(std::size_t input_size, std::size_t hidden = 64);

// Two-layer classifier MLP producing logits; softmax is applied by
// forward_classifier.
NetworkSpec classifier_spec(std::size_t features, std::size_t hidden, std::size_t classes);

struct Param {
  std::string name;
  Var leaf;
};

class ParamSet {
 public:
  ParamSet() = default;

  void add(std::string name, Tensor value);
  const std::vector<Param>& params() const { return params_; }
  std::vector<Param>& params() { return params_; }
  const Var& get(const std::string& name) const;
  std::size_t size() const { return params_.size(); }
  std::size_t total_count() const;

  // Copies values into fresh leaves, detached from any graph.
  ParamSet clone() const;
  // Sets every parameter to zero.
  void zero();

  // Bitwise equality of names, shapes and values.
  friend bool operator==(const ParamSet& a, const ParamSet& b);

 private:
  std::vector<Param> params_;
};

// Weights ~ U(-sqrt(3 / fan_in), sqrt(3 / fan_in)), biases 0.
ParamSet init_params(const NetworkSpec& spec, std::uint64_t seed);

// Generic forward pass. Parameters are named "l<index>.weight" / "l<index>.bias".
Var forward(const NetworkSpec& spec, const ParamSet& params, const Var& x);

// Heatmap stack [K x H x W] with entries in [0,1].
Var forward_keypoint(const NetworkSpec& spec, const ParamSet& f, const Var& image);

// Unbounded single score; differentiable in both the parameters and `input`.
Var discriminator_score(const NetworkSpec& spec, const ParamSet& d, const Var& input);

// Probability vector over classes.
Var forward_classifier(const NetworkSpec& spec, const ParamSet& c, const Var& x);

// "AFLP" little-endian parameter file.
void save_params(const ParamSet& params, const std::filesystem::path& path);
ParamSet load_params(const std::filesystem::path& path);

}  // namespace afl

#endif  // AFL_NN_H_
