#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pnnunet/ops.hpp"
#include "pnnunet/parameters.hpp"

namespace pnn {

/// UNet family. Each level holds two 3x3 convolutions (pad 1, bias); level i
/// has init_filters * 2^i channels and the bottleneck doubles once more.
/// Each expansion is a 2x2 stride-2 transposed convolution halving the
/// channels, a skip concatenation and two 3x3 convolutions. A 1x1
/// convolution maps to class logits.
struct UNetConfig {
  int depth = 4;
  int init_filters = 64;
  int in_channels = 1;
  int class_count = 3;

  void validate() const;
  static UNetConfig deep() { return {4, 64, 1, 3}; }
  static UNetConfig wide() { return {2, 256, 1, 3}; }
};

/// Dense autoencoder. A dense block is conv3x3(cin -> g) followed by
/// conv3x3(cin + g -> g) over concat(input, first output); its output is the
/// second convolution. Stages pool after their block; the decoder mirrors
/// them with transposed convolutions and skip concatenations.
struct DenseAEConfig {
  std::vector<int> stage_growths{32, 64};
  int bottleneck_growth = 128;
  int in_channels = 1;
  int out_channels = 1;
  /// When positive, adds a 1x1 segmentation head beside the reconstruction
  /// head so the autoencoder can take part in a vote.
  int segmentation_classes = 0;

  void validate() const;
};

std::int64_t count_parameters(const UNetConfig& cfg);
std::int64_t count_parameters(const DenseAEConfig& cfg);

template <typename Scalar>
class UNet {
 public:
  explicit UNet(UNetConfig cfg);

  const UNetConfig& config() const { return cfg_; }
  ParameterStore<Scalar>& parameters() { return params_; }
  const ParameterStore<Scalar>& parameters() const { return params_; }

  /// Logits N x classes x H x W. H and W must be divisible by 2^depth.
  Var forward(Tape<Scalar>& tape, Var input);

 private:
  UNetConfig cfg_;
  ParameterStore<Scalar> params_;
};

template <typename Scalar>
class DenseAutoencoder {
 public:
  struct Output {
    Var reconstruction;
    Var segmentation;  // only set when the config has a segmentation head
  };

  explicit DenseAutoencoder(DenseAEConfig cfg);

  const DenseAEConfig& config() const { return cfg_; }
  ParameterStore<Scalar>& parameters() { return params_; }
  const ParameterStore<Scalar>& parameters() const { return params_; }

  Output forward(Tape<Scalar>& tape, Var input);

 private:
  DenseAEConfig cfg_;
  ParameterStore<Scalar> params_;
};

template <typename Scalar>
UNet<Scalar> build_unet(const UNetConfig& cfg, Rng& rng);

template <typename Scalar>
DenseAutoencoder<Scalar> build_dense_autoencoder(const DenseAEConfig& cfg, Rng& rng);

/// Tape-free conveniences for inference.
template <typename Scalar>
Tensor<Scalar> forward_unet(UNet<Scalar>& net, const Tensor<Scalar>& batch);

template <typename Scalar>
Tensor<Scalar> forward_autoencoder(DenseAutoencoder<Scalar>& net, const Tensor<Scalar>& batch);

}  // namespace pnn
