#pragma once

#include <span>
#include <vector>

#include "pnnunet/netzoo.hpp"

namespace pnn {

/// Transfer stacks members trained separately and never updates them;
/// Retrain trains the stacked members jointly from fresh weights. The forward
/// computation is the same for both.
enum class EnsembleStrategy { Transfer, Retrain };

/// Tolerance on the per-pixel probability sum accepted by soft_vote.
inline constexpr double kSimplexTolerance = 1e-6;

struct PNNConfig {
  DenseAEConfig ae{{32, 64}, 128, 1, 1, 0};
  UNetConfig deep = UNetConfig::deep();
  UNetConfig wide = UNetConfig::wide();
  double recon_weight = 0.1;
  bool ae_in_vote = false;

  void validate() const;
};

/// Elementwise mean of member probability maps. Needs at least two members
/// of identical shape whose channels sum to one at every pixel.
template <typename Scalar>
Tensor<Scalar> soft_vote(std::span<const Tensor<Scalar>> members);

/// Differentiable vote over probability values already on the tape.
template <typename Scalar>
Var soft_vote(Tape<Scalar>& tape, std::span<const Var> members);

/// softmax(deep(x)) and softmax(wide(x)) merged by soft vote.
template <typename Scalar>
Var ensemble_forward(Tape<Scalar>& tape, UNet<Scalar>& deep, UNet<Scalar>& wide, Var batch);

template <typename Scalar>
Tensor<Scalar> ensemble_forward(UNet<Scalar>& deep, UNet<Scalar>& wide, const Tensor<Scalar>& batch);

template <typename Scalar>
struct PNNNetworks {
  DenseAutoencoder<Scalar> ae;
  UNet<Scalar> deep;
  UNet<Scalar> wide;
};

/// Initializes autoencoder, Deep and Wide from one stream, in that order.
template <typename Scalar>
PNNNetworks<Scalar> build_pnn(const PNNConfig& cfg, Rng& rng);

struct PNNOutputs {
  Var probabilities;
  Var reconstruction;
};

/// The autoencoder output feeds both UNets; their softmax maps (and the
/// autoencoder's segmentation head when ae_in_vote) are soft-voted.
template <typename Scalar>
PNNOutputs pnn_forward(Tape<Scalar>& tape, const PNNConfig& cfg, PNNNetworks<Scalar>& nets, Var batch);

template <typename Scalar>
PNNOutputs pnn_forward(Tape<Scalar>& tape, const PNNConfig& cfg, DenseAutoencoder<Scalar>& ae, UNet<Scalar>& deep,
                       UNet<Scalar>& wide, Var batch);

/// -log(vote)[target] averaged over pixels, plus recon_weight times the
/// mean squared reconstruction error against the input batch.
template <typename Scalar>
Var pnn_loss(Tape<Scalar>& tape, const PNNOutputs& outputs, const LabelBatch& targets, const Tensor<Scalar>& batch,
             double recon_weight);

}  // namespace pnn
