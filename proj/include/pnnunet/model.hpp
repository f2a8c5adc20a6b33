#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "pnnunet/adam.hpp"
#include "pnnunet/ensembles.hpp"

namespace pnn {

enum class ModelKind { Deep, Wide, EnsembleTransfer, EnsembleRetrain, PNN };
inline constexpr ModelKind kAllModels[] = {ModelKind::Deep, ModelKind::Wide, ModelKind::EnsembleTransfer,
                                           ModelKind::EnsembleRetrain, ModelKind::PNN};

/// CLI spelling: deep, wide, ensemble-transfer, ensemble-retrain, pnn.
std::string model_name(ModelKind kind);
/// Table spelling: Deep-UNet, ..., PNN-UNet.
std::string model_title(ModelKind kind);
ModelKind parse_model(const std::string& name);

/// Network configurations for every model kind at one scale.
struct ModelShapes {
  UNetConfig deep = UNetConfig::deep();
  UNetConfig wide = UNetConfig::wide();
  DenseAEConfig ae{{32, 64}, 128, 1, 1, 0};
  double recon_weight = 0.1;
  bool ae_in_vote = false;
  /// Weight of an extra soft-Dice term on the predicted probabilities; 0 is off.
  double dice_weight = 0;

  /// Divides every initial filter count and autoencoder growth by `scale`
  /// (at least 1 each). Scale 1 gives the full-size networks.
  static ModelShapes at_scale(int scale, double recon_weight = 0.1, bool ae_in_vote = false);

  PNNConfig pnn() const;
};

/// The networks one model kind needs, with its prediction and loss.
template <typename Scalar>
class Model {
 public:
  using Stores = std::vector<std::pair<std::string, ParameterStore<Scalar>*>>;

  Model(ModelKind kind, ModelShapes shapes);

  /// Initializes autoencoder, Deep and Wide (those present) from one stream.
  void initialize(Rng& rng);

  ModelKind kind() const { return kind_; }
  const ModelShapes& shapes() const { return shapes_; }
  bool trainable() const { return kind_ != ModelKind::EnsembleTransfer; }

  /// Present stores in the fixed order ae, deep, wide.
  Stores stores();
  std::vector<std::pair<std::string, const ParameterStore<Scalar>*>> stores() const;
  ParameterStore<Scalar>& store(const std::string& name);

  UNet<Scalar>& deep() { return deep_.value(); }
  UNet<Scalar>& wide() { return wide_.value(); }
  DenseAutoencoder<Scalar>& autoencoder() { return ae_.value(); }

  /// Class probabilities N x 3 x H x W.
  Var probabilities(Tape<Scalar>& tape, Var batch);
  Var loss(Tape<Scalar>& tape, const Tensor<Scalar>& batch, const LabelBatch& labels);
  Tensor<Scalar> predict(const Tensor<Scalar>& batch);

 private:
  ModelKind kind_;
  ModelShapes shapes_;
  std::optional<DenseAutoencoder<Scalar>> ae_;
  std::optional<UNet<Scalar>> deep_;
  std::optional<UNet<Scalar>> wide_;
};

/// Adam over all stores of a model. Gradients of every store are checked
/// before any weight moves.
template <typename Scalar>
class Trainer {
 public:
  Trainer(Model<Scalar>& model, AdamOptions options);

  /// One forward/backward/update; returns the loss before the update.
  double step(const Tensor<Scalar>& batch, const LabelBatch& labels);

 private:
  Model<Scalar>& model_;
  std::vector<Adam<Scalar>> adams_;
};

}  // namespace pnn
