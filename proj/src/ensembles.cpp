#include "pnnunet/ensembles.hpp"

#include <cmath>

namespace pnn {

void PNNConfig::validate() const {
  ae.validate();
  deep.validate();
  wide.validate();
  if (deep.class_count != wide.class_count) throw ConfigError("Deep and Wide must predict the same classes");
  if (ae.out_channels != deep.in_channels || ae.out_channels != wide.in_channels)
    throw ConfigError("autoencoder output channels must equal the UNet input channels");
  if (ae_in_vote && ae.segmentation_classes != deep.class_count)
    throw ConfigError("voting autoencoder needs a segmentation head with the UNet class count");
  if (!(recon_weight >= 0) || !std::isfinite(recon_weight)) throw ConfigError("reconstruction weight must be >= 0");
}

namespace {

template <typename Scalar>
void check_simplex(const Tensor<Scalar>& probs) {
  if (probs.rank() != 4) throw ShapeError("vote members must be NCHW, got " + shape_string(probs.shape()));
  const Index batch = probs.dim(0), classes = probs.dim(1), plane = probs.dim(2) * probs.dim(3);
  for (Index n = 0; n < batch; ++n)
    for (Index p = 0; p < plane; ++p) {
      double total = 0;
      for (Index c = 0; c < classes; ++c) {
        const double v = probs[(n * classes + c) * plane + p];
        if (!(v >= 0) || v > 1 + kSimplexTolerance) throw DomainError("vote member is not a probability map");
        total += v;
      }
      if (std::abs(total - 1) > kSimplexTolerance) throw DomainError("vote member channels do not sum to one");
    }
}

}  // namespace

template <typename Scalar>
Tensor<Scalar> soft_vote(std::span<const Tensor<Scalar>> members) {
  if (members.size() < 2) throw ConfigError("soft vote needs at least two members");
  for (const auto& m : members) {
    if (m.shape() != members[0].shape())
      throw ShapeError("vote member shapes differ: " + shape_string(m.shape()) + " vs " + shape_string(members[0].shape()));
    check_simplex(m);
  }
  Tensor<Scalar> out = members[0];
  for (std::size_t i = 1; i < members.size(); ++i) out.array() += members[i].array();
  out.array() *= Scalar(1) / static_cast<Scalar>(members.size());
  return out;
}

template <typename Scalar>
Var soft_vote(Tape<Scalar>& tape, std::span<const Var> members) {
  if (members.size() < 2) throw ConfigError("soft vote needs at least two members");
  return mean_of(tape, members);
}

template <typename Scalar>
Var ensemble_forward(Tape<Scalar>& tape, UNet<Scalar>& deep, UNet<Scalar>& wide, Var batch) {
  if (deep.config().class_count != wide.config().class_count)
    throw ConfigError("ensemble members predict different class counts");
  const Var members[] = {softmax(tape, deep.forward(tape, batch)), softmax(tape, wide.forward(tape, batch))};
  return soft_vote<Scalar>(tape, members);
}

template <typename Scalar>
Tensor<Scalar> ensemble_forward(UNet<Scalar>& deep, UNet<Scalar>& wide, const Tensor<Scalar>& batch) {
  Tape<Scalar> tape;
  return tape.value(ensemble_forward(tape, deep, wide, tape.constant(batch)));
}

template <typename Scalar>
PNNNetworks<Scalar> build_pnn(const PNNConfig& cfg, Rng& rng) {
  cfg.validate();
  DenseAutoencoder<Scalar> ae = build_dense_autoencoder<Scalar>(cfg.ae, rng);
  UNet<Scalar> deep = build_unet<Scalar>(cfg.deep, rng);
  UNet<Scalar> wide = build_unet<Scalar>(cfg.wide, rng);
  return {std::move(ae), std::move(deep), std::move(wide)};
}

template <typename Scalar>
PNNOutputs pnn_forward(Tape<Scalar>& tape, const PNNConfig& cfg, DenseAutoencoder<Scalar>& ae, UNet<Scalar>& deep,
                       UNet<Scalar>& wide, Var batch) {
  if (tape.value(batch).rank() != 4 || tape.value(batch).dim(1) != cfg.ae.in_channels)
    throw ConfigError("batch channels do not match the autoencoder input");
  if (ae.config().out_channels != deep.config().in_channels || ae.config().out_channels != wide.config().in_channels)
    throw ConfigError("autoencoder output channels must equal the UNet input channels");
  auto coordinated = ae.forward(tape, batch);
  std::vector<Var> members{softmax(tape, deep.forward(tape, coordinated.reconstruction)),
                           softmax(tape, wide.forward(tape, coordinated.reconstruction))};
  if (cfg.ae_in_vote) {
    if (coordinated.segmentation.owner == nullptr) throw ConfigError("ae_in_vote needs an autoencoder segmentation head");
    members.push_back(softmax(tape, coordinated.segmentation));
  }
  return {soft_vote<Scalar>(tape, members), coordinated.reconstruction};
}

template <typename Scalar>
PNNOutputs pnn_forward(Tape<Scalar>& tape, const PNNConfig& cfg, PNNNetworks<Scalar>& nets, Var batch) {
  return pnn_forward(tape, cfg, nets.ae, nets.deep, nets.wide, batch);
}

template <typename Scalar>
Var pnn_loss(Tape<Scalar>& tape, const PNNOutputs& outputs, const LabelBatch& targets, const Tensor<Scalar>& batch,
             double recon_weight) {
  if (!(recon_weight >= 0)) throw ConfigError("reconstruction weight must be >= 0");
  Var segmentation = nll_from_probs(tape, outputs.probabilities, targets);
  Var total = add_scaled(tape, segmentation, mse(tape, outputs.reconstruction, batch), static_cast<Scalar>(recon_weight));
  if (!std::isfinite(static_cast<double>(tape.value(total)[0]))) throw NumericError("non-finite PNN loss");
  return total;
}

#define PNN_INSTANTIATE_ENSEMBLES(S)                                                                      \
  template Tensor<S> soft_vote<S>(std::span<const Tensor<S>>);                                            \
  template Var soft_vote<S>(Tape<S>&, std::span<const Var>);                                              \
  template Var ensemble_forward<S>(Tape<S>&, UNet<S>&, UNet<S>&, Var);                                    \
  template Tensor<S> ensemble_forward<S>(UNet<S>&, UNet<S>&, const Tensor<S>&);                           \
  template PNNNetworks<S> build_pnn<S>(const PNNConfig&, Rng&);                                           \
  template PNNOutputs pnn_forward<S>(Tape<S>&, const PNNConfig&, PNNNetworks<S>&, Var);                   \
  template PNNOutputs pnn_forward<S>(Tape<S>&, const PNNConfig&, DenseAutoencoder<S>&, UNet<S>&, UNet<S>&, Var); \
  template Var pnn_loss<S>(Tape<S>&, const PNNOutputs&, const LabelBatch&, const Tensor<S>&, double);

PNN_INSTANTIATE_ENSEMBLES(float)
PNN_INSTANTIATE_ENSEMBLES(double)

}  // namespace pnn
