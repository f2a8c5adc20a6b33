#include "pnnunet/model.hpp"

#include <algorithm>
#include <cmath>

namespace pnn {

std::string model_name(ModelKind kind) {
  switch (kind) {
    case ModelKind::Deep: return "deep";
    case ModelKind::Wide: return "wide";
    case ModelKind::EnsembleTransfer: return "ensemble-transfer";
    case ModelKind::EnsembleRetrain: return "ensemble-retrain";
    case ModelKind::PNN: return "pnn";
  }
  return {};
}

std::string model_title(ModelKind kind) {
  switch (kind) {
    case ModelKind::Deep: return "Deep-UNet";
    case ModelKind::Wide: return "Wide-UNet";
    case ModelKind::EnsembleTransfer: return "Ensemble-Transfer";
    case ModelKind::EnsembleRetrain: return "Ensemble-Retrain";
    case ModelKind::PNN: return "PNN-UNet";
  }
  return {};
}

ModelKind parse_model(const std::string& name) {
  for (ModelKind k : kAllModels)
    if (model_name(k) == name) return k;
  throw ConfigError("unknown model '" + name + "'");
}

ModelShapes ModelShapes::at_scale(int scale, double recon_weight, bool ae_in_vote) {
  if (scale < 1) throw ConfigError("scale must be >= 1");
  const auto div = [scale](int n) { return std::max(1, n / scale); };
  ModelShapes s;
  s.deep.init_filters = div(s.deep.init_filters);
  s.wide.init_filters = div(s.wide.init_filters);
  for (int& g : s.ae.stage_growths) g = div(g);
  s.ae.bottleneck_growth = div(s.ae.bottleneck_growth);
  s.recon_weight = recon_weight;
  s.ae_in_vote = ae_in_vote;
  if (ae_in_vote) s.ae.segmentation_classes = s.deep.class_count;
  return s;
}

PNNConfig ModelShapes::pnn() const {
  PNNConfig cfg;
  cfg.ae = ae;
  cfg.deep = deep;
  cfg.wide = wide;
  cfg.recon_weight = recon_weight;
  cfg.ae_in_vote = ae_in_vote;
  return cfg;
}

template <typename Scalar>
Model<Scalar>::Model(ModelKind kind, ModelShapes shapes) : kind_(kind), shapes_(std::move(shapes)) {
  if (kind_ == ModelKind::PNN) {
    shapes_.pnn().validate();
    ae_.emplace(shapes_.ae);
  }
  if (kind_ != ModelKind::Wide) deep_.emplace(shapes_.deep);
  if (kind_ != ModelKind::Deep) wide_.emplace(shapes_.wide);
  if (deep_ && wide_ && shapes_.deep.class_count != shapes_.wide.class_count)
    throw ConfigError("Deep and Wide must predict the same classes");
}

template <typename Scalar>
void Model<Scalar>::initialize(Rng& rng) {
  for (auto& [name, store] : stores()) store->initialize(rng);
}

template <typename Scalar>
typename Model<Scalar>::Stores Model<Scalar>::stores() {
  Stores out;
  if (ae_) out.emplace_back("ae", &ae_->parameters());
  if (deep_) out.emplace_back("deep", &deep_->parameters());
  if (wide_) out.emplace_back("wide", &wide_->parameters());
  return out;
}

template <typename Scalar>
std::vector<std::pair<std::string, const ParameterStore<Scalar>*>> Model<Scalar>::stores() const {
  std::vector<std::pair<std::string, const ParameterStore<Scalar>*>> out;
  if (ae_) out.emplace_back("ae", &ae_->parameters());
  if (deep_) out.emplace_back("deep", &deep_->parameters());
  if (wide_) out.emplace_back("wide", &wide_->parameters());
  return out;
}

template <typename Scalar>
ParameterStore<Scalar>& Model<Scalar>::store(const std::string& name) {
  for (auto& [n, s] : stores())
    if (n == name) return *s;
  throw ConfigError("model " + model_name(kind_) + " has no '" + name + "' network");
}

template <typename Scalar>
Var Model<Scalar>::probabilities(Tape<Scalar>& tape, Var batch) {
  switch (kind_) {
    case ModelKind::Deep: return softmax(tape, deep_->forward(tape, batch));
    case ModelKind::Wide: return softmax(tape, wide_->forward(tape, batch));
    case ModelKind::EnsembleTransfer:
    case ModelKind::EnsembleRetrain: return ensemble_forward(tape, *deep_, *wide_, batch);
    case ModelKind::PNN: return pnn_forward(tape, shapes_.pnn(), *ae_, *deep_, *wide_, batch).probabilities;
  }
  throw ConfigError("unknown model kind");
}

template <typename Scalar>
Var Model<Scalar>::loss(Tape<Scalar>& tape, const Tensor<Scalar>& batch, const LabelBatch& labels) {
  const Var x = tape.constant(batch);
  Var base, probs;
  switch (kind_) {
    case ModelKind::Deep:
    case ModelKind::Wide: {
      UNet<Scalar>& net = kind_ == ModelKind::Deep ? *deep_ : *wide_;
      const Var logits = net.forward(tape, x);
      base = softmax_cross_entropy(tape, logits, labels, net.config().class_count);
      if (shapes_.dice_weight > 0) probs = softmax(tape, logits);
      break;
    }
    case ModelKind::EnsembleTransfer:
    case ModelKind::EnsembleRetrain:
      probs = ensemble_forward(tape, *deep_, *wide_, x);
      base = nll_from_probs(tape, probs, labels);
      break;
    case ModelKind::PNN: {
      const PNNConfig cfg = shapes_.pnn();
      const PNNOutputs out = pnn_forward(tape, cfg, *ae_, *deep_, *wide_, x);
      probs = out.probabilities;
      base = pnn_loss(tape, out, labels, batch, cfg.recon_weight);
      break;
    }
  }
  if (base.owner == nullptr) throw ConfigError("unknown model kind");
  if (shapes_.dice_weight <= 0) return base;
  return add_scaled(tape, base, soft_dice_loss(tape, probs, labels), static_cast<Scalar>(shapes_.dice_weight));
}

template <typename Scalar>
Tensor<Scalar> Model<Scalar>::predict(const Tensor<Scalar>& batch) {
  Tape<Scalar> tape;
  return tape.value(probabilities(tape, tape.constant(batch)));
}

template <typename Scalar>
Trainer<Scalar>::Trainer(Model<Scalar>& model, AdamOptions options) : model_(model) {
  if (!model.trainable()) throw ConfigError("model " + model_name(model.kind()) + " is not trainable");
  for (std::size_t i = 0; i < model.stores().size(); ++i) adams_.emplace_back(options);
}

template <typename Scalar>
double Trainer<Scalar>::step(const Tensor<Scalar>& batch, const LabelBatch& labels) {
  auto stores = model_.stores();
  for (auto& [name, s] : stores) s->zero_grad();
  Tape<Scalar> tape;
  const Var loss = model_.loss(tape, batch, labels);
  const double value = static_cast<double>(tape.value(loss)[0]);
  tape.backward(loss);
  for (auto& [name, s] : stores)
    for (const auto& [pname, p] : *s)
      if (!p.grad.all_finite()) throw NumericError("non-finite gradient in " + name + "/" + pname);
  for (std::size_t i = 0; i < stores.size(); ++i) adams_[i].step(*stores[i].second);
  return value;
}

template class Model<float>;
template class Model<double>;
template class Trainer<float>;
template class Trainer<double>;

}  // namespace pnn
