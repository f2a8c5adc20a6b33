#include "pnnunet/netzoo.hpp"

namespace pnn {

namespace {

std::int64_t conv_count(std::int64_t cin, std::int64_t cout, std::int64_t k) { return cout * (cin * k * k) + cout; }

std::int64_t dense_block_count(std::int64_t cin, std::int64_t growth) {
  return conv_count(cin, growth, 3) + conv_count(cin + growth, growth, 3);
}

template <typename Scalar>
void add_conv(ParameterStore<Scalar>& store, const std::string& name, Index cin, Index cout, Index k) {
  store.add(name + ".weight", {cout, cin, k, k}, cin * k * k);
  store.add(name + ".bias", {cout}, 1);
}

template <typename Scalar>
void add_up(ParameterStore<Scalar>& store, const std::string& name, Index cin, Index cout) {
  store.add(name + ".weight", {cin, cout, 2, 2}, cin * 4);
  store.add(name + ".bias", {cout}, 1);
}

template <typename Scalar>
void add_dense_block(ParameterStore<Scalar>& store, const std::string& name, Index cin, Index growth) {
  add_conv(store, name + ".conv1", cin, growth, 3);
  add_conv(store, name + ".conv2", cin + growth, growth, 3);
}

template <typename Scalar>
Var conv(Tape<Scalar>& t, ParameterStore<Scalar>& p, const std::string& name, Var x, int padding) {
  return conv2d(t, x, t.parameter(p.at(name + ".weight")), t.parameter(p.at(name + ".bias")), 1, padding);
}

template <typename Scalar>
Var conv_act(Tape<Scalar>& t, ParameterStore<Scalar>& p, const std::string& name, Var x) {
  return leaky_relu(t, conv(t, p, name, x, 1));
}

template <typename Scalar>
Var up(Tape<Scalar>& t, ParameterStore<Scalar>& p, const std::string& name, Var x) {
  return leaky_relu(t, conv_transpose2d(t, x, t.parameter(p.at(name + ".weight")), t.parameter(p.at(name + ".bias")), 2));
}

template <typename Scalar>
Var dense_block(Tape<Scalar>& t, ParameterStore<Scalar>& p, const std::string& name, Var x) {
  Var first = conv_act(t, p, name + ".conv1", x);
  return conv_act(t, p, name + ".conv2", concat_channels(t, x, first));
}

void check_input(const Shape& s, Index channels, int levels, const char* what) {
  if (s.size() != 4) throw ShapeError(std::string(what) + " expects an NCHW batch, got " + shape_string(s));
  if (s[1] != channels)
    throw ShapeError(std::string(what) + " expects " + std::to_string(channels) + " input channels, got " +
                     shape_string(s));
  const Index factor = Index{1} << levels;
  if (s[2] % factor != 0 || s[3] % factor != 0)
    throw ShapeError(std::string(what) + " needs extents divisible by " + std::to_string(factor) + ", got " +
                     shape_string(s));
}

std::string level(const char* prefix, int i) { return prefix + std::to_string(i); }

}  // namespace

void UNetConfig::validate() const {
  if (depth < 1 || init_filters < 1 || in_channels < 1 || class_count < 1)
    throw ConfigError("UNet config fields must be positive");
  if (depth > 20) throw ConfigError("UNet depth too large");
}

void DenseAEConfig::validate() const {
  if (stage_growths.empty()) throw ConfigError("dense autoencoder needs at least one stage");
  for (int g : stage_growths)
    if (g < 1) throw ConfigError("dense autoencoder growths must be positive");
  if (bottleneck_growth < 1 || in_channels < 1 || out_channels < 1 || segmentation_classes < 0)
    throw ConfigError("dense autoencoder channel counts must be positive");
}

std::int64_t count_parameters(const UNetConfig& cfg) {
  cfg.validate();
  std::int64_t total = 0;
  std::int64_t cin = cfg.in_channels;
  for (int i = 0; i <= cfg.depth; ++i) {
    const std::int64_t c = std::int64_t{cfg.init_filters} << i;
    total += conv_count(cin, c, 3) + conv_count(c, c, 3);
    cin = c;
  }
  for (int i = cfg.depth - 1; i >= 0; --i) {
    const std::int64_t c = std::int64_t{cfg.init_filters} << i;
    total += conv_count(cin, c, 2) + conv_count(2 * c, c, 3) + conv_count(c, c, 3);
    cin = c;
  }
  return total + conv_count(cin, cfg.class_count, 1);
}

std::int64_t count_parameters(const DenseAEConfig& cfg) {
  cfg.validate();
  std::int64_t total = 0;
  std::int64_t cin = cfg.in_channels;
  for (int g : cfg.stage_growths) {
    total += dense_block_count(cin, g);
    cin = g;
  }
  total += dense_block_count(cin, cfg.bottleneck_growth);
  cin = cfg.bottleneck_growth;
  for (auto it = cfg.stage_growths.rbegin(); it != cfg.stage_growths.rend(); ++it) {
    total += conv_count(cin, *it, 2) + dense_block_count(2 * std::int64_t{*it}, *it);
    cin = *it;
  }
  total += conv_count(cin, cfg.out_channels, 1);
  if (cfg.segmentation_classes > 0) total += conv_count(cin, cfg.segmentation_classes, 1);
  return total;
}

template <typename Scalar>
UNet<Scalar>::UNet(UNetConfig cfg) : cfg_(cfg) {
  cfg_.validate();
  Index cin = cfg_.in_channels;
  for (int i = 0; i < cfg_.depth; ++i) {
    const Index c = Index{cfg_.init_filters} << i;
    add_conv(params_, level("enc", i) + ".conv1", cin, c, 3);
    add_conv(params_, level("enc", i) + ".conv2", c, c, 3);
    cin = c;
  }
  const Index bottom = Index{cfg_.init_filters} << cfg_.depth;
  add_conv(params_, "bottleneck.conv1", cin, bottom, 3);
  add_conv(params_, "bottleneck.conv2", bottom, bottom, 3);
  cin = bottom;
  for (int i = cfg_.depth - 1; i >= 0; --i) {
    const Index c = Index{cfg_.init_filters} << i;
    add_up(params_, level("dec", i) + ".up", cin, c);
    add_conv(params_, level("dec", i) + ".conv1", 2 * c, c, 3);
    add_conv(params_, level("dec", i) + ".conv2", c, c, 3);
    cin = c;
  }
  add_conv(params_, "head", cin, cfg_.class_count, 1);
}

template <typename Scalar>
Var UNet<Scalar>::forward(Tape<Scalar>& tape, Var input) {
  check_input(tape.value(input).shape(), cfg_.in_channels, cfg_.depth, "UNet");
  std::vector<Var> skips;
  Var x = input;
  for (int i = 0; i < cfg_.depth; ++i) {
    x = conv_act(tape, params_, level("enc", i) + ".conv1", x);
    x = conv_act(tape, params_, level("enc", i) + ".conv2", x);
    skips.push_back(x);
    x = maxpool2d(tape, x);
  }
  x = conv_act(tape, params_, "bottleneck.conv1", x);
  x = conv_act(tape, params_, "bottleneck.conv2", x);
  for (int i = cfg_.depth - 1; i >= 0; --i) {
    x = up(tape, params_, level("dec", i) + ".up", x);
    x = concat_channels(tape, x, skips[static_cast<std::size_t>(i)]);
    x = conv_act(tape, params_, level("dec", i) + ".conv1", x);
    x = conv_act(tape, params_, level("dec", i) + ".conv2", x);
  }
  return conv(tape, params_, "head", x, 0);
}

template <typename Scalar>
DenseAutoencoder<Scalar>::DenseAutoencoder(DenseAEConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  Index cin = cfg_.in_channels;
  for (std::size_t i = 0; i < cfg_.stage_growths.size(); ++i) {
    add_dense_block(params_, level("enc", static_cast<int>(i)), cin, cfg_.stage_growths[i]);
    cin = cfg_.stage_growths[i];
  }
  add_dense_block(params_, "bottleneck", cin, cfg_.bottleneck_growth);
  cin = cfg_.bottleneck_growth;
  for (std::size_t i = cfg_.stage_growths.size(); i-- > 0;) {
    const Index g = cfg_.stage_growths[i];
    add_up(params_, level("dec", static_cast<int>(i)) + ".up", cin, g);
    add_dense_block(params_, level("dec", static_cast<int>(i)), 2 * g, g);
    cin = g;
  }
  add_conv(params_, "head", cin, cfg_.out_channels, 1);
  if (cfg_.segmentation_classes > 0) add_conv(params_, "seg_head", cin, cfg_.segmentation_classes, 1);
}

template <typename Scalar>
typename DenseAutoencoder<Scalar>::Output DenseAutoencoder<Scalar>::forward(Tape<Scalar>& tape, Var input) {
  const int stages = static_cast<int>(cfg_.stage_growths.size());
  check_input(tape.value(input).shape(), cfg_.in_channels, stages, "dense autoencoder");
  std::vector<Var> skips;
  Var x = input;
  for (int i = 0; i < stages; ++i) {
    x = dense_block(tape, params_, level("enc", i), x);
    skips.push_back(x);
    x = maxpool2d(tape, x);
  }
  x = dense_block(tape, params_, "bottleneck", x);
  for (int i = stages - 1; i >= 0; --i) {
    x = up(tape, params_, level("dec", i) + ".up", x);
    x = dense_block(tape, params_, level("dec", i), concat_channels(tape, x, skips[static_cast<std::size_t>(i)]));
  }
  Output out;
  out.reconstruction = conv(tape, params_, "head", x, 0);
  if (cfg_.segmentation_classes > 0) out.segmentation = conv(tape, params_, "seg_head", x, 0);
  return out;
}

template <typename Scalar>
UNet<Scalar> build_unet(const UNetConfig& cfg, Rng& rng) {
  UNet<Scalar> net(cfg);
  net.parameters().initialize(rng);
  return net;
}

template <typename Scalar>
DenseAutoencoder<Scalar> build_dense_autoencoder(const DenseAEConfig& cfg, Rng& rng) {
  DenseAutoencoder<Scalar> net(cfg);
  net.parameters().initialize(rng);
  return net;
}

template <typename Scalar>
Tensor<Scalar> forward_unet(UNet<Scalar>& net, const Tensor<Scalar>& batch) {
  Tape<Scalar> tape;
  return tape.value(net.forward(tape, tape.constant(batch)));
}

template <typename Scalar>
Tensor<Scalar> forward_autoencoder(DenseAutoencoder<Scalar>& net, const Tensor<Scalar>& batch) {
  Tape<Scalar> tape;
  return tape.value(net.forward(tape, tape.constant(batch)).reconstruction);
}

#define PNN_INSTANTIATE_NETZOO(S)                                                    \
  template class UNet<S>;                                                            \
  template class DenseAutoencoder<S>;                                                \
  template UNet<S> build_unet<S>(const UNetConfig&, Rng&);                           \
  template DenseAutoencoder<S> build_dense_autoencoder<S>(const DenseAEConfig&, Rng&); \
  template Tensor<S> forward_unet<S>(UNet<S>&, const Tensor<S>&);                    \
  template Tensor<S> forward_autoencoder<S>(DenseAutoencoder<S>&, const Tensor<S>&);

PNN_INSTANTIATE_NETZOO(float)
PNN_INSTANTIATE_NETZOO(double)

}  // namespace pnn
