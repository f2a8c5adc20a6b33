#include "pnnunet/experiment.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <nlohmann/json.hpp>
#include <ostream>
#include <set>
#include <sstream>

#if defined(__SSE__)
#include <xmmintrin.h>
#endif
#if defined(__SSE3__)
#include <pmmintrin.h>
#endif

namespace pnn {

using nlohmann::json;

std::string phase_name(Phase phase) { return phase == Phase::NoAug ? "noaug" : "aug"; }

Phase parse_phase(const std::string& name) {
  if (name == "noaug") return Phase::NoAug;
  if (name == "aug") return Phase::Aug;
  throw ConfigError("unknown phase '" + name + "' (expected noaug or aug)");
}

void ExperimentConfig::validate() const {
  if (experiments.empty()) throw ConfigError("no experiment numbers given");
  for (int k : experiments) derive_seed(k);
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (batch < 1) throw ConfigError("batch must be >= 1");
  if (!(lr > 0)) throw ConfigError("lr must be positive");
  if (!(dice_weight >= 0)) throw ConfigError("dice weight must be >= 0");
  if (scale < 1) throw ConfigError("scale must be >= 1");
  const Index multiple = Index{1} << std::max(shapes().deep.depth, shapes().wide.depth);
  if (slice_size < multiple || slice_size % multiple != 0)
    throw ConfigError("slice size must be a positive multiple of " + std::to_string(multiple));
  shapes().pnn().validate();
}

ExperimentConfig apply_config_json(const std::string& text, ExperimentConfig cfg) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  try {
    for (const auto& [raw_key, value] : j.items()) {
      std::string key = raw_key;
      std::replace(key.begin(), key.end(), '_', '-');
      if (key == "model") cfg.model = parse_model(value.get<std::string>());
      else if (key == "phase") cfg.phase = parse_phase(value.get<std::string>());
      else if (key == "experiments") cfg.experiments = value.get<std::vector<int>>();
      else if (key == "data") cfg.data = value.get<std::string>();
      else if (key == "out") cfg.out = value.get<std::string>();
      else if (key == "epochs") cfg.epochs = value.get<int>();
      else if (key == "batch") cfg.batch = value.get<int>();
      else if (key == "lr") cfg.lr = value.get<double>();
      else if (key == "scale") cfg.scale = value.get<int>();
      else if (key == "exclude-empty-slices") cfg.exclude_empty_slices = value.get<bool>();
      else if (key == "recon-weight") cfg.recon_weight = value.get<double>();
      else if (key == "ae-in-vote") cfg.ae_in_vote = value.get<bool>();
      else if (key == "dice-weight") cfg.dice_weight = value.get<double>();
      else if (key == "slice-size") cfg.slice_size = value.get<Index>();
      else throw ConfigError("unknown config key '" + raw_key + "'");
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config value has the wrong type: ") + e.what());
  }
  return cfg;
}

ExperimentConfig load_config_file(const std::filesystem::path& path, ExperimentConfig base) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return apply_config_json(ss.str(), std::move(base));
}

std::string run_name(ModelKind model, Phase phase, int experiment) {
  return model_name(model) + "-" + phase_name(phase) + "-s" + std::to_string(experiment);
}

void flush_denormals() {
#if defined(__SSE__)
  _MM_SET_FLUSH_ZERO_MODE(_MM_FLUSH_ZERO_ON);
#endif
#if defined(__SSE3__)
  _MM_SET_DENORMALS_ZERO_MODE(_MM_DENORMALS_ZERO_ON);
#endif
}

PaddedVolume pad_volume(const CacheEntry& entry, Index target) {
  if (entry.image.extents != entry.mask.extents) throw ShapeError("image and mask extents differ for " + entry.image.id);
  PaddedVolume out;
  out.extents = entry.image.extents;
  const auto images = slice_volume(entry.image);
  const auto masks = slice_mask(entry.mask);
  for (std::size_t i = 0; i < images.size(); ++i) {
    auto img = pad_slice_to_target<double>(images[i], target);
    auto msk = pad_slice_to_target<int>(masks[i], target);
    out.offsets = img.offsets;
    out.slices.push_back({std::move(img.frame), std::move(msk.frame)});
  }
  return out;
}

std::pair<Tensor<float>, LabelBatch> make_batch(const std::vector<const SlicePair*>& slices) {
  if (slices.empty()) throw ConfigError("empty batch");
  const Index h = slices.front()->image.rows(), w = slices.front()->image.cols();
  const Index n = static_cast<Index>(slices.size());
  Tensor<float> x({n, 1, h, w});
  LabelBatch labels(n, h, w);
  for (Index i = 0; i < n; ++i) {
    const SlicePair& s = *slices[static_cast<std::size_t>(i)];
    if (s.image.rows() != h || s.image.cols() != w) throw ShapeError("batch frames differ in size");
    for (Index y = 0; y < h; ++y)
      for (Index z = 0; z < w; ++z) {
        x.at(i, 0, y, z) = static_cast<float>(s.image(y, z));
        labels.at(i, y, z) = s.mask(y, z);
      }
  }
  return {std::move(x), std::move(labels)};
}

namespace {

// Runs the model over frames in chunks of `batch` and returns argmax labels.
std::vector<Labels2D> predict_frames(Model<float>& model, const std::vector<SlicePair>& frames, int batch) {
  std::vector<Labels2D> out;
  for (std::size_t start = 0; start < frames.size(); start += static_cast<std::size_t>(batch)) {
    std::vector<const SlicePair*> chunk;
    for (std::size_t i = start; i < std::min(frames.size(), start + static_cast<std::size_t>(batch)); ++i)
      chunk.push_back(&frames[i]);
    const LabelBatch pred = argmax_channels(model.predict(make_batch(chunk).first));
    for (Index n = 0; n < pred.batch; ++n) {
      Labels2D l(pred.height, pred.width);
      for (Index y = 0; y < pred.height; ++y)
        for (Index z = 0; z < pred.width; ++z) l(y, z) = pred.at(n, y, z);
      out.push_back(std::move(l));
    }
  }
  return out;
}

}  // namespace

MaskVolume predict_volume(Model<float>& model, const Volume3D& volume, int batch, Index target) {
  if (batch < 1) throw ConfigError("batch must be >= 1");
  CacheEntry entry{volume, MaskVolume(volume.extents, volume.id)};
  const PaddedVolume padded = pad_volume(entry, target);
  MaskVolume mask = reassemble_mask(predict_frames(model, padded.slices, batch), padded.offsets, volume.extents);
  mask.id = volume.id;
  return mask;
}

std::vector<MetricReport> evaluate_volumes(Model<float>& model, const std::vector<CacheEntry>& volumes, int batch,
                                          Index target) {
  std::vector<MetricReport> reports;
  for (const auto& v : volumes) reports.push_back(evaluate_masks(predict_volume(model, v.image, batch, target), v.mask));
  return reports;
}

double mean_dice(const std::vector<MetricReport>& reports) {
  if (reports.empty()) return 0;
  double total = 0;
  for (const auto& r : reports) total += r.value(LabelSet::Pooled, Metric::Dice);
  return total / static_cast<double>(reports.size());
}

double slice_dice(Model<float>& model, const std::vector<SlicePair>& slices, int batch) {
  const std::vector<Labels2D> pred = predict_frames(model, slices, batch);
  std::vector<int> p, t;
  for (std::size_t i = 0; i < slices.size(); ++i) {
    p.insert(p.end(), pred[i].data(), pred[i].data() + pred[i].size());
    t.insert(t.end(), slices[i].mask.data(), slices[i].mask.data() + slices[i].mask.size());
  }
  return (metrics_from_counts(confusion_counts(p, t, 1)).dice + metrics_from_counts(confusion_counts(p, t, 2)).dice) / 2;
}

namespace {

std::vector<CacheEntry> select(const std::vector<CacheEntry>& data, const std::vector<std::string>& ids) {
  std::map<std::string, const CacheEntry*> by_id;
  for (const auto& e : data) by_id[e.image.id] = &e;
  std::vector<CacheEntry> out;
  for (const auto& id : ids) out.push_back(*by_id.at(id));
  return out;
}

DatasetSplit split_for(const std::vector<CacheEntry>& data, std::uint32_t seed) {
  std::vector<std::string> ids;
  for (const auto& e : data) ids.push_back(e.image.id);
  if (std::set<std::string>(ids.begin(), ids.end()).size() != ids.size()) throw DataError("duplicate volume ids in dataset");
  return split_dataset(ids, seed);
}

// Validation volumes get the split's flip policy once, per volume.
std::vector<CacheEntry> augment_validation(std::vector<CacheEntry> volumes, Rng& rng) {
  const AugmentPolicy policy = AugmentPolicy::for_split(SplitKind::Val);
  for (auto& v : volumes) {
    const auto images = slice_volume(v.image);
    const auto masks = slice_mask(v.mask);
    std::vector<SlicePair> pairs;
    for (std::size_t i = 0; i < images.size(); ++i) pairs.push_back({images[i], masks[i]});
    pairs = apply_policy(pairs, policy, rng);
    std::vector<Image2D> img;
    std::vector<Labels2D> msk;
    for (auto& p : pairs) {
      img.push_back(std::move(p.image));
      msk.push_back(std::move(p.mask));
    }
    const std::string id = v.image.id;
    v.image = reassemble(img, {0, 0}, v.image.extents);
    v.mask = reassemble_mask(msk, {0, 0}, v.mask.extents);
    v.image.id = v.mask.id = id;
  }
  return volumes;
}

TrainOutcome assemble_transfer(const ExperimentConfig& cfg, int experiment, const std::vector<CacheEntry>& data,
                               std::ostream* log) {
  TrainOutcome out;
  out.name = run_name(ModelKind::EnsembleTransfer, cfg.phase, experiment);
  const std::string deep_name = run_name(ModelKind::Deep, cfg.phase, experiment);
  const std::string wide_name = run_name(ModelKind::Wide, cfg.phase, experiment);
  for (const auto& member : {deep_name, wide_name})
    if (!checkpoint_exists(cfg.checkpoint_dir(), member))
      throw DependencyError("ensemble-transfer needs checkpoint " + member + " in " + cfg.checkpoint_dir().string());
  LoadedCheckpoint deep = load_checkpoint(cfg.checkpoint_dir(), deep_name);
  LoadedCheckpoint wide = load_checkpoint(cfg.checkpoint_dir(), wide_name);
  if (deep.info.slice_size != cfg.slice_size || wide.info.slice_size != cfg.slice_size)
    throw ConfigError("member checkpoints were trained at a different slice size");

  ModelShapes shapes = cfg.shapes();
  shapes.deep = deep.info.shapes.deep;
  shapes.wide = wide.info.shapes.wide;
  Model<float> model(ModelKind::EnsembleTransfer, shapes);
  model.store("deep") = deep.model.store("deep");
  model.store("wide") = wide.model.store("wide");

  const std::uint32_t seed = derive_seed(experiment);
  CheckpointInfo& info = out.info;
  info.phase = phase_name(cfg.phase);
  info.experiment = experiment;
  info.seed = seed;
  info.slice_size = cfg.slice_size;
  info.members = {{"deep", deep.info.weights_hash}, {"wide", wide.info.weights_hash}};
  const DatasetSplit split = split_for(data, seed);
  std::vector<CacheEntry> val = select(data, split.val);
  if (cfg.phase == Phase::Aug) {
    RunStreams streams(seed);
    val = augment_validation(std::move(val), streams.augment);
  }
  info.val_dice = val.empty() ? 0 : mean_dice(evaluate_volumes(model, val, cfg.batch, cfg.slice_size));
  out.val_dice.push_back(info.val_dice);
  save_checkpoint(cfg.checkpoint_dir(), out.name, info, model);
  out.info = load_checkpoint(cfg.checkpoint_dir(), out.name).info;
  if (log) *log << out.name << ": assembled from " << deep_name << " and " << wide_name << ", val dice " << info.val_dice << '\n';
  return out;
}

}  // namespace

TrainOutcome train_model(const ExperimentConfig& cfg, int experiment, const std::vector<CacheEntry>& data,
                         std::ostream* log) {
  cfg.validate();
  if (data.empty()) throw DataError("no volumes to train on");
  flush_denormals();
  if (cfg.model == ModelKind::EnsembleTransfer) return assemble_transfer(cfg, experiment, data, log);

  const std::uint32_t seed = derive_seed(experiment);
  RunStreams streams(seed);
  const DatasetSplit split = split_for(data, seed);
  if (split.train.empty()) throw DataError("training split is empty");

  Model<float> model(cfg.model, cfg.shapes());
  model.initialize(streams.init);
  Trainer<float> trainer(model, AdamOptions{cfg.lr});

  std::vector<PaddedVolume> train;
  for (const auto& e : select(data, split.train)) train.push_back(pad_volume(e, cfg.slice_size));
  std::vector<CacheEntry> val = select(data, split.val);
  if (cfg.phase == Phase::Aug) val = augment_validation(std::move(val), streams.augment);
  const AugmentPolicy policy = AugmentPolicy::for_split(cfg.phase == Phase::Aug ? SplitKind::Train : SplitKind::Test, cfg.slice_size);

  TrainOutcome out;
  out.name = run_name(cfg.model, cfg.phase, experiment);
  Model<float> best = model;
  double best_dice = -1;
  int best_epoch = 0;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::vector<SlicePair> slices;
    for (const auto& v : train) {
      std::vector<SlicePair> s = apply_policy(v.slices, policy, streams.augment);
      for (auto& p : s)
        if (!cfg.exclude_empty_slices || (p.mask != 0).any()) slices.push_back(std::move(p));
    }
    if (slices.empty()) throw DataError("every training slice was excluded");
    std::vector<std::size_t> order(slices.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (std::size_t i = order.size() - 1; i > 0; --i) std::swap(order[i], order[streams.data.below(i + 1)]);

    double epoch_loss = 0;
    std::size_t steps = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch)) {
      std::vector<const SlicePair*> chunk;
      for (std::size_t i = start; i < std::min(order.size(), start + static_cast<std::size_t>(cfg.batch)); ++i)
        chunk.push_back(&slices[order[i]]);
      auto [x, labels] = make_batch(chunk);
      const double loss = trainer.step(x, labels);
      out.losses.push_back(loss);
      epoch_loss += loss;
      ++steps;
    }

    const double dice = val.empty() ? 0 : mean_dice(evaluate_volumes(model, val, cfg.batch, cfg.slice_size));
    out.val_dice.push_back(dice);
    if (log)
      *log << out.name << " epoch " << epoch << " loss " << epoch_loss / static_cast<double>(steps) << " val dice " << dice
           << '\n';
    // With no validation volumes the last epoch wins.
    if (val.empty() || dice > best_dice) {
      best = model;
      best_dice = dice;
      best_epoch = epoch;
    }
  }

  CheckpointInfo& info = out.info;
  info.phase = phase_name(cfg.phase);
  info.experiment = experiment;
  info.seed = seed;
  info.epoch = best_epoch;
  info.val_dice = best_dice;
  info.slice_size = cfg.slice_size;
  save_checkpoint(cfg.checkpoint_dir(), out.name, info, best);
  out.info = load_checkpoint(cfg.checkpoint_dir(), out.name).info;
  return out;
}

EvaluationResult evaluate_model(const ExperimentConfig& cfg, int experiment, const std::vector<CacheEntry>& data) {
  flush_denormals();
  EvaluationResult result;
  result.model = cfg.model;
  result.phase = cfg.phase;
  result.experiment = experiment;
  result.name = run_name(cfg.model, cfg.phase, experiment);
  LoadedCheckpoint ckpt = load_checkpoint(cfg.checkpoint_dir(), result.name);
  if (ckpt.info.model != cfg.model || ckpt.info.experiment != experiment || ckpt.info.phase != phase_name(cfg.phase))
    throw FormatError("checkpoint " + result.name + " describes a different run");
  const DatasetSplit split = split_for(data, derive_seed(experiment));
  for (const auto& v : select(data, split.test)) {
    if (v.image.extents[1] > ckpt.info.slice_size || v.image.extents[2] > ckpt.info.slice_size)
      throw FormatError("volume " + v.image.id + " exceeds the checkpoint slice size " + std::to_string(ckpt.info.slice_size));
    result.reports.push_back(evaluate_masks(predict_volume(ckpt.model, v.image, cfg.batch, ckpt.info.slice_size), v.mask));
  }
  return result;
}

namespace {

json metrics_json(const Metrics& m) {
  return {{"dice", m.dice}, {"jaccard", m.jaccard}, {"sensitivity", m.sensitivity}, {"specificity", m.specificity}};
}

Metrics metrics_from(const json& j) { return {j.at("dice"), j.at("jaccard"), j.at("sensitivity"), j.at("specificity")}; }

}  // namespace

void save_results(const std::filesystem::path& dir, const EvaluationResult& r) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  json volumes = json::array();
  for (const auto& v : r.reports) volumes.push_back({{"id", v.volume_id}, {"L1", metrics_json(v.l1)}, {"L2", metrics_json(v.l2)}});
  const json j = {{"model", model_name(r.model)}, {"phase", phase_name(r.phase)}, {"experiment", r.experiment}, {"volumes", volumes}};
  std::ofstream out(dir / (r.name + ".json"), std::ios::trunc);
  if (!out) throw IoError("cannot write results to " + dir.string());
  out << j.dump(2) << '\n';
}

EvaluationResult load_results(const std::filesystem::path& dir, const std::string& name) {
  std::ifstream in(dir / (name + ".json"));
  if (!in) throw DataError("missing evaluation results " + (dir / (name + ".json")).string());
  try {
    const json j = json::parse(in);
    EvaluationResult r;
    r.name = name;
    r.model = parse_model(j.at("model"));
    r.phase = parse_phase(j.at("phase"));
    r.experiment = j.at("experiment");
    for (const auto& v : j.at("volumes")) r.reports.push_back({v.at("id"), metrics_from(v.at("L1")), metrics_from(v.at("L2"))});
    return r;
  } catch (const json::exception& e) {
    throw FormatError("bad results file " + name + ": " + e.what());
  }
}

}  // namespace pnn
