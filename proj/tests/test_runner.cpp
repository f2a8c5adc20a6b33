#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "cli.hpp"
#include "nifti_fixture.hpp"
#include "pnnunet/checkpoint.hpp"
#include "pnnunet/experiment.hpp"
#include "pnnunet/synthetic.hpp"

using namespace pnn;

namespace {

std::filesystem::path fresh_dir(const std::string& name) {
  auto d = std::filesystem::temp_directory_path() / ("pnnunet_runner_" + name);
  std::filesystem::remove_all(d);
  std::filesystem::create_directories(d);
  return d;
}

// A run small enough for unit tests: scale 64, 16x16 frames, one epoch.
ExperimentConfig tiny_config(const std::filesystem::path& out) {
  ExperimentConfig cfg;
  cfg.out = out;
  cfg.scale = 64;
  cfg.slice_size = 16;
  cfg.epochs = 1;
  cfg.experiments = {1};
  return cfg;
}

std::vector<CacheEntry> tiny_data() { return make_synthetic_dataset(6, {5, 12, 14}, 3); }

Tensor<float> slice_batch(std::size_t n, Index side, std::uint64_t seed) {
  const auto slices = make_synthetic_slices(n, side, seed);
  std::vector<const SlicePair*> ptrs;
  for (const auto& s : slices) ptrs.push_back(&s);
  return make_batch(ptrs).first;
}

int run_cli(std::vector<std::string> args, std::string* out_text = nullptr, std::string* err_text = nullptr) {
  args.insert(args.begin(), "pnnunet");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  if (out_text) *out_text = out.str();
  if (err_text) *err_text = err.str();
  return code;
}

}  // namespace

TEST(Model, ScaledShapes) {
  const ModelShapes s = ModelShapes::at_scale(16);
  EXPECT_EQ(s.deep.init_filters, 4);
  EXPECT_EQ(s.wide.init_filters, 16);
  EXPECT_EQ(s.ae.stage_growths, (std::vector<int>{2, 4}));
  EXPECT_EQ(s.ae.bottleneck_growth, 8);
  const ModelShapes full = ModelShapes::at_scale(1);
  EXPECT_EQ(count_parameters(full.deep), 31030723);
  EXPECT_EQ(count_parameters(full.wide), 29762307);
  EXPECT_EQ(ModelShapes::at_scale(1000).deep.init_filters, 1);
  EXPECT_THROW(ModelShapes::at_scale(0), ConfigError);
  EXPECT_EQ(ModelShapes::at_scale(8, 0.1, true).ae.segmentation_classes, 3);
}

TEST(Model, StoresPerKind) {
  const ModelShapes s = ModelShapes::at_scale(32);
  const auto names = [&](ModelKind k) {
    Model<float> m(k, s);
    std::vector<std::string> out;
    for (const auto& [n, p] : m.stores()) out.push_back(n);
    return out;
  };
  EXPECT_EQ(names(ModelKind::Deep), (std::vector<std::string>{"deep"}));
  EXPECT_EQ(names(ModelKind::Wide), (std::vector<std::string>{"wide"}));
  EXPECT_EQ(names(ModelKind::EnsembleRetrain), (std::vector<std::string>{"deep", "wide"}));
  EXPECT_EQ(names(ModelKind::PNN), (std::vector<std::string>{"ae", "deep", "wide"}));
  EXPECT_FALSE(Model<float>(ModelKind::EnsembleTransfer, s).trainable());
  for (ModelKind k : kAllModels) EXPECT_EQ(parse_model(model_name(k)), k);
  EXPECT_THROW(parse_model("unet"), ConfigError);
}

TEST(Model, TrainingLossDropsOnTinySet) {
  flush_denormals();
  const auto slices = make_synthetic_slices(8, 64, 7);
  std::vector<const SlicePair*> ptrs;
  for (const auto& s : slices) ptrs.push_back(&s);
  const auto [x, labels] = make_batch(ptrs);
  Model<float> model(ModelKind::Deep, ModelShapes::at_scale(16));
  Rng rng(derive_seed(1));
  model.initialize(rng);
  Trainer<float> trainer(model, AdamOptions{});
  const double first = trainer.step(x, labels);
  double last = first;
  for (int i = 1; i < 200; ++i) last = trainer.step(x, labels);
  EXPECT_LT(last, first);
}

TEST(Model, SoftDiceWeightAddsTerm) {
  ModelShapes s = ModelShapes::at_scale(32);
  Model<double> plain(ModelKind::Wide, s);
  s.dice_weight = 0.5;
  Model<double> weighted(ModelKind::Wide, s);
  Rng a(1), b(1);
  plain.initialize(a);
  weighted.initialize(b);
  Tensor<double> x({1, 1, 8, 8});
  LabelBatch labels(1, 8, 8);
  labels.labels[10] = 1;
  Tape<double> t1, t2;
  const double base = t1.value(plain.loss(t1, x, labels))[0];
  const double with = t2.value(weighted.loss(t2, x, labels))[0];
  Tape<double> t3;
  const double dice = t3.value(soft_dice_loss(t3, plain.probabilities(t3, t3.constant(x)), labels))[0];
  EXPECT_NEAR(with, base + 0.5 * dice, 1e-12);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  const auto dir = fresh_dir("ckpt");
  for (ModelKind kind : kAllModels) {
    Model<float> model(kind, ModelShapes::at_scale(32));
    Rng rng(11);
    model.initialize(rng);
    CheckpointInfo info;
    info.experiment = 3;
    info.seed = derive_seed(3);
    info.epoch = 7;
    info.val_dice = 0.25;
    save_checkpoint(dir, model_name(kind), info, model);
    LoadedCheckpoint loaded = load_checkpoint(dir, model_name(kind));
    EXPECT_EQ(loaded.info.model, kind);
    EXPECT_EQ(loaded.info.epoch, 7);
    EXPECT_EQ(loaded.info.seed, derive_seed(3));
    EXPECT_EQ(loaded.info.weights_hash, weights_hash(model));
    const Tensor<float> x = slice_batch(2, 32, 5);
    const Tensor<float> a = model.predict(x), b = loaded.model.predict(x);
    EXPECT_TRUE((a.array() == b.array()).all()) << model_name(kind);
  }
}

TEST(Checkpoint, BlobLengthMatchesShapes) {
  const auto dir = fresh_dir("ckpt_len");
  Model<float> model(ModelKind::PNN, ModelShapes::at_scale(32));
  Rng rng(2);
  model.initialize(rng);
  save_checkpoint(dir, "m", {}, model);
  std::int64_t params = 0;
  for (const auto& [n, s] : model.stores()) params += s->element_count();
  EXPECT_EQ(static_cast<std::int64_t>(std::filesystem::file_size(dir / "m.bin")), params * 4);
}

TEST(Checkpoint, Rejections) {
  const auto dir = fresh_dir("ckpt_bad");
  EXPECT_THROW(load_checkpoint(dir, "missing"), IoError);
  Model<float> model(ModelKind::Deep, ModelShapes::at_scale(32));
  Rng rng(2);
  model.initialize(rng);
  save_checkpoint(dir, "m", {}, model);
  {
    std::fstream f(dir / "m.bin", std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(8);
    f.put('\x7f');
  }
  EXPECT_THROW(load_checkpoint(dir, "m"), FormatError);
  std::filesystem::resize_file(dir / "m.bin", 16);
  EXPECT_THROW(load_checkpoint(dir, "m"), FormatError);
  save_checkpoint(dir, "m", {}, model);
  { std::ofstream(dir / "m.json") << "{ not json"; }
  EXPECT_THROW(load_checkpoint(dir, "m"), FormatError);
}

TEST(Experiment, ConfigJsonAndValidation) {
  ExperimentConfig cfg = apply_config_json(
      R"({"model": "wide", "phase": "aug", "experiments": [2, 4], "epochs": 3, "batch": 2, "lr": 0.01,
          "scale": 16, "exclude_empty_slices": true, "recon-weight": 0.5, "slice-size": 32})",
      {});
  EXPECT_EQ(cfg.model, ModelKind::Wide);
  EXPECT_EQ(cfg.phase, Phase::Aug);
  EXPECT_EQ(cfg.experiments, (std::vector<int>{2, 4}));
  EXPECT_EQ(cfg.epochs, 3);
  EXPECT_EQ(cfg.batch, 2);
  EXPECT_DOUBLE_EQ(cfg.lr, 0.01);
  EXPECT_TRUE(cfg.exclude_empty_slices);
  EXPECT_DOUBLE_EQ(cfg.recon_weight, 0.5);
  EXPECT_EQ(cfg.slice_size, 32);
  EXPECT_NO_THROW(cfg.validate());
  EXPECT_THROW(apply_config_json(R"({"colour": 1})", {}), ConfigError);
  EXPECT_THROW(apply_config_json(R"({"epochs": "many"})", {}), ConfigError);
  EXPECT_THROW(apply_config_json("[1]", {}), ConfigError);
  EXPECT_THROW(apply_config_json("{", {}), ConfigError);
  ExperimentConfig bad;
  bad.experiments = {60};
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = {};
  bad.slice_size = 24;
  EXPECT_THROW(bad.validate(), ConfigError);
  EXPECT_EQ(run_name(ModelKind::EnsembleTransfer, Phase::Aug, 3), "ensemble-transfer-aug-s3");
}

TEST(Experiment, PredictVolumeIndependentOfBatchSize) {
  Model<float> model(ModelKind::Wide, ModelShapes::at_scale(16));
  Rng rng(4);
  model.initialize(rng);
  const auto data = make_synthetic_dataset(1, {9, 40, 33}, 4);
  const MaskVolume a = predict_volume(model, data[0].image, 1), b = predict_volume(model, data[0].image, 8);
  EXPECT_EQ(a.labels, b.labels);
  EXPECT_EQ(a.extents, data[0].image.extents);
}

TEST(Experiment, AllBackgroundModelScoresZeroDice) {
  Model<float> model(ModelKind::Deep, ModelShapes::at_scale(32));
  for (auto& [sn, store] : model.stores())
    for (auto& [pn, p] : *store) p.value.set_zero();
  model.store("deep").at("head.bias").value[0] = 5;
  const auto data = make_synthetic_dataset(2, {6, 30, 30}, 5);
  for (const auto& r : evaluate_volumes(model, data, 4)) {
    EXPECT_EQ(r.l1.dice, 0);
    EXPECT_EQ(r.l2.dice, 0);
    EXPECT_EQ(r.l1.specificity, 1);
    EXPECT_EQ(r.l2.specificity, 1);
  }
}

TEST(Experiment, TrainingIsDeterministic) {
  const auto data = tiny_data();
  ExperimentConfig a = tiny_config(fresh_dir("det_a")), b = tiny_config(fresh_dir("det_b"));
  a.model = b.model = ModelKind::PNN;
  a.phase = b.phase = Phase::Aug;
  const TrainOutcome x = train_model(a, 1, data), y = train_model(b, 1, data);
  EXPECT_EQ(x.info.weights_hash, y.info.weights_hash);
  EXPECT_EQ(x.losses, y.losses);
  EXPECT_FALSE(x.losses.empty());
  EXPECT_EQ(x.name, "pnn-aug-s1");
}

TEST(Experiment, TransferNeedsMembersAndKeepsTheirWeights) {
  const auto data = tiny_data();
  ExperimentConfig cfg = tiny_config(fresh_dir("transfer"));
  cfg.model = ModelKind::EnsembleTransfer;
  EXPECT_THROW(train_model(cfg, 1, data), DependencyError);
  cfg.model = ModelKind::Deep;
  const TrainOutcome deep = train_model(cfg, 1, data);
  cfg.model = ModelKind::EnsembleTransfer;
  EXPECT_THROW(train_model(cfg, 1, data), DependencyError);
  cfg.model = ModelKind::Wide;
  const TrainOutcome wide = train_model(cfg, 1, data);
  cfg.model = ModelKind::EnsembleTransfer;
  const TrainOutcome t = train_model(cfg, 1, data);
  EXPECT_EQ(t.info.members.at("deep"), deep.info.weights_hash);
  EXPECT_EQ(t.info.members.at("wide"), wide.info.weights_hash);
  EXPECT_EQ(weights_hash(load_checkpoint(cfg.checkpoint_dir(), "deep-noaug-s1").model), deep.info.weights_hash);

  // Its vote equals the mean of the members' own softmax maps.
  LoadedCheckpoint e = load_checkpoint(cfg.checkpoint_dir(), t.name);
  LoadedCheckpoint d = load_checkpoint(cfg.checkpoint_dir(), deep.name);
  LoadedCheckpoint w = load_checkpoint(cfg.checkpoint_dir(), wide.name);
  const Tensor<float> x = slice_batch(3, 16, 8);
  const std::vector<Tensor<float>> members{d.model.predict(x), w.model.predict(x)};
  EXPECT_TRUE((soft_vote<float>(members).array() == e.model.predict(x).array()).all());
}

TEST(Experiment, EvaluateChecksSliceSizeAndResultsRoundTrip) {
  const auto data = tiny_data();
  ExperimentConfig cfg = tiny_config(fresh_dir("evaluate"));
  cfg.model = ModelKind::Wide;
  train_model(cfg, 1, data);
  const EvaluationResult r = evaluate_model(cfg, 1, data);
  EXPECT_EQ(r.reports.size(), split_counts(data.size(), {}).test);
  save_results(cfg.results_dir(), r);
  const EvaluationResult back = load_results(cfg.results_dir(), r.name);
  ASSERT_EQ(back.reports.size(), r.reports.size());
  EXPECT_EQ(back.reports[0].volume_id, r.reports[0].volume_id);
  EXPECT_EQ(back.reports[0].l1.dice, r.reports[0].l1.dice);
  EXPECT_THROW(load_results(cfg.results_dir(), "nothing"), DataError);

  auto wide_data = data;
  for (auto& e : wide_data) {
    e.image = Volume3D({e.image.extents[0], 20, 20}, e.image.id);
    e.mask = MaskVolume({e.mask.extents[0], 20, 20}, e.mask.id);
  }
  EXPECT_THROW(evaluate_model(cfg, 1, wide_data), FormatError);
}

TEST(Cli, SeedsAndUsageErrors) {
  std::string out, err;
  EXPECT_EQ(run_cli({"seeds"}, &out), 0);
  EXPECT_EQ(out, "71582788 143165576 214748364 286331153 357913941\n");
  EXPECT_EQ(run_cli({"seeds", "--frobnicate"}, &out, &err), 2);
  EXPECT_EQ(run_cli({}, &out, &err), 2);
  EXPECT_EQ(run_cli({"launch"}, &out, &err), 2);
  EXPECT_EQ(run_cli({"train", "--model", "nope"}, &out, &err), 1);
  EXPECT_NE(err.find("unknown model"), std::string::npos);
  EXPECT_EQ(run_cli({"train", "--model", "deep", "--data", "/nonexistent/pnnunet"}, &out, &err), 1);
}

TEST(Cli, TrainProducesNamedCheckpointAndFlagsOverrideConfig) {
  const auto dir = fresh_dir("cli");
  write_volume_cache(dir / "cache", tiny_data());
  { std::ofstream(dir / "cfg.json") << R"({"slice_size": 16, "scale": 64, "epochs": 5, "model": "wide"})"; }
  std::string out, err;
  const int code = run_cli({"train", "--model", "deep", "--phase", "noaug", "--experiments", "1", "--epochs", "1", "--config",
                            (dir / "cfg.json").string(), "--data", (dir / "cache").string(), "--out", (dir / "runs").string()},
                           &out, &err);
  ASSERT_EQ(code, 0) << err;
  EXPECT_TRUE(checkpoint_exists(dir / "runs" / "checkpoints", "deep-noaug-s1"));
  EXPECT_FALSE(checkpoint_exists(dir / "runs" / "checkpoints", "wide-noaug-s1"));
  EXPECT_EQ(load_checkpoint(dir / "runs" / "checkpoints", "deep-noaug-s1").info.epoch, 1);
  EXPECT_EQ(run_cli({"evaluate", "--model", "deep", "--experiments", "1", "--config", (dir / "cfg.json").string(), "--data",
                     (dir / "cache").string(), "--out", (dir / "runs").string()},
                    &out, &err),
            0)
      << err;
  EXPECT_TRUE(std::filesystem::exists(dir / "runs" / "results" / "deep-noaug-s1.json"));
  // Reports need all five models and seeds.
  EXPECT_EQ(run_cli({"report", "--out", (dir / "runs").string()}, &out, &err), 1);
}

TEST(Cli, PrepareReadsMsdLayout) {
  const auto dir = fresh_dir("msd");
  EXPECT_EQ(run_cli({"prepare", "--data", dir.string(), "--out", (dir / "cache").string()}), 1);
  std::filesystem::create_directories(dir / "imagesTr");
  std::filesystem::create_directories(dir / "labelsTr");
  const auto write = [](const std::filesystem::path& p, const std::vector<std::uint8_t>& bytes) {
    std::ofstream(p, std::ios::binary).write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  };
  fixture::NiftiSpec image;
  image.dim = {3, 2, 3, 2};
  fixture::NiftiSpec label = image;
  label.datatype = 2;
  label.bitpix = 8;
  const std::vector<float> voxels = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 20};
  const std::vector<std::uint8_t> labels = {0, 1, 2, 0, 0, 0, 1, 1, 0, 0, 2, 0};
  write(dir / "imagesTr" / "hippocampus_001.nii.gz", fixture::gzip(fixture::make_nifti(image, voxels)));
  write(dir / "labelsTr" / "hippocampus_001.nii.gz", fixture::gzip(fixture::make_nifti(label, labels)));
  write(dir / "imagesTr" / "._hippocampus_001.nii.gz", {0, 1, 2});
  std::string err;
  ASSERT_EQ(run_cli({"prepare", "--data", dir.string(), "--out", (dir / "cache").string()}, nullptr, &err), 0) << err;
  const auto cache = read_volume_cache(dir / "cache");
  ASSERT_EQ(cache.size(), 1u);
  EXPECT_EQ(cache[0].image.id, "hippocampus_001");
  EXPECT_EQ(cache[0].image.extents, (Extents3{2, 3, 2}));
  EXPECT_DOUBLE_EQ(cache[0].image.at(1, 2, 1), 1.0);
  EXPECT_FLOAT_EQ(static_cast<float>(cache[0].image.at(1, 0, 0)), 0.05f);  // cache holds f32
  EXPECT_EQ(cache[0].mask.at(0, 1, 0), 2);
  EXPECT_EQ(cache[0].mask.at(0, 0, 1), 1);

  EXPECT_EQ(run_cli({"prepare", "--synthetic", "3", "--out", (dir / "cache2").string()}), 0);
  EXPECT_EQ(read_volume_cache(dir / "cache2").size(), 3u);
}
