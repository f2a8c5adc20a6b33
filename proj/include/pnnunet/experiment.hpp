#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "pnnunet/augment.hpp"
#include "pnnunet/checkpoint.hpp"
#include "pnnunet/evalstat.hpp"

namespace pnn {

enum class Phase { NoAug, Aug };
std::string phase_name(Phase phase);
Phase parse_phase(const std::string& name);

struct ExperimentConfig {
  ModelKind model = ModelKind::PNN;
  Phase phase = Phase::NoAug;
  std::vector<int> experiments{1, 2, 3, 4, 5};
  std::filesystem::path data = "data";
  std::filesystem::path out = "runs";
  int epochs = 20;
  int batch = 8;
  double lr = 1e-3;
  int scale = 8;
  bool exclude_empty_slices = false;
  double recon_weight = 0.1;
  bool ae_in_vote = false;
  double dice_weight = 0;
  /// Frame side slices are padded to; 64 for the hippocampus data.
  Index slice_size = kSliceSize;

  void validate() const;
  ModelShapes shapes() const {
    ModelShapes s = ModelShapes::at_scale(scale, recon_weight, ae_in_vote);
    s.dice_weight = dice_weight;
    return s;
  }
  std::filesystem::path checkpoint_dir() const { return out / "checkpoints"; }
  std::filesystem::path results_dir() const { return out / "results"; }
};

/// Applies flat JSON keys named like the command-line flags (dashes or
/// underscores) over `base`. Unknown keys are a ConfigError.
ExperimentConfig apply_config_json(const std::string& text, ExperimentConfig base);
ExperimentConfig load_config_file(const std::filesystem::path& path, ExperimentConfig base);

/// e.g. deep-noaug-s1.
std::string run_name(ModelKind model, Phase phase, int experiment);

/// Independent streams for data order, weight init and augmentation,
/// seeded with seed, seed + 1 and seed + 2.
struct RunStreams {
  Rng data, init, augment;
  explicit RunStreams(std::uint32_t seed) : data(seed), init(std::uint64_t{seed} + 1), augment(std::uint64_t{seed} + 2) {}
};

/// Sets flush-to-zero and denormals-are-zero for this thread where the CPU
/// supports it. Float training at the default init otherwise spends most of
/// its time on denormal activations.
void flush_denormals();

/// Axial slices of a volume, each centered in a target x target frame.
struct PaddedVolume {
  std::vector<SlicePair> slices;
  SliceOffsets offsets;
  Extents3 extents{0, 0, 0};
};
PaddedVolume pad_volume(const CacheEntry& entry, Index target = kSliceSize);

/// Packs frames into an N x 1 x H x W batch plus labels.
std::pair<Tensor<float>, LabelBatch> make_batch(const std::vector<const SlicePair*>& slices);

/// slice -> pad -> forward -> argmax -> crop -> reassemble.
MaskVolume predict_volume(Model<float>& model, const Volume3D& volume, int batch, Index target = kSliceSize);

std::vector<MetricReport> evaluate_volumes(Model<float>& model, const std::vector<CacheEntry>& volumes, int batch,
                                          Index target = kSliceSize);

/// Mean over volumes of the pooled (L1 + L2) Dice.
double mean_dice(const std::vector<MetricReport>& reports);

/// Fraction-of-voxels Dice pooled over a set of slices (mean of L1 and L2).
double slice_dice(Model<float>& model, const std::vector<SlicePair>& slices, int batch);

struct TrainOutcome {
  std::string name;
  CheckpointInfo info;
  std::vector<double> losses;
  std::vector<double> val_dice;
};

/// Trains (or, for EnsembleTransfer, assembles) one model for one
/// experiment number and writes its best-validation checkpoint.
TrainOutcome train_model(const ExperimentConfig& cfg, int experiment, const std::vector<CacheEntry>& data,
                         std::ostream* log = nullptr);

struct EvaluationResult {
  std::string name;
  ModelKind model = ModelKind::Deep;
  Phase phase = Phase::NoAug;
  int experiment = 1;
  std::vector<MetricReport> reports;
};

/// Loads the run's checkpoint and scores every test-split volume.
EvaluationResult evaluate_model(const ExperimentConfig& cfg, int experiment, const std::vector<CacheEntry>& data);

void save_results(const std::filesystem::path& dir, const EvaluationResult& result);
EvaluationResult load_results(const std::filesystem::path& dir, const std::string& name);

}  // namespace pnn
