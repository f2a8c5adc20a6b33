#include "cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <iomanip>
#include <map>
#include <sstream>

#include "pnnunet/checkpoint.hpp"
#include "pnnunet/experiment.hpp"
#include "pnnunet/nifti.hpp"
#include "pnnunet/report.hpp"
#include "pnnunet/selftest/acceptance.hpp"
#include "pnnunet/synthetic.hpp"

namespace pnn::cli {

namespace {

std::vector<int> parse_experiments(const std::string& text) {
  std::vector<int> out;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ',');) {
    std::size_t used = 0;
    int k = 0;
    try {
      k = std::stoi(item, &used);
    } catch (const std::logic_error&) {
      used = 0;
    }
    if (used == 0 || used != item.size()) throw ConfigError("bad experiment number '" + item + "'");
    derive_seed(k);
    out.push_back(k);
  }
  if (out.empty()) throw ConfigError("--experiments needs at least one number");
  return out;
}

struct Flags {
  std::string model, phase, experiments, config, data, out;
  int scale = 0, epochs = 0, batch = 0;
  double lr = 0;
  CLI::Option *o_model{}, *o_phase{}, *o_experiments{}, *o_config{}, *o_data{}, *o_out{}, *o_scale{}, *o_epochs{},
      *o_batch{}, *o_lr{};

  void attach(CLI::App* app) {
    o_model = app->add_option("--model", model, "deep, wide, ensemble-transfer, ensemble-retrain or pnn");
    o_phase = app->add_option("--phase", phase, "noaug or aug");
    o_experiments = app->add_option("--experiments", experiments, "comma list of experiment numbers (default 1,2,3,4,5)");
    o_config = app->add_option("--config", config, "JSON file with flat keys named like these flags");
    o_data = app->add_option("--data", data, "volume cache directory (prepare: MSD task directory)");
    o_out = app->add_option("--out", out, "output directory");
    o_scale = app->add_option("--scale", scale, "divide initial filter counts by this (1 = full size)");
    o_epochs = app->add_option("--epochs", epochs, "training epochs");
    o_batch = app->add_option("--batch", batch, "batch size");
    o_lr = app->add_option("--lr", lr, "Adam learning rate");
  }

  // Defaults, then the config file, then explicit flags.
  ExperimentConfig resolve() const {
    ExperimentConfig cfg;
    if (o_config->count()) cfg = load_config_file(config, cfg);
    if (o_model->count()) cfg.model = parse_model(model);
    if (o_phase->count()) cfg.phase = parse_phase(phase);
    if (o_experiments->count()) cfg.experiments = parse_experiments(experiments);
    if (o_data->count()) cfg.data = data;
    if (o_out->count()) cfg.out = out;
    if (o_scale->count()) cfg.scale = scale;
    if (o_epochs->count()) cfg.epochs = epochs;
    if (o_batch->count()) cfg.batch = batch;
    if (o_lr->count()) cfg.lr = lr;
    cfg.validate();
    return cfg;
  }
};

std::map<ModelKind, RunSet> load_all_results(const ExperimentConfig& cfg, const std::vector<ModelKind>& models) {
  std::map<ModelKind, RunSet> runs;
  for (ModelKind m : models)
    for (int k : cfg.experiments) runs[m].push_back(load_results(cfg.results_dir(), run_name(m, cfg.phase, k)));
  return runs;
}

std::string fixed(double x) { return format_fixed(x); }

}  // namespace

std::vector<CacheEntry> load_msd_task(const std::filesystem::path& dir) {
  const auto images = dir / "imagesTr", labels = dir / "labelsTr";
  if (!std::filesystem::is_directory(images) || !std::filesystem::is_directory(labels))
    throw IoError(dir.string() + " lacks imagesTr/ and labelsTr/");
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(images)) {
    const std::string name = e.path().filename().string();
    if (name.rfind("._", 0) == 0 || !e.is_regular_file()) continue;
    if (name.ends_with(".nii") || name.ends_with(".nii.gz")) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw DataError("no NIfTI images under " + images.string());
  std::vector<CacheEntry> entries;
  for (const auto& f : files) {
    const auto label_path = labels / f.filename();
    if (!std::filesystem::exists(label_path)) throw DataError("no label volume for " + f.filename().string());
    NiftiImage image = read_nifti(f);
    NiftiImage label = read_nifti(label_path);
    if (image.volume.extents != label.volume.extents)
      throw ShapeError("image and label extents differ for " + image.volume.id);
    normalize_min_max(image.volume);
    MaskVolume mask = to_mask(label.volume);
    mask.id = image.volume.id;
    entries.push_back({std::move(image.volume), std::move(mask)});
  }
  return entries;
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"PNN-UNet and baseline hippocampus segmentation experiments"};
  app.name("pnnunet");
  app.require_subcommand(1);

  auto* seeds = app.add_subcommand("seeds", "print the derived seed of each experiment");
  auto* prepare = app.add_subcommand("prepare", "build the volume cache from an MSD task directory");
  auto* train = app.add_subcommand("train", "train one model for each experiment");
  auto* evaluate = app.add_subcommand("evaluate", "score trained checkpoints on the test split");
  auto* compare = app.add_subcommand("compare", "paired t-tests between two models' evaluations");
  auto* report = app.add_subcommand("report", "write CSV and markdown tables for a phase");
  auto* selftest = app.add_subcommand("selftest", "run the acceptance checks");
  // One flag set per subcommand; CLI11 binds each option to its own storage.
  std::map<CLI::App*, Flags> flags;
  for (auto* sub : {seeds, prepare, train, evaluate, compare, report, selftest}) flags[sub].attach(sub);

  std::size_t synthetic = 0;
  prepare->add_option("--synthetic", synthetic, "write N synthetic volumes instead of reading NIfTI");
  std::vector<std::string> compared;
  compare->add_option("models", compared, "two model names (default: PNN against each baseline, Transfer against Retrain)")
      ->expected(0, 2);
  std::vector<int> criteria;
  selftest->add_option("criteria", criteria, "criterion numbers to run (default all)");
  bool verbose = false;
  selftest->add_flag("--verbose", verbose, "print training progress");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "pnnunet: " << e.what() << "\n" << "run 'pnnunet --help' for usage\n";
    return 2;
  }

  try {
    CLI::App* chosen = app.get_subcommands().front();
    ExperimentConfig cfg = flags.at(chosen).resolve();

    if (seeds->parsed()) {
      for (std::size_t i = 0; i < cfg.experiments.size(); ++i)
        out << (i ? " " : "") << derive_seed(cfg.experiments[i]);
      out << "\n";
      return 0;
    }

    if (prepare->parsed()) {
      const std::vector<CacheEntry> entries =
          synthetic > 0 ? make_synthetic_dataset(synthetic, {36, 50, 35}, 0) : load_msd_task(cfg.data);
      write_volume_cache(cfg.out, entries);
      out << "wrote " << entries.size() << " volumes to " << cfg.out.string() << "\n";
      return 0;
    }

    if (train->parsed()) {
      const auto data = read_volume_cache(cfg.data);
      for (int k : cfg.experiments) {
        const TrainOutcome r = train_model(cfg, k, data, &out);
        out << r.name << ": best epoch " << r.info.epoch << ", val dice " << fixed(r.info.val_dice) << ", checkpoint "
            << (cfg.checkpoint_dir() / r.name).string() << ".json\n";
      }
      return 0;
    }

    if (evaluate->parsed()) {
      const auto data = read_volume_cache(cfg.data);
      for (int k : cfg.experiments) {
        const EvaluationResult r = evaluate_model(cfg, k, data);
        save_results(cfg.results_dir(), r);
        out << r.name << ": " << r.reports.size() << " test volumes, dice L1+L2 " << fixed(mean_dice(r.reports)) << "\n";
      }
      return 0;
    }

    if (compare->parsed()) {
      std::vector<std::pair<ModelKind, ModelKind>> pairs;
      if (compared.empty()) pairs = default_comparisons();
      else if (compared.size() == 2) pairs = {{parse_model(compared[0]), parse_model(compared[1])}};
      else throw ConfigError("compare takes two model names or none");
      std::vector<ComparisonRow> rows;
      for (const auto& [a, b] : pairs) {
        auto runs = load_all_results(cfg, {a, b});
        const auto c = compare_models(runs[a], runs[b]);
        rows.insert(rows.end(), c.begin(), c.end());
      }
      for (Metric m : kAllMetrics) out << ttest_markdown(rows, m, "") << "\n";
      return 0;
    }

    if (report->parsed()) {
      std::vector<ModelKind> models(std::begin(kAllModels), std::end(kAllModels));
      auto runs = load_all_results(cfg, models);
      std::vector<ReportRow> rows;
      std::vector<ComparisonRow> cmp;
      for (ModelKind m : models) {
        const auto s = summarize(runs[m]);
        rows.insert(rows.end(), s.begin(), s.end());
      }
      for (const auto& [a, b] : default_comparisons()) {
        const auto c = compare_models(runs[a], runs[b]);
        cmp.insert(cmp.end(), c.begin(), c.end());
      }
      const std::string stem = "report-" + phase_name(cfg.phase);
      for (ReportFormat f : {ReportFormat::Csv, ReportFormat::Markdown})
        for (const auto& p : emit_report(cfg.out / "reports", stem, rows, cmp, f, cfg.phase)) out << "wrote " << p.string() << "\n";
      return 0;
    }

    if (selftest->parsed()) {
      selftest::AcceptanceOptions options;
      options.only = {criteria.begin(), criteria.end()};
      if (verbose) options.log = &out;
      const auto results = selftest::run_acceptance(options, out);
      const auto passed = std::count_if(results.begin(), results.end(), [](const auto& r) { return r.pass; });
      out << passed << "/" << results.size() << " criteria passed\n";
      return passed == static_cast<long>(results.size()) ? 0 : 1;
    }
  } catch (const std::exception& e) {
    err << "pnnunet: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace pnn::cli
