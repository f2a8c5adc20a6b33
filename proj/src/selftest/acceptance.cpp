#include "pnnunet/selftest/acceptance.hpp"

#include <chrono>
#include <cmath>
#include <functional>
#include <iomanip>
#include <map>
#include <sstream>

#include "pnnunet/checkpoint.hpp"
#include "pnnunet/evalstat.hpp"
#include "pnnunet/experiment.hpp"
#include "pnnunet/ops.hpp"
#include "pnnunet/report.hpp"
#include "pnnunet/selftest/gradcheck.hpp"
#include "pnnunet/synthetic.hpp"

namespace pnn::selftest {

namespace {

using Clock = std::chrono::steady_clock;

Tensor<double> random_tensor(Shape shape, Rng& rng, double lo = -1, double hi = 1) {
  Tensor<double> t(std::move(shape));
  for (Index i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

LabelBatch random_labels(Index n, Index h, Index w, Rng& rng) {
  LabelBatch l(n, h, w);
  for (int& v : l.labels) v = static_cast<int>(rng.below(3));
  return l;
}

std::string fmt(double x, int precision = 3) {
  std::ostringstream s;
  s << std::setprecision(precision) << x;
  return s.str();
}

// ---- 1
CriterionResult parameter_counts() {
  const auto deep = count_parameters(UNetConfig::deep());
  const auto wide = count_parameters(UNetConfig::wide());
  return {1, "parameter counts", deep == 31030723 && wide == 29762307, false,
          "deep " + std::to_string(deep) + " (want 31030723), wide " + std::to_string(wide) + " (want 29762307)"};
}

// ---- 2
CriterionResult seeds() {
  const std::uint32_t want[] = {71582788, 143165576, 214748364, 286331153, 357913941};
  bool ok = true;
  std::string got;
  for (int k = 1; k <= 5; ++k) {
    ok = ok && derive_seed(k) == want[k - 1];
    got += (k > 1 ? " " : "") + std::to_string(derive_seed(k));
  }
  return {2, "seed derivation", ok, false, got};
}

// ---- 3
CriterionResult splits() {
  std::vector<std::string> ids;
  for (int i = 0; i < 260; ++i) ids.push_back("hippocampus_" + std::to_string(i));
  const DatasetSplit s = split_dataset(ids, derive_seed(1));
  bool ok = s.train.size() == 156 && s.val.size() == 52 && s.test.size() == 52;
  std::string detail = "260 ids -> (" + std::to_string(s.train.size()) + ", " + std::to_string(s.val.size()) + ", " +
                       std::to_string(s.test.size()) + ")";
  Rng rng(2024);
  int bad = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + rng.below(400);
    std::vector<std::string> pool;
    for (std::size_t i = 0; i < n; ++i) pool.push_back("v" + std::to_string(i));
    const DatasetSplit d = split_dataset(pool, rng.next());
    std::set<std::string> seen;
    std::size_t total = 0;
    for (const auto* part : {&d.train, &d.val, &d.test})
      for (const auto& id : *part) {
        seen.insert(id);
        ++total;
      }
    const SplitCounts c = split_counts(n, {});
    if (total != n || seen.size() != n || d.train.size() != c.train || d.val.size() != c.val) ++bad;
  }
  ok = ok && bad == 0;
  return {3, "dataset split", ok, false, detail + "; " + std::to_string(1000 - bad) + "/1000 random splits disjoint and covering"};
}

// ---- 4
CriterionResult gradients() {
  Rng rng(4);
  double worst = 0;
  int redraws = 0;
  std::string worst_name;
  const auto smooth = [&](ParameterStore<double>& params, const LossBuilder& loss) {
    const SmoothCheckResult r = smooth_directional_check(params, loss, rng);
    redraws += r.redraws;
    return r.result;
  };
  const auto record = [&](const std::string& name, const GradCheckResult& r) {
    if (r.rel_error >= worst) {
      worst = r.rel_error;
      worst_name = name;
    }
  };

  // Primitives, every element.
  ParameterStore<double> store;
  store.add("x", {2, 2, 4, 4}, 1);
  store.add("w", {3, 2, 3, 3}, 18);
  store.add("b", {3}, 1);
  store.add("wt", {3, 2, 2, 2}, 12);
  store.add("bt", {2}, 1);
  store.add("s", {2, 2, 4, 4}, 1);
  randomize(store, rng);
  const Tensor<double> proj_conv = random_tensor({2, 3, 4, 4}, rng), proj_up = random_tensor({2, 2, 8, 8}, rng);
  const Tensor<double> proj_pool = random_tensor({2, 2, 2, 2}, rng), proj_cat = random_tensor({2, 4, 4, 4}, rng);
  const Tensor<double> ref = random_tensor({2, 2, 4, 4}, rng);
  const LabelBatch labels = random_labels(2, 4, 4, rng);
  const auto P = [](Tape<double>& t, ParameterStore<double>& s, const char* n) { return t.parameter(s.at(n)); };
  const std::vector<std::pair<std::string, LossBuilder>> primitives = {
      {"conv2d", [&](Tape<double>& t, ParameterStore<double>& s) {
         return weighted_sum(t, conv2d(t, P(t, s, "x"), P(t, s, "w"), P(t, s, "b"), 1, 1), proj_conv);
       }},
      {"conv_transpose2d", [&](Tape<double>& t, ParameterStore<double>& s) {
         const Var h = conv2d(t, P(t, s, "x"), P(t, s, "w"), P(t, s, "b"), 1, 1);
         return weighted_sum(t, conv_transpose2d(t, h, P(t, s, "wt"), P(t, s, "bt"), 2), proj_up);
       }},
      {"maxpool2d+leaky_relu", [&](Tape<double>& t, ParameterStore<double>& s) {
         return weighted_sum(t, leaky_relu(t, maxpool2d(t, P(t, s, "x")), 0.01), proj_pool);
       }},
      {"concat_channels", [&](Tape<double>& t, ParameterStore<double>& s) {
         return weighted_sum(t, concat_channels(t, P(t, s, "x"), P(t, s, "s")), proj_cat);
       }},
      {"softmax_cross_entropy", [&](Tape<double>& t, ParameterStore<double>& s) {
         return softmax_cross_entropy(t, conv2d(t, P(t, s, "x"), P(t, s, "w"), P(t, s, "b"), 1, 1), labels, 3);
       }},
      {"softmax+vote+nll", [&](Tape<double>& t, ParameterStore<double>& s) {
         const Var a = softmax(t, conv2d(t, P(t, s, "x"), P(t, s, "w"), P(t, s, "b"), 1, 1));
         const Var b = softmax(t, conv2d(t, P(t, s, "s"), P(t, s, "w"), P(t, s, "b"), 1, 1));
         const std::vector<Var> members{a, b};
         return nll_from_probs(t, mean_of<double>(t, members), labels);
       }},
      {"soft_dice", [&](Tape<double>& t, ParameterStore<double>& s) {
         return soft_dice_loss(t, softmax(t, conv2d(t, P(t, s, "x"), P(t, s, "w"), P(t, s, "b"), 1, 1)), labels);
       }},
      {"mse+add_scaled+sum", [&](Tape<double>& t, ParameterStore<double>& s) {
         return add_scaled(t, sum(t, P(t, s, "s")), mse(t, P(t, s, "x"), ref), 0.7);
       }},
  };
  for (const auto& [name, loss] : primitives) record(name, elementwise_check(store, loss));

  // Whole networks, three random directions each. Depth-4 members need 16x16.
  for (const UNetConfig cfg : {UNetConfig{4, 4, 1, 3}, UNetConfig{2, 4, 1, 3}}) {
    UNet<double> net(cfg);
    randomize_variance_preserving(net.parameters(), rng);
    const Index side = cfg.depth == 4 ? 16 : 8;
    const Tensor<double> x = random_tensor({2, 1, side, side}, rng, 0, 1);
    const LabelBatch l = random_labels(2, side, side, rng);
    const LossBuilder loss = [&](Tape<double>& t, ParameterStore<double>&) {
      return softmax_cross_entropy(t, net.forward(t, t.constant(x)), l, 3);
    };
    for (int d = 0; d < 3; ++d)
      record(cfg.depth == 4 ? "deep-unet" : "wide-unet", smooth(net.parameters(), loss));
  }
  {
    DenseAutoencoder<double> ae(DenseAEConfig{{2, 4}, 4, 1, 1, 0});
    randomize_variance_preserving(ae.parameters(), rng);
    const Tensor<double> x = random_tensor({2, 1, 8, 8}, rng, 0, 1);
    const LossBuilder loss = [&](Tape<double>& t, ParameterStore<double>&) {
      return mse(t, ae.forward(t, t.constant(x)).reconstruction, x);
    };
    for (int d = 0; d < 3; ++d) record("dense-autoencoder", smooth(ae.parameters(), loss));
  }
  {
    PNNConfig cfg;
    cfg.ae = DenseAEConfig{{2}, 4, 1, 1, 0};
    cfg.deep = UNetConfig{4, 2, 1, 3};
    cfg.wide = UNetConfig{2, 4, 1, 3};
    auto nets = build_pnn<double>(cfg, rng);
    for (auto* s : {&nets.ae.parameters(), &nets.deep.parameters(), &nets.wide.parameters()}) randomize_variance_preserving(*s, rng);
    const Tensor<double> x = random_tensor({2, 1, 16, 16}, rng, 0, 1);
    const LabelBatch l = random_labels(2, 16, 16, rng);
    const LossBuilder loss = [&](Tape<double>& t, ParameterStore<double>&) {
      return pnn_loss(t, pnn_forward(t, cfg, nets, t.constant(x)), l, x, 0.1);
    };
    for (auto* s : {&nets.ae.parameters(), &nets.deep.parameters(), &nets.wide.parameters()})
      record("pnn-unet", smooth(*s, loss));
  }
  return {4, "gradient checks", worst < 1e-4, false,
          std::to_string(primitives.size()) + " primitive groups + 4 networks; worst rel err " + fmt(worst) + " (" +
              worst_name + "), limit 1e-4; " + std::to_string(redraws) + " directions redrawn at kinks"};
}

// ---- 5
CriterionResult metric_oracle() {
  Rng rng(5);
  int mismatches = 0;
  double worst_identity = 0;
  for (int trial = 0; trial < 200; ++trial) {
    MaskVolume a({8, 8, 8}), b({8, 8, 8});
    const double pa = rng.uniform(0, 0.4), pb = rng.uniform(0, 0.4);
    for (std::size_t i = 0; i < a.labels.size(); ++i) {
      const double u = rng.uniform(), v = rng.uniform();
      a.labels[i] = u < pa ? 1 : (u < 2 * pa ? 2 : 0);
      b.labels[i] = v < pb ? 1 : (v < 2 * pb ? 2 : 0);
    }
    for (int label : {1, 2}) {
      double tp = 0, fp = 0, tn = 0, fn = 0;
      for (Index x = 0; x < 8; ++x)
        for (Index y = 0; y < 8; ++y)
          for (Index z = 0; z < 8; ++z) {
            const bool p = a.at(x, y, z) == label, t = b.at(x, y, z) == label;
            tp += p && t;
            fp += p && !t;
            tn += !p && !t;
            fn += !p && t;
          }
      const auto ratio = [](double num, double den) { return den == 0 ? 1.0 : num / den; };
      const Metrics m = metrics_from_counts(confusion_counts(a, b, label));
      if (m.dice != ratio(2 * tp, 2 * tp + fp + fn) || m.jaccard != ratio(tp, tp + fp + fn) ||
          m.sensitivity != ratio(tp, tp + fn) || m.specificity != ratio(tn, tn + fp))
        ++mismatches;
      worst_identity = std::max(worst_identity, std::abs(m.dice - 2 * m.jaccard / (1 + m.jaccard)));
    }
  }
  return {5, "metric oracle", mismatches == 0 && worst_identity < 1e-12, false,
          "400 label comparisons, " + std::to_string(mismatches) + " mismatches; max |DSC - 2J/(1+J)| " + fmt(worst_identity)};
}

// ---- 6
double t_cdf_quadrature(double t, double df) {
  const double norm = std::exp(std::lgamma((df + 1) / 2) - std::lgamma(df / 2)) / std::sqrt(df * M_PI);
  const auto f = [&](double x) { return norm * std::pow(1 + x * x / df, -(df + 1) / 2); };
  const int steps = 20000;
  const double h = t / steps;
  double s = f(0) + f(t);
  for (int i = 1; i < steps; ++i) s += (i % 2 ? 4 : 2) * f(i * h);
  return 0.5 + s * h / 3;
}

CriterionResult t_distribution() {
  double worst = 0;
  int points = 0;
  for (int df : {1, 2, 3, 4, 5, 7, 10, 15, 20, 30, 50, 75, 100})
    for (double t = -10; t <= 10; t += 0.5) {
      worst = std::max(worst, std::abs(student_t_cdf(t, df) - t_cdf_quadrature(t, df)));
      ++points;
    }
  const double c0 = std::abs(student_t_cdf(0, 7) - 0.5), c1 = std::abs(student_t_cdf(1, 1) - 0.75);
  return {6, "student-t cdf", worst < 1e-8 && c0 < 1e-12 && c1 < 1e-12, false,
          std::to_string(points) + " grid points, max err " + fmt(worst) + "; |T(0)-0.5| " + fmt(c0) + ", |T(1;1)-0.75| " + fmt(c1)};
}

// ---- 7
CriterionResult table_arithmetic() {
  struct Row {
    const char* model;
    double l1, l2;
    const char* pooled;
  };
  const Row rows[] = {{"Deep-UNet", 0.871430, 0.861587, "0.866509"},
                      {"Wide-UNet", 0.878433, 0.864615, "0.871524"},
                      {"Ensemble-Transfer", 0.879716, 0.868014, "0.873865"},
                      {"Ensemble-Retrain", 0.878175, 0.867584, "0.872880"},
                      {"PNN-UNet", 0.883118, 0.869076, "0.876097"}};
  int ok = 0;
  std::string misses;
  for (const auto& r : rows) {
    const double l1[5] = {r.l1, r.l1, r.l1, r.l1, r.l1}, l2[5] = {r.l2, r.l2, r.l2, r.l2, r.l2};
    const std::string got = format_fixed(aggregate_runs(l1, l2).pooled);
    if (got == r.pooled) ++ok;
    else misses += std::string(" ") + r.model + "=" + got;
  }
  return {7, "five-run table arithmetic", ok == 5, false, std::to_string(ok) + "/5 pooled means match to 6 decimals" + misses};
}

// ---- 8
double vote_dice(const LabelBatch& pred, const LabelBatch& truth) {
  return (metrics_from_counts(confusion_counts(pred.labels, truth.labels, 1)).dice +
          metrics_from_counts(confusion_counts(pred.labels, truth.labels, 2)).dice) / 2;
}

CriterionResult tiny_overfit(std::ostream* log) {
  flush_denormals();
  const auto slices = make_synthetic_slices(8, 64, 7);
  std::vector<const SlicePair*> ptrs;
  for (const auto& s : slices) ptrs.push_back(&s);
  const auto [x, labels] = make_batch(ptrs);

  const auto train = [&](int max_steps, int snapshot_at, std::string* snapshot, int* reached, double* dice,
                         double* seconds) {
    Model<float> model(ModelKind::PNN, ModelShapes::at_scale(16));
    Rng rng(std::uint64_t{derive_seed(1)} + 1);
    model.initialize(rng);
    Trainer<float> trainer(model, AdamOptions{});
    const auto start = Clock::now();
    *reached = 0;
    for (int step = 1; step <= max_steps; ++step) {
      const double loss = trainer.step(x, labels);
      if (step == snapshot_at) *snapshot = weights_hash(model);
      if (step % 10 == 0 || step == max_steps) {
        *dice = vote_dice(argmax_channels(model.predict(x)), labels);
        if (log && step % 50 == 0) *log << "  overfit step " << step << " loss " << loss << " dice " << *dice << '\n';
        if (*dice > 0.95 && *reached == 0) {
          *reached = step;
          if (step >= snapshot_at) break;
        }
      }
    }
    *seconds = std::chrono::duration<double>(Clock::now() - start).count();
    return model;
  };

  std::string hash_a, hash_b;
  int reached = 0, reached_b = 0;
  double dice = 0, dice_b = 0, seconds = 0, seconds_b = 0;
  Model<float> model = train(500, 50, &hash_a, &reached, &dice, &seconds);
  // Determinism: a second run reproduces the weights bit-exactly at step 50.
  train(50, 50, &hash_b, &reached_b, &dice_b, &seconds_b);
  const bool deterministic = hash_a == hash_b;

  // Member diagnostics: each cord network's own argmax on the coordinated input.
  Tape<float> tape;
  const Var rec = model.autoencoder().forward(tape, tape.constant(x)).reconstruction;
  const double deep = vote_dice(argmax_channels(tape.value(model.deep().forward(tape, rec))), labels);
  const double wide = vote_dice(argmax_channels(tape.value(model.wide().forward(tape, rec))), labels);

  const bool pass = reached > 0 && deterministic && seconds < 300;
  std::string detail = reached > 0 ? "dice > 0.95 at step " + std::to_string(reached)
                                   : "dice " + fmt(dice) + " after 500 steps (need > 0.95)";
  detail += "; members deep " + fmt(deep) + ", wide " + fmt(wide);
  detail += "; " + fmt(seconds, 4) + " s; rerun " + std::string(deterministic ? "bit-identical" : "DIFFERS");
  return {8, "tiny PNN overfit", pass, false, detail};
}

// ---- 9
bool same_values(ParameterStore<float>& a, ParameterStore<float>& b) {
  for (auto& [name, p] : a)
    if (!b.contains(name) || p.value.shape() != b.at(name).value.shape() || !(p.value.array() == b.at(name).value.array()).all())
      return false;
  return a.size() == b.size();
}

CriterionResult transfer_equivalence(const std::filesystem::path& work) {
  flush_denormals();
  ExperimentConfig cfg;
  cfg.out = work / "c9";
  cfg.scale = 16;
  cfg.phase = Phase::NoAug;
  cfg.experiments = {1};
  const ModelShapes shapes = cfg.shapes();

  Rng rng(9);
  Model<float> deep(ModelKind::Deep, shapes), wide(ModelKind::Wide, shapes);
  deep.initialize(rng);
  wide.initialize(rng);
  CheckpointInfo info;
  info.model = ModelKind::Deep;
  save_checkpoint(cfg.checkpoint_dir(), run_name(ModelKind::Deep, Phase::NoAug, 1), info, deep);
  info.model = ModelKind::Wide;
  save_checkpoint(cfg.checkpoint_dir(), run_name(ModelKind::Wide, Phase::NoAug, 1), info, wide);
  const std::string deep_hash = weights_hash(deep), wide_hash = weights_hash(wide);

  cfg.model = ModelKind::EnsembleTransfer;
  const auto data = make_synthetic_dataset(5, {4, 40, 40}, 9);
  const TrainOutcome outcome = train_model(cfg, 1, data);
  LoadedCheckpoint transfer = load_checkpoint(cfg.checkpoint_dir(), outcome.name);
  const bool hashes = outcome.info.members.at("deep") == deep_hash && outcome.info.members.at("wide") == wide_hash &&
                      weights_hash(load_checkpoint(cfg.checkpoint_dir(), "deep-noaug-s1").model) == deep_hash &&
                      weights_hash(load_checkpoint(cfg.checkpoint_dir(), "wide-noaug-s1").model) == wide_hash &&
                      same_values(transfer.model.store("deep"), deep.store("deep")) &&
                      same_values(transfer.model.store("wide"), wide.store("wide"));

  Model<float> retrain(ModelKind::EnsembleRetrain, shapes);
  retrain.store("deep") = deep.store("deep");
  retrain.store("wide") = wide.store("wide");
  const auto slices = make_synthetic_slices(4, 64, 9);
  std::vector<const SlicePair*> ptrs;
  for (const auto& s : slices) ptrs.push_back(&s);
  const Tensor<float> x = make_batch(ptrs).first;
  const Tensor<float> a = transfer.model.predict(x), b = retrain.predict(x);
  const bool forward = (a.array() == b.array()).all();
  // Also the mean of the independently computed member softmaxes.
  const Tensor<float> sd = deep.predict(x), sw = wide.predict(x);
  const std::vector<Tensor<float>> members{sd, sw};
  const Tensor<float> mean = soft_vote<float>(members);
  const bool vote = (mean.array() == a.array()).all();
  return {9, "transfer/retrain equivalence", forward && hashes && vote, false,
          std::string("forward ") + (forward ? "identical" : "DIFFERS") + ", member hashes " +
              (hashes ? "unchanged" : "CHANGED") + ", equals mean of member softmaxes: " + (vote ? "yes" : "NO")};
}

// ---- 10
CriterionResult protocol_substitute(const std::filesystem::path& work, std::ostream* log) {
  flush_denormals();
  const auto data = make_synthetic_dataset(10, {6, 12, 14}, 10);
  ExperimentConfig cfg;
  cfg.out = work / "c10";
  cfg.scale = 64;
  cfg.slice_size = 16;
  cfg.epochs = 1;
  std::vector<std::string> problems;
  std::size_t files = 0;
  for (Phase phase : {Phase::NoAug, Phase::Aug}) {
    cfg.phase = phase;
    std::map<ModelKind, RunSet> runs;
    for (ModelKind kind : kAllModels) {
      cfg.model = kind;
      for (int k : cfg.experiments) {
        train_model(cfg, k, data, nullptr);
        const EvaluationResult r = evaluate_model(cfg, k, data);
        save_results(cfg.results_dir(), r);
        runs[kind].push_back(load_results(cfg.results_dir(), r.name));
      }
    }
    std::vector<ReportRow> rows;
    std::vector<ComparisonRow> cmp;
    for (ModelKind kind : kAllModels) {
      const auto s = summarize(runs[kind]);
      if (s.size() != 12) problems.push_back(model_name(kind) + " has " + std::to_string(s.size()) + " rows");
      rows.insert(rows.end(), s.begin(), s.end());
    }
    for (const auto& [a, b] : default_comparisons()) {
      const auto c = compare_models(runs[a], runs[b]);
      for (const auto& row : c)
        if (!(row.test.p >= 0 && row.test.p <= 1)) problems.push_back("p outside [0,1]");
      cmp.insert(cmp.end(), c.begin(), c.end());
    }
    for (ReportFormat f : {ReportFormat::Csv, ReportFormat::Markdown})
      files += emit_report(cfg.out / "reports", "report-" + phase_name(phase), rows, cmp, f, phase).size();
    const auto parsed = parse_csv(rows_to_csv(rows));
    if (parsed.size() != 60) problems.push_back("CSV holds " + std::to_string(parsed.size()) + " rows, want 60");
    const std::string md = ttest_markdown(cmp, Metric::Dice, "") + means_markdown(rows, Metric::Dice, "");
    for (const char* needle : {"| T-Test in Dice | L1+L2 | L1 | L2 |", "| PNN-UNet versus Ensemble-Retrain |",
                               "| Ensemble-Transfer versus Ensemble-Retrain |", "| Models | L1 Mean | L2 Mean | L1 & L2 Mean |"})
      if (md.find(needle) == std::string::npos) problems.push_back(std::string("markdown lacks ") + needle);
    if (log) *log << "  protocol " << phase_name(phase) << ": 25 runs trained and evaluated\n";
  }
  std::string detail =
      "absolute hippocampus results need the MSD data and full-scale training; stand-in: full 5 models x 5 seeds x 2 phases "
      "protocol on synthetic volumes (scale 64, 16x16 frames) -> " +
      std::to_string(files) + " report files";
  if (!problems.empty()) detail += "; problems: " + problems.front();
  return {10, "paper-scale results (substitute)", problems.empty(), true, detail};
}

}  // namespace

std::string format_result(const CriterionResult& r) {
  std::ostringstream s;
  s << "criterion " << std::setw(2) << r.id << "  " << (r.pass ? "PASS" : "FAIL") << (r.substitute ? " [substitute]" : "")
    << "  " << r.title << ": " << r.detail << "  (" << std::fixed << std::setprecision(1) << r.seconds << " s)";
  return s.str();
}

std::vector<CriterionResult> run_acceptance(const AcceptanceOptions& options, std::ostream& out) {
  std::error_code ec;
  std::filesystem::remove_all(options.work_dir, ec);
  std::filesystem::create_directories(options.work_dir);
  const std::vector<std::pair<int, std::function<CriterionResult()>>> criteria = {
      {1, parameter_counts},
      {2, seeds},
      {3, splits},
      {4, gradients},
      {5, metric_oracle},
      {6, t_distribution},
      {7, table_arithmetic},
      {8, [&] { return tiny_overfit(options.log); }},
      {9, [&] { return transfer_equivalence(options.work_dir); }},
      {10, [&] { return protocol_substitute(options.work_dir, options.log); }},
  };
  std::vector<CriterionResult> results;
  for (const auto& [id, run] : criteria) {
    if (!options.only.empty() && !options.only.count(id)) continue;
    const auto start = Clock::now();
    CriterionResult r;
    try {
      r = run();
    } catch (const std::exception& e) {
      r = {id, "criterion " + std::to_string(id), false, id == 10, std::string("error: ") + e.what()};
    }
    r.seconds = std::chrono::duration<double>(Clock::now() - start).count();
    out << format_result(r) << std::endl;
    results.push_back(r);
  }
  return results;
}

}  // namespace pnn::selftest
