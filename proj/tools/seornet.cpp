// Command-line front end: synth, train, eval, infer, plot-acc.

#include "seornet/seornet.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>

namespace fs = std::filesystem;
using namespace seornet;

namespace {

int checkpoint_scalar_width(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), "cannot open checkpoint ", path.string());
  char head[10] = {};
  in.read(head, sizeof head);
  require(in.gcount() == sizeof head && std::string(head, 5) == "SEOR1", path.string(),
          ": not a checkpoint (bad magic)");
  return static_cast<unsigned char>(head[9]);
}

/// Calls f(trainer) with the checkpoint loaded at its stored precision.
template <class F>
void with_checkpoint(const fs::path& path, F&& f) {
  if (checkpoint_scalar_width(path) == sizeof(double)) {
    auto tr = Trainer<double>::load(path);
    f(tr);
  } else {
    auto tr = Trainer<float>::load(path);
    f(tr);
  }
}

WeightSet parse_weights(const std::string& s) {
  require(s == "teacher" || s == "student", "--weights must be 'teacher' or 'student'");
  return s == "teacher" ? WeightSet::Teacher : WeightSet::Student;
}

template <class T>
void run_training(Trainer<T>& tr, const std::vector<ShapePair>& data, const fs::path& out,
                  long until, bool quiet) {
  fs::create_directories(out);
  std::ofstream metrics(out / "metrics.jsonl", tr.step() > 0 ? std::ios::app : std::ios::trunc);
  require(metrics.good(), "cannot write ", (out / "metrics.jsonl").string());
  const int every = tr.config().checkpoint_every;
  tr.fit(data, until, [&](const StepMetrics& m) {
    metrics << m.to_json().dump() << '\n';
    metrics.flush();
    if (!quiet && (m.step % 50 == 0 || m.step + 1 == until))
      std::cerr << "step " << m.step << " total " << m.total << " angle_acc " << m.angle_acc
                << '\n';
    if (every > 0 && (m.step + 1) % every == 0) tr.save(out / "checkpoint.seor");
  });
  tr.save(out / "checkpoint.seor");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Orientation-aware self-ensembling point cloud correspondence"};
  app.require_subcommand(1);

  // synth
  SynthOptions so;
  fs::path synth_out;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic pair dataset");
  synth->add_option("--pairs", so.pairs, "Number of pairs")->check(CLI::PositiveNumber);
  synth->add_option("--points", so.points, "Points per cloud")->check(CLI::PositiveNumber);
  synth->add_option("--out", synth_out, "Output directory")->required();
  synth->add_option("--seed", so.seed, "Random seed");
  synth->add_option("--templates", so.templates, "Distinct body proportions");
  synth->add_flag("--rotation-labels", so.rotation_labels,
                  "Rotate sources by stratified angles and record them");
  synth->add_flag("!--no-shuffle", so.shuffle_target, "Keep target point order");

  // train
  fs::path config_path, train_out, train_manifest, resume;
  long steps_override = -1;
  bool quiet = false;
  auto* train = app.add_subcommand("train", "Train a model");
  train->add_option("--config", config_path, "JSON config file")->required()->check(CLI::ExistingFile);
  train->add_option("--out", train_out, "Output directory")->required();
  train->add_option("--manifest", train_manifest, "Training manifest (overrides config)");
  train->add_option("--resume", resume, "Continue from a checkpoint")->check(CLI::ExistingFile);
  train->add_option("--steps", steps_override, "Stop after this many total steps");
  train->add_flag("--quiet", quiet, "No progress output");

  // eval
  fs::path eval_ckpt, eval_manifest, eval_report;
  bool use_noise = false, use_rotate = false;
  double sigma = 0.1;
  std::uint64_t eval_seed = 17;
  std::string weights = "teacher";
  auto* eval = app.add_subcommand("eval", "Evaluate correspondences on a labelled manifest");
  eval->add_option("--checkpoint", eval_ckpt)->required()->check(CLI::ExistingFile);
  eval->add_option("--manifest", eval_manifest)->required()->check(CLI::ExistingFile);
  eval->add_option("--report", eval_report, "Write JSON-lines report here (default stdout)");
  eval->add_flag("--noise", use_noise, "Add Gaussian noise to test pairs");
  eval->add_flag("--rotate", use_rotate, "Randomly rotate test sources about z");
  eval->add_option("--sigma", sigma, "Noise standard deviation")->check(CLI::NonNegativeNumber);
  eval->add_option("--seed", eval_seed, "Augmentation seed");
  eval->add_option("--weights", weights, "teacher or student");

  // infer
  fs::path infer_ckpt, infer_src, infer_tgt, infer_out;
  auto* infer = app.add_subcommand("infer", "Predict a correspondence map for one pair");
  infer->add_option("--checkpoint", infer_ckpt)->required()->check(CLI::ExistingFile);
  infer->add_option("--source", infer_src)->required()->check(CLI::ExistingFile);
  infer->add_option("--target", infer_tgt)->required()->check(CLI::ExistingFile);
  infer->add_option("--out", infer_out, "Mapping file, one target index per line")->required();
  infer->add_option("--weights", weights, "teacher or student");

  // plot-acc
  fs::path plot_report, plot_out;
  std::string plot_title;
  auto* plot = app.add_subcommand("plot-acc", "Plot accuracy against tolerance as SVG");
  plot->add_option("--report", plot_report)->required()->check(CLI::ExistingFile);
  plot->add_option("--out", plot_out)->required();
  plot->add_option("--title", plot_title);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*synth) {
      const auto pairs = synthesize_dataset(so);
      const auto manifest = write_dataset(pairs, synth_out);
      std::cout << manifest.string() << '\n';
    } else if (*train) {
      TrainConfig cfg = load_config(config_path);
      fs::path manifest = train_manifest;
      if (manifest.empty()) {
        require(!cfg.manifest.empty(), "no training manifest: set train.manifest or --manifest");
        manifest = fs::path(cfg.manifest).is_absolute()
                       ? fs::path(cfg.manifest)
                       : config_path.parent_path() / cfg.manifest;
      }
      const auto data = prepare_dataset(read_dataset(manifest), cfg.points, cfg.seed);
      require(!data.empty(), manifest.string(), ": no pairs");
      auto go = [&](auto tr) {
        const long until = steps_override >= 0 ? steps_override : tr.config().steps;
        run_training(tr, data, train_out, until, quiet);
      };
      if (!resume.empty()) {
        if (checkpoint_scalar_width(resume) == sizeof(double))
          go(Trainer<double>::load(resume));
        else
          go(Trainer<float>::load(resume));
      } else if (cfg.double_precision) {
        go(Trainer<double>(cfg));
      } else {
        go(Trainer<float>(cfg));
      }
    } else if (*eval) {
      const WeightSet ws = parse_weights(weights);
      auto pairs = read_dataset(eval_manifest);
      pairs = augment_test_set(pairs, use_noise, use_rotate, sigma, eval_seed);
      std::ofstream file;
      std::ostream* log = &std::cout;
      if (!eval_report.empty()) {
        file.open(eval_report);
        require(file.good(), "cannot write report ", eval_report.string());
        log = &file;
      }
      with_checkpoint(eval_ckpt, [&](auto& tr) {
        const auto rep = evaluate(tr, pairs, log, default_tolerances(), ws);
        std::cerr << "pairs " << rep.n_pairs << " err " << rep.err_cm << " acc@0.01 "
                  << rep.acc_at(0.01) << " acc@0.10 " << rep.acc_at(0.10) << '\n';
      });
    } else if (*infer) {
      const WeightSet ws = parse_weights(weights);
      const PointCloud src = read_cloud(infer_src);
      const PointCloud tgt = read_cloud(infer_tgt);
      with_checkpoint(infer_ckpt, [&](auto& tr) {
        write_indices(infer_out, predict(tr, src, tgt, ws).mapping);
      });
    } else if (*plot) {
      const auto rep = read_report(plot_report);
      std::ofstream out(plot_out);
      require(out.good(), "cannot write ", plot_out.string());
      out << accuracy_svg(rep, plot_title);
      std::cout << rep.table();
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
