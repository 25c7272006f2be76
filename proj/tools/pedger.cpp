// pedger: synthesize data, train, infer, evaluate, benchmark.
//
// Settings come from defaults, then an optional INI file (--config, one
// section per subcommand), then command-line flags; later sources win.
// Unknown keys in the config file are rejected.

#include <CLI11.hpp>

#include <chrono>
#include <fstream>
#include <iostream>
#include <optional>

#include "pedger/checkpoint.hpp"
#include "pedger/data.hpp"
#include "pedger/eval.hpp"
#include "pedger/trainer.hpp"

using namespace pedger;

namespace {

double default_lambda(DatasetKind k) { return k == DatasetKind::nyud ? kLambdaNyud : kLambdaBsds; }

double default_max_dist(DatasetKind k) {
  switch (k) {
    case DatasetKind::nyud: return kMaxDistNyud;
    case DatasetKind::synth: return 0.0166;  // ~1.5 px at 64×64
    default: return kMaxDistBsds;
  }
}

// Written in the same INI form --config accepts, so it reproduces the run.
void echo_config(const CLI::App& sub, const fs::path& path) {
  std::ofstream(path) << "[" << sub.get_name() << "]\n" << sub.config_to_str(true, false);
}

std::vector<Sample> load_split(const fs::path& root, DatasetKind kind, Split split, const std::string& gt_dir) {
  auto samples = load_samples(load_manifest(root, kind, split, gt_dir));
  if (samples.empty()) throw LoadError("no samples under '" + (root / "images" / to_string(split)).string() + "'");
  return samples;
}

// ---------------------------------------------------------------------------

struct SynthArgs {
  std::string out;
  int size = 64;
  int train = 200, val = 0, test = 50;
  double noise = 0.2;
  int annotators = 1;
  std::uint64_t seed = 1;
  bool no_drop = false, no_jitter = false, no_texture = false;
};

int cmd_synthesize(const SynthArgs& a, const CLI::App& app) {
  fs::create_directories(a.out);
  const std::pair<Split, int> splits[] = {{Split::train, a.train}, {Split::val, a.val}, {Split::test, a.test}};
  for (const auto& [split, count] : splits) {
    if (count <= 0) continue;
    SynthConfig c;
    c.image_size = a.size;
    c.count = count;
    c.noise_rate = a.noise;
    c.annotators = a.annotators;
    c.drop_edges = !a.no_drop;
    c.jitter = !a.no_jitter;
    c.spurious_texture = !a.no_texture;
    c.split = to_string(split);
    c.seed = a.seed * 3 + static_cast<std::uint64_t>(split);
    const auto ds = synthesize(c);
    save_synthetic(a.out, ds, split);
    std::cout << to_string(split) << ": " << count << " images, " << ds.stats.corrupted << "/" << ds.stats.clean_edge_pixels
              << " edge pixels corrupted, " << ds.stats.spurious << " spurious\n";
  }
  echo_config(app, fs::path(a.out) / "synthesize.ini");
  return 0;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string dataset = "synth";
  std::string data_root;
  std::string out = "run";
  std::string ablation = "full";
  int epochs = 30;
  int warmup = 4;
  std::uint64_t seed = 0;
  double lr = 1e-3;
  int accumulate = 16;
  std::optional<double> lambda;
  double eta_final = kEtaFinal;
  std::string alpha = "paper";
  std::string recurrent_plan = "default";
  std::string nonrecurrent_plan = "default";
  bool no_augment = false;
};

int cmd_train(const TrainArgs& a, const CLI::App& app) {
  const auto kind = parse_dataset_kind(a.dataset);
  if (a.data_root.empty()) throw InvalidArgument("train: --data-root is required");
  TrainConfig cfg;
  cfg.total_epochs = a.epochs;
  cfg.warmup_epochs = a.warmup;
  cfg.seed = a.seed;
  cfg.peak_lr = a.lr;
  cfg.accumulate_to_batch = a.accumulate;
  cfg.loss.lambda = a.lambda.value_or(default_lambda(kind));
  cfg.loss.alpha_convention = parse_alpha_convention(a.alpha);
  cfg.eta_final = a.eta_final;
  cfg.ablation_mode = parse_ablation_mode(a.ablation);
  cfg.augment.enabled = !a.no_augment;
  if (a.recurrent_plan == "compact") cfg.recurrent = RecurrentConfig::compact();
  else if (a.recurrent_plan != "default") throw InvalidArgument("unknown recurrent plan '" + a.recurrent_plan + "'");
  if (a.nonrecurrent_plan == "large") cfg.nonrecurrent = NonRecurrentConfig::large();
  else if (a.nonrecurrent_plan != "default") throw InvalidArgument("unknown non-recurrent plan '" + a.nonrecurrent_plan + "'");
  cfg.validate();

  const auto data = load_split(a.data_root, kind, Split::train, "groundTruth");
  const fs::path out(a.out);
  fs::create_directories(out);
  echo_config(app, out / "run_config.ini");
  std::ofstream log(out / "train_log.jsonl");
  std::cout << "training " << to_string(cfg.ablation_mode) << " on " << data.size() << " images for "
            << scheduled_epochs(cfg) << " epochs\n";

  TrainHooks hooks;
  hooks.on_step = [&](const StepRecord& r) {
    write_step_log(log, r);
    log.flush();
  };
  const auto t0 = std::chrono::steady_clock::now();
  hooks.on_epoch_end = [&](const TrainState& s) {
    save_checkpoint(out / "checkpoint.pck", s);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::cout << "epoch " << s.epoch << "/" << scheduled_epochs(cfg) << " done (" << secs << " s)" << std::endl;
  };
  const auto state = train(data, cfg, hooks);
  std::ofstream(out / "MODEL_CARD.md") << model_card(state);
  std::cout << "wrote " << (out / "checkpoint.pck").string() << " (" << stored_network_count(state)
            << " parameter sets)\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct InferArgs {
  std::string checkpoint;
  std::vector<std::string> inputs;
  std::string out = "predictions";
  std::string network = "nonrecurrent";
  bool thin = false;
};

int cmd_infer(const InferArgs& a) {
  const auto state = load_checkpoint(a.checkpoint);
  const auto net = parse_network_choice(a.network);
  fs::create_directories(a.out);
  std::vector<fs::path> files;
  for (const auto& in : a.inputs) {
    if (fs::is_directory(in)) {
      for (const auto& f : fs::directory_iterator(in))
        if (f.is_regular_file() && is_image_file(f.path())) files.push_back(f.path());
    } else {
      files.emplace_back(in);
    }
  }
  std::sort(files.begin(), files.end());
  for (const auto& f : files) {
    const auto prob = predict(state, read_image(f), net);
    const fs::path dst = fs::path(a.out) / (f.stem().string() + ".png");
    write_prob_image(dst, prob);
    if (a.thin) write_prob_image(fs::path(a.out) / (f.stem().string() + "_thin.png"), nms_thin(prob));
  }
  std::cout << "wrote " << files.size() << " prediction(s) to " << a.out << '\n';
  return 0;
}

// ---------------------------------------------------------------------------

struct EvalArgs {
  std::string pred_dir;
  std::string data_root;
  std::string dataset = "synth";
  std::string split = "test";
  std::string gt_dir = "groundTruth";
  std::optional<double> max_dist;
  int thresholds = 99;
  bool no_thin = false;
  std::string out = "pr.txt";
};

int cmd_eval(const EvalArgs& a) {
  const auto kind = parse_dataset_kind(a.dataset);
  const auto manifest = load_manifest(a.data_root, kind, parse_split(a.split), a.gt_dir);
  EvalConfig cfg;
  cfg.max_dist = a.max_dist.value_or(default_max_dist(kind));
  cfg.thresholds = EvalConfig::even_thresholds(a.thresholds);
  cfg.thin = !a.no_thin;
  std::vector<ProbMap> preds;
  std::vector<AnnotationStack> gts;
  for (const auto& e : manifest.entries) {
    const fs::path p = fs::path(a.pred_dir) / (e.id + ".png");
    if (!fs::exists(p)) throw LoadError("missing prediction '" + p.string() + "'");
    preds.push_back(read_prob_image(p));
    gts.push_back(load_sample(manifest, e).annotations);
  }
  const auto r = evaluate(preds, gts, cfg);
  std::ofstream os(a.out);
  write_pr_curve(os, r);
  std::cout << "ODS F " << r.ods_f << " (threshold " << r.ods_threshold << ")  OIS F " << r.ois_f << "  on "
            << preds.size() << " images; PR curve in " << a.out << '\n';
  return 0;
}

// ---------------------------------------------------------------------------

struct BenchArgs {
  std::string checkpoint;
  int size = 200;
  int iterations = 10;
  std::string network = "nonrecurrent";
};

int cmd_bench(const BenchArgs& a) {
  TrainState state;
  if (!a.checkpoint.empty()) {
    state = load_checkpoint(a.checkpoint);
  } else {
    TrainConfig cfg;
    state = init_state(cfg);
  }
  const auto net = parse_network_choice(a.network);
  Image img(a.size, a.size);
  for (std::size_t i = 0; i < img.pixels().size(); ++i) img.pixels()[i] = static_cast<float>((i * 2654435761u % 1000) / 1000.0);
  predict(state, img, net);
  const auto t0 = std::chrono::steady_clock::now();
  for (int i = 0; i < a.iterations; ++i) predict(state, img, net);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::cout << a.network << " " << a.size << "x" << a.size << ": " << a.iterations / secs << " images/s ("
            << 1000.0 * secs / a.iterations << " ms/image, single thread)\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"pedger: collaborative noisy-label edge detection"};
  app.set_config("--config", "", "INI file with one section per subcommand");
  app.allow_config_extras(CLI::config_extras_mode::error);
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default();

  SynthArgs sa;
  auto* syn = app.add_subcommand("synthesize", "generate a synthetic noisy-edge dataset");
  syn->add_option("--out", sa.out, "output root")->required();
  syn->add_option("--size", sa.size, "image side in pixels");
  syn->add_option("--train-count", sa.train);
  syn->add_option("--val-count", sa.val);
  syn->add_option("--test-count", sa.test);
  syn->add_option("--noise", sa.noise, "label-noise rate rho in [0,1)");
  syn->add_option("--annotators", sa.annotators);
  syn->add_option("--seed", sa.seed);
  syn->add_flag("--no-drop", sa.no_drop);
  syn->add_flag("--no-jitter", sa.no_jitter);
  syn->add_flag("--no-texture", sa.no_texture);

  TrainArgs ta;
  auto* tr = app.add_subcommand("train", "train the networks (full method or an ablation)");
  tr->add_option("--dataset", ta.dataset)->check(CLI::IsMember({"bsds", "nyud", "synth"}));
  tr->add_option("--data-root", ta.data_root, "dataset root (images/, groundTruth/)");
  tr->add_option("--out", ta.out, "run directory");
  tr->add_option("--ablation", ta.ablation)
      ->check(CLI::IsMember({"full", "baseline", "nims", "eadm", "eads", "mlhs", "average", "two_stage"}));
  tr->add_option("--epochs", ta.epochs);
  tr->add_option("--warmup-epochs", ta.warmup);
  tr->add_option("--seed", ta.seed);
  tr->add_option("--lr", ta.lr, "peak learning rate");
  tr->add_option("--accumulate", ta.accumulate, "samples per optimizer step");
  tr->add_option("--lambda", ta.lambda, "positive-class weight (default 1.1, 1.3 for nyud)");
  tr->add_option("--eta-final", ta.eta_final);
  tr->add_option("--alpha-convention", ta.alpha)->check(CLI::IsMember({"paper", "hed"}));
  tr->add_option("--recurrent-plan", ta.recurrent_plan)->check(CLI::IsMember({"default", "compact"}));
  tr->add_option("--nonrecurrent-plan", ta.nonrecurrent_plan)->check(CLI::IsMember({"default", "large"}));
  tr->add_flag("--no-augment", ta.no_augment);

  InferArgs ia;
  auto* inf = app.add_subcommand("infer", "write edge probability maps");
  inf->add_option("--checkpoint", ia.checkpoint)->required()->check(CLI::ExistingFile);
  inf->add_option("inputs", ia.inputs, "images or directories")->required();
  inf->add_option("--out", ia.out);
  inf->add_option("--network", ia.network)->check(CLI::IsMember({"nonrecurrent", "recurrent"}));
  inf->add_flag("--thin", ia.thin, "also write NMS-thinned maps");

  EvalArgs ea;
  auto* ev = app.add_subcommand("eval", "ODS/OIS evaluation of a prediction directory");
  ev->add_option("--pred-dir", ea.pred_dir)->required()->check(CLI::ExistingDirectory);
  ev->add_option("--data-root", ea.data_root)->required();
  ev->add_option("--dataset", ea.dataset)->check(CLI::IsMember({"bsds", "nyud", "synth"}));
  ev->add_option("--split", ea.split)->check(CLI::IsMember({"train", "val", "test"}));
  ev->add_option("--gt-dir", ea.gt_dir, "annotation directory name (groundTruthClean for synthetic clean labels)");
  ev->add_option("--max-dist", ea.max_dist, "match tolerance as a fraction of the image diagonal");
  ev->add_option("--thresholds", ea.thresholds, "number of evenly spaced thresholds");
  ev->add_flag("--no-thin", ea.no_thin);
  ev->add_option("--out", ea.out, "PR curve file");

  BenchArgs ba;
  auto* be = app.add_subcommand("bench", "inference throughput");
  be->add_option("--checkpoint", ba.checkpoint);
  be->add_option("--size", ba.size);
  be->add_option("--iterations", ba.iterations);
  be->add_option("--network", ba.network)->check(CLI::IsMember({"nonrecurrent", "recurrent"}));

  CLI11_PARSE(app, argc, argv);
  try {
    if (*syn) return cmd_synthesize(sa, *syn);
    if (*tr) return cmd_train(ta, *tr);
    if (*inf) return cmd_infer(ia);
    if (*ev) return cmd_eval(ea);
    if (*be) return cmd_bench(ba);
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
