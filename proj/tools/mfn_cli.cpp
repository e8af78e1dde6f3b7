// Command-line front end: prepare-data, train, inpaint, eval, cluster-priors.

#include <CLI11.hpp>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "mfn/config.hpp"
#include "mfn/data_pipeline.hpp"
#include "mfn/errors.hpp"
#include "mfn/image_io.hpp"
#include "mfn/isodata.hpp"
#include "mfn/synthetic.hpp"
#include "mfn/training.hpp"

namespace fs = std::filesystem;

namespace {

struct Args {
  // shared
  std::string config_path;
  std::string preset = "full";
  std::string out;
  // prepare-data
  std::string manifest;
  std::optional<uint64_t> seed;
  std::optional<double> overlap_threshold;
  std::optional<double> moving_ratio_max;
  std::string templates;
  bool dry_run = false;
  // train
  std::string data;
  std::string ablation;
  std::optional<int64_t> max_iters;
  bool resume = false;
  // inpaint / eval / cluster
  std::string checkpoint;
  std::string image;
  std::string mask;
  bool raw = false;
  bool grid = false;
  int level = 0;
  int k_init = 8;
  int max_iter = 50;
  // synth
  int count = 24;
  int size = 64;
  int test_every = 4;
};

mfn::Config resolve_config(const Args& a) {
  std::string path = a.config_path;
  if (path.empty())
    if (const char* env = std::getenv("MFN_CONFIG")) path = env;
  if (!path.empty()) return mfn::load_config(path);
  if (a.preset == "toy") return mfn::toy_config();
  return mfn::Config{};
}

int prepare_data(const Args& a) {
  auto cfg = resolve_config(a);
  if (a.seed) cfg.data.seed = *a.seed;
  if (a.overlap_threshold) cfg.data.overlap_threshold = *a.overlap_threshold;
  if (a.moving_ratio_max) cfg.data.moving_ratio_max = *a.moving_ratio_max;
  mfn::validate(cfg);
  mfn::data::PrepareOptions opts;
  opts.manifest = a.manifest;
  opts.out_dir = a.out;
  opts.dry_run = a.dry_run;
  if (!a.templates.empty()) opts.template_dir = fs::path(a.templates);
  const auto s = mfn::data::prepare_dataset(opts, cfg.data);
  std::cout << (a.dry_run ? "dry run: " : "") << "total " << s.total << ", skipped " << s.skipped << ", rejected "
            << s.rejected << ", kept train " << s.kept_train << ", kept test " << s.kept_test << '\n';
  if (!a.dry_run) std::cout << "wrote " << (fs::path(a.out) / "prepared.jsonl").string() << '\n';
  return 0;
}

int train(const Args& a) {
  auto cfg = resolve_config(a);
  if (!a.ablation.empty()) cfg.train.ablation = mfn::parse_ablation(a.ablation);
  if (a.max_iters) {
    cfg.train.max_iters = *a.max_iters;
    cfg.train.decay_window = std::min(cfg.train.decay_window, cfg.train.max_iters);
  }
  mfn::validate(cfg);
  const auto dataset = mfn::TrainingSet::load(a.data, cfg.data);
  if (dataset.empty()) throw mfn::DataError("no train-split entries in " + a.data);
  if (a.dry_run) {
    mfn::InpaintingModel model(cfg);
    std::cout << "dry run: " << dataset.size() << " training images, variant '" << mfn::to_string(cfg.train.ablation)
              << "', " << model.parameter_count() << " parameters, " << cfg.train.max_iters << " iterations, config hash "
              << std::hex << mfn::config_hash(cfg) << std::dec << '\n';
    return 0;
  }
  mfn::TrainLoopOptions opts;
  opts.out_dir = a.out;
  opts.resume = a.resume;
  const int64_t every = std::max<int64_t>(1, cfg.train.max_iters / 20);
  opts.on_step = [every](const mfn::LossReport& r) {
    if (r.iteration % every == 0 || r.iteration == 1)
      std::cout << "iter " << r.iteration << "  rec " << r.rec << "  total " << r.total << "  adv_d " << r.adv_d
                << "  lr " << r.lr << '\n';
  };
  const auto result = mfn::train_loop(cfg, dataset, opts);
  std::cout << "finished at iteration " << result.iterations << "; checkpoint " << result.checkpoint.string() << '\n';
  return 0;
}

// Replicate-pads to a multiple of 16 so any image size can be inpainted.
torch::Tensor pad16(const torch::Tensor& x) {
  const int64_t h = x.size(-2), w = x.size(-1);
  const int64_t ph = (16 - h % 16) % 16, pw = (16 - w % 16) % 16;
  if (ph == 0 && pw == 0) return x;
  namespace F = torch::nn::functional;
  return F::pad(x.unsqueeze(0), F::PadFuncOptions({0, pw, 0, ph}).mode(torch::kReplicate)).squeeze(0);
}

int inpaint(const Args& a) {
  auto model = mfn::load_model(a.checkpoint);
  const auto image = mfn::io::load_image(a.image);
  const auto mask = mfn::io::load_mask(a.mask);
  if (mask.height() != image.size(1) || mask.width() != image.size(2))
    throw mfn::DataError("mask " + a.mask + " does not match the size of " + a.image);
  const auto m = mask.to_tensor();
  auto raw = mfn::make_inpainter(*model)(pad16(image), pad16(m));
  raw = raw.slice(1, 0, image.size(1)).slice(2, 0, image.size(2));
  const auto out = mfn::composite_output(raw, image, m);
  const fs::path dir(a.out);
  fs::create_directories(dir);
  mfn::io::save_image(dir / "output.png", out);
  if (a.raw) mfn::io::save_image(dir / "raw.png", raw);
  if (a.grid) mfn::io::save_grid(dir / "grid.png", {image * (1.0 - m), m.expand({3, -1, -1}), out});
  std::cout << "wrote " << (dir / "output.png").string() << '\n';
  return 0;
}

int eval(const Args& a) {
  const auto table = mfn::evaluate_dataset(a.checkpoint, a.manifest);
  const fs::path out(a.out);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  std::ofstream f(out);
  f << table.to_csv();
  if (!f) throw mfn::DataError("cannot write " + a.out);
  std::cout << table.to_csv();
  return 0;
}

int cluster_priors(const Args& a) {
  auto model = mfn::load_model(a.checkpoint);
  const auto image = mfn::io::load_image(a.image);
  auto m = a.mask.empty() ? torch::zeros({1, image.size(1), image.size(2)}) : mfn::io::load_mask(a.mask).to_tensor();
  torch::NoGradGuard guard;
  auto x = pad16(image).unsqueeze(0) * 2.0 - 1.0;
  auto mk = pad16(m).unsqueeze(0);
  const auto priors = model->prompter()->forward(x * (1.0 - mk), mk);
  if (a.level < 0 || a.level >= static_cast<int>(priors.levels.size()))
    throw mfn::ConfigError("--level must be in [0, " + std::to_string(priors.levels.size() - 1) + "]");
  mfn::metrics::IsodataOptions opts;
  opts.k_init = a.k_init;
  opts.max_iter = a.max_iter;
  const auto feat = priors.levels[static_cast<size_t>(a.level)][0];
  // Thresholds relative to the feature spread keep the defaults scale-free.
  const double spread = feat.to(torch::kDouble).std().item<double>();
  opts.split_std = spread;
  opts.merge_dist = 0.5 * spread;
  opts.min_samples = std::max<int>(1, static_cast<int>(feat.size(1) * feat.size(2) / 100));
  const auto result = mfn::metrics::isodata_cluster_map(feat, opts);
  const fs::path out(a.out);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  mfn::io::save_label_image(out, result.labels, feat.size(1), feat.size(2));
  std::cout << result.centers.size(0) << " clusters after " << result.iterations << " iterations; wrote "
            << out.string() << '\n';
  return 0;
}

int synth(const Args& a) {
  mfn::DataConfig cfg;
  mfn::data::write_synthetic_dataset(a.out, a.count, {a.size, a.size}, a.seed.value_or(0), a.test_every, cfg);
  std::cout << "wrote " << a.count << " scenes and " << (fs::path(a.out) / "manifest.jsonl").string() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Object-aware inpainting with semantic priors"};
  app.require_subcommand(1);
  Args a;

  auto* prep = app.add_subcommand("prepare-data", "Filter images and synthesize object-aware masks");
  prep->add_option("--manifest", a.manifest, "JSON-lines manifest of images and annotations")->required()->check(CLI::ExistingFile);
  prep->add_option("--out", a.out, "Output directory for masks and prepared.jsonl")->required();
  prep->add_option("--config", a.config_path, "Config file (else $MFN_CONFIG, else defaults)");
  prep->add_option("--seed", a.seed, "Mask synthesis seed");
  prep->add_option("--overlap-threshold", a.overlap_threshold, "Bbox overlap above which an object is cut out of the hole");
  prep->add_option("--moving-ratio-max", a.moving_ratio_max, "Images with this moving-object area ratio or more are dropped");
  prep->add_option("--templates", a.templates, "Directory of binary shape templates")->check(CLI::ExistingDirectory);
  prep->add_flag("--dry-run", a.dry_run, "Print the would-be counts without writing anything");

  auto* tr = app.add_subcommand("train", "Train the prompter, generator and discriminator");
  tr->add_option("--config", a.config_path, "Config file (else $MFN_CONFIG, else --preset)");
  tr->add_option("--preset", a.preset, "Built-in config when no file is given")->check(CLI::IsMember({"full", "toy"}));
  tr->add_option("--data", a.data, "Prepared dataset directory")->required()->check(CLI::ExistingDirectory);
  tr->add_option("--out", a.out, "Run directory (loss_log.jsonl, checkpoints)")->required();
  tr->add_option("--ablation", a.ablation, "no_semantic_supervision | no_lpt | no_multiscale | no_attention_transfer | no_spa");
  tr->add_option("--max-iters", a.max_iters, "Override train.max_iters")->check(CLI::PositiveNumber);
  tr->add_flag("--resume", a.resume, "Continue from <out>/last.ckpt");
  tr->add_flag("--dry-run", a.dry_run, "Validate config and data, build the model, write nothing");

  auto* inp = app.add_subcommand("inpaint", "Fill the hole of one image");
  inp->add_option("--checkpoint", a.checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
  inp->add_option("--image", a.image, "Input image")->required()->check(CLI::ExistingFile);
  inp->add_option("--mask", a.mask, "Mask image, white = hole")->required()->check(CLI::ExistingFile);
  inp->add_option("--out", a.out, "Output directory")->required();
  inp->add_flag("--raw", a.raw, "Also write the raw generator output");
  inp->add_flag("--grid", a.grid, "Also write an input | mask | output comparison strip");

  auto* ev = app.add_subcommand("eval", "Score a checkpoint on the test split, per mask-ratio bucket");
  ev->add_option("--checkpoint", a.checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
  ev->add_option("--manifest", a.manifest, "prepared.jsonl (or its directory)")->required()->check(CLI::ExistingPath);
  ev->add_option("--out", a.out, "CSV table path")->required();

  auto* cl = app.add_subcommand("cluster-priors", "ISODATA clustering of prior features into a label image");
  cl->add_option("--checkpoint", a.checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
  cl->add_option("--image", a.image, "Input image")->required()->check(CLI::ExistingFile);
  cl->add_option("--mask", a.mask, "Optional mask, white = hole")->check(CLI::ExistingFile);
  cl->add_option("--out", a.out, "Label image path (8-bit, one value per cluster)")->required();
  cl->add_option("--level", a.level, "Prior level, 0 = coarsest");
  cl->add_option("--k", a.k_init, "Initial cluster count")->check(CLI::Range(1, 255));
  cl->add_option("--max-iter", a.max_iter, "ISODATA iteration cap")->check(CLI::PositiveNumber);

  auto* sy = app.add_subcommand("make-synthetic", "Write a small synthetic street-scene dataset with annotations");
  sy->add_option("--out", a.out, "Output directory")->required();
  sy->add_option("--count", a.count, "Number of scenes")->check(CLI::PositiveNumber);
  sy->add_option("--size", a.size, "Square image size")->check(CLI::Range(16, 4096));
  sy->add_option("--seed", a.seed, "Scene seed");
  sy->add_option("--test-every", a.test_every, "Every n-th scene goes to the test split (0: none)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return static_cast<int>(mfn::ExitCode::usage);
  }

  try {
    if (prep->parsed()) return prepare_data(a);
    if (tr->parsed()) return train(a);
    if (inp->parsed()) return inpaint(a);
    if (ev->parsed()) return eval(a);
    if (cl->parsed()) return cluster_priors(a);
    if (sy->parsed()) return synth(a);
  } catch (const mfn::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(e.exit_code());
  } catch (const c10::Error& e) {
    std::cerr << "error: " << e.what_without_backtrace() << '\n';
    return static_cast<int>(mfn::ExitCode::data);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(mfn::ExitCode::data);
  }
  return static_cast<int>(mfn::ExitCode::usage);
}
