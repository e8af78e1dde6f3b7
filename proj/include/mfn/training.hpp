#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mfn/config.hpp"
#include "mfn/data_pipeline.hpp"
#include "mfn/losses.hpp"
#include "mfn/metrics.hpp"
#include "mfn/model.hpp"

namespace mfn {

// lr_init until max_iters - decay_window, then linear down to lr_final at
// max_iters. Throws ConfigError for iter outside [0, max_iters].
double lr_schedule(int64_t iter, const TrainConfig& cfg);

struct Batch {
  torch::Tensor image;  // (B,3,h,w) in [-1,1]
  torch::Tensor mask;   // (B,1,h,w), 1 = hole
};

// Training images with their synthesized masks. Images are decoded on demand
// unless supplied in memory.
class TrainingSet {
 public:
  TrainingSet() = default;
  // In-memory images (3,H,W) in [0,1] with one mask each.
  TrainingSet(std::vector<torch::Tensor> images, std::vector<data::BinaryMask> masks, DataConfig cfg);

  // Train-split entries of a prepared dataset directory.
  static TrainingSet load(const std::filesystem::path& dir, const DataConfig& cfg);

  size_t size() const { return count_; }
  bool empty() const { return count_ == 0; }

  // Deterministic in (seed, iteration): sample indices and crops.
  Batch sample(int64_t iteration, int64_t batch_size, uint64_t seed) const;

 private:
  std::pair<torch::Tensor, data::BinaryMask> item(size_t index) const;

  DataConfig cfg_;
  size_t count_ = 0;
  std::vector<torch::Tensor> images_;
  std::vector<data::BinaryMask> masks_;
  std::vector<data::PreparedEntry> entries_;
};

// Owns the model and the two Adam optimizers. One step = one discriminator
// update on the detached composite, then one generator+prompter update.
class Trainer {
 public:
  explicit Trainer(const Config& config);

  LossReport step(const Batch& batch);

  int64_t iteration() const { return iteration_; }
  void set_iteration(int64_t it) { iteration_ = it; }

  InpaintingModel& model() { return *model_; }
  torch::optim::Adam& optimizer_g() { return *opt_g_; }
  torch::optim::Adam& optimizer_d() { return *opt_d_; }
  const Config& config() const { return config_; }

 private:
  LossReport warmup_step(const Batch& batch, double lr);
  void set_lr(double lr);

  Config config_;
  std::unique_ptr<InpaintingModel> model_;
  std::unique_ptr<torch::optim::Adam> opt_g_, opt_d_;
  int64_t iteration_ = 0;
};

inline constexpr uint32_t kCheckpointVersion = 1;

// Everything needed to continue training bit-identically.
struct Checkpoint {
  uint32_t version = kCheckpointVersion;
  int64_t iteration = 0;
  uint64_t config_hash = 0;
  std::string config_text;
  std::vector<std::pair<std::string, torch::Tensor>> tensors;  // model state then optimizer moments
  std::vector<std::pair<std::string, int64_t>> adam_steps;     // per parameter name
};

Checkpoint capture(Trainer& trainer);
// Throws ConfigError when the checkpoint's config hash differs from the trainer's.
void restore(Trainer& trainer, const Checkpoint& checkpoint);

// "MFNCKPT\0", u32 version, u64 header length, JSON header, raw tensor bytes.
void write_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint read_checkpoint(const std::filesystem::path& path);

// Rebuilds the model stored in a checkpoint (config included), in eval mode.
std::unique_ptr<InpaintingModel> load_model(const std::filesystem::path& path);

struct TrainLoopOptions {
  std::filesystem::path out_dir;
  bool resume = false;
  // Stop (and checkpoint) once this many iterations are done, as if interrupted.
  std::optional<int64_t> stop_after;
  std::function<void(const LossReport&)> on_step;
};

struct TrainLoopResult {
  int64_t iterations = 0;
  std::filesystem::path checkpoint;
};

// Writes out_dir/loss_log.jsonl (one record per step), out_dir/last.ckpt and
// out_dir/checkpoints/iter_<n>.ckpt every checkpoint_every iterations.
TrainLoopResult train_loop(const Config& config, const TrainingSet& dataset, const TrainLoopOptions& options);

// Inpainter in [0,1] space backed by a model in eval mode.
metrics::Inpainter make_inpainter(InpaintingModel& model);

// Test-split pairs of a prepared dataset (centre crops of cfg.test_size).
std::vector<metrics::EvalSample> load_eval_samples(const std::filesystem::path& prepared, const DataConfig& cfg);

// Scores a checkpoint on the test split of a prepared dataset.
metrics::MetricTable evaluate_dataset(const std::filesystem::path& checkpoint, const std::filesystem::path& prepared);

}  // namespace mfn
