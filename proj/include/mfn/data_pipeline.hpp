#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mfn/config.hpp"

namespace mfn::data {

using PipelineConfig = DataConfig;
using Rng = std::mt19937_64;

struct BBox {
  int64_t x = 0, y = 0, w = 0, h = 0;
  int64_t area() const { return w * h; }
  friend bool operator==(const BBox&, const BBox&) = default;
};

struct Point2 {
  double x = 0, y = 0;
};

struct InstanceAnnotation {
  int class_id = -1;
  BBox bbox;
  std::optional<std::vector<Point2>> polygon;
  bool is_moving_class = false;
};

enum class Split { train, test };
Split parse_split(std::string_view text);
std::string_view to_string(Split split);

struct SampleRecord {
  std::filesystem::path image_path;
  std::vector<InstanceAnnotation> annotations;
  Split split = Split::train;
};

// H x W map over {0,1}; 1 marks a hole pixel.
class BinaryMask {
 public:
  BinaryMask() = default;
  BinaryMask(int64_t height, int64_t width, uint8_t fill = 0);

  int64_t height() const { return height_; }
  int64_t width() const { return width_; }
  bool empty() const { return data_.empty(); }

  uint8_t at(int64_t y, int64_t x) const { return data_[static_cast<size_t>(y * width_ + x)]; }
  void set(int64_t y, int64_t x, uint8_t v) { data_[static_cast<size_t>(y * width_ + x)] = v ? 1 : 0; }

  std::span<const uint8_t> data() const { return data_; }
  std::span<uint8_t> data() { return data_; }

  int64_t hole_pixels() const;
  double hole_ratio() const;

  // Sets every pixel of the rectangle (clipped to the mask) to v.
  void fill_rect(const BBox& box, uint8_t v);
  void unite(const BinaryMask& other);

  BinaryMask crop(int64_t y0, int64_t x0, int64_t height, int64_t width) const;

  // (1,H,W) float tensor with values 0/1.
  torch::Tensor to_tensor() const;
  static BinaryMask from_tensor(const torch::Tensor& t);

  friend bool operator==(const BinaryMask&, const BinaryMask&) = default;

 private:
  int64_t height_ = 0, width_ = 0;
  std::vector<uint8_t> data_;
};

// Cityscapes train-id class names; index = class_id.
std::span<const std::string_view> class_names();
int class_id_from_name(std::string_view name);

// Marks annotations whose class is in cfg.moving_classes.
void resolve_moving_classes(std::vector<InstanceAnnotation>& annotations, const PipelineConfig& cfg);

// Intersects a bbox with the image rectangle.
BBox clip_bbox(const BBox& box, int64_t height, int64_t width);

// Raster of one annotation: its polygon clipped to its bbox when present,
// otherwise the bbox itself.
void paint_instance(BinaryMask& mask, const InstanceAnnotation& annotation);

// Union-deduplicated area of moving-class regions over the image area.
double moving_area_ratio(std::span<const InstanceAnnotation> annotations, Size2 image_size);

// Returns the image size, or nullopt when the file cannot be decoded.
using ImageProbe = std::function<std::optional<Size2>(const std::filesystem::path&)>;
ImageProbe default_image_probe();

// Keeps records whose moving-object area ratio is strictly below
// cfg.moving_ratio_max. Undecodable images are skipped with a warning.
std::vector<SampleRecord> filter_images(std::span<const SampleRecord> records, const PipelineConfig& cfg,
                                        const ImageProbe& probe = default_image_probe());

// area(hole & bbox) / area(bbox). Throws DataError for an empty bbox or one
// outside the mask.
double overlap_ratio(const BinaryMask& hole, const BBox& bbox);

// Library of binary instance shapes used to carve the initial hole.
class ShapeLibrary {
 public:
  ShapeLibrary() = default;
  explicit ShapeLibrary(std::vector<BinaryMask> shapes) : shapes_(std::move(shapes)) {}

  // Binary images (any non-zero pixel is shape) from a directory, sorted by name.
  static ShapeLibrary load_directory(const std::filesystem::path& dir);
  // Random smooth star-shaped polygons on a size x size canvas.
  static ShapeLibrary synthesize(int count, int64_t size, uint64_t seed);

  bool empty() const { return shapes_.empty(); }
  size_t size() const { return shapes_.size(); }
  const BinaryMask& operator[](size_t i) const { return shapes_[i]; }

 private:
  std::vector<BinaryMask> shapes_;
};

// Object-aware mask: the initial hole (random templates plus moving-object
// regions) is compared against every annotation bbox. Boxes covered by more
// than cfg.overlap_threshold are cut out of the hole, the others are added
// to it. Ratios are measured against the initial hole; exclusions win.
BinaryMask produce_mask(Size2 image_size, std::span<const InstanceAnnotation> annotations, const ShapeLibrary& shapes,
                        const PipelineConfig& cfg, Rng& rng);

// The initial hole alone (templates plus moving-object regions).
BinaryMask initial_hole(Size2 image_size, std::span<const InstanceAnnotation> annotations, const ShapeLibrary& shapes,
                        const PipelineConfig& cfg, Rng& rng);

struct TrainingPair {
  torch::Tensor input;  // gt * (1 - mask), (3,h,w) in [0,1]
  BinaryMask mask;
  torch::Tensor gt;     // (3,h,w) in [0,1]
};

// Train split: uniform random crop of cfg.train_crop. Test split: centred
// crop of cfg.test_size (identity when the image already has that size).
TrainingPair make_training_pair(const torch::Tensor& image, const BinaryMask& mask, const PipelineConfig& cfg,
                                Split split, Rng& rng, std::string_view record_name = "");

// Deterministic per-record sub-seed.
uint64_t derive_seed(uint64_t seed, uint64_t index);

// Source of instance annotations for an image. The default reads annotation
// files; a live detector can be dropped in behind the same interface.
class ObjectAnnotator {
 public:
  virtual ~ObjectAnnotator() = default;
  virtual std::vector<InstanceAnnotation> annotate(const std::filesystem::path& image,
                                                   const std::filesystem::path& annotation_source) const = 0;
};

// Annotation file format: a JSON array, or an object with an "annotations"
// array, of {class: name|id, bbox:[x,y,w,h], polygon:[[x,y],...]}.
class AnnotationFileReader final : public ObjectAnnotator {
 public:
  explicit AnnotationFileReader(PipelineConfig cfg) : cfg_(std::move(cfg)) {}
  std::vector<InstanceAnnotation> annotate(const std::filesystem::path& image,
                                           const std::filesystem::path& annotation_source) const override;

 private:
  PipelineConfig cfg_;
};

std::vector<InstanceAnnotation> parse_annotations(const std::string& json_text, const PipelineConfig& cfg);
std::vector<InstanceAnnotation> load_annotation_file(const std::filesystem::path& path, const PipelineConfig& cfg);

// JSON lines manifest: {"image": path, "annotations": path | [..], "split": "train"|"test"}.
// Relative paths resolve against the manifest's directory.
std::vector<SampleRecord> load_manifest(const std::filesystem::path& path, const PipelineConfig& cfg,
                                        const ObjectAnnotator& annotator);

// One entry of the prepared manifest written by prepare_dataset.
struct PreparedEntry {
  std::filesystem::path image;
  std::filesystem::path mask;
  Split split = Split::train;
  double hole_ratio = 0;
  double moving_ratio = 0;
};

struct PrepareSummary {
  size_t total = 0;
  size_t skipped = 0;   // undecodable
  size_t rejected = 0;  // moving ratio too high
  size_t kept_train = 0;
  size_t kept_test = 0;
};

struct PrepareOptions {
  std::filesystem::path manifest;
  std::filesystem::path out_dir;
  std::optional<std::filesystem::path> template_dir;
  bool dry_run = false;
};

// Filters, synthesizes one mask per kept image and writes out_dir/masks/*.png
// plus out_dir/prepared.jsonl. Dry runs compute counts and write nothing.
PrepareSummary prepare_dataset(const PrepareOptions& options, const PipelineConfig& cfg);

std::vector<PreparedEntry> load_prepared(const std::filesystem::path& dir);

}  // namespace mfn::data
