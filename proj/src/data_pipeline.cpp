#include "mfn/data_pipeline.hpp"

#include <opencv2/imgproc.hpp>

#include <json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <numbers>
#include <set>
#include <sstream>

#include "mfn/errors.hpp"
#include "mfn/image_io.hpp"

namespace mfn::data {
namespace {

using nlohmann::json;

constexpr std::array<std::string_view, 19> kClassNames{
    "road",       "sidewalk", "building", "wall",  "fence", "pole",  "traffic light",
    "traffic sign", "vegetation", "terrain", "sky",  "person", "rider", "car",
    "truck",      "bus",      "train",    "motorcycle", "bicycle"};

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  std::filesystem::path path(p);
  return path.is_absolute() ? path : base / path;
}

InstanceAnnotation parse_one(const json& j) {
  InstanceAnnotation a;
  if (!j.is_object()) throw DataError("annotation entry must be an object");
  const auto& cls = j.at("class");
  if (cls.is_string()) {
    a.class_id = class_id_from_name(cls.get<std::string>());
    if (a.class_id < 0) throw DataError("unknown annotation class '" + cls.get<std::string>() + "'");
  } else {
    a.class_id = cls.get<int>();
  }
  const auto& b = j.at("bbox");
  if (!b.is_array() || b.size() != 4) throw DataError("bbox must be [x, y, w, h]");
  a.bbox = {static_cast<int64_t>(std::lround(b[0].get<double>())), static_cast<int64_t>(std::lround(b[1].get<double>())),
            static_cast<int64_t>(std::lround(b[2].get<double>())), static_cast<int64_t>(std::lround(b[3].get<double>()))};
  if (a.bbox.w <= 0 || a.bbox.h <= 0) throw DataError("bbox width and height must be positive");
  if (j.contains("polygon") && !j["polygon"].is_null()) {
    std::vector<Point2> poly;
    for (const auto& v : j["polygon"]) {
      if (!v.is_array() || v.size() != 2) throw DataError("polygon vertices must be [x, y]");
      poly.push_back({v[0].get<double>(), v[1].get<double>()});
    }
    if (poly.size() < 3) throw DataError("polygon needs at least three vertices");
    a.polygon = std::move(poly);
  }
  return a;
}

std::vector<InstanceAnnotation> parse_annotation_json(const json& j, const PipelineConfig& cfg) {
  const json& list = j.is_object() ? j.at("annotations") : j;
  if (!list.is_array()) throw DataError("annotations must be a JSON array");
  std::vector<InstanceAnnotation> out;
  for (const auto& entry : list) out.push_back(parse_one(entry));
  resolve_moving_classes(out, cfg);
  return out;
}

void warn(const std::string& msg) { std::clog << "warning: " << msg << '\n'; }

cv::Mat mask_to_mat(const BinaryMask& m) {
  cv::Mat mat(static_cast<int>(m.height()), static_cast<int>(m.width()), CV_8UC1);
  std::copy(m.data().begin(), m.data().end(), mat.data);
  return mat;
}

BinaryMask mat_to_mask(const cv::Mat& mat) {
  BinaryMask m(mat.rows, mat.cols);
  for (int y = 0; y < mat.rows; ++y) {
    const auto* row = mat.ptr<uint8_t>(y);
    for (int x = 0; x < mat.cols; ++x) m.set(y, x, row[x] ? 1 : 0);
  }
  return m;
}

// OR `shape` into `mask` with its top-left corner at (y0, x0), clipped.
void paste(BinaryMask& mask, const BinaryMask& shape, int64_t y0, int64_t x0) {
  for (int64_t y = 0; y < shape.height(); ++y) {
    const int64_t ty = y0 + y;
    if (ty < 0 || ty >= mask.height()) continue;
    for (int64_t x = 0; x < shape.width(); ++x) {
      const int64_t tx = x0 + x;
      if (tx < 0 || tx >= mask.width()) continue;
      if (shape.at(y, x)) mask.set(ty, tx, 1);
    }
  }
}

enum class Verdict { keep, reject, skip };

struct Classified {
  Verdict verdict = Verdict::skip;
  Size2 size;
  double moving_ratio = 0;
};

Classified classify(const SampleRecord& record, const PipelineConfig& cfg, const ImageProbe& probe) {
  Classified c;
  auto size = probe(record.image_path);
  if (!size) {
    warn("skipping undecodable image " + record.image_path.string());
    return c;
  }
  if (size->height < 64 || size->width < 64) {
    warn("skipping image smaller than 64x64: " + record.image_path.string());
    return c;
  }
  c.size = *size;
  c.moving_ratio = moving_area_ratio(record.annotations, *size);
  c.verdict = c.moving_ratio < cfg.moving_ratio_max ? Verdict::keep : Verdict::reject;
  return c;
}

std::string mask_name(size_t index) {
  std::ostringstream os;
  os << std::setw(6) << std::setfill('0') << index << ".png";
  return os.str();
}

}  // namespace

Split parse_split(std::string_view text) {
  if (text == "train") return Split::train;
  if (text == "test") return Split::test;
  throw DataError("unknown split '" + std::string(text) + "' (expected train or test)");
}

std::string_view to_string(Split split) { return split == Split::train ? "train" : "test"; }

BinaryMask::BinaryMask(int64_t height, int64_t width, uint8_t fill)
    : height_(height), width_(width), data_(static_cast<size_t>(height * width), fill ? 1 : 0) {
  if (height < 0 || width < 0) throw ShapeError("mask dimensions must be non-negative");
}

int64_t BinaryMask::hole_pixels() const { return std::count(data_.begin(), data_.end(), uint8_t{1}); }

double BinaryMask::hole_ratio() const {
  return data_.empty() ? 0.0 : static_cast<double>(hole_pixels()) / static_cast<double>(data_.size());
}

void BinaryMask::fill_rect(const BBox& box, uint8_t v) {
  const auto c = clip_bbox(box, height_, width_);
  for (int64_t y = c.y; y < c.y + c.h; ++y)
    std::fill_n(data_.begin() + y * width_ + c.x, c.w, v ? 1 : 0);
}

void BinaryMask::unite(const BinaryMask& other) {
  if (other.height_ != height_ || other.width_ != width_) throw ShapeError("mask union size mismatch");
  for (size_t i = 0; i < data_.size(); ++i) data_[i] |= other.data_[i];
}

BinaryMask BinaryMask::crop(int64_t y0, int64_t x0, int64_t height, int64_t width) const {
  if (y0 < 0 || x0 < 0 || y0 + height > height_ || x0 + width > width_) throw ShapeError("mask crop out of bounds");
  BinaryMask out(height, width);
  for (int64_t y = 0; y < height; ++y)
    std::copy_n(data_.begin() + (y0 + y) * width_ + x0, width, out.data_.begin() + y * width);
  return out;
}

torch::Tensor BinaryMask::to_tensor() const {
  auto t = torch::from_blob(const_cast<uint8_t*>(data_.data()), {1, height_, width_}, torch::kUInt8);
  return t.to(torch::kFloat).clone();
}

BinaryMask BinaryMask::from_tensor(const torch::Tensor& t) {
  auto m = t.detach().to(torch::kFloat).squeeze();
  if (m.dim() != 2) throw ShapeError("mask tensor must be (H,W) or (1,H,W)");
  auto bin = (m > 0.5).to(torch::kUInt8).contiguous();
  BinaryMask out(bin.size(0), bin.size(1));
  std::copy_n(bin.data_ptr<uint8_t>(), out.data_.size(), out.data_.begin());
  return out;
}

std::span<const std::string_view> class_names() { return kClassNames; }

int class_id_from_name(std::string_view name) {
  for (size_t i = 0; i < kClassNames.size(); ++i)
    if (kClassNames[i] == name) return static_cast<int>(i);
  return -1;
}

void resolve_moving_classes(std::vector<InstanceAnnotation>& annotations, const PipelineConfig& cfg) {
  std::set<int> moving;
  for (const auto& name : cfg.moving_classes) {
    const int id = class_id_from_name(name);
    if (id < 0) throw ConfigError("unknown moving class '" + name + "'");
    moving.insert(id);
  }
  for (auto& a : annotations) a.is_moving_class = moving.count(a.class_id) > 0;
}

BBox clip_bbox(const BBox& box, int64_t height, int64_t width) {
  const int64_t x0 = std::clamp<int64_t>(box.x, 0, width), y0 = std::clamp<int64_t>(box.y, 0, height);
  const int64_t x1 = std::clamp<int64_t>(box.x + box.w, 0, width), y1 = std::clamp<int64_t>(box.y + box.h, 0, height);
  return {x0, y0, std::max<int64_t>(0, x1 - x0), std::max<int64_t>(0, y1 - y0)};
}

void paint_instance(BinaryMask& mask, const InstanceAnnotation& annotation) {
  const auto box = clip_bbox(annotation.bbox, mask.height(), mask.width());
  if (box.area() == 0) return;
  if (!annotation.polygon) {
    mask.fill_rect(box, 1);
    return;
  }
  cv::Mat local = cv::Mat::zeros(static_cast<int>(box.h), static_cast<int>(box.w), CV_8UC1);
  std::vector<cv::Point> pts;
  for (const auto& p : *annotation.polygon)
    pts.emplace_back(static_cast<int>(std::lround(p.x)) - static_cast<int>(box.x),
                     static_cast<int>(std::lround(p.y)) - static_cast<int>(box.y));
  cv::fillPoly(local, std::vector<std::vector<cv::Point>>{pts}, cv::Scalar(1));
  for (int y = 0; y < local.rows; ++y) {
    const auto* row = local.ptr<uint8_t>(y);
    for (int x = 0; x < local.cols; ++x)
      if (row[x]) mask.set(box.y + y, box.x + x, 1);
  }
}

double moving_area_ratio(std::span<const InstanceAnnotation> annotations, Size2 image_size) {
  BinaryMask moving(image_size.height, image_size.width);
  for (const auto& a : annotations)
    if (a.is_moving_class) paint_instance(moving, a);
  return moving.hole_ratio();
}

ImageProbe default_image_probe() { return [](const std::filesystem::path& p) { return io::probe_image_size(p); }; }

std::vector<SampleRecord> filter_images(std::span<const SampleRecord> records, const PipelineConfig& cfg,
                                        const ImageProbe& probe) {
  std::vector<SampleRecord> kept;
  for (const auto& r : records)
    if (classify(r, cfg, probe).verdict == Verdict::keep) kept.push_back(r);
  return kept;
}

double overlap_ratio(const BinaryMask& hole, const BBox& bbox) {
  if (bbox.w <= 0 || bbox.h <= 0) throw DataError("invalid annotation: zero-area bounding box");
  if (bbox.x < 0 || bbox.y < 0 || bbox.x + bbox.w > hole.width() || bbox.y + bbox.h > hole.height())
    throw DataError("invalid annotation: bounding box outside the mask");
  int64_t inside = 0;
  for (int64_t y = bbox.y; y < bbox.y + bbox.h; ++y)
    for (int64_t x = bbox.x; x < bbox.x + bbox.w; ++x) inside += hole.at(y, x);
  return static_cast<double>(inside) / static_cast<double>(bbox.area());
}

ShapeLibrary ShapeLibrary::load_directory(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw DataError("template directory not found: " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    auto ext = entry.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);
    if (entry.is_regular_file() && (ext == ".png" || ext == ".bmp" || ext == ".jpg" || ext == ".pgm"))
      files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<BinaryMask> shapes;
  for (const auto& f : files) {
    auto m = io::load_mask(f);
    if (m.hole_pixels() > 0) shapes.push_back(std::move(m));
  }
  return ShapeLibrary(std::move(shapes));
}

ShapeLibrary ShapeLibrary::synthesize(int count, int64_t size, uint64_t seed) {
  Rng rng(seed);
  std::uniform_int_distribution<int> vertices(8, 16);
  std::uniform_real_distribution<double> radius(0.35, 1.0), jitter(-0.3, 0.3);
  std::vector<BinaryMask> shapes;
  for (int s = 0; s < count; ++s) {
    const int n = vertices(rng);
    std::vector<double> r(n);
    for (auto& v : r) v = radius(rng);
    for (int pass = 0; pass < 2; ++pass) {  // circular smoothing
      std::vector<double> sm(n);
      for (int k = 0; k < n; ++k) sm[k] = (r[(k + n - 1) % n] + 2 * r[k] + r[(k + 1) % n]) / 4.0;
      r = sm;
    }
    std::vector<cv::Point> pts;
    const double c = (static_cast<double>(size) - 1.0) / 2.0;
    for (int k = 0; k < n; ++k) {
      const double theta = 2.0 * std::numbers::pi * (k + jitter(rng)) / n;
      pts.emplace_back(static_cast<int>(std::lround(c + r[k] * c * std::cos(theta))),
                       static_cast<int>(std::lround(c + r[k] * c * std::sin(theta))));
    }
    cv::Mat canvas = cv::Mat::zeros(static_cast<int>(size), static_cast<int>(size), CV_8UC1);
    cv::fillPoly(canvas, std::vector<std::vector<cv::Point>>{pts}, cv::Scalar(1));
    shapes.push_back(mat_to_mask(canvas));
  }
  return ShapeLibrary(std::move(shapes));
}

BinaryMask initial_hole(Size2 image_size, std::span<const InstanceAnnotation> annotations, const ShapeLibrary& shapes,
                        const PipelineConfig& cfg, Rng& rng) {
  if (shapes.empty()) throw DataError("mask producer needs a non-empty shape template library");
  const int64_t H = image_size.height, W = image_size.width;
  BinaryMask hole(H, W);
  std::uniform_int_distribution<int> count_dist(cfg.templates_min, cfg.templates_max);
  std::uniform_int_distribution<size_t> pick(0, shapes.size() - 1);
  std::uniform_real_distribution<double> scale_dist(cfg.template_scale_min, cfg.template_scale_max);
  const int count = count_dist(rng);
  for (int i = 0; i < count; ++i) {
    const auto& t = shapes[pick(rng)];
    const double target = std::max(4.0, std::round(scale_dist(rng) * static_cast<double>(std::min(H, W))));
    const double f = target / static_cast<double>(std::max(t.height(), t.width()));
    const int th = std::max(1, static_cast<int>(std::lround(t.height() * f)));
    const int tw = std::max(1, static_cast<int>(std::lround(t.width() * f)));
    cv::Mat scaled;
    cv::resize(mask_to_mat(t), scaled, cv::Size(tw, th), 0, 0, cv::INTER_NEAREST);
    // Shapes may hang over the border by up to a quarter of their size.
    std::uniform_int_distribution<int64_t> ys(-th / 4, std::max<int64_t>(-th / 4, H - (3 * th) / 4));
    std::uniform_int_distribution<int64_t> xs(-tw / 4, std::max<int64_t>(-tw / 4, W - (3 * tw) / 4));
    const int64_t y0 = ys(rng), x0 = xs(rng);
    paste(hole, mat_to_mask(scaled), y0, x0);
  }
  for (const auto& a : annotations)
    if (a.is_moving_class) paint_instance(hole, a);
  return hole;
}

BinaryMask produce_mask(Size2 image_size, std::span<const InstanceAnnotation> annotations, const ShapeLibrary& shapes,
                        const PipelineConfig& cfg, Rng& rng) {
  const BinaryMask initial = initial_hole(image_size, annotations, shapes, cfg, rng);
  std::vector<BBox> added, excluded;
  for (const auto& a : annotations) {
    const auto box = clip_bbox(a.bbox, image_size.height, image_size.width);
    if (box.area() == 0) continue;
    (overlap_ratio(initial, box) > cfg.overlap_threshold ? excluded : added).push_back(box);
  }
  BinaryMask out = initial;
  for (const auto& b : added) out.fill_rect(b, 1);
  for (const auto& b : excluded) out.fill_rect(b, 0);
  return out;
}

TrainingPair make_training_pair(const torch::Tensor& image, const BinaryMask& mask, const PipelineConfig& cfg,
                                Split split, Rng& rng, std::string_view record_name) {
  if (image.dim() != 3 || image.size(0) != 3) throw ShapeError("training image must be (3,H,W)");
  const int64_t H = image.size(1), W = image.size(2);
  if (mask.height() != H || mask.width() != W)
    throw DataError("mask size does not match image for record '" + std::string(record_name) + "'");
  const Size2 crop = split == Split::train ? cfg.train_crop : cfg.test_size;
  if (H < crop.height || W < crop.width)
    throw DataError("image for record '" + std::string(record_name) + "' is " + std::to_string(H) + "x" +
                    std::to_string(W) + ", smaller than the " + std::to_string(crop.height) + "x" +
                    std::to_string(crop.width) + " crop");
  int64_t y0 = (H - crop.height) / 2, x0 = (W - crop.width) / 2;
  if (split == Split::train) {
    y0 = std::uniform_int_distribution<int64_t>(0, H - crop.height)(rng);
    x0 = std::uniform_int_distribution<int64_t>(0, W - crop.width)(rng);
  }
  TrainingPair pair;
  pair.gt = image.slice(1, y0, y0 + crop.height).slice(2, x0, x0 + crop.width).contiguous().clone();
  pair.mask = mask.crop(y0, x0, crop.height, crop.width);
  pair.input = pair.gt * (1.0 - pair.mask.to_tensor());
  return pair;
}

uint64_t derive_seed(uint64_t seed, uint64_t index) {
  // splitmix64 finalizer over the combined key
  uint64_t z = seed + 0x9E3779B97F4A7C15ull * (index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

std::vector<InstanceAnnotation> AnnotationFileReader::annotate(const std::filesystem::path& /*image*/,
                                                               const std::filesystem::path& annotation_source) const {
  return load_annotation_file(annotation_source, cfg_);
}

std::vector<InstanceAnnotation> parse_annotations(const std::string& json_text, const PipelineConfig& cfg) {
  try {
    return parse_annotation_json(json::parse(json_text), cfg);
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed annotations: ") + e.what());
  }
}

std::vector<InstanceAnnotation> load_annotation_file(const std::filesystem::path& path, const PipelineConfig& cfg) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open annotation file " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  try {
    return parse_annotation_json(json::parse(buffer.str()), cfg);
  } catch (const json::exception& e) {
    throw DataError("malformed annotation file " + path.string() + ": " + e.what());
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

std::vector<SampleRecord> load_manifest(const std::filesystem::path& path, const PipelineConfig& cfg,
                                        const ObjectAnnotator& annotator) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest " + path.string());
  const auto base = path.parent_path();
  std::vector<SampleRecord> records;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path.string() + ":" + std::to_string(line_no);
    try {
      auto j = json::parse(line);
      SampleRecord r;
      r.image_path = resolve(base, j.at("image").get<std::string>());
      r.split = parse_split(j.value("split", std::string("train")));
      if (j.contains("annotations")) {
        const auto& a = j["annotations"];
        if (a.is_string())
          r.annotations = annotator.annotate(r.image_path, resolve(base, a.get<std::string>()));
        else
          r.annotations = parse_annotation_json(a, cfg);
      }
      records.push_back(std::move(r));
    } catch (const json::exception& e) {
      throw DataError(where + ": " + e.what());
    } catch (const DataError& e) {
      throw DataError(where + ": " + e.what());
    }
  }
  return records;
}

PrepareSummary prepare_dataset(const PrepareOptions& options, const PipelineConfig& cfg) {
  const AnnotationFileReader annotator(cfg);
  const auto records = load_manifest(options.manifest, cfg, annotator);
  const auto shapes = options.template_dir ? ShapeLibrary::load_directory(*options.template_dir)
                                           : ShapeLibrary::synthesize(32, 128, derive_seed(cfg.seed, 0xC0FFEE));
  if (shapes.empty()) throw DataError("template library is empty");

  const auto probe = default_image_probe();
  PrepareSummary summary;
  summary.total = records.size();
  std::vector<json> lines;
  for (size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    const auto c = classify(r, cfg, probe);
    if (c.verdict == Verdict::skip) {
      ++summary.skipped;
      continue;
    }
    if (c.verdict == Verdict::reject) {
      ++summary.rejected;
      continue;
    }
    (r.split == Split::train ? summary.kept_train : summary.kept_test) += 1;
    if (options.dry_run) continue;
    Rng rng(derive_seed(cfg.seed, i));
    const auto mask = produce_mask(c.size, r.annotations, shapes, cfg, rng);
    const auto rel = std::filesystem::path("masks") / mask_name(i);
    io::save_mask(options.out_dir / rel, mask);
    lines.push_back({{"image", std::filesystem::absolute(r.image_path).lexically_normal().string()},
                     {"mask", rel.string()},
                     {"split", std::string(to_string(r.split))},
                     {"hole_ratio", mask.hole_ratio()},
                     {"moving_ratio", c.moving_ratio}});
  }
  if (!options.dry_run) {
    std::filesystem::create_directories(options.out_dir);
    std::ofstream out(options.out_dir / "prepared.jsonl");
    for (const auto& l : lines) out << l.dump() << '\n';
    std::ofstream sum(options.out_dir / "summary.json");
    sum << json{{"total", summary.total},
                {"skipped", summary.skipped},
                {"rejected", summary.rejected},
                {"kept_train", summary.kept_train},
                {"kept_test", summary.kept_test},
                {"seed", cfg.seed},
                {"overlap_threshold", cfg.overlap_threshold},
                {"moving_ratio_max", cfg.moving_ratio_max}}
               .dump(2)
        << '\n';
    if (!out || !sum) throw DataError("failed writing prepared dataset to " + options.out_dir.string());
  }
  return summary;
}

std::vector<PreparedEntry> load_prepared(const std::filesystem::path& dir) {
  const auto path = dir / "prepared.jsonl";
  std::ifstream in(path);
  if (!in) throw DataError("prepared dataset not found: " + path.string());
  std::vector<PreparedEntry> entries;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      auto j = json::parse(line);
      PreparedEntry e;
      e.image = resolve(dir, j.at("image").get<std::string>());
      e.mask = resolve(dir, j.at("mask").get<std::string>());
      e.split = parse_split(j.value("split", std::string("train")));
      e.hole_ratio = j.value("hole_ratio", 0.0);
      e.moving_ratio = j.value("moving_ratio", 0.0);
      entries.push_back(std::move(e));
    } catch (const json::exception& ex) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": " + ex.what());
    }
  }
  return entries;
}

}  // namespace mfn::data
