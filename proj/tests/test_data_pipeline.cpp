#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "mfn/data_pipeline.hpp"
#include "mfn/errors.hpp"
#include "mfn/image_io.hpp"
#include "support.hpp"

using namespace mfn;
using namespace mfn::data;
namespace fs = std::filesystem;

namespace {

InstanceAnnotation box_annotation(const std::string& cls, BBox box) {
  InstanceAnnotation a;
  a.class_id = class_id_from_name(cls);
  a.bbox = box;
  return a;
}

// Brute-force rectangle union area, used as an oracle for box-only scenes.
double union_ratio(const std::vector<BBox>& boxes, int64_t h, int64_t w) {
  int64_t covered = 0;
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x)
      for (const auto& b : boxes)
        if (x >= b.x && x < b.x + b.w && y >= b.y && y < b.y + b.h) {
          ++covered;
          break;
        }
  return static_cast<double>(covered) / static_cast<double>(h * w);
}

int64_t intersection(const BinaryMask& m, const BBox& b) {
  int64_t n = 0;
  for (int64_t y = std::max<int64_t>(0, b.y); y < std::min(m.height(), b.y + b.h); ++y)
    for (int64_t x = std::max<int64_t>(0, b.x); x < std::min(m.width(), b.x + b.w); ++x) n += m.at(y, x);
  return n;
}

std::map<std::string, std::string> snapshot(const fs::path& root) {
  std::map<std::string, std::string> files;
  if (!fs::exists(root)) return files;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    std::ifstream in(e.path(), std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    files[fs::relative(e.path(), root).string()] = ss.str();
  }
  return files;
}

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("mfn_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST_SUITE("data_pipeline") {
  TEST_CASE("binary mask basics") {
    BinaryMask m(4, 5);
    m.fill_rect({3, 2, 10, 10}, 1);  // clipped to the image
    CHECK(m.hole_pixels() == 2 * 2);
    CHECK(m.hole_ratio() == doctest::Approx(4.0 / 20.0));
    auto c = m.crop(2, 3, 2, 2);
    CHECK(c.hole_pixels() == 4);
    CHECK(BinaryMask::from_tensor(m.to_tensor()) == m);
    CHECK(m.to_tensor().sizes() == torch::IntArrayRef{1, 4, 5});
  }

  TEST_CASE("overlap ratio hand cases") {
    BinaryMask hole(10, 10);
    hole.fill_rect({0, 0, 5, 10}, 1);  // left half
    CHECK(overlap_ratio(hole, {0, 0, 10, 10}) == 0.5);
    CHECK(overlap_ratio(hole, {0, 0, 5, 5}) == 1.0);
    CHECK(overlap_ratio(hole, {5, 0, 5, 5}) == 0.0);
    CHECK(overlap_ratio(hole, {3, 0, 4, 1}) == 0.5);
    CHECK_THROWS_AS(overlap_ratio(hole, {0, 0, 0, 3}), DataError);
    CHECK_THROWS_AS(overlap_ratio(hole, {20, 20, 3, 3}), DataError);
  }

  TEST_CASE("a fully covered moving object is carved out, a clear box is added") {
    DataConfig cfg;
    cfg.templates_min = cfg.templates_max = 1;
    cfg.template_scale_min = cfg.template_scale_max = 0.01;  // 4 px template
    ShapeLibrary dot({BinaryMask(4, 4, 1)});
    std::vector<InstanceAnnotation> anns{box_annotation("car", {2, 2, 6, 6}),
                                         box_annotation("building", {20, 20, 10, 10})};
    resolve_moving_classes(anns, cfg);
    Rng a(3), b(3);
    const auto hole = initial_hole({40, 40}, anns, dot, cfg, a);
    const auto out = produce_mask({40, 40}, anns, dot, cfg, b);
    // The car is painted into the initial hole, so it covers its own box.
    CHECK(overlap_ratio(hole, anns[0].bbox) == 1.0);
    CHECK(intersection(out, anns[0].bbox) == 0);
    if (overlap_ratio(hole, anns[1].bbox) > 0.5)
      CHECK(intersection(out, anns[1].bbox) == 0);
    else
      CHECK(intersection(out, anns[1].bbox) == anns[1].bbox.area());
  }

  TEST_CASE("mask invariant over fifty seeded scenes") {
    DataConfig cfg;
    const auto shapes = ShapeLibrary::synthesize(16, 64, 11);
    int excluded = 0, added = 0;
    for (uint64_t s = 0; s < 50; ++s) {
      auto scene = synthetic_scene(derive_seed(99, s), {96, 128}, cfg);
      Rng a(derive_seed(7, s)), b(derive_seed(7, s));
      const auto hole = initial_hole({96, 128}, scene.annotations, shapes, cfg, a);
      const auto mask = produce_mask({96, 128}, scene.annotations, shapes, cfg, b);
      for (const auto& ann : scene.annotations) {
        const auto box = clip_bbox(ann.bbox, 96, 128);
        if (box.area() == 0) continue;
        if (overlap_ratio(hole, box) > cfg.overlap_threshold) {
          CHECK(intersection(mask, box) == 0);
          ++excluded;
        } else {
          ++added;
        }
      }
      // Outside every excluded box the mask is the hole united with the added boxes.
      BinaryMask expect = hole;
      for (const auto& ann : scene.annotations) {
        const auto box = clip_bbox(ann.bbox, 96, 128);
        if (box.area() > 0 && overlap_ratio(hole, box) <= cfg.overlap_threshold) expect.fill_rect(box, 1);
      }
      for (const auto& ann : scene.annotations) {
        const auto box = clip_bbox(ann.bbox, 96, 128);
        if (box.area() > 0 && overlap_ratio(hole, box) > cfg.overlap_threshold) expect.fill_rect(box, 0);
      }
      CHECK(expect == mask);
    }
    CHECK(excluded > 0);
    CHECK(added > 0);
  }

  TEST_CASE("moving ratio matches a rectangle-union oracle") {
    DataConfig cfg;
    std::vector<InstanceAnnotation> anns{box_annotation("car", {0, 0, 10, 10}), box_annotation("person", {5, 5, 10, 10}),
                                         box_annotation("building", {0, 0, 40, 40})};
    resolve_moving_classes(anns, cfg);
    CHECK(anns[0].is_moving_class);
    CHECK_FALSE(anns[2].is_moving_class);
    CHECK(moving_area_ratio(anns, {40, 40}) == doctest::Approx(union_ratio({{0, 0, 10, 10}, {5, 5, 10, 10}}, 40, 40)));
  }

  TEST_CASE("filter keeps only images below the moving-object ratio") {
    DataConfig cfg;
    std::vector<SampleRecord> records;
    for (uint64_t s = 0; s < 50; ++s) {
      SampleRecord r;
      r.image_path = "scene_" + std::to_string(s) + ".png";
      r.annotations = synthetic_scene(derive_seed(1234, s), {96, 128}, cfg).annotations;
      records.push_back(r);
    }
    SampleRecord broken;
    broken.image_path = "broken.png";
    records.push_back(broken);
    ImageProbe probe = [](const fs::path& p) -> std::optional<Size2> {
      if (p.filename() == "broken.png") return std::nullopt;
      return Size2{96, 128};
    };
    const auto kept = filter_images(records, cfg, probe);
    CHECK(kept.size() > 0);
    CHECK(kept.size() < 50);
    for (const auto& r : kept) {
      CHECK(moving_area_ratio(r.annotations, {96, 128}) < cfg.moving_ratio_max);
      CHECK(r.image_path != fs::path("broken.png"));
    }
  }

  TEST_CASE("polygons are rasterized inside their bbox") {
    BinaryMask m(20, 20);
    InstanceAnnotation a = box_annotation("car", {2, 2, 6, 6});
    a.polygon = std::vector<Point2>{{0, 0}, {19, 0}, {19, 19}, {0, 19}};
    paint_instance(m, a);
    CHECK(m.hole_pixels() == 36);
    CHECK(intersection(m, a.bbox) == 36);
  }

  TEST_CASE("mask synthesis is bit-reproducible") {
    DataConfig cfg;
    const auto shapes = ShapeLibrary::synthesize(8, 64, 3);
    auto scene = synthetic_scene(42, {64, 96}, cfg);
    Rng a(9), b(9);
    CHECK(produce_mask({64, 96}, scene.annotations, shapes, cfg, a) ==
          produce_mask({64, 96}, scene.annotations, shapes, cfg, b));
    CHECK(torch::equal(synthetic_scene(42, {64, 96}, cfg).image, scene.image));
  }

  TEST_CASE("training pairs: random crops for train, centre crops for test") {
    DataConfig cfg;
    cfg.train_crop = {16, 16};
    cfg.test_size = {8, 12};
    auto image = test::randu({3, 20, 24}, 1, torch::kFloat);
    BinaryMask mask(20, 24);
    mask.fill_rect({0, 0, 24, 10}, 1);
    Rng rng(1);
    auto train = make_training_pair(image, mask, cfg, Split::train, rng);
    CHECK(train.gt.sizes() == torch::IntArrayRef{3, 16, 16});
    CHECK(torch::equal(train.input, train.gt * (1.0 - train.mask.to_tensor())));
    auto test = make_training_pair(image, mask, cfg, Split::test, rng);
    CHECK(torch::equal(test.gt, image.slice(1, 6, 14).slice(2, 6, 18)));
    cfg.train_crop = {64, 64};
    CHECK_THROWS_WITH_AS(make_training_pair(image, mask, cfg, Split::train, rng, "tiny.png"),
                         doctest::Contains("tiny.png"), DataError);
  }

  TEST_CASE("manifest parsing") {
    const auto dir = scratch("manifest");
    std::ofstream(dir / "a.json") << R"({"annotations":[{"class":"car","bbox":[1,2,3,4]}]})";
    std::ofstream(dir / "m.jsonl") << R"({"image":"img.png","annotations":"a.json","split":"test"})" << '\n'
                                   << R"({"image":"other.png","annotations":[{"class":11,"bbox":[0,0,2,2]}]})" << '\n';
    DataConfig cfg;
    const auto records = load_manifest(dir / "m.jsonl", cfg, AnnotationFileReader(cfg));
    REQUIRE(records.size() == 2);
    CHECK(records[0].image_path == dir / "img.png");
    CHECK(records[0].split == Split::test);
    CHECK(records[0].annotations[0].bbox == BBox{1, 2, 3, 4});
    CHECK(records[0].annotations[0].is_moving_class);
    CHECK(records[1].annotations[0].class_id == 11);

    std::ofstream(dir / "bad.jsonl") << R"({"image":"x.png","annotations":[{"class":"dragon","bbox":[0,0,1,1]}]})";
    CHECK_THROWS_AS(load_manifest(dir / "bad.jsonl", cfg, AnnotationFileReader(cfg)), DataError);
    CHECK_THROWS_AS(load_manifest(dir / "missing.jsonl", cfg, AnnotationFileReader(cfg)), DataError);
  }

  TEST_CASE("prepare-data writes deterministic outputs and dry runs write nothing") {
    const auto dir = scratch("prepare");
    DataConfig cfg;
    write_synthetic_dataset(dir / "raw", 10, {64, 64}, 5, 3, cfg);
    std::ofstream(dir / "raw" / "images" / "corrupt.png") << "not an image";
    std::ofstream(dir / "raw" / "manifest.jsonl", std::ios::app) << R"({"image":"images/corrupt.png","annotations":[]})"
                                                                 << '\n';
    const auto before = snapshot(dir);
    PrepareOptions dry{dir / "raw" / "manifest.jsonl", dir / "out_dry", std::nullopt, true};
    const auto s_dry = prepare_dataset(dry, cfg);
    CHECK(snapshot(dir) == before);
    CHECK_FALSE(fs::exists(dir / "out_dry"));

    PrepareOptions real{dir / "raw" / "manifest.jsonl", dir / "out1", std::nullopt, false};
    const auto s1 = prepare_dataset(real, cfg);
    real.out_dir = dir / "out2";
    prepare_dataset(real, cfg);
    CHECK(s1.total == 11);
    CHECK(s1.skipped == 1);
    CHECK(s_dry.kept_train == s1.kept_train);
    CHECK(s_dry.kept_test == s1.kept_test);
    CHECK(s1.kept_train + s1.kept_test + s1.rejected + s1.skipped == s1.total);
    CHECK(snapshot(dir / "out1") == snapshot(dir / "out2"));

    const auto entries = load_prepared(dir / "out1");
    CHECK(entries.size() == s1.kept_train + s1.kept_test);
    for (const auto& e : entries) {
      CHECK(e.moving_ratio < cfg.moving_ratio_max);
      CHECK(io::load_mask(e.mask).hole_ratio() == doctest::Approx(e.hole_ratio));
    }
  }

  TEST_CASE("derived seeds differ per index") {
    CHECK(derive_seed(1, 0) != derive_seed(1, 1));
    CHECK(derive_seed(1, 0) != derive_seed(2, 0));
    CHECK(derive_seed(5, 9) == derive_seed(5, 9));
  }
}
