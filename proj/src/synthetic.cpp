#include "mfn/synthetic.hpp"

#include <cstdio>
#include <fstream>
#include <random>

#include <json.hpp>
#include <opencv2/imgproc.hpp>

#include "mfn/errors.hpp"
#include "mfn/image_io.hpp"

namespace mfn::data {
namespace {

using json = nlohmann::json;

struct Painter {
  cv::Mat canvas;
  Rng& rng;
  std::vector<InstanceAnnotation> annotations;

  int uniform(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

  cv::Scalar jitter(cv::Scalar c, int amount) {
    return {std::clamp(c[0] + uniform(-amount, amount), 0.0, 255.0),
            std::clamp(c[1] + uniform(-amount, amount), 0.0, 255.0),
            std::clamp(c[2] + uniform(-amount, amount), 0.0, 255.0)};
  }

  // Fills the polygon and records it (clipped by the painter's caller-provided bbox).
  void object(const std::string& cls, std::vector<cv::Point> poly, cv::Scalar color) {
    cv::fillPoly(canvas, std::vector<std::vector<cv::Point>>{poly}, color);
    auto box = cv::boundingRect(poly) & cv::Rect(0, 0, canvas.cols, canvas.rows);
    if (box.area() <= 0) return;
    InstanceAnnotation a;
    a.class_id = class_id_from_name(cls);
    a.bbox = {box.x, box.y, box.width, box.height};
    std::vector<Point2> pts;
    for (const auto& p : poly) pts.push_back({static_cast<double>(p.x), static_cast<double>(p.y)});
    a.polygon = std::move(pts);
    annotations.push_back(std::move(a));
  }

  std::vector<cv::Point> rect(int x, int y, int w, int h) { return {{x, y}, {x + w, y}, {x + w, y + h}, {x, y + h}}; }

  void car(int x, int y, int w, int h) {
    // Body plus a narrower cabin on top.
    const int cab = h / 2;
    std::vector<cv::Point> poly{{x, y + h},          {x, y + cab},         {x + w / 5, y + cab},
                                {x + w / 3, y},      {x + 2 * w / 3, y},   {x + 4 * w / 5, y + cab},
                                {x + w, y + cab},    {x + w, y + h}};
    object("car", poly, jitter({60, 60, 200}, 60));
  }

  void person(int x, int y, int w, int h) {
    std::vector<cv::Point> poly{{x + w / 3, y},     {x + 2 * w / 3, y},     {x + w, y + h / 2},
                                {x + 3 * w / 4, y + h}, {x + w / 4, y + h}, {x, y + h / 2}};
    object("person", poly, jitter({40, 160, 220}, 40));
  }
};

json annotation_json(const std::vector<InstanceAnnotation>& annotations) {
  json arr = json::array();
  for (const auto& a : annotations) {
    json poly = json::array();
    if (a.polygon)
      for (const auto& p : *a.polygon) poly.push_back({p.x, p.y});
    arr.push_back({{"class", std::string(class_names()[static_cast<size_t>(a.class_id)])},
                   {"bbox", {a.bbox.x, a.bbox.y, a.bbox.w, a.bbox.h}},
                   {"polygon", poly}});
  }
  return {{"annotations", arr}};
}

}  // namespace

SyntheticScene synthetic_scene(uint64_t seed, Size2 size, const PipelineConfig& cfg) {
  if (size.height < 16 || size.width < 16) throw ConfigError("synthetic scenes need at least 16x16 pixels");
  Rng rng(derive_seed(seed, 0x5CE7E));
  const int H = static_cast<int>(size.height), W = static_cast<int>(size.width);
  Painter p{cv::Mat(H, W, CV_8UC3), rng, {}};

  const int horizon = p.uniform(H * 2 / 5, H / 2);
  // Sky gradient, then road.
  for (int y = 0; y < horizon; ++y)
    cv::line(p.canvas, {0, y}, {W - 1, y}, cv::Scalar(235 - 60 * y / horizon, 200 - 40 * y / horizon, 150), 1);
  cv::rectangle(p.canvas, cv::Rect(0, horizon, W, H - horizon), p.jitter({90, 90, 90}, 15), cv::FILLED);
  for (int x = p.uniform(0, W / 8); x < W; x += W / 4)
    cv::rectangle(p.canvas, cv::Rect(x, horizon + (H - horizon) * 2 / 3, W / 10, std::max(1, H / 64)),
                  cv::Scalar(230, 230, 230), cv::FILLED);

  // Facades along the horizon, with windows.
  for (int x = 0; x < W;) {
    const int bw = p.uniform(W / 8, W / 4), bh = p.uniform(horizon / 3, horizon - 2);
    const auto color = p.jitter({120, 130, 150}, 40);
    p.object("building", p.rect(x, horizon - bh, bw, bh), color);
    for (int wy = horizon - bh + 3; wy + 3 < horizon; wy += std::max(4, H / 16))
      for (int wx = x + 2; wx + 3 < x + bw; wx += std::max(4, W / 24))
        cv::rectangle(p.canvas, cv::Rect(wx, wy, std::max(1, W / 64), std::max(1, H / 48)), color * 0.5, cv::FILLED);
    x += bw;
  }

  const int statics = p.uniform(1, 3);
  for (int i = 0; i < statics; ++i) {
    const int kind = p.uniform(0, 2);
    const int x = p.uniform(0, W - W / 12 - 1);
    if (kind == 0) {
      const int s = std::max(3, W / 16);
      p.object("traffic sign", p.rect(x, horizon - 2 * s, s, s), cv::Scalar(30, 200, 230));
    } else if (kind == 1) {
      p.object("pole", p.rect(x, horizon / 3, std::max(2, W / 64), horizon * 2 / 3 + H / 10), cv::Scalar(70, 70, 70));
    } else {
      const int r = std::max(3, W / 14);
      std::vector<cv::Point> blob;
      for (int k = 0; k < 10; ++k) {
        const double a = 2 * CV_PI * k / 10;
        const int rr = r + p.uniform(-r / 3, r / 3);
        blob.push_back({x + r + static_cast<int>(rr * std::cos(a)), horizon - r + static_cast<int>(rr * std::sin(a))});
      }
      p.object("vegetation", blob, p.jitter({40, 140, 50}, 30));
    }
  }

  // Moving objects: small ones usually, one large vehicle occasionally.
  const bool crowded = p.uniform(0, 4) == 0;
  const int cars = p.uniform(0, 2);
  for (int i = 0; i < cars; ++i) {
    const int w = p.uniform(W / 14, W / 9), h = std::max(3, w / 2);
    p.car(p.uniform(0, W - w - 1), p.uniform(horizon, H - h - 1), w, h);
  }
  if (p.uniform(0, 1) == 1) {
    const int h = p.uniform(H / 10, H / 7), w = std::max(3, h / 3);
    p.person(p.uniform(0, W - w - 1), p.uniform(horizon - h / 2, H - h - 1), w, h);
  }
  if (crowded) {
    const int w = p.uniform(W / 3, W / 2), h = std::max(3, w / 2);
    p.car(p.uniform(0, W - w - 1), std::clamp(H - h - p.uniform(0, H / 8), 0, H - h), w, h);
  }

  // Mild sensor noise so the textures are not perfectly flat.
  // A local generator: cv::randu would draw from OpenCV's global state.
  cv::Mat noise(H, W, CV_8UC3);
  cv::RNG noise_rng(rng());
  noise_rng.fill(noise, cv::RNG::UNIFORM, 0, 12);
  p.canvas += noise;

  SyntheticScene scene;
  cv::Mat rgb;
  cv::cvtColor(p.canvas, rgb, cv::COLOR_BGR2RGB);
  scene.image = torch::from_blob(rgb.data, {H, W, 3}, torch::kUInt8).permute({2, 0, 1}).to(torch::kFloat).div(255.0).clone();
  scene.annotations = std::move(p.annotations);
  resolve_moving_classes(scene.annotations, cfg);
  return scene;
}

void write_synthetic_dataset(const std::filesystem::path& dir, int count, Size2 size, uint64_t seed, int test_every,
                             const PipelineConfig& cfg) {
  std::filesystem::create_directories(dir / "images");
  std::filesystem::create_directories(dir / "annotations");
  std::ofstream manifest(dir / "manifest.jsonl");
  if (!manifest) throw DataError("cannot write " + (dir / "manifest.jsonl").string());
  for (int i = 0; i < count; ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "%06d", i);
    const auto scene = synthetic_scene(derive_seed(seed, static_cast<uint64_t>(i)), size, cfg);
    const auto image = std::filesystem::path("images") / (std::string(name) + ".png");
    const auto ann = std::filesystem::path("annotations") / (std::string(name) + ".json");
    io::save_image(dir / image, scene.image);
    std::ofstream(dir / ann) << annotation_json(scene.annotations).dump() << '\n';
    const bool test = test_every > 0 && (i + 1) % test_every == 0;
    manifest << json{{"image", image.string()}, {"annotations", ann.string()}, {"split", test ? "test" : "train"}}.dump()
             << '\n';
  }
}

}  // namespace mfn::data
