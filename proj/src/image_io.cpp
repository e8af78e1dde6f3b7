#include "mfn/image_io.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "mfn/errors.hpp"

namespace mfn::io {
namespace {

void write_or_throw(const std::filesystem::path& path, const cv::Mat& mat) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  bool ok = false;
  try {
    ok = cv::imwrite(path.string(), mat);
  } catch (const cv::Exception& e) {
    throw DataError("cannot write image " + path.string() + ": " + e.what());
  }
  if (!ok) throw DataError("cannot write image " + path.string());
}

cv::Mat to_bgr8(const torch::Tensor& image) {
  if (image.dim() != 3 || image.size(0) != 3) throw ShapeError("expected a (3,H,W) image tensor");
  auto hwc = (image.detach().to(torch::kFloat).clamp(0.0, 1.0) * 255.0)
                 .round()
                 .to(torch::kUInt8)
                 .permute({1, 2, 0})
                 .contiguous();
  cv::Mat rgb(static_cast<int>(hwc.size(0)), static_cast<int>(hwc.size(1)), CV_8UC3, hwc.data_ptr<uint8_t>());
  cv::Mat bgr;
  cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
  return bgr;
}

}  // namespace

torch::Tensor load_image(const std::filesystem::path& path) {
  cv::Mat bgr;
  try {
    bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  } catch (const cv::Exception&) {
  }
  if (bgr.empty()) throw DataError("cannot decode image " + path.string());
  cv::Mat rgb;
  cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
  auto t = torch::from_blob(rgb.data, {rgb.rows, rgb.cols, 3}, torch::kUInt8);
  return t.permute({2, 0, 1}).to(torch::kFloat).div(255.0).contiguous();
}

std::optional<Size2> probe_image_size(const std::filesystem::path& path) {
  cv::Mat img;
  try {
    img = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  } catch (const cv::Exception&) {
    return std::nullopt;
  }
  if (img.empty()) return std::nullopt;
  return Size2{img.rows, img.cols};
}

void save_image(const std::filesystem::path& path, const torch::Tensor& image) {
  write_or_throw(path, to_bgr8(image));
}

data::BinaryMask load_mask(const std::filesystem::path& path) {
  cv::Mat gray;
  try {
    gray = cv::imread(path.string(), cv::IMREAD_GRAYSCALE);
  } catch (const cv::Exception&) {
  }
  if (gray.empty()) throw DataError("cannot decode mask " + path.string());
  data::BinaryMask mask(gray.rows, gray.cols);
  for (int y = 0; y < gray.rows; ++y) {
    const auto* row = gray.ptr<uint8_t>(y);
    for (int x = 0; x < gray.cols; ++x) mask.set(y, x, row[x] > 127 ? 1 : 0);
  }
  return mask;
}

void save_mask(const std::filesystem::path& path, const data::BinaryMask& mask) {
  cv::Mat gray(static_cast<int>(mask.height()), static_cast<int>(mask.width()), CV_8UC1);
  for (int y = 0; y < gray.rows; ++y) {
    auto* row = gray.ptr<uint8_t>(y);
    for (int x = 0; x < gray.cols; ++x) row[x] = mask.at(y, x) ? 255 : 0;
  }
  write_or_throw(path, gray);
}

void save_label_image(const std::filesystem::path& path, std::span<const int> labels, int64_t height, int64_t width) {
  if (static_cast<int64_t>(labels.size()) != height * width) throw ShapeError("label count does not match image size");
  cv::Mat gray(static_cast<int>(height), static_cast<int>(width), CV_8UC1);
  for (int64_t i = 0; i < height * width; ++i) {
    if (labels[i] < 0 || labels[i] > 255) throw DataError("label id out of 8-bit range");
    gray.data[i] = static_cast<uint8_t>(labels[i]);
  }
  write_or_throw(path, gray);
}

void save_grid(const std::filesystem::path& path, const std::vector<torch::Tensor>& images) {
  if (images.empty()) throw ShapeError("grid needs at least one image");
  std::vector<cv::Mat> tiles;
  for (const auto& img : images) tiles.push_back(to_bgr8(img));
  cv::Mat strip;
  cv::hconcat(tiles, strip);
  write_or_throw(path, strip);
}

}  // namespace mfn::io
