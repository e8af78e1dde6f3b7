#include <doctest.h>

#include <cmath>
#include <set>
#include <sstream>

#include "mfn/errors.hpp"
#include "mfn/features.hpp"
#include "mfn/isodata.hpp"
#include "mfn/metrics.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace mfn;
using namespace mfn::oracle;
using namespace mfn::metrics;

namespace {

// 16x16 mask whose first `holes` pixels (row-major) are holes.
torch::Tensor prefix_mask(int64_t holes) {
  auto m = torch::zeros({256}, torch::kDouble);
  m.slice(0, 0, holes).fill_(1.0);
  return m.view({1, 16, 16});
}

std::vector<EvalSample> bucket_samples() {
  std::vector<EvalSample> s;
  const int64_t holes[] = {13, 38, 64, 90, 115, 141, 13};
  for (int i = 0; i < 7; ++i) s.push_back({"s" + std::to_string(i), test::randu({3, 16, 16}, 100 + i), prefix_mask(holes[i])});
  return s;
}

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

}  // namespace

TEST_SUITE("metrics") {
  TEST_CASE("closed-form PSNR, MAE and RMSE") {
    auto a = torch::zeros({3, 4, 4}, torch::kDouble);
    CHECK(psnr(a, a) == 100.0);
    CHECK(mae(a, a) == 0.0);
    CHECK(rmse(a, a) == 0.0);
    auto b = torch::full({3, 4, 4}, 0.1, torch::kDouble);
    CHECK(psnr(a, b) == doctest::Approx(20.0).epsilon(1e-12));
    CHECK(mae(a, b) == doctest::Approx(0.1).epsilon(1e-12));
    CHECK(rmse(a, b) == doctest::Approx(25.5).epsilon(1e-12));
    CHECK(psnr(a, torch::ones_like(a)) == doctest::Approx(0.0));
    CHECK_THROWS_AS(psnr(a, torch::zeros({3, 4, 5})), ShapeError);
  }

  TEST_CASE("SSIM matches a sliding-window oracle") {
    for (uint64_t seed = 0; seed < 3; ++seed) {
      auto x = test::randu({3, 16, 16}, seed), y = (x + 0.2 * test::randn({3, 16, 16}, seed + 50)).clamp(0, 1);
      CHECK(std::abs(ssim(x, y) - ssim_oracle(x, y)) < 1e-6);
      CHECK(ssim(x, x) == doctest::Approx(1.0).epsilon(1e-12));
      CHECK(ssim(x, y) == doctest::Approx(ssim(y, x)).epsilon(1e-12));
    }
    CHECK_THROWS_AS(ssim(torch::zeros({3, 8, 16}), torch::zeros({3, 8, 16})), ShapeError);
    CHECK_THROWS_AS(to_gray(torch::zeros({1, 8, 8})), ShapeError);
  }

  TEST_CASE("distance metrics satisfy the triangle inequality") {
    auto a = test::randu({3, 8, 8}, 1), b = test::randu({3, 8, 8}, 2), c = test::randu({3, 8, 8}, 3);
    CHECK(rmse(a, c) <= rmse(a, b) + rmse(b, c));
    CHECK(mae(a, c) <= mae(a, b) + mae(b, c));
    CHECK(rmse(a, b) == rmse(b, a));
  }

  TEST_CASE("proxy perceptual distance") {
    auto ex = std::make_shared<RandomConvExtractor>(1, std::vector<int64_t>{4, 8});
    ProxyPerceptualDistance d(ex);
    auto x = test::randu({3, 16, 16}, 4, torch::kFloat), y = test::randu({3, 16, 16}, 5, torch::kFloat);
    CHECK(d.distance(x, x) == 0.0);
    CHECK(d.distance(x, y) > 0.0);
    CHECK(d.distance(x, y) == doctest::Approx(d.distance(y, x)));
    CHECK(d.name() == "lpips_proxy");
  }

  TEST_CASE("mask-ratio buckets are upper-inclusive") {
    const std::vector<double> r{0.15, 0.10, 0.6, 0.61, 0.0, 0.05};
    auto g = bucket_by_mask_ratio(r);
    REQUIRE(g.buckets.size() == 6);
    CHECK(g.buckets[1] == std::vector<size_t>{0});
    CHECK(g.buckets[0] == std::vector<size_t>{1, 5});
    CHECK(g.buckets[5] == std::vector<size_t>{2});
    CHECK(g.out_of_range == std::vector<size_t>{3});
    CHECK(g.excluded == std::vector<size_t>{4});
    CHECK(BucketSpec::standard().buckets[3].label == "30-40%");

    auto u = test::randu({100}, 9) * 0.6;
    std::vector<double> rs(u.data_ptr<double>(), u.data_ptr<double>() + 100);
    auto g2 = bucket_by_mask_ratio(rs);
    size_t total = 0;
    for (size_t b = 0; b < 6; ++b) {
      total += g2.buckets[b].size();
      for (size_t i : g2.buckets[b]) CHECK(static_cast<size_t>(std::ceil(rs[i] * 10.0)) - 1 == b);
    }
    CHECK(total == 100);
  }

  TEST_CASE("ground truth scored against itself gives the fixed points in every bucket") {
    const auto samples = bucket_samples();
    auto ex = std::make_shared<RandomConvExtractor>(1, std::vector<int64_t>{4, 8});
    ProxyPerceptualDistance proxy(ex);
    Inpainter identity = [](const torch::Tensor& gt, const torch::Tensor&) { return gt.clone(); };
    auto t = evaluate_samples(samples, identity, &proxy);
    REQUIRE(t.rows.size() == 7);
    for (size_t b = 0; b < 6; ++b) {
      CHECK(t.rows[b].count == (b == 0 ? 2u : 1u));
      CHECK(t.rows[b].psnr == 100.0);
      CHECK(t.rows[b].ssim == doctest::Approx(1.0).epsilon(1e-12));
      CHECK(t.rows[b].mae == 0.0);
      CHECK(t.rows[b].rmse == 0.0);
      CHECK(*t.rows[b].lpips == 0.0);
    }
    CHECK(t.rows[6].bucket == "average");
    CHECK(t.rows[6].count == 7);

    const auto csv = lines(t.to_csv());
    REQUIRE(csv.size() == 8);
    CHECK(csv[0] == "bucket,count,psnr_db_peak1,ssim,mae,rmse_255,lpips_proxy");
    CHECK(csv[1].rfind("0-10%,2,100.0000,", 0) == 0);
    CHECK(csv[6].rfind("50-60%,1,", 0) == 0);
    CHECK(csv[7].rfind("average,7,", 0) == 0);
  }

  TEST_CASE("evaluation composites the prediction and is repeatable") {
    const auto samples = bucket_samples();
    Inpainter noisy = [](const torch::Tensor& gt, const torch::Tensor& m) {
      return (gt + 0.3 * test::randn({3, gt.size(1), gt.size(2)}, 77) * m).clamp(0, 1);
    };
    auto a = evaluate_samples(samples, noisy).to_csv();
    auto b = evaluate_samples(samples, noisy).to_csv();
    CHECK(a == b);
    CHECK(a.find("n/a") != std::string::npos);  // no perceptual column
    // Predictions outside the hole are ignored.
    Inpainter garbage = [](const torch::Tensor& gt, const torch::Tensor& m) { return gt * m; };
    auto t = evaluate_samples(samples, garbage);
    CHECK(t.rows.back().psnr == 100.0);
  }

  TEST_CASE("empty buckets print n/a and out-of-range samples get their own row") {
    std::vector<EvalSample> s{{"a", test::randu({3, 16, 16}, 1), prefix_mask(200)},
                              {"b", test::randu({3, 16, 16}, 2), prefix_mask(0)}};
    Inpainter identity = [](const torch::Tensor& gt, const torch::Tensor&) { return gt; };
    auto t = evaluate_samples(s, identity);
    REQUIRE(t.rows.size() == 8);
    CHECK(t.rows[6].bucket == "out-of-range");
    CHECK(t.rows[7].count == 1);
    const auto csv = lines(t.to_csv());
    CHECK(csv[1] == "0-10%,0,n/a,n/a,n/a,n/a,n/a");
  }

  TEST_CASE("ISODATA on identical points yields one cluster") {
    auto pts = torch::ones({20, 3}, torch::kDouble);
    auto r = isodata_cluster(pts, {});
    CHECK(r.centers.size(0) == 1);
    for (int l : r.labels) CHECK(l == 0);
    CHECK(torch::equal(r.centers[0], torch::ones({3}, torch::kDouble)));
  }

  TEST_CASE("ISODATA separates two blobs and agrees with nearest-centroid assignment") {
    auto a = test::randn({40, 2}, 1) * 0.1;
    auto b = test::randn({40, 2}, 2) * 0.1 + 10.0;
    auto pts = torch::cat({a, b});
    IsodataOptions o;
    o.k_init = 4;
    o.split_std = 2.0;
    o.merge_dist = 3.0;
    auto r = isodata_cluster(pts, o);
    REQUIRE(r.centers.size(0) == 2);
    CHECK(r.labels[0] != r.labels[40]);
    for (int i = 0; i < 80; ++i) {
      // Independent oracle: squared distance to each returned center.
      int best = 0;
      double bd = 1e300;
      for (int k = 0; k < r.centers.size(0); ++k) {
        const double d = (pts[i] - r.centers[k]).pow(2).sum().item<double>();
        if (d < bd) bd = d, best = k;
      }
      CHECK(r.labels[i] == best);
      CHECK(r.labels[i] == r.labels[i < 40 ? 0 : 40]);
    }
    auto again = isodata_cluster(pts, o);
    CHECK(again.labels == r.labels);
    CHECK(torch::equal(again.centers, r.centers));
  }

  TEST_CASE("ISODATA labels form a partition with contiguous ids") {
    auto pts = test::randn({60, 4}, 3);
    IsodataOptions o;
    o.k_init = 5;
    o.min_samples = 3;
    auto r = isodata_cluster(pts, o);
    const int K = static_cast<int>(r.centers.size(0));
    REQUIRE(r.labels.size() == 60);
    std::set<int> seen(r.labels.begin(), r.labels.end());
    CHECK(static_cast<int>(seen.size()) == K);
    CHECK(*seen.begin() == 0);
    CHECK(*seen.rbegin() == K - 1);

    o.k_init = 0;
    CHECK_THROWS_AS(isodata_cluster(pts, o), ConfigError);
    CHECK_THROWS_AS(isodata_cluster(torch::zeros({4}), {}), ShapeError);
    auto map = isodata_cluster_map(test::randn({1, 4, 5, 6}, 4), {});
    CHECK(map.labels.size() == 30);
  }
}
