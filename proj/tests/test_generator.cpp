#include <doctest.h>

#include <cmath>

#include "mfn/errors.hpp"
#include "mfn/generator.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace mfn;
using namespace mfn::oracle;
using torch::indexing::Slice;

namespace {

std::vector<torch::Tensor> with_params(std::vector<torch::Tensor> inputs, torch::nn::Module& m) {
  auto p = test::double_params(m);
  inputs.insert(inputs.end(), p.begin(), p.end());
  return inputs;
}

GeneratorOptions toy_options() {
  GeneratorOptions o;
  o.encoder_channels = {16, 32, 32, 32};
  o.prior_channels = 16;
  o.lpt_hidden = 16;
  return o;
}

PriorPyramid priors_for(int64_t h, int64_t w, int64_t c, uint64_t seed, torch::Dtype dt = torch::kFloat) {
  PriorPyramid p;
  for (int64_t s : {8, 4, 2}) p.levels.push_back(test::randn({1, c, (h + s - 1) / s, (w + s - 1) / s}, seed++, dt));
  return p;
}

}  // namespace

TEST_SUITE("generator") {
  TEST_CASE("region normalization hand case") {
    auto f = torch::tensor({2.0, 4.0, 4.0, 8.0}, torch::kDouble).view({1, 1, 2, 2});
    auto m = torch::tensor({1.0, 0.0, 1.0, 0.0}, torch::kDouble).view({1, 1, 2, 2});
    auto out = region_normalize(f, m, 0.0);
    auto expect = torch::tensor({-1.0, -1.0, 1.0, 1.0}, torch::kDouble).view({1, 1, 2, 2});
    CHECK(torch::equal(out, expect));
  }

  TEST_CASE("region normalization falls back to global statistics for an empty region") {
    auto f = test::randn({2, 3, 4, 4}, 1);
    auto none = torch::zeros({2, 1, 4, 4}, torch::kDouble);
    auto out = region_normalize(f, none, 1e-5);
    auto mean = f.mean({2, 3}, true);
    auto var = (f - mean).pow(2).mean({2, 3}, true);
    CHECK(torch::allclose(out, (f - mean) / torch::sqrt(var + 1e-5), 1e-12, 1e-12));
    CHECK(torch::allclose(region_normalize(f, torch::ones_like(none), 1e-5), out, 1e-12, 1e-12));
    // Each region ends up zero-mean.
    auto m = (test::randu({2, 1, 4, 4}, 2) > 0.5).to(torch::kDouble);
    auto rn = region_normalize(f, m, 1e-5);
    auto in_hole = (rn * m).sum({2, 3});
    CHECK(in_hole.abs().max().item<double>() < 1e-9);
  }

  TEST_CASE("attention scores are row-stochastic and positive") {
    auto f = test::randn({2, 8, 4, 4}, 3, torch::kFloat);
    auto s = attention_scores(f);
    CHECK(s.scores.sizes() == torch::IntArrayRef{2, 16, 16});
    CHECK((s.scores.sum(-1) - 1).abs().max().item<double>() < 1e-5);
    CHECK(s.scores.min().item<double>() > 0.0);
    // A zero patch has zero similarity with everything: its row is uniform.
    auto z = attention_scores_from_patches(torch::zeros({1, 3, 5}));
    CHECK(torch::allclose(z, torch::full({1, 3, 3}, 1.0 / 3.0)));
  }

  TEST_CASE("2x2 bottleneck scores match a brute-force oracle") {
    for (uint64_t seed = 0; seed < 5; ++seed) {
      auto f = test::randn({1, 4, 2, 2}, 10 + seed);
      auto s = attention_scores(f).scores[0];
      auto oracle = brute_scores(f[0]);
      CHECK((s - oracle).abs().max().item<double>() < 1e-6);
    }
  }

  TEST_CASE("one-hot, permutation and uniform transfer identities are exact") {
    // Dyadic values keep every sum exact in floating point.
    auto f = (torch::randint(-8, 8, {1, 3, 4, 4}, torch::kLong).to(torch::kFloat)) / 4.0;
    AttentionScores eye{torch::eye(4).unsqueeze(0), 2, 2};
    CHECK(torch::equal(attention_transfer(eye, f), f));

    // Scores row i picks block perm[i].
    const int64_t perm[4] = {2, 0, 3, 1};
    auto p = torch::zeros({1, 4, 4});
    for (int i = 0; i < 4; ++i) p[0][i][perm[i]] = 1;
    auto out = attention_transfer({p, 2, 2}, f);
    auto block = [](const torch::Tensor& t, int64_t i) {
      return t.index({Slice(), Slice(), Slice((i / 2) * 2, (i / 2) * 2 + 2), Slice((i % 2) * 2, (i % 2) * 2 + 2)});
    };
    for (int i = 0; i < 4; ++i) CHECK(torch::equal(block(out, i), block(f, perm[i])));

    auto uniform = attention_transfer({torch::full({1, 4, 4}, 0.25), 2, 2}, f);
    auto mean = (block(f, 0) + block(f, 1) + block(f, 2) + block(f, 3)) / 4.0;
    for (int i = 0; i < 4; ++i) CHECK(torch::equal(block(uniform, i), mean));
  }

  TEST_CASE("attention transfer is linear and checks its grid") {
    auto s = attention_scores(test::randn({1, 4, 2, 2}, 20));
    auto a = test::randn({1, 3, 8, 8}, 21), b = test::randn({1, 3, 8, 8}, 22);
    CHECK(torch::allclose(attention_transfer(s, 2.0 * a - 3.0 * b),
                          2.0 * attention_transfer(s, a) - 3.0 * attention_transfer(s, b), 1e-12, 1e-12));
    CHECK_THROWS_AS(attention_transfer(s, torch::zeros({1, 3, 5, 8})), ShapeError);
    CHECK_THROWS_AS(attention_transfer(s, torch::zeros({2, 3, 4, 4})), ShapeError);
  }

  TEST_CASE("LPT with identity modulation reduces to region normalization") {
    torch::manual_seed(4);
    Lpt lpt(3, 2, 4, 1e-5);
    lpt->set_identity_modulation();
    auto f = test::randn({1, 3, 4, 4}, 23, torch::kFloat);
    auto m = (test::randu({1, 1, 4, 4}, 24, torch::kFloat) > 0.5).to(torch::kFloat);
    auto out = lpt->forward(f, test::randn({1, 2, 2, 2}, 25, torch::kFloat), m);
    CHECK(torch::allclose(out, region_normalize(f, m, 1e-5), 1e-6, 1e-6));
    CHECK_THROWS_AS(lpt->forward(torch::zeros({1, 4, 4, 4}), torch::zeros({1, 2, 2, 2}), m), ShapeError);
  }

  TEST_CASE("gradients: region normalization") {
    auto f = test::leaf(test::randn({2, 2, 4, 4}, 30));
    auto m = torch::zeros({2, 1, 4, 4}, torch::kDouble);
    m.index_put_({Slice(), Slice(), Slice(0, 2), Slice()}, 1.0);
    auto r = test::gradcheck([&] { return region_normalize(f, m, 1e-5); }, {f});
    INFO(r.where);
    CHECK(r.ok);
  }

  TEST_CASE("gradients: LPT") {
    torch::manual_seed(5);
    Lpt lpt(3, 2, 4, 1e-5);
    auto f = test::leaf(test::randn({1, 3, 4, 4}, 31));
    auto s = test::leaf(test::randn({1, 2, 2, 2}, 32));
    auto m = torch::zeros({1, 1, 4, 4}, torch::kDouble);
    m.index_put_({0, 0, Slice(1, 3), Slice(1, 3)}, 1.0);
    auto r = test::gradcheck([&] { return lpt->forward(f, s, m); }, with_params({f, s}, *lpt));
    INFO(r.where);
    CHECK(r.ok);
  }

  TEST_CASE("gradients: multi-LPT bottleneck") {
    torch::manual_seed(6);
    Bottleneck b(4, 3, 4, 1e-5, true);
    CHECK(b->block_count() == kBottleneckBlocks);
    auto f = test::leaf(test::randn({1, 4, 2, 2}, 33));
    auto s = test::leaf(test::randn({1, 3, 2, 2}, 34));
    auto m = torch::tensor({1.0, 0.0, 1.0, 0.0}, torch::kDouble).view({1, 1, 2, 2});
    auto r = test::gradcheck([&] { return b->forward(f, s, m); }, with_params({f, s}, *b));
    INFO(r.where);
    CHECK(r.ok);
  }

  TEST_CASE("gradients: full toy generator at 8x8") {
    torch::manual_seed(7);
    Generator g(toy_options());
    g->to(torch::kDouble);
    auto img = test::leaf(test::randn({1, 3, 8, 8}, 35) * 0.5);
    auto m = torch::zeros({1, 1, 8, 8}, torch::kDouble);
    m.index_put_({0, 0, Slice(2, 6), Slice(3, 7)}, 1.0);
    auto pri = priors_for(8, 8, 16, 36, torch::kDouble);
    std::vector<torch::Tensor> inputs{img};
    for (auto& l : pri.levels) {
      l = test::leaf(l);
      inputs.push_back(l);
    }
    for (const auto& kv : g->named_parameters())
      if (kv.key() == "enc1.weight" || kv.key() == "to_rgb.weight" || kv.key() == "bottleneck.fusion0.lpt.beta.weight")
        inputs.push_back(kv.value());
    REQUIRE(inputs.size() == 7);
    auto r = test::gradcheck([&] { return g->forward(img, m, pri).output; }, inputs);
    INFO(r.where);
    CHECK(r.ok);
  }

  TEST_CASE("toy generator forward shapes") {
    torch::manual_seed(8);
    Generator g(toy_options());
    auto img = test::randn({2, 3, 64, 64}, 40, torch::kFloat).clamp(-1, 1);
    auto m = torch::zeros({2, 1, 64, 64});
    m.index_put_({Slice(), Slice(), Slice(10, 40), Slice(20, 50)}, 1.0);
    auto p = priors_for(64, 64, 16, 41);
    p.levels = {p.levels[0].expand({2, -1, -1, -1}), p.levels[1].expand({2, -1, -1, -1}),
                p.levels[2].expand({2, -1, -1, -1})};
    auto st = g->forward(img, m, p);
    CHECK(st.output.sizes() == torch::IntArrayRef{2, 3, 64, 64});
    CHECK(st.output.abs().max().item<double>() <= 1.0);
    CHECK(st.attention.scores.sizes() == torch::IntArrayRef{2, 16, 16});
    REQUIRE(st.attention_maps.size() == 3);
    CHECK(st.attention_maps[0].sizes() == torch::IntArrayRef{2, 32, 8, 8});
    CHECK(st.attention_maps[2].sizes() == torch::IntArrayRef{2, 16, 32, 32});
    CHECK(st.bottleneck.sizes() == torch::IntArrayRef{2, 32, 4, 4});
    CHECK(g->bottleneck()->block_count() == 8);

    // Non-multiple sizes are rejected by the transfer.
    CHECK_THROWS_AS(g->forward(torch::zeros({1, 3, 40, 24}), torch::zeros({1, 1, 40, 24}), priors_for(40, 24, 16, 42)),
                    ShapeError);
    CHECK_THROWS_AS(g->forward(img, m, PriorPyramid{{p.levels[0]}}), ShapeError);
  }

  TEST_CASE("composite keeps known pixels") {
    auto pred = test::randu({1, 3, 4, 4}, 50), gt = test::randu({1, 3, 4, 4}, 51);
    auto m = (test::randu({1, 1, 4, 4}, 52) > 0.5).to(torch::kDouble);
    auto c = composite_output(pred, gt, m);
    CHECK(torch::equal(c * (1 - m), gt * (1 - m)));
    CHECK(torch::equal(c * m, pred * m));
  }
}
