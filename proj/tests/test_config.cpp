#include <doctest.h>

#include "mfn/config.hpp"
#include "mfn/errors.hpp"

using namespace mfn;

TEST_SUITE("config") {
  TEST_CASE("defaults follow the published training setup") {
    const Config c;
    CHECK(c.data.overlap_threshold == 0.5);
    CHECK(c.data.moving_ratio_max == 0.05);
    CHECK(c.data.train_crop == Size2{512, 512});
    CHECK(c.data.test_size == Size2{512, 1024});
    CHECK(c.loss.alpha == 1.0);
    CHECK(c.loss.lambda_rec == 1.0);
    CHECK(c.loss.lambda_perc == 0.5);
    CHECK(c.loss.lambda_style == 250.0);
    CHECK(c.loss.lambda_adv == 0.01);
    CHECK(c.train.adam_beta1 == 0.0);
    CHECK(c.train.adam_beta2 == 0.99);
    CHECK(c.train.batch_size == 8);
    CHECK(c.train.lr_init == 1e-4);
    CHECK(c.train.lr_final == 1e-5);
    CHECK(c.train.max_iters == 200000);
    CHECK(c.train.decay_window == 20000);
    CHECK(c.train.ablation == Ablation::none);
  }

  TEST_CASE("ini round trip is exact") {
    for (const Config& c : {Config{}, toy_config()}) {
      const auto text = to_ini(c);
      CHECK(to_ini(parse_config(text)) == text);
      CHECK(config_hash(parse_config(text)) == config_hash(c));
    }
  }

  TEST_CASE("missing keys keep defaults") {
    const auto c = parse_config("[train]\nbatch_size=4\n");
    CHECK(c.train.batch_size == 4);
    CHECK(c.train.lr_init == 1e-4);
    CHECK(c.data.overlap_threshold == 0.5);
  }

  TEST_CASE("unknown keys, sections and values are rejected") {
    CHECK_THROWS_AS(parse_config("[train]\nbath_size=4\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("[optim]\nlr=1\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("[train]\nbatch_size=four\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("[train]\nablation=no_gan\n"), ConfigError);
  }

  TEST_CASE("invariants are validated") {
    CHECK_THROWS_AS(parse_config("[train]\nmax_iters=10\ndecay_window=20\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("[train]\nlr_init=1e-5\nlr_final=1e-4\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("[data]\noverlap_threshold=1.5\n"), ConfigError);
    CHECK_THROWS_AS(load_config("/nonexistent/mfn.ini"), ConfigError);
  }

  TEST_CASE("ablation names") {
    for (auto a : {Ablation::none, Ablation::no_semantic_supervision, Ablation::no_lpt, Ablation::no_multiscale,
                   Ablation::no_attention_transfer, Ablation::no_spa})
      CHECK(parse_ablation(to_string(a)) == a);
    CHECK_THROWS_AS(parse_ablation("no_everything"), ConfigError);
  }

  TEST_CASE("config hash tracks numerics only") {
    Config a, b;
    b.train.checkpoint_every = 7;
    CHECK(config_hash(a) == config_hash(b));
    b.train.lr_init = 2e-4;
    CHECK(config_hash(a) != config_hash(b));
  }

  TEST_CASE("toy preset stays small") {
    const auto c = toy_config();
    CHECK(c.train.max_iters <= 1000);
    CHECK(c.data.train_crop == Size2{64, 64});
    CHECK_NOTHROW(validate(c));
  }
}
