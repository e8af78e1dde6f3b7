#include "mfn/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <fstream>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>

#include "mfn/errors.hpp"

namespace mfn {
namespace {

namespace pt = boost::property_tree;

constexpr std::pair<Ablation, std::string_view> kAblationNames[] = {
    {Ablation::none, "none"},
    {Ablation::no_semantic_supervision, "no_semantic_supervision"},
    {Ablation::no_lpt, "no_lpt"},
    {Ablation::no_multiscale, "no_multiscale"},
    {Ablation::no_attention_transfer, "no_attention_transfer"},
    {Ablation::no_spa, "no_spa"},
};

std::string fmt_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

template <typename T>
std::string join(const std::vector<T>& values) {
  std::ostringstream os;
  for (size_t i = 0; i < values.size(); ++i) {
    if (i) os << ',';
    os << values[i];
  }
  return os.str();
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    auto b = item.find_first_not_of(" \t");
    auto e = item.find_last_not_of(" \t");
    if (b == std::string::npos) continue;
    out.push_back(item.substr(b, e - b + 1));
  }
  return out;
}

// Reads typed values out of one INI section and remembers which keys were
// consumed so leftovers can be reported.
class Section {
 public:
  Section(const pt::ptree* tree, std::string name) : tree_(tree), name_(std::move(name)) {}

  template <typename T>
  void read(const std::string& key, T& out) {
    used_.insert(key);
    if (!tree_) return;
    auto v = tree_->get_optional<std::string>(key);
    if (!v) return;
    try {
      if constexpr (std::is_same_v<T, std::string>) {
        out = *v;
      } else if constexpr (std::is_same_v<T, bool>) {
        out = (*v == "true" || *v == "1");
      } else if constexpr (std::is_floating_point_v<T>) {
        out = std::stod(*v);
      } else if constexpr (std::is_unsigned_v<T>) {
        out = static_cast<T>(std::stoull(*v));
      } else {
        out = static_cast<T>(std::stoll(*v));
      }
    } catch (const std::exception&) {
      throw ConfigError("config [" + name_ + "] " + key + ": cannot parse '" + *v + "'");
    }
  }

  void read_int_list(const std::string& key, std::vector<int64_t>& out) {
    std::string raw;
    read(key, raw);
    if (raw.empty()) return;
    out.clear();
    for (const auto& item : split_list(raw)) {
      try {
        out.push_back(std::stoll(item));
      } catch (const std::exception&) {
        throw ConfigError("config [" + name_ + "] " + key + ": bad integer '" + item + "'");
      }
    }
  }

  void read_string_list(const std::string& key, std::vector<std::string>& out) {
    std::string raw;
    read(key, raw);
    if (!raw.empty()) out = split_list(raw);
  }

  void read_size(const std::string& key, Size2& out) {
    std::vector<int64_t> hw;
    read_int_list(key, hw);
    if (hw.empty()) return;
    if (hw.size() != 2) throw ConfigError("config [" + name_ + "] " + key + ": expected height,width");
    out = {hw[0], hw[1]};
  }

  void reject_unknown() const {
    if (!tree_) return;
    for (const auto& [key, _] : *tree_) {
      if (!used_.count(key)) throw ConfigError("config [" + name_ + "]: unknown key '" + key + "'");
    }
  }

 private:
  const pt::ptree* tree_;
  std::string name_;
  std::set<std::string> used_;
};

}  // namespace

Ablation parse_ablation(std::string_view name) {
  for (const auto& [value, text] : kAblationNames) {
    if (text == name) return value;
  }
  throw ConfigError("unknown ablation flag '" + std::string(name) +
                    "' (expected one of none, no_semantic_supervision, no_lpt, "
                    "no_multiscale, no_attention_transfer, no_spa)");
}

std::string_view to_string(Ablation ablation) {
  for (const auto& [value, text] : kAblationNames) {
    if (value == ablation) return text;
  }
  return "none";
}

Config parse_config(const std::string& text) {
  pt::ptree root;
  try {
    std::istringstream in(text);
    pt::read_ini(in, root);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("config parse error: ") + e.what());
  }
  static const std::set<std::string> kSections{"data", "model", "pretext", "loss", "train"};
  for (const auto& [name, _] : root) {
    if (!kSections.count(name)) throw ConfigError("config: unknown section [" + name + "]");
  }
  auto section = [&](const std::string& name) {
    auto child = root.get_child_optional(name);
    return Section(child ? &*child : nullptr, name);
  };

  Config c;
  {
    auto s = section("data");
    s.read("moving_ratio_max", c.data.moving_ratio_max);
    s.read("overlap_threshold", c.data.overlap_threshold);
    s.read_size("train_crop", c.data.train_crop);
    s.read_size("test_size", c.data.test_size);
    s.read("seed", c.data.seed);
    s.read("templates_min", c.data.templates_min);
    s.read("templates_max", c.data.templates_max);
    s.read("template_scale_min", c.data.template_scale_min);
    s.read("template_scale_max", c.data.template_scale_max);
    s.read_string_list("moving_classes", c.data.moving_classes);
    s.reject_unknown();
  }
  {
    auto s = section("model");
    s.read_int_list("encoder_channels", c.model.encoder_channels);
    s.read("prompter_channels", c.model.prompter_channels);
    s.read("prior_channels", c.model.prior_channels);
    s.read("prompter_depth", c.model.prompter_depth);
    s.read("prompter_levels", c.model.prompter_levels);
    s.read("lpt_hidden", c.model.lpt_hidden);
    s.read("disc_channels", c.model.disc_channels);
    s.read("rn_eps", c.model.rn_eps);
    s.read("init_seed", c.model.init_seed);
    s.reject_unknown();
  }
  {
    auto s = section("pretext");
    s.read("seed", c.pretext.seed);
    s.read_int_list("channels", c.pretext.channels);
    s.reject_unknown();
  }
  {
    auto s = section("loss");
    s.read("alpha", c.loss.alpha);
    s.read("lambda_rec", c.loss.lambda_rec);
    s.read("lambda_perc", c.loss.lambda_perc);
    s.read("lambda_style", c.loss.lambda_style);
    s.read("lambda_adv", c.loss.lambda_adv);
    s.read("sigma_kernel", c.loss.sigma_kernel);
    s.read("sigma_std", c.loss.sigma_std);
    s.reject_unknown();
  }
  {
    auto s = section("train");
    s.read("batch_size", c.train.batch_size);
    s.read("max_iters", c.train.max_iters);
    s.read("lr_init", c.train.lr_init);
    s.read("lr_final", c.train.lr_final);
    s.read("decay_window", c.train.decay_window);
    s.read("adam_beta1", c.train.adam_beta1);
    s.read("adam_beta2", c.train.adam_beta2);
    s.read("seed", c.train.seed);
    s.read("checkpoint_every", c.train.checkpoint_every);
    s.read("warmup_iters", c.train.warmup_iters);
    std::string ablation = "none";
    s.read("ablation", ablation);
    c.train.ablation = parse_ablation(ablation);
    s.reject_unknown();
  }
  validate(c);
  return c;
}

Config load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_config(buffer.str());
}

std::string to_ini(const Config& c) {
  std::ostringstream os;
  os << "[data]\n"
     << "moving_ratio_max=" << fmt_double(c.data.moving_ratio_max) << '\n'
     << "overlap_threshold=" << fmt_double(c.data.overlap_threshold) << '\n'
     << "train_crop=" << c.data.train_crop.height << ',' << c.data.train_crop.width << '\n'
     << "test_size=" << c.data.test_size.height << ',' << c.data.test_size.width << '\n'
     << "seed=" << c.data.seed << '\n'
     << "templates_min=" << c.data.templates_min << '\n'
     << "templates_max=" << c.data.templates_max << '\n'
     << "template_scale_min=" << fmt_double(c.data.template_scale_min) << '\n'
     << "template_scale_max=" << fmt_double(c.data.template_scale_max) << '\n'
     << "moving_classes=" << join(c.data.moving_classes) << '\n'
     << "\n[model]\n"
     << "encoder_channels=" << join(c.model.encoder_channels) << '\n'
     << "prompter_channels=" << c.model.prompter_channels << '\n'
     << "prior_channels=" << c.model.prior_channels << '\n'
     << "prompter_depth=" << c.model.prompter_depth << '\n'
     << "prompter_levels=" << c.model.prompter_levels << '\n'
     << "lpt_hidden=" << c.model.lpt_hidden << '\n'
     << "disc_channels=" << c.model.disc_channels << '\n'
     << "rn_eps=" << fmt_double(c.model.rn_eps) << '\n'
     << "init_seed=" << c.model.init_seed << '\n'
     << "\n[pretext]\n"
     << "seed=" << c.pretext.seed << '\n'
     << "channels=" << join(c.pretext.channels) << '\n'
     << "\n[loss]\n"
     << "alpha=" << fmt_double(c.loss.alpha) << '\n'
     << "lambda_rec=" << fmt_double(c.loss.lambda_rec) << '\n'
     << "lambda_perc=" << fmt_double(c.loss.lambda_perc) << '\n'
     << "lambda_style=" << fmt_double(c.loss.lambda_style) << '\n'
     << "lambda_adv=" << fmt_double(c.loss.lambda_adv) << '\n'
     << "sigma_kernel=" << c.loss.sigma_kernel << '\n'
     << "sigma_std=" << fmt_double(c.loss.sigma_std) << '\n'
     << "\n[train]\n"
     << "batch_size=" << c.train.batch_size << '\n'
     << "max_iters=" << c.train.max_iters << '\n'
     << "lr_init=" << fmt_double(c.train.lr_init) << '\n'
     << "lr_final=" << fmt_double(c.train.lr_final) << '\n'
     << "decay_window=" << c.train.decay_window << '\n'
     << "adam_beta1=" << fmt_double(c.train.adam_beta1) << '\n'
     << "adam_beta2=" << fmt_double(c.train.adam_beta2) << '\n'
     << "seed=" << c.train.seed << '\n'
     << "checkpoint_every=" << c.train.checkpoint_every << '\n'
     << "warmup_iters=" << c.train.warmup_iters << '\n'
     << "ablation=" << to_string(c.train.ablation) << '\n';
  return os.str();
}

uint64_t config_hash(const Config& config) {
  Config canonical = config;
  canonical.train.checkpoint_every = 0;  // cadence does not change numerics
  const std::string text = to_ini(canonical);
  // FNV-1a, 64 bit.
  uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  return h;
}

void validate(const Config& c) {
  auto fail = [](const std::string& msg) { throw ConfigError("invalid config: " + msg); };
  const auto& d = c.data;
  if (!(d.moving_ratio_max > 0.0 && d.moving_ratio_max < 1.0)) fail("data.moving_ratio_max must be in (0,1)");
  if (!(d.overlap_threshold >= 0.0 && d.overlap_threshold <= 1.0)) fail("data.overlap_threshold must be in [0,1]");
  if (d.train_crop.height <= 0 || d.train_crop.width <= 0) fail("data.train_crop must be positive");
  if (d.test_size.height <= 0 || d.test_size.width <= 0) fail("data.test_size must be positive");
  if (d.templates_min < 1 || d.templates_max < d.templates_min) fail("data.templates_min/max out of order");
  if (!(d.template_scale_min > 0.0 && d.template_scale_min <= d.template_scale_max && d.template_scale_max <= 1.0))
    fail("data.template_scale_min/max must satisfy 0 < min <= max <= 1");

  const auto& m = c.model;
  if (m.encoder_channels.size() != 4) fail("model.encoder_channels needs four entries (strides 2,4,8,16)");
  for (auto ch : m.encoder_channels)
    if (ch <= 0) fail("model.encoder_channels must be positive");
  if (m.prompter_channels <= 0 || m.prompter_channels % 4 != 0) fail("model.prompter_channels must be a positive multiple of 4");
  if (m.prior_channels <= 0) fail("model.prior_channels must be positive");
  if (m.prompter_depth < 0) fail("model.prompter_depth must be >= 0");
  if (m.prompter_levels != 3) fail("model.prompter_levels must be 3 (strides 8,4,2)");
  if (m.lpt_hidden <= 0 || m.disc_channels <= 0) fail("model.lpt_hidden and model.disc_channels must be positive");
  if (!(m.rn_eps > 0.0)) fail("model.rn_eps must be positive");

  if (c.pretext.channels.size() != static_cast<size_t>(m.prompter_levels))
    fail("pretext.channels needs one entry per prior level");

  const auto& l = c.loss;
  for (double w : {l.alpha, l.lambda_rec, l.lambda_perc, l.lambda_style, l.lambda_adv})
    if (!(w >= 0.0)) fail("loss weights must be non-negative");
  if (l.sigma_kernel < 1 || l.sigma_kernel % 2 == 0) fail("loss.sigma_kernel must be odd and positive");
  if (!(l.sigma_std > 0.0)) fail("loss.sigma_std must be positive");

  const auto& t = c.train;
  if (t.batch_size < 1) fail("train.batch_size must be >= 1");
  if (t.max_iters < 1) fail("train.max_iters must be >= 1");
  if (t.decay_window < 0 || t.decay_window > t.max_iters) fail("train.decay_window must be in [0, max_iters]");
  if (!(t.lr_final > 0.0 && t.lr_final <= t.lr_init)) fail("train requires 0 < lr_final <= lr_init");
  if (!(t.adam_beta1 >= 0.0 && t.adam_beta1 < 1.0 && t.adam_beta2 > 0.0 && t.adam_beta2 < 1.0))
    fail("train.adam betas must be in [0,1)");
  if (t.checkpoint_every < 0) fail("train.checkpoint_every must be >= 0");
  if (t.warmup_iters < 0 || t.warmup_iters > t.max_iters) fail("train.warmup_iters must be in [0, max_iters]");
}

Config toy_config() {
  Config c;
  c.data.train_crop = {64, 64};
  c.data.test_size = {64, 64};
  c.model.encoder_channels = {16, 32, 32, 32};
  c.model.prompter_channels = 16;
  c.model.prior_channels = 16;
  c.model.prompter_depth = 1;
  c.model.lpt_hidden = 16;
  c.model.disc_channels = 16;
  c.pretext.channels = {8, 16, 16};
  // The stub extractor's Gram statistics are not VGG's; 250 drowns the
  // reconstruction term at this scale.
  c.loss.lambda_style = 100.0;
  c.train.max_iters = 300;
  c.train.lr_init = 5e-4;
  // Decay over the final tenth of the run, as in the full schedule.
  c.train.decay_window = 30;
  c.train.checkpoint_every = 100;
  return c;
}

}  // namespace mfn
