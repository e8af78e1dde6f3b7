#include <cstring>
#include <fstream>
#include <map>

#include <json.hpp>

#include "mfn/errors.hpp"
#include "mfn/training.hpp"

namespace mfn {
namespace {

using json = nlohmann::json;

constexpr char kMagic[8] = {'M', 'F', 'N', 'C', 'K', 'P', 'T', '\0'};

const std::map<std::string, torch::Dtype>& dtype_table() {
  static const std::map<std::string, torch::Dtype> table{
      {"float32", torch::kFloat}, {"float64", torch::kDouble}, {"int64", torch::kLong},
      {"int32", torch::kInt},     {"uint8", torch::kByte},     {"bool", torch::kBool}};
  return table;
}

std::string dtype_name(torch::Dtype t) {
  for (const auto& [name, dt] : dtype_table())
    if (dt == t) return name;
  throw DataError(std::string("checkpoint: unsupported tensor dtype ") + c10::toString(t));
}

// Name -> tensor lookup over the whole model, parameters first.
std::map<std::string, torch::Tensor> model_state(const InpaintingModel& model) {
  std::map<std::string, torch::Tensor> out;
  for (auto& [name, t] : model.named_state()) out.emplace(name, t);
  return out;
}

void load_model_state(InpaintingModel& model, const std::map<std::string, torch::Tensor>& stored) {
  torch::NoGradGuard guard;
  for (auto& [name, t] : model.named_state()) {
    auto it = stored.find(name);
    if (it == stored.end()) throw DataError("checkpoint is missing tensor '" + name + "'");
    if (!it->second.sizes().equals(t.sizes()))
      throw DataError("checkpoint tensor '" + name + "' has the wrong shape");
    t.copy_(it->second);
  }
}

std::map<std::string, torch::Tensor> as_map(const Checkpoint& ck) {
  return {ck.tensors.begin(), ck.tensors.end()};
}

torch::optim::Adam& optimizer_for(Trainer& trainer, const std::string& name) {
  return name.rfind("discriminator.", 0) == 0 ? trainer.optimizer_d() : trainer.optimizer_g();
}

}  // namespace

Checkpoint capture(Trainer& trainer) {
  Checkpoint ck;
  ck.iteration = trainer.iteration();
  ck.config_hash = config_hash(trainer.config());
  ck.config_text = to_ini(trainer.config());
  auto& model = trainer.model();
  for (auto& [name, t] : model.named_state()) ck.tensors.emplace_back(name, t.detach().clone());
  const auto state = model_state(model);
  for (const auto& name : model.parameter_names()) {
    auto& opt = optimizer_for(trainer, name);
    auto it = opt.state().find(state.at(name).unsafeGetTensorImpl());
    if (it == opt.state().end()) continue;
    const auto& s = static_cast<const torch::optim::AdamParamState&>(*it->second);
    ck.adam_steps.emplace_back(name, s.step());
    ck.tensors.emplace_back("adam." + name + ".exp_avg", s.exp_avg().clone());
    ck.tensors.emplace_back("adam." + name + ".exp_avg_sq", s.exp_avg_sq().clone());
  }
  return ck;
}

void restore(Trainer& trainer, const Checkpoint& ck) {
  const uint64_t expected = config_hash(trainer.config());
  if (ck.config_hash != expected) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%016llx vs %016llx", static_cast<unsigned long long>(ck.config_hash),
                  static_cast<unsigned long long>(expected));
    throw ConfigError(std::string("checkpoint was written with a different configuration (hash ") + buf +
                      "); refusing to resume");
  }
  auto& model = trainer.model();
  const auto stored = as_map(ck);
  load_model_state(model, stored);
  const auto state = model_state(model);
  trainer.optimizer_g().state().clear();
  trainer.optimizer_d().state().clear();
  for (const auto& [name, step] : ck.adam_steps) {
    auto p = state.find(name);
    auto m1 = stored.find("adam." + name + ".exp_avg");
    auto m2 = stored.find("adam." + name + ".exp_avg_sq");
    if (p == state.end() || m1 == stored.end() || m2 == stored.end())
      throw DataError("checkpoint optimizer state for '" + name + "' is incomplete");
    auto s = std::make_unique<torch::optim::AdamParamState>();
    s->step(step);
    s->exp_avg(m1->second.clone());
    s->exp_avg_sq(m2->second.clone());
    optimizer_for(trainer, name).state()[p->second.unsafeGetTensorImpl()] = std::move(s);
  }
  trainer.set_iteration(ck.iteration);
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  json index = json::array();
  uint64_t offset = 0;
  std::vector<torch::Tensor> payload;
  for (const auto& [name, t] : ck.tensors) {
    auto c = t.detach().contiguous().cpu();
    const uint64_t bytes = c.numel() * c.element_size();
    index.push_back({{"name", name}, {"dtype", dtype_name(c.scalar_type())}, {"shape", c.sizes().vec()},
                     {"offset", offset}, {"bytes", bytes}});
    offset += bytes;
    payload.push_back(c);
  }
  json steps = json::array();
  for (const auto& [name, s] : ck.adam_steps) steps.push_back({name, s});
  const json header{{"iteration", ck.iteration}, {"config_hash", ck.config_hash}, {"config", ck.config_text},
                    {"adam_steps", steps}, {"tensors", index}};
  const std::string text = header.dump();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  // Write to a sibling file first so an interrupted save never leaves a torn checkpoint.
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write checkpoint " + path.string());
    const uint32_t version = ck.version;
    const uint64_t header_len = text.size();
    out.write(kMagic, sizeof kMagic);
    out.write(reinterpret_cast<const char*>(&version), sizeof version);
    out.write(reinterpret_cast<const char*>(&header_len), sizeof header_len);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& c : payload)
      out.write(static_cast<const char*>(c.data_ptr()), static_cast<std::streamsize>(c.numel() * c.element_size()));
    if (!out) throw DataError("failed writing checkpoint " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("checkpoint not found: " + path.string());
  char magic[8];
  uint32_t version = 0;
  uint64_t header_len = 0;
  in.read(magic, sizeof magic);
  in.read(reinterpret_cast<char*>(&version), sizeof version);
  in.read(reinterpret_cast<char*>(&header_len), sizeof header_len);
  if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0) throw DataError("not a checkpoint file: " + path.string());
  if (version != kCheckpointVersion)
    throw DataError("unsupported checkpoint version " + std::to_string(version) + " in " + path.string());
  if (header_len > (1ull << 30)) throw DataError("corrupt checkpoint header in " + path.string());
  std::string text(header_len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(header_len));
  if (!in) throw DataError("truncated checkpoint " + path.string());

  Checkpoint ck;
  ck.version = version;
  try {
    const auto header = json::parse(text);
    ck.iteration = header.at("iteration").get<int64_t>();
    ck.config_hash = header.at("config_hash").get<uint64_t>();
    ck.config_text = header.at("config").get<std::string>();
    for (const auto& s : header.at("adam_steps")) ck.adam_steps.emplace_back(s.at(0).get<std::string>(), s.at(1).get<int64_t>());
    std::vector<char> blob;
    for (const auto& e : header.at("tensors")) {
      const auto name = e.at("name").get<std::string>();
      auto dt = dtype_table().find(e.at("dtype").get<std::string>());
      if (dt == dtype_table().end()) throw DataError("checkpoint tensor '" + name + "' has an unknown dtype");
      const auto shape = e.at("shape").get<std::vector<int64_t>>();
      const auto bytes = e.at("bytes").get<uint64_t>();
      auto t = torch::empty(shape, torch::TensorOptions().dtype(dt->second));
      if (static_cast<uint64_t>(t.numel() * t.element_size()) != bytes)
        throw DataError("checkpoint tensor '" + name + "' size does not match its shape");
      in.read(static_cast<char*>(t.data_ptr()), static_cast<std::streamsize>(bytes));
      if (!in) throw DataError("truncated checkpoint " + path.string());
      ck.tensors.emplace_back(name, t);
    }
  } catch (const json::exception& ex) {
    throw DataError("corrupt checkpoint header in " + path.string() + ": " + ex.what());
  }
  return ck;
}

std::unique_ptr<InpaintingModel> load_model(const std::filesystem::path& path) {
  const auto ck = read_checkpoint(path);
  const auto cfg = parse_config(ck.config_text);
  if (config_hash(cfg) != ck.config_hash) throw DataError("checkpoint configuration is inconsistent: " + path.string());
  auto model = std::make_unique<InpaintingModel>(cfg);
  load_model_state(*model, as_map(ck));
  model->train(false);
  return model;
}

}  // namespace mfn
