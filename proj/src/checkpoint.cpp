#include "lpgnet/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "lpgnet/errors.hpp"

namespace lpgnet {

using nlohmann::json;

namespace {

constexpr std::array<char, 8> kMagic = {'L', 'P', 'G', 'C', 'K', 'P', 'T', '\0'};

void put_le(std::ostream& out, std::uint64_t v, std::size_t bytes) {
  char buf[8];
  for (std::size_t i = 0; i < bytes; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(buf, static_cast<std::streamsize>(bytes));
}

std::uint64_t get_le(std::istream& in, std::size_t bytes) {
  unsigned char buf[8] = {};
  if (!in.read(reinterpret_cast<char*>(buf), static_cast<std::streamsize>(bytes))) {
    throw SchemaError("checkpoint truncated");
  }
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  return v;
}

}  // namespace

Checkpoint Checkpoint::capture(const Model& model, const json& train_config, std::size_t epoch,
                               std::vector<EpochRecord> history) {
  Checkpoint c;
  c.arch = model.arch();
  c.model_config = model.config();
  c.train_config = train_config;
  c.epoch = epoch;
  c.history = std::move(history);
  const ParamStore& ps = model.params();
  for (const auto& name : ps.names()) {
    const auto d = ps.get(name).data();
    c.tensors.emplace_back(name, std::vector<double>(d.begin(), d.end()));
  }
  c.buffers = model.buffers();
  return c;
}

std::unique_ptr<Model> Checkpoint::instantiate() const {
  auto model = make_model(arch, model_config, 0);
  ParamStore& ps = model->params();
  if (ps.size() != tensors.size()) {
    throw SchemaError("checkpoint holds " + std::to_string(tensors.size()) + " tensors, model expects " +
                      std::to_string(ps.size()));
  }
  for (const auto& [name, values] : tensors) {
    if (!ps.contains(name)) throw SchemaError("checkpoint tensor '" + name + "' is unknown to the model");
    Tensor& t = ps.get(name);
    if (t.numel() != values.size()) throw SchemaError("checkpoint tensor '" + name + "' has the wrong size");
    std::copy(values.begin(), values.end(), t.mutable_data().begin());
  }
  model->load_buffers(buffers);
  return model;
}

void write_checkpoint(std::ostream& out, const Checkpoint& c) {
  json history = json::array();
  for (const auto& r : c.history) history.push_back(r.to_json());
  json index = json::array();
  json buffers = json::array();
  for (const auto& [name, v] : c.tensors) index.push_back({{"name", name}, {"numel", v.size()}});
  for (const auto& [name, v] : c.buffers) buffers.push_back({{"name", name}, {"numel", v.size()}});
  const json manifest = {{"arch", c.arch},
                         {"model_config", c.model_config.to_json()},
                         {"train_config", c.train_config},
                         {"epoch", c.epoch},
                         {"history", history},
                         {"tensors", index},
                         {"buffers", buffers}};
  const std::string text = manifest.dump();

  out.write(kMagic.data(), kMagic.size());
  put_le(out, kCheckpointVersion, 4);
  put_le(out, text.size(), 8);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  auto payload = [&](const std::vector<double>& v) {
    for (double x : v) put_le(out, std::bit_cast<std::uint64_t>(x), 8);
  };
  for (const auto& [name, v] : c.tensors) payload(v);
  for (const auto& [name, v] : c.buffers) payload(v);
  if (!out) throw Error("failed writing checkpoint");
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open '" + path.string() + "' for writing");
  write_checkpoint(out, c);
}

Checkpoint read_checkpoint(std::istream& in) {
  std::array<char, 8> magic{};
  if (!in.read(magic.data(), magic.size()) || magic != kMagic) throw SchemaError("not an LPGNet checkpoint");
  const auto version = get_le(in, 4);
  if (version != kCheckpointVersion) throw SchemaError("unsupported checkpoint version " + std::to_string(version));
  const auto length = get_le(in, 8);
  if (length > (std::uint64_t{1} << 32)) throw SchemaError("checkpoint manifest length is implausible");
  std::string text(length, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(length))) throw SchemaError("checkpoint truncated");

  Checkpoint c;
  json manifest;
  try {
    manifest = json::parse(text);
    c.arch = manifest.at("arch").get<std::string>();
    c.model_config = ModelConfig::from_json(manifest.at("model_config"));
    c.train_config = manifest.at("train_config");
    c.epoch = manifest.at("epoch").get<std::size_t>();
    for (const auto& r : manifest.at("history")) c.history.push_back(EpochRecord::from_json(r));
  } catch (const json::exception& e) {
    throw SchemaError(std::string("checkpoint manifest: ") + e.what());
  }
  auto payload = [&](std::size_t n) {
    std::vector<double> v(n);
    for (double& x : v) x = std::bit_cast<double>(get_le(in, 8));
    return v;
  };
  try {
    for (const auto& e : manifest.at("tensors")) {
      auto name = e.at("name").get<std::string>();
      c.tensors.emplace_back(name, payload(e.at("numel").get<std::size_t>()));
    }
    for (const auto& e : manifest.at("buffers")) {
      c.buffers[e.at("name").get<std::string>()] = payload(e.at("numel").get<std::size_t>());
    }
  } catch (const json::exception& e) {
    throw SchemaError(std::string("checkpoint index: ") + e.what());
  }
  return c;
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint '" + path.string() + "'");
  return read_checkpoint(in);
}

}  // namespace lpgnet
