#include "ipt/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>

#include <json.hpp>

#include "ipt/rng.hpp"

namespace ipt {

namespace {

using nlohmann::json;

constexpr char kMagic[8] = {'I', 'P', 'T', 'C', 'K', 'P', 'T', '\n'};
constexpr int kFormatVersion = 1;

static_assert(std::endian::native == std::endian::little,
              "checkpoint payload is written as native little-endian doubles");

void write_u64(std::ostream& out, std::uint64_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

std::uint64_t read_u64(std::istream& in, const std::string& what) {
  std::uint64_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) throw IoError("checkpoint truncated while reading " + what);
  return v;
}

json config_to_json(const ModelConfig& c) {
  json tasks = json::array();
  for (const TaskSpec& t : c.tasks) tasks.push_back(t.id);
  return json{{"channels", c.channels},
              {"patch", c.patch},
              {"num_encoder_layers", c.num_encoder_layers},
              {"num_decoder_layers", c.num_decoder_layers},
              {"num_heads", c.num_heads},
              {"ffn_hidden", c.ffn_hidden},
              {"crop", c.crop},
              {"head_kind", c.head_kind},
              {"tasks", std::move(tasks)}};
}

ModelConfig config_from_json(const json& j) {
  ModelConfig c;
  c.channels = j.at("channels").get<std::int64_t>();
  c.patch = j.at("patch").get<std::int64_t>();
  c.num_encoder_layers = j.at("num_encoder_layers").get<int>();
  c.num_decoder_layers = j.at("num_decoder_layers").get<int>();
  c.num_heads = j.at("num_heads").get<int>();
  c.ffn_hidden = j.at("ffn_hidden").get<std::int64_t>();
  c.crop = j.at("crop").get<std::int64_t>();
  c.head_kind = j.at("head_kind").get<std::string>();
  for (const auto& id : j.at("tasks")) c.tasks.push_back(TaskSpec::from_id(id.get<std::string>()));
  return c;
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  // Directory plus payload, params first then optimizer moments in the same
  // order so load can rebuild AdamState positionally.
  std::vector<const Tensor*> payload;
  json dir = json::array();
  std::uint64_t offset = 0;
  auto push = [&](const std::string& name, const Tensor& t) {
    dir.push_back({{"name", name}, {"shape", t.shape()}, {"dtype", "f64"}, {"offset", offset}});
    payload.push_back(&t);
    offset += static_cast<std::uint64_t>(t.size()) * sizeof(double);
  };
  std::vector<std::string> param_names;
  ckpt.model.for_each_param([&](const std::string& name, const Tensor& t) {
    param_names.push_back(name);
    push(name, t);
  });
  const bool has_opt = !ckpt.opt.first_moment.empty();
  if (has_opt) {
    if (ckpt.opt.first_moment.size() != param_names.size() ||
        ckpt.opt.second_moment.size() != param_names.size()) {
      throw ContractError("optimizer state does not match the parameter list");
    }
    for (std::size_t i = 0; i < param_names.size(); ++i) {
      push("adam.m." + param_names[i], ckpt.opt.first_moment[i]);
    }
    for (std::size_t i = 0; i < param_names.size(); ++i) {
      push("adam.v." + param_names[i], ckpt.opt.second_moment[i]);
    }
  }

  json header;
  header["version"] = kFormatVersion;
  header["config"] = config_to_json(ckpt.model.config);
  header["epoch"] = ckpt.epoch;
  header["rng_state"] = ckpt.rng_state;
  header["manifest_hash"] = ckpt.manifest_hash;
  header["optimizer"] = {{"present", has_opt},
                         {"step_count", ckpt.opt.step_count},
                         {"beta1", ckpt.opt.beta1},
                         {"beta2", ckpt.opt.beta2},
                         {"eps", ckpt.opt.eps}};
  header["tensors"] = std::move(dir);
  const std::string header_bytes = header.dump();

  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint: " + path.string());
    out.write(kMagic, sizeof kMagic);
    write_u64(out, header_bytes.size());
    out.write(header_bytes.data(), static_cast<std::streamsize>(header_bytes.size()));
    for (const Tensor* t : payload) {
      out.write(reinterpret_cast<const char*>(t->data()),
                static_cast<std::streamsize>(t->size() * sizeof(double)));
    }
    if (!out) throw IoError("write failed: " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path.string());
  char magic[sizeof kMagic];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0) {
    throw IoError("not a checkpoint file: " + path.string());
  }
  const std::uint64_t header_len = read_u64(in, "header length");
  std::string header_bytes(header_len, '\0');
  in.read(header_bytes.data(), static_cast<std::streamsize>(header_len));
  if (!in) throw IoError("checkpoint truncated in header: " + path.string());

  json header;
  try {
    header = json::parse(header_bytes);
  } catch (const json::exception& e) {
    throw IoError("malformed checkpoint header " + path.string() + ": " + e.what());
  }
  const int version = header.at("version").get<int>();
  if (version != kFormatVersion) {
    throw IoError("checkpoint version " + std::to_string(version) + " unsupported (want " +
                  std::to_string(kFormatVersion) + ")");
  }

  Checkpoint ckpt;
  ModelConfig config = config_from_json(header.at("config"));
  // Structure comes from the config; stored payloads then overwrite values.
  ckpt.model = IptModel::init(config, /*seed=*/0);
  ckpt.epoch = header.at("epoch").get<std::int64_t>();
  ckpt.rng_state = header.at("rng_state").get<std::uint64_t>();
  ckpt.manifest_hash = header.at("manifest_hash").get<std::string>();

  const json& opt = header.at("optimizer");
  const bool has_opt = opt.at("present").get<bool>();
  ckpt.opt.step_count = opt.at("step_count").get<std::int64_t>();
  ckpt.opt.beta1 = opt.at("beta1").get<double>();
  ckpt.opt.beta2 = opt.at("beta2").get<double>();
  ckpt.opt.eps = opt.at("eps").get<double>();

  std::map<std::string, std::pair<Shape, std::uint64_t>> dir;
  for (const auto& e : header.at("tensors")) {
    Shape shape = e.at("shape").get<Shape>();
    if (e.at("dtype").get<std::string>() != "f64") {
      throw IoError("unsupported tensor dtype in " + path.string());
    }
    dir[e.at("name").get<std::string>()] = {std::move(shape), e.at("offset").get<std::uint64_t>()};
  }

  const std::streampos payload_start = in.tellg();
  auto read_tensor = [&](const std::string& name, Tensor& t) {
    auto it = dir.find(name);
    if (it == dir.end()) throw IoError("checkpoint missing tensor '" + name + "'");
    if (it->second.first != t.shape()) {
      throw IoError("checkpoint tensor '" + name + "' has shape " + shape_str(it->second.first) +
                    ", expected " + shape_str(t.shape()));
    }
    in.seekg(payload_start + static_cast<std::streamoff>(it->second.second));
    in.read(reinterpret_cast<char*>(t.mut()),
            static_cast<std::streamsize>(t.size() * sizeof(double)));
    if (!in) throw IoError("checkpoint truncated in tensor '" + name + "'");
  };

  ckpt.model.for_each_param([&](const std::string& name, Tensor& t) { read_tensor(name, t); });
  if (has_opt) {
    ckpt.model.for_each_param([&](const std::string& name, Tensor& t) {
      Tensor m(t.shape()), v(t.shape());
      read_tensor("adam.m." + name, m);
      read_tensor("adam.v." + name, v);
      ckpt.opt.first_moment.push_back(std::move(m));
      ckpt.opt.second_moment.push_back(std::move(v));
    });
  }
  return ckpt;
}

std::string file_hash(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open for hashing: " + path.string());
  std::uint64_t h = 0xcbf29ce484222325ull;
  char buf[1 << 16];
  while (in.read(buf, sizeof buf) || in.gcount() > 0) {
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 0x100000001b3ull;
    }
    if (!in) break;
  }
  char hex[17];
  std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(h));
  return hex;
}

}  // namespace ipt
