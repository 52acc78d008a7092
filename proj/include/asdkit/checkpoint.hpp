#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "asdkit/model.hpp"

// Model persistence: a binary tensor table ("ASDP") holding every parameter,
// batch-norm running buffer and the feature standardization statistics, plus
// a JSON sidecar with the model configuration and machine-ID vocabulary.
namespace asdkit::checkpoint {

constexpr uint32_t kVersion = 1;

namespace detail {

inline void put_u32(std::ostream& out, uint32_t x) {
  out.write(reinterpret_cast<const char*>(&x), 4);
}
inline uint32_t get_u32(std::istream& in, const std::string& path) {
  uint32_t x = 0;
  in.read(reinterpret_cast<char*>(&x), 4);
  if (!in) throw IoError("truncated checkpoint: " + path);
  return x;
}
inline void put_str(std::ostream& out, const std::string& s) {
  put_u32(out, uint32_t(s.size()));
  out.write(s.data(), std::streamsize(s.size()));
}
inline std::string get_str(std::istream& in, const std::string& path) {
  const uint32_t n = get_u32(in, path);
  std::string s(n, '\0');
  in.read(s.data(), std::streamsize(n));
  if (!in) throw IoError("truncated checkpoint: " + path);
  return s;
}
inline void put_tensor(std::ostream& out, const std::string& name, const ag::Tensor& t) {
  put_str(out, name);
  put_u32(out, uint32_t(t.rank()));
  for (int i = 0; i < t.rank(); ++i) put_u32(out, uint32_t(t.dim(i)));
  out.write(reinterpret_cast<const char*>(t.v.data()), std::streamsize(t.v.size() * 8));
}

}  // namespace detail

inline std::string params_path(const std::string& dir) { return dir + "/model.asdp"; }
inline std::string sidecar_path(const std::string& dir) { return dir + "/model.json"; }

inline void save(const std::string& dir, const model::Model& m, const model::IdVocab& vocab,
                 const std::string& config_echo) {
  std::filesystem::create_directories(dir);
  const std::string path = params_path(dir);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint: " + path);
  out.write("ASDP", 4);
  detail::put_u32(out, kVersion);
  detail::put_str(out, config_echo);
  detail::put_u32(out, uint32_t(m.params.size()) + 2);
  for (size_t i = 0; i < m.params.size(); ++i) {
    const ag::Param& p = m.params.at(i);
    detail::put_tensor(out, p.name, p.value);
  }
  const int n = int(m.stats.mean.size());
  detail::put_tensor(out, "norm.mean", ag::Tensor::from({n}, m.stats.mean));
  detail::put_tensor(out, "norm.std", ag::Tensor::from({n}, m.stats.stdev));
  if (!out) throw IoError("short write on checkpoint: " + path);

  nlohmann::json j;
  j["model"] = {{"d_model", m.cfg.d_model},
                {"n_heads", m.cfg.n_heads},
                {"ff_dim", m.cfg.ff_dim},
                {"enc_layers", m.cfg.enc_layers},
                {"dec_layers", m.cfg.dec_layers},
                {"n_mels", m.cfg.n_mels},
                {"phase_dim", m.cfg.phase_dim},
                {"context_len", m.cfg.context_len},
                {"num_ids", m.cfg.num_ids},
                {"classifier_hidden", m.cfg.classifier_hidden},
                {"alpha", m.cfg.alpha}};
  j["id_vocabulary"] = vocab.labels;
  std::ofstream js(sidecar_path(dir), std::ios::trunc);
  if (!js) throw IoError("cannot write checkpoint sidecar: " + sidecar_path(dir));
  js << j.dump(2) << "\n";
}

struct Loaded {
  model::Model model;
  model::IdVocab vocab;
  std::string config_echo;
};

inline Loaded load(const std::string& dir) {
  const std::string jpath = sidecar_path(dir);
  std::ifstream js(jpath);
  if (!js) throw IoError("cannot open checkpoint sidecar: " + jpath);
  nlohmann::json j;
  js >> j;
  model::ModelConfig cfg;
  const auto& jm = j.at("model");
  cfg.d_model = jm.at("d_model").get<int>();
  cfg.n_heads = jm.at("n_heads").get<int>();
  cfg.ff_dim = jm.at("ff_dim").get<int>();
  cfg.enc_layers = jm.at("enc_layers").get<int>();
  cfg.dec_layers = jm.at("dec_layers").get<int>();
  cfg.n_mels = jm.at("n_mels").get<int>();
  cfg.phase_dim = jm.at("phase_dim").get<int>();
  cfg.context_len = jm.at("context_len").get<int>();
  cfg.num_ids = jm.at("num_ids").get<int>();
  cfg.classifier_hidden = jm.at("classifier_hidden").get<int>();
  cfg.alpha = jm.at("alpha").get<double>();

  Loaded out{model::Model(cfg, /*seed=*/0), {}, {}};
  out.vocab.labels = j.at("id_vocabulary").get<std::vector<std::string>>();

  const std::string path = params_path(dir);
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "ASDP", 4) != 0)
    throw IoError("bad checkpoint magic: " + path);
  const uint32_t version = detail::get_u32(in, path);
  if (version != kVersion)
    throw IoError("unsupported checkpoint version " + std::to_string(version) + ": " + path);
  out.config_echo = detail::get_str(in, path);
  const uint32_t count = detail::get_u32(in, path);
  for (uint32_t i = 0; i < count; ++i) {
    const std::string name = detail::get_str(in, path);
    const uint32_t rank = detail::get_u32(in, path);
    std::vector<int> shape(rank);
    for (uint32_t r = 0; r < rank; ++r) shape[r] = int(detail::get_u32(in, path));
    ag::Tensor t(shape);
    in.read(reinterpret_cast<char*>(t.v.data()), std::streamsize(t.v.size() * 8));
    if (!in) throw IoError("truncated checkpoint: " + path);
    if (name == "norm.mean") {
      out.model.stats.mean = t.v;
    } else if (name == "norm.std") {
      out.model.stats.stdev = t.v;
    } else {
      ag::Param& p = out.model.params.get(name);
      if (!p.value.same_shape(t))
        throw IoError("checkpoint tensor " + name + " has shape " + t.shape_str() +
                      ", expected " + p.value.shape_str());
      p.value = std::move(t);
    }
  }
  return out;
}

}  // namespace asdkit::checkpoint
