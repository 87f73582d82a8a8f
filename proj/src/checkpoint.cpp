#include "dsrei/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <vector>

#include "dsrei/error.hpp"

namespace dsrei {

namespace {

constexpr const char* kMagic = "# dsrei checkpoint v1";

long long to_int(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const long long x = std::stoll(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw InvalidConfig("'" + key + "' expects an integer, got '" + v + "'");
  }
}

}  // namespace

std::map<std::string, std::string> config_to_map(const ModelConfig& cfg) {
  std::string affm;
  for (bool on : cfg.affm_scales) affm += on ? '1' : '0';
  return {
      {"preset", cfg.preset},
      {"channels", std::to_string(cfg.channels)},
      {"hfeb_channels", std::to_string(cfg.hfeb.channels)},
      {"dsp_depth", std::to_string(cfg.hfeb.dsp_depth)},
      {"window", std::to_string(cfg.hfeb.window)},
      {"heads", std::to_string(cfg.hfeb.heads)},
      {"global_tokens", std::to_string(cfg.hfeb.n_global)},
      {"stages", std::to_string(cfg.stages)},
      {"scales", std::to_string(cfg.scales)},
      {"freq_groups", std::to_string(cfg.freq_groups)},
      {"dct_block", std::to_string(cfg.dct_block)},
      {"cab_reduction", std::to_string(cfg.cab_reduction)},
      {"affm_scales", affm},
  };
}

ModelConfig config_from_map(const std::map<std::string, std::string>& kv) {
  const auto p = kv.find("preset");
  ModelConfig cfg = ModelConfig::from_preset(p == kv.end() ? "default" : p->second);
  for (const auto& [key, v] : kv) {
    if (key == "preset") continue;
    if (key == "channels") cfg.channels = to_int(key, v);
    else if (key == "hfeb_channels") cfg.hfeb.channels = to_int(key, v);
    else if (key == "dsp_depth") cfg.hfeb.dsp_depth = static_cast<int>(to_int(key, v));
    else if (key == "window") cfg.hfeb.window = static_cast<int>(to_int(key, v));
    else if (key == "heads") cfg.hfeb.heads = static_cast<int>(to_int(key, v));
    else if (key == "global_tokens") cfg.hfeb.n_global = static_cast<int>(to_int(key, v));
    else if (key == "stages") cfg.stages = static_cast<int>(to_int(key, v));
    else if (key == "scales") cfg.scales = static_cast<int>(to_int(key, v));
    else if (key == "freq_groups") cfg.freq_groups = static_cast<int>(to_int(key, v));
    else if (key == "dct_block") cfg.dct_block = static_cast<int>(to_int(key, v));
    else if (key == "cab_reduction") cfg.cab_reduction = static_cast<int>(to_int(key, v));
    else if (key == "affm_scales") {
      if (v.size() != 3 || v.find_first_not_of("01") != std::string::npos) {
        throw InvalidConfig("affm_scales expects three 0/1 flags, got '" + v + "'");
      }
      for (int s = 0; s < 3; ++s) cfg.affm_scales[s] = v[s] == '1';
    } else {
      throw InvalidConfig("unknown model key '" + key + "'");
    }
  }
  cfg.validate();
  return cfg;
}

template <typename T>
void save_checkpoint(const std::string& prefix, const DsrEi<T>& model,
                     const std::map<std::string, std::string>& meta) {
  std::ofstream bin(prefix + ".bin", std::ios::binary);
  std::ofstream man(prefix + ".manifest");
  if (!bin || !man) throw IoError("cannot create checkpoint " + prefix);
  man << kMagic << "\n";
  for (const auto& [k, v] : config_to_map(model.config())) man << '@' << k << ' ' << v << "\n";
  for (const auto& [k, v] : meta) {
    if (k.find_first_of(" \t\n") != std::string::npos || v.find('\n') != std::string::npos) {
      throw InvalidParameter("checkpoint metadata must be single-line, key without spaces");
    }
    man << "@meta." << k << ' ' << v << "\n";
  }
  std::uint64_t offset = 0;
  std::vector<unsigned char> buf;
  for (const auto& [name, t] : model.parameters()) {
    const Shape s = t.shape();
    man << name << ' ' << s.n << ' ' << s.c << ' ' << s.h << ' ' << s.w << ' ' << offset << "\n";
    const auto v = t.values();
    buf.resize(v.size() * 4);
    for (std::size_t i = 0; i < v.size(); ++i) {
      const float f = static_cast<float>(v[i]);
      std::uint32_t bits;
      std::memcpy(&bits, &f, 4);
      for (int b = 0; b < 4; ++b) buf[i * 4 + b] = static_cast<unsigned char>((bits >> (8 * b)) & 0xff);
    }
    bin.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    offset += buf.size();
  }
  if (!bin || !man) throw IoError("failed writing checkpoint " + prefix);
}

namespace {

struct ManifestEntry {
  std::string name;
  Shape shape;
  std::uint64_t offset = 0;
};

struct Manifest {
  std::map<std::string, std::string> config, meta;
  std::vector<ManifestEntry> entries;
};

Manifest read_manifest(const std::string& prefix) {
  std::ifstream in(prefix + ".manifest");
  if (!in) throw IoError("cannot open " + prefix + ".manifest");
  std::string line;
  if (!std::getline(in, line) || line != kMagic) throw IoError(prefix + ".manifest: bad header");
  Manifest m;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line[0] == '@') {
      const auto sp = line.find(' ');
      const std::string key = line.substr(1, sp == std::string::npos ? std::string::npos : sp - 1);
      const std::string value = sp == std::string::npos ? "" : line.substr(sp + 1);
      if (key.rfind("meta.", 0) == 0) m.meta[key.substr(5)] = value;
      else m.config[key] = value;
      continue;
    }
    std::istringstream ls(line);
    ManifestEntry e;
    if (!(ls >> e.name >> e.shape.n >> e.shape.c >> e.shape.h >> e.shape.w >> e.offset)) {
      throw IoError(prefix + ".manifest: malformed line '" + line + "'");
    }
    m.entries.push_back(e);
  }
  return m;
}

}  // namespace

CheckpointHeader read_checkpoint_header(const std::string& prefix) {
  const Manifest m = read_manifest(prefix);
  return {config_from_map(m.config), m.meta};
}

template <typename T>
void load_checkpoint(const std::string& prefix, DsrEi<T>& model) {
  const Manifest m = read_manifest(prefix);
  NamedParams<T> params = model.parameters();
  if (m.entries.size() != params.size()) {
    throw IoError(prefix + ": checkpoint has " + std::to_string(m.entries.size()) +
                  " tensors, model has " + std::to_string(params.size()));
  }
  std::ifstream bin(prefix + ".bin", std::ios::binary);
  if (!bin) throw IoError("cannot open " + prefix + ".bin");
  std::vector<unsigned char> buf;
  for (std::size_t k = 0; k < params.size(); ++k) {
    const ManifestEntry& e = m.entries[k];
    Tensor<T>& p = params[k].second;
    if (e.name != params[k].first || !(e.shape == p.shape())) {
      throw IoError(prefix + ": entry " + e.name + " " + e.shape.str() + " does not match " +
                    params[k].first + " " + p.shape().str());
    }
    buf.resize(static_cast<std::size_t>(p.numel()) * 4);
    bin.seekg(static_cast<std::streamoff>(e.offset));
    bin.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (bin.gcount() != static_cast<std::streamsize>(buf.size())) throw IoError(prefix + ".bin: truncated");
    auto dst = p.mutable_values();
    for (std::size_t i = 0; i < dst.size(); ++i) {
      const std::uint32_t bits = std::uint32_t(buf[i * 4]) | std::uint32_t(buf[i * 4 + 1]) << 8 |
                                 std::uint32_t(buf[i * 4 + 2]) << 16 |
                                 std::uint32_t(buf[i * 4 + 3]) << 24;
      float f;
      std::memcpy(&f, &bits, 4);
      dst[i] = static_cast<T>(f);
    }
  }
}

template void save_checkpoint(const std::string&, const DsrEi<float>&,
                              const std::map<std::string, std::string>&);
template void save_checkpoint(const std::string&, const DsrEi<double>&,
                              const std::map<std::string, std::string>&);
template void load_checkpoint(const std::string&, DsrEi<float>&);
template void load_checkpoint(const std::string&, DsrEi<double>&);

}  // namespace dsrei
