#include "era/nn/checkpoint.hpp"

#include <cstddef>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "internal.hpp"

namespace era::nn {

namespace {

using nlohmann::json;

json tensor_to_json(const Tensor& t) {
  return json{{"shape", t.shape}, {"data", t.d}};
}

Tensor tensor_from_json(const json& j, const std::string& name) {
  Tensor t;
  try {
    t.shape = j.at("shape").get<std::vector<int>>();
    t.d = j.at("data").get<std::vector<double>>();
  } catch (const json::exception& e) {
    throw std::runtime_error("checkpoint: malformed tensor " + name + ": " +
                             e.what());
  }
  std::size_t n = 1;
  for (int s : t.shape) {
    if (s <= 0)
      throw std::runtime_error("checkpoint: bad shape for tensor " + name);
    n *= static_cast<std::size_t>(s);
  }
  if (t.d.size() != n)
    throw std::runtime_error("checkpoint: data does not match shape for " +
                             name);
  return t;
}

}  // namespace

void save_checkpoint(const std::string& path, const ParamStore& store,
                     const Vocabulary& vocab) {
  store.validate();
  if (vocab.size() != store.config.vocab)
    throw std::runtime_error(
        "checkpoint: vocabulary size disagrees with the configuration");

  json j;
  j["version"] = kCheckpointVersion;
  j["config"] = {{"layers", store.config.layers},
                 {"heads", store.config.heads},
                 {"width", store.config.width},
                 {"max_len", store.config.max_len},
                 {"ffn_mult", store.config.ffn_mult},
                 {"vocab", store.config.vocab}};
  j["vocabulary"] = vocab.tokens();
  json params = json::object();
  json adam_m = json::object();
  json adam_v = json::object();
  for (std::size_t i = 0; i < store.names.size(); ++i) {
    params[store.names[i]] = tensor_to_json(store.params[i]);
    adam_m[store.names[i]] = tensor_to_json(store.adam_m[i]);
    adam_v[store.names[i]] = tensor_to_json(store.adam_v[i]);
  }
  j["params"] = std::move(params);
  j["adam"] = {{"step", store.adam_step},
               {"m", std::move(adam_m)},
               {"v", std::move(adam_v)}};

  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw std::runtime_error("checkpoint: cannot write " + tmp);
    out << j.dump() << "\n";
    if (!out) throw std::runtime_error("checkpoint: write failed for " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec)
    throw std::runtime_error("checkpoint: cannot move " + tmp + " to " + path +
                             ": " + ec.message());
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("checkpoint: cannot open " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw std::runtime_error("checkpoint: parse error in " + path + ": " +
                             e.what());
  }
  try {
    if (!j.is_object() || j.at("version").get<int>() != kCheckpointVersion)
      throw std::runtime_error("checkpoint: unsupported version in " + path);

    ModelConfig cfg;
    const json& jc = j.at("config");
    cfg.layers = jc.at("layers").get<int>();
    cfg.heads = jc.at("heads").get<int>();
    cfg.width = jc.at("width").get<int>();
    cfg.max_len = jc.at("max_len").get<int>();
    cfg.ffn_mult = jc.at("ffn_mult").get<int>();
    cfg.vocab = jc.at("vocab").get<int>();
    try {
      cfg.validate();
    } catch (const std::invalid_argument& e) {
      throw std::runtime_error(std::string("checkpoint: bad configuration: ") +
                               e.what());
    }

    const auto tokens = j.at("vocabulary").get<std::vector<std::string>>();
    if (static_cast<int>(tokens.size()) != cfg.vocab)
      throw std::runtime_error(
          "checkpoint: vocabulary size disagrees with the configuration");
    const Vocabulary reserved_only = Vocabulary::with_reserved({});
    for (int r = 0; r < reserved_only.size(); ++r)
      if (tokens[static_cast<std::size_t>(r)] != reserved_only.token(r))
        throw std::runtime_error(
            "checkpoint: reserved vocabulary entries out of place");
    Vocabulary vocab = Vocabulary::with_reserved(
        {tokens.begin() + reserved_only.size(), tokens.end()});

    ParamStore store;
    store.config = cfg;
    const json& jp = j.at("params");
    const json& jadam = j.at("adam");
    const json& jm = jadam.at("m");
    const json& jv = jadam.at("v");
    store.adam_step = jadam.at("step").get<std::int64_t>();
    const auto expect = detail::param_layout(cfg);
    if (jp.size() != expect.size())
      throw std::runtime_error("checkpoint: unexpected parameter count");
    for (const auto& [name, shape] : expect) {
      for (const json* src : {&jp, &jm, &jv}) {
        if (!src->contains(name))
          throw std::runtime_error("checkpoint: missing tensor " + name);
        Tensor t = tensor_from_json(src->at(name), name);
        if (t.shape != shape)
          throw std::runtime_error("checkpoint: shape mismatch for " + name);
        if (src == &jp)
          store.params.push_back(std::move(t));
        else if (src == &jm)
          store.adam_m.push_back(std::move(t));
        else
          store.adam_v.push_back(std::move(t));
      }
      store.names.push_back(name);
    }
    store.validate();
    return Checkpoint{std::move(store), std::move(vocab)};
  } catch (const json::exception& e) {
    throw std::runtime_error("checkpoint: malformed file " + path + ": " +
                             e.what());
  }
}

}  // namespace era::nn
