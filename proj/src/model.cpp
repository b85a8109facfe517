#include "appood/model.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include "appood/io.hpp"
#include "json.hpp"

namespace appood {

using nlohmann::json;

std::string to_string(SimilarityMode mode) {
  return mode == SimilarityMode::kDot ? "dot" : "cosine";
}

SimilarityMode similarity_mode_from_string(const std::string& name) {
  if (name == "dot") return SimilarityMode::kDot;
  if (name == "cosine") return SimilarityMode::kCosine;
  throw std::invalid_argument("unknown similarity mode \"" + name + "\"");
}

Model init_model(std::size_t input_dim, std::size_t n_classes, std::size_t proto_dim,
                 std::uint64_t seed, SimilarityMode mode) {
  if (input_dim == 0 || n_classes == 0 || proto_dim == 0) {
    throw NumericError("init_model: dimensions must be positive");
  }
  Model m;
  m.seed = seed;
  m.mode = mode;
  m.projection.weight = Matrix(proto_dim, input_dim);
  m.projection.bias = Vector(proto_dim, 0.0);
  m.prototypes = Matrix(n_classes, proto_dim);

  Rng weight_rng(derive_seed(seed, 11));
  const double w_std = 1.0 / std::sqrt(static_cast<double>(input_dim));
  for (double& w : m.projection.weight.flat()) w = w_std * weight_rng.normal();

  Rng proto_rng(derive_seed(seed, 13));
  const double c_std = 1.0 / std::sqrt(static_cast<double>(proto_dim));
  for (double& c : m.prototypes.flat()) c = c_std * proto_rng.normal();

  m.weight_opt = AdamState(m.projection.weight.size());
  m.bias_opt = AdamState(m.projection.bias.size());
  m.prototype_opt = AdamState(m.prototypes.size());
  return m;
}

Vector project(const Model& model, std::span<const double> embedding) {
  const auto& w = model.projection.weight;
  if (embedding.size() != w.cols()) {
    throw NumericError("project: embedding dimension " + std::to_string(embedding.size()) +
                       " does not match model input dimension " + std::to_string(w.cols()));
  }
  Vector s(w.rows());
  for (std::size_t p = 0; p < w.rows(); ++p) {
    s[p] = dot(w.row(p), embedding) + model.projection.bias[p];
  }
  return s;
}

double similarity(SimilarityMode mode, std::span<const double> feature,
                  std::span<const double> prototype) {
  return mode == SimilarityMode::kDot ? dot(feature, prototype) : cosine(feature, prototype);
}

namespace {

json adam_to_json(const AdamState& s) { return json{{"t", s.t}, {"m", s.m}, {"v", s.v}}; }

AdamState adam_from_json(const json& j, std::size_t n) {
  AdamState s;
  s.t = j.at("t").get<std::uint64_t>();
  s.m = j.at("m").get<Vector>();
  s.v = j.at("v").get<Vector>();
  if (s.m.size() != n || s.v.size() != n) {
    throw std::runtime_error("checkpoint: optimizer state shape mismatch");
  }
  return s;
}

}  // namespace

void save_checkpoint(const Model& model, const std::filesystem::path& path) {
  json j;
  j["format"] = "appood-checkpoint";
  j["version"] = kCheckpointVersion;
  j["seed"] = model.seed;
  j["similarity"] = to_string(model.mode);
  j["input_dim"] = model.input_dim();
  j["proto_dim"] = model.proto_dim();
  j["n_classes"] = model.n_classes();
  j["weight"] = std::vector<double>(model.projection.weight.flat().begin(),
                                    model.projection.weight.flat().end());
  j["bias"] = model.projection.bias;
  j["prototypes"] =
      std::vector<double>(model.prototypes.flat().begin(), model.prototypes.flat().end());
  j["adam"] = {{"weight", adam_to_json(model.weight_opt)},
               {"bias", adam_to_json(model.bias_opt)},
               {"prototypes", adam_to_json(model.prototype_opt)}};

  write_file_atomic(path, j.dump() + "\n");
}

Model load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw std::runtime_error("checkpoint " + path.string() + ": " + e.what());
  }
  if (j.value("format", "") != "appood-checkpoint") {
    throw std::runtime_error("checkpoint " + path.string() + ": unrecognized format");
  }
  if (j.at("version").get<int>() != kCheckpointVersion) {
    throw std::runtime_error("checkpoint " + path.string() + ": unsupported version");
  }

  const auto input_dim = j.at("input_dim").get<std::size_t>();
  const auto proto_dim = j.at("proto_dim").get<std::size_t>();
  const auto n_classes = j.at("n_classes").get<std::size_t>();

  Model m;
  m.seed = j.at("seed").get<std::uint64_t>();
  m.mode = similarity_mode_from_string(j.at("similarity").get<std::string>());
  m.projection.weight = Matrix(proto_dim, input_dim);
  m.prototypes = Matrix(n_classes, proto_dim);

  const auto weight = j.at("weight").get<Vector>();
  const auto protos = j.at("prototypes").get<Vector>();
  m.projection.bias = j.at("bias").get<Vector>();
  if (weight.size() != m.projection.weight.size() || protos.size() != m.prototypes.size() ||
      m.projection.bias.size() != proto_dim) {
    throw std::runtime_error("checkpoint " + path.string() + ": parameter shape mismatch");
  }
  std::copy(weight.begin(), weight.end(), m.projection.weight.flat().begin());
  std::copy(protos.begin(), protos.end(), m.prototypes.flat().begin());
  require_finite(m.projection.weight.flat(), "checkpoint weight");
  require_finite(m.projection.bias, "checkpoint bias");
  require_finite(m.prototypes.flat(), "checkpoint prototypes");

  const auto& adam = j.at("adam");
  m.weight_opt = adam_from_json(adam.at("weight"), m.projection.weight.size());
  m.bias_opt = adam_from_json(adam.at("bias"), proto_dim);
  m.prototype_opt = adam_from_json(adam.at("prototypes"), m.prototypes.size());
  return m;
}

}  // namespace appood
