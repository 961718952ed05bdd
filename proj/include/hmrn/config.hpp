#pragma once

#include "hmrn/params.hpp"

#include <nlohmann/json.hpp>

#include <fstream>
#include <optional>

namespace hmrn {

struct TrainConfig {
  ModelConfig model;
  double tau = 40.0;
  std::size_t epochs = 150;
  double lr = 4e-4;
  std::size_t lr_decay_epoch = 75;  // lr * lr_decay_factor from this epoch on
  double lr_decay_factor = 0.1;
  std::size_t batch_size = 128;
  std::size_t num_queries = 10;  // rounds used per training record
  double grad_clip = 2.0;
  std::uint64_t seed = 1;
  bool select_on_val = true;  // keep the epoch with the best val Avg R@Sum

  double lr_at(std::size_t epoch) const { return epoch >= lr_decay_epoch ? lr * lr_decay_factor : lr; }

  void validate() const {
    model.validate();
    require(tau > 0, "tau must be > 0");
    require(batch_size >= 1, "batch_size must be >= 1");
    require(num_queries >= 1, "num_queries must be >= 1");
    require(lr >= 0, "lr must be >= 0");
  }
};

// Paths and run-level settings read from a config file.
struct RunConfig {
  TrainConfig train;
  std::string train_manifest, val_manifest, test_manifest, vocab_path;
  std::string checkpoint_out;
  std::size_t K = 8;  // informational; data carries its own K
};

namespace detail {
template <typename T>
void read_opt(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}
}  // namespace detail

inline nlohmann::json to_json(const ModelConfig& m) {
  return {{"direction", to_string(m.direction)},
          {"dims", {{"X", m.X}, {"E", m.E}, {"D", m.D}, {"vocab_size", m.vocab_size}}},
          {"lambda1", m.lambda1},
          {"lambda2", m.lambda2},
          {"vr", {{"steps", m.steps}, {"intra_mode", to_string(m.intra_mode)}}},
          {"shared_pooling", m.shared_pooling},
          {"alpha", m.alpha},
          {"beta", m.beta}};
}

inline void merge_model_config(const nlohmann::json& j, ModelConfig& m) {
  using detail::read_opt;
  if (j.contains("direction")) m.direction = parse_direction(j.at("direction").get<std::string>());
  if (j.contains("dims")) {
    const auto& d = j.at("dims");
    read_opt(d, "X", m.X);
    read_opt(d, "E", m.E);
    read_opt(d, "D", m.D);
    read_opt(d, "vocab_size", m.vocab_size);
  }
  read_opt(j, "lambda1", m.lambda1);
  read_opt(j, "lambda2", m.lambda2);
  if (j.contains("vr")) {
    read_opt(j.at("vr"), "steps", m.steps);
    if (j.at("vr").contains("intra_mode"))
      m.intra_mode = parse_intra_mode(j.at("vr").at("intra_mode").get<std::string>());
  }
  read_opt(j, "vr.steps", m.steps);
  if (j.contains("vr.intra_mode")) m.intra_mode = parse_intra_mode(j.at("vr.intra_mode").get<std::string>());
  read_opt(j, "shared_pooling", m.shared_pooling);
  read_opt(j, "alpha", m.alpha);
  read_opt(j, "beta", m.beta);
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig m;
  merge_model_config(j, m);
  return m;
}

inline nlohmann::json to_json(const TrainConfig& t) {
  auto j = to_json(t.model);
  j["tau"] = t.tau;
  j["epochs"] = t.epochs;
  j["lr"] = {{"initial", t.lr}, {"decay_epoch", t.lr_decay_epoch}, {"decay_factor", t.lr_decay_factor}};
  j["batch_size"] = t.batch_size;
  j["num_queries"] = t.num_queries;
  j["grad_clip"] = t.grad_clip;
  j["seed"] = t.seed;
  j["select_on_val"] = t.select_on_val;
  return j;
}

inline void merge_train_config(const nlohmann::json& j, TrainConfig& t) {
  using detail::read_opt;
  merge_model_config(j, t.model);
  read_opt(j, "tau", t.tau);
  read_opt(j, "epochs", t.epochs);
  if (j.contains("lr")) {
    const auto& lr = j.at("lr");
    if (lr.is_number()) {
      t.lr = lr.get<double>();
    } else {
      read_opt(lr, "initial", t.lr);
      read_opt(lr, "decay_epoch", t.lr_decay_epoch);
      read_opt(lr, "decay_factor", t.lr_decay_factor);
    }
  }
  read_opt(j, "batch_size", t.batch_size);
  read_opt(j, "num_queries", t.num_queries);
  if (j.contains("dims")) read_opt(j.at("dims"), "N", t.num_queries);
  read_opt(j, "grad_clip", t.grad_clip);
  read_opt(j, "seed", t.seed);
  read_opt(j, "select_on_val", t.select_on_val);
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), "cannot read config file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error("malformed config " + path + ": " + e.what());
  }
  RunConfig rc;
  try {
    merge_train_config(j, rc.train);
    if (j.contains("dims")) detail::read_opt(j.at("dims"), "K", rc.K);
    if (j.contains("dataset")) {
      const auto& d = j.at("dataset");
      detail::read_opt(d, "train", rc.train_manifest);
      detail::read_opt(d, "val", rc.val_manifest);
      detail::read_opt(d, "test", rc.test_manifest);
      detail::read_opt(d, "vocab", rc.vocab_path);
    }
    detail::read_opt(j, "checkpoint", rc.checkpoint_out);
  } catch (const nlohmann::json::exception& e) {
    throw Error("bad config value in " + path + ": " + e.what());
  }
  return rc;
}

}  // namespace hmrn
