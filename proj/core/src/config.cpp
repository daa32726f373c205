#include "apcon/config.hpp"

#include <fstream>
#include <initializer_list>

#include "apcon/errors.hpp"

namespace apcon {

using nlohmann::json;

namespace {

void check_keys(const json& j, std::string_view where, std::initializer_list<std::string_view> allowed) {
  if (!j.is_object()) throw ConfigError(std::string(where) + " must be an object");
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (auto a : allowed) ok = ok || key == a;
    if (!ok) throw ConfigError("unknown key '" + key + "' in " + std::string(where));
  }
}

template <typename T>
void take(const json& j, const char* key, T& out, std::string_view where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string(where) + "." + key + ": " + e.what());
  }
}

void take_pair(const json& j, const char* key, int& a, int& b, std::string_view where) {
  if (!j.contains(key)) return;
  const json& v = j.at(key);
  if (!v.is_array() || v.size() != 2 || !v[0].is_number_integer() || !v[1].is_number_integer())
    throw ConfigError(std::string(where) + "." + key + " must be a pair of integers");
  a = v[0].get<int>();
  b = v[1].get<int>();
}

json filter_to_json(const FilterLayerConfig& f) {
  return {{"channels", f.channels},
          {"kernel", {f.kernel_h, f.kernel_w}},
          {"stride", {f.stride_h, f.stride_w}},
          {"pool", {f.pool_h, f.pool_w}},
          {"pool_stride", {f.pool_stride_h, f.pool_stride_w}},
          {"order", filter_order_name(f.order)},
          {"activation", std::string(ad::activation_name(f.activation))}};
}

FilterLayerConfig filter_from_json(const json& j) {
  constexpr std::string_view w = "model.filters[]";
  check_keys(j, w, {"channels", "kernel", "stride", "pool", "pool_stride", "order", "activation"});
  FilterLayerConfig f;
  take(j, "channels", f.channels, w);
  take_pair(j, "kernel", f.kernel_h, f.kernel_w, w);
  take_pair(j, "stride", f.stride_h, f.stride_w, w);
  take_pair(j, "pool", f.pool_h, f.pool_w, w);
  take_pair(j, "pool_stride", f.pool_stride_h, f.pool_stride_w, w);
  std::string s;
  if (j.contains("order")) {
    take(j, "order", s, w);
    f.order = filter_order_from_name(s);
  }
  if (j.contains("activation")) {
    take(j, "activation", s, w);
    f.activation = ad::activation_from_name(s);
  }
  return f;
}

}  // namespace

std::string filter_order_name(FilterOrder o) {
  return o == FilterOrder::PoolThenActivation ? "pool_then_activation" : "activation_then_pool";
}

FilterOrder filter_order_from_name(std::string_view name) {
  if (name == "pool_then_activation") return FilterOrder::PoolThenActivation;
  if (name == "activation_then_pool") return FilterOrder::ActivationThenPool;
  throw ConfigError("unknown filter order '" + std::string(name) + "'");
}

json to_json(const ExperimentConfig& c) {
  const ModelConfig& m = c.model;
  const TrainConfig& t = c.train;
  json filters = json::array();
  for (const auto& f : m.filters) filters.push_back(filter_to_json(f));
  json model = {{"method", method_name(m.method)},
                {"height", m.height},
                {"width", m.width},
                {"hidden_width", m.hidden_width},
                {"p", m.p},
                {"branch_layers", m.branch_layers},
                {"trunk_layers", m.trunk_layers},
                {"activation", std::string(ad::activation_name(m.activation))},
                {"layer_norm", m.layer_norm ? json(*m.layer_norm) : json(nullptr)},
                {"lift_width", m.lift_width},
                {"quadrature_nodes", m.quadrature_nodes},
                {"filters", filters}};
  json train = {{"epochs", t.epochs},
                {"lr0", t.lr0},
                {"decay", t.decay},
                {"decay_every", t.decay_every},
                {"batch", t.batch},
                {"n_int", t.n_int},
                {"n_bdy", t.n_bdy},
                {"n_init", t.n_init},
                {"velocities_per_point", t.velocities_per_point},
                {"seed", t.seed},
                {"eval_every", t.eval_every},
                {"checkpoint_every", t.checkpoint_every},
                {"checkpoint_dir", t.checkpoint_dir},
                {"chunk_points", t.risk.chunk_points},
                {"reduction", reduction_name(t.risk.reduction)},
                {"threads", t.risk.threads}};
  return {{"problem", problem_name(c.problem)},
          {"eps", c.eps},
          {"trials", c.trials},
          {"label", c.label},
          {"data", {{"m", c.m}, {"l", c.l}, {"seed", c.data_seed}, {"path", c.dataset_path}}},
          {"model", model},
          {"train", train},
          {"eval", {{"nt", c.nt_eval}, {"nx", c.nx_eval}}},
          {"reference",
           {{"nx", c.reference.nx},
            {"velocity_nodes", c.reference.quadrature.size()},
            {"dt", c.reference.dt},
            {"safety", c.reference.safety}}},
          {"output", {{"dir", c.output_dir}, {"results_csv", c.results_csv}}}};
}

ExperimentConfig experiment_from_json(const json& j) {
  ExperimentConfig c;
  check_keys(j, "config", {"problem", "eps", "trials", "label", "data", "model", "train", "eval", "reference", "output"});
  std::string s;
  if (j.contains("problem")) {
    take(j, "problem", s, "config");
    c.problem = problem_from_name(s);
  }
  take(j, "eps", c.eps, "config");
  take(j, "trials", c.trials, "config");
  take(j, "label", c.label, "config");

  if (j.contains("data")) {
    const json& d = j.at("data");
    check_keys(d, "data", {"m", "l", "seed", "path"});
    take(d, "m", c.m, "data");
    take(d, "l", c.l, "data");
    take(d, "seed", c.data_seed, "data");
    take(d, "path", c.dataset_path, "data");
  }
  if (j.contains("model")) {
    const json& m = j.at("model");
    check_keys(m, "model", {"method", "height", "width", "hidden_width", "p", "branch_layers", "trunk_layers",
                            "activation", "layer_norm", "lift_width", "quadrature_nodes", "filters"});
    ModelConfig& mc = c.model;
    if (m.contains("method")) {
      take(m, "method", s, "model");
      mc.method = method_from_name(s);
    }
    take(m, "height", mc.height, "model");
    take(m, "width", mc.width, "model");
    take(m, "hidden_width", mc.hidden_width, "model");
    take(m, "p", mc.p, "model");
    take(m, "branch_layers", mc.branch_layers, "model");
    take(m, "trunk_layers", mc.trunk_layers, "model");
    if (m.contains("activation")) {
      take(m, "activation", s, "model");
      mc.activation = ad::activation_from_name(s);
    }
    if (m.contains("layer_norm")) {
      if (m.at("layer_norm").is_null())
        mc.layer_norm.reset();
      else if (m.at("layer_norm").is_boolean())
        mc.layer_norm = m.at("layer_norm").get<bool>();
      else
        throw ConfigError("model.layer_norm must be a boolean or null");
    }
    take(m, "lift_width", mc.lift_width, "model");
    take(m, "quadrature_nodes", mc.quadrature_nodes, "model");
    if (m.contains("filters")) {
      if (!m.at("filters").is_array()) throw ConfigError("model.filters must be an array");
      mc.filters.clear();
      for (const auto& f : m.at("filters")) mc.filters.push_back(filter_from_json(f));
    }
  }
  if (j.contains("train")) {
    const json& t = j.at("train");
    check_keys(t, "train", {"epochs", "lr0", "decay", "decay_every", "batch", "n_int", "n_bdy", "n_init", "velocities_per_point", "seed",
                            "eval_every", "checkpoint_every", "checkpoint_dir", "chunk_points", "reduction",
                            "threads"});
    TrainConfig& tc = c.train;
    take(t, "epochs", tc.epochs, "train");
    take(t, "lr0", tc.lr0, "train");
    take(t, "decay", tc.decay, "train");
    take(t, "decay_every", tc.decay_every, "train");
    take(t, "batch", tc.batch, "train");
    take(t, "n_int", tc.n_int, "train");
    take(t, "n_bdy", tc.n_bdy, "train");
    take(t, "n_init", tc.n_init, "train");
    take(t, "velocities_per_point", tc.velocities_per_point, "train");
    take(t, "seed", tc.seed, "train");
    take(t, "eval_every", tc.eval_every, "train");
    take(t, "checkpoint_every", tc.checkpoint_every, "train");
    take(t, "checkpoint_dir", tc.checkpoint_dir, "train");
    take(t, "chunk_points", tc.risk.chunk_points, "train");
    if (t.contains("reduction")) {
      take(t, "reduction", s, "train");
      tc.risk.reduction = reduction_from_name(s);
    }
    take(t, "threads", tc.risk.threads, "train");
  }
  if (j.contains("eval")) {
    const json& e = j.at("eval");
    check_keys(e, "eval", {"nt", "nx"});
    take(e, "nt", c.nt_eval, "eval");
    take(e, "nx", c.nx_eval, "eval");
  }
  if (j.contains("reference")) {
    const json& r = j.at("reference");
    check_keys(r, "reference", {"nx", "velocity_nodes", "dt", "safety"});
    take(r, "nx", c.reference.nx, "reference");
    if (r.contains("velocity_nodes")) {
      int n = 0;
      take(r, "velocity_nodes", n, "reference");
      c.reference.quadrature = gauss_legendre(n);
    }
    take(r, "dt", c.reference.dt, "reference");
    take(r, "safety", c.reference.safety, "reference");
  }
  if (j.contains("output")) {
    const json& o = j.at("output");
    check_keys(o, "output", {"dir", "results_csv"});
    take(o, "dir", c.output_dir, "output");
    take(o, "results_csv", c.results_csv, "output");
  }
  c.validate();
  return c;
}

ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path);
  json j;
  try {
    j = json::parse(in, nullptr, true, /*ignore_comments=*/true);
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + path + ": " + e.what());
  }
  return experiment_from_json(j);
}

std::string canonical_text(const ExperimentConfig& cfg) { return to_json(cfg).dump(); }

}  // namespace apcon
