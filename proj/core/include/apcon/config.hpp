#pragma once

// JSON experiment configuration.
//
// Every key is optional; missing keys keep the defaults of the C++ structs
// and unknown keys are rejected. Layout (defaults shown):
//
// {
//   "problem": "I", "eps": 1.0, "trials": 1, "label": "",
//   "data":   {"m": 1024, "l": 0.5, "seed": 0, "path": ""},
//   "model":  {"method": "APCON-v2", "height": 32, "width": 64,
//              "hidden_width": 64, "p": 64, "branch_layers": 5,
//              "trunk_layers": 4, "activation": "swish",
//              "layer_norm": null,  // null: on for CON, off for DON
//              "lift_width": 64, "quadrature_nodes": 32,
//              "filters": [{"channels": 4, "kernel": [2, 2], "stride": [2, 2],
//                           "pool": [2, 2], "pool_stride": [2, 2],
//                           "order": "pool_then_activation",
//                           "activation": "gelu"}, ...]},
//   "train":  {"epochs": 5000, "lr0": 1e-4, "decay": 0.96,
//              "decay_every": 100, "batch": 4, "n_int": 1024, "n_bdy": 256,
//              "n_init": 0, "velocities_per_point": 1, "seed": 0,
//              "eval_every": 100,
//              "checkpoint_every": 100, "checkpoint_dir": "",
//              "chunk_points": 256, "reduction": "sequential", "threads": 1},
//   "eval":      {"nt": 50, "nx": 32},
//   "reference": {"nx": 200, "velocity_nodes": 32, "dt": 0.0, "safety": 0.5},
//   "output":    {"dir": "", "results_csv": ""}
// }
//
// The APCON_REDUCTION environment variable ("sequential" | "pairwise")
// overrides train.reduction at run time.

#include <string>

#include <json.hpp>

#include "apcon/experiment.hpp"

namespace apcon {

nlohmann::json to_json(const ExperimentConfig& cfg);
ExperimentConfig experiment_from_json(const nlohmann::json& j);
ExperimentConfig load_experiment_config(const std::string& path);
/// Canonical serialization; its hash identifies a configuration.
std::string canonical_text(const ExperimentConfig& cfg);

std::string filter_order_name(FilterOrder o);
FilterOrder filter_order_from_name(std::string_view name);

}  // namespace apcon
