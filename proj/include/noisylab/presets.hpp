#pragma once

#include <string>
#include <vector>

#include "noisylab/config.hpp"
#include "noisylab/error.hpp"

namespace noisylab {

inline const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names{
      "blobs-sym50",   "blobs-sym20",   "blobs-asym40",   "cifar10-sym20",  "cifar10-sym50",
      "cifar10-asym40", "cifar100-sym20", "cifar100-sym50", "cifar100-asym40"};
  return names;
}

/// Ready-made configs. Blob presets use the 2-64-64-4 MLP with jitter
/// augmentation; CIFAR presets expect the binary batches under data/<kind>
/// and use a small CNN with the standard image augmentation.
inline ExperimentConfig preset_config(const std::string& name) {
  ExperimentConfig c;
  c.name = name;
  const auto dash = name.find('-');
  if (dash == std::string::npos) throw ParameterError("unknown preset '" + name + "'");
  const std::string family = name.substr(0, dash), noise = name.substr(dash + 1);

  if (noise == "sym50") {
    c.noise.type = "symmetric";
    c.noise.epsilon = 0.5;
  } else if (noise == "sym20") {
    c.noise.type = "symmetric";
    c.noise.epsilon = 0.2;
  } else if (noise == "asym40") {
    c.noise.type = "asymmetric";
    c.noise.epsilon = 0.4;
  } else {
    throw ParameterError("unknown preset '" + name + "'");
  }

  if (family == "blobs") {
    c.dataset.kind = "blobs";
    c.augment.kind = "jitter";
  } else if (family == "cifar10" || family == "cifar100") {
    c.dataset.kind = family;
    c.dataset.path = "data/" + family;
    c.augment.kind = "image";
    c.network.hidden = {"conv:32:3:1:1", "relu", "conv:32:3:2:1", "relu", "conv:64:3:2:1", "relu",
                        "flatten",       "dense:128", "relu"};
  } else {
    throw ParameterError("unknown preset '" + name + "'");
  }
  c.output_dir = "runs/" + name;
  return c;
}

}  // namespace noisylab
