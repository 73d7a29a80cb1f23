#ifndef MKNOCK_CONFIG_HPP
#define MKNOCK_CONFIG_HPP

#include <string>

#include "mknock/simulate.hpp"

namespace mknock {

// Parses the JSON experiment config, applying defaults and rejecting
// unknown keys. Throws config_error naming the offending key.
ExperimentConfig parse_config(const std::string& path);
ExperimentConfig parse_config_text(const std::string& text);

// Serialized resolved config (defaults filled in), for manifests.
std::string config_to_json(const ExperimentConfig& cfg);

}  // namespace mknock

#endif
