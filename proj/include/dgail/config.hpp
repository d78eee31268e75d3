#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "dgail/expert.hpp"
#include "dgail/gail.hpp"

namespace dgail {

/// Thrown for malformed configuration files; the CLI maps this to exit code 2.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct WorldConfig {
  std::vector<Template> templates = {Template::kStraight, Template::kCurve,
                                     Template::kCrossing};
  int scenarios_per_template = 10;
  int agents_min = 3;
  int agents_max = 6;
  int vocab_k = 64;
};

struct EvalConfig {
  int rollouts = 32;
  int holdout_modulus = 5;  // scenario_hash % modulus == 0 -> held out
};

struct Config {
  WorldConfig world;
  IdmParams expert;
  ModelConfig nets;
  TrainConfig train;
  EvalConfig eval;
};

/// Parses the JSON config; sections world/expert/nets/train/eval, all
/// optional, unknown keys rejected. Throws ConfigError on any problem.
Config config_from_json(const std::string& text);
std::string config_to_json(const Config& c);
Config load_config(const std::string& path);

}  // namespace dgail
