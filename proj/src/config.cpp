#include "dgail/config.hpp"

#include <set>

#include <nlohmann/json.hpp>

#include "dgail/checkpoint.hpp"

namespace dgail {

using nlohmann::json;

namespace {

void check_keys(const json& obj, const std::string& section,
                const std::set<std::string>& allowed) {
  if (!obj.is_object()) throw ConfigError("config: section '" + section + "' must be an object");
  for (const auto& [key, _] : obj.items())
    if (!allowed.count(key))
      throw ConfigError("config: unknown key '" + key + "' in section '" + section + "'");
}

template <typename T>
void get_to(const json& obj, const char* key, T& out, const std::string& section) {
  if (!obj.contains(key)) return;
  try {
    obj.at(key).get_to(out);
  } catch (const json::exception& e) {
    throw ConfigError("config: bad value for '" + section + "." + key + "': " + e.what());
  }
}

}  // namespace

Config config_from_json(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: invalid JSON: ") + e.what());
  }
  check_keys(root, "<root>", {"world", "expert", "nets", "train", "eval"});
  Config c;

  if (root.contains("world")) {
    const json& w = root["world"];
    check_keys(w, "world",
               {"templates", "scenarios_per_template", "agents_min", "agents_max", "vocab_k"});
    if (w.contains("templates")) {
      c.world.templates.clear();
      for (const auto& t : w["templates"]) {
        try {
          c.world.templates.push_back(template_from_string(t.get<std::string>()));
        } catch (const std::exception& e) {
          throw ConfigError(std::string("config: bad template name: ") + e.what());
        }
      }
      if (c.world.templates.empty()) throw ConfigError("config: world.templates is empty");
    }
    get_to(w, "scenarios_per_template", c.world.scenarios_per_template, "world");
    get_to(w, "agents_min", c.world.agents_min, "world");
    get_to(w, "agents_max", c.world.agents_max, "world");
    get_to(w, "vocab_k", c.world.vocab_k, "world");
    if (c.world.scenarios_per_template <= 0 || c.world.agents_min < 1 ||
        c.world.agents_max < c.world.agents_min || c.world.vocab_k < 2)
      throw ConfigError("config: invalid world section values");
  }

  if (root.contains("expert")) {
    const json& e = root["expert"];
    check_keys(e, "expert", {"v0", "T", "a_max", "b_comf", "s0", "delta", "lookahead"});
    get_to(e, "v0", c.expert.v0, "expert");
    get_to(e, "T", c.expert.T, "expert");
    get_to(e, "a_max", c.expert.a_max, "expert");
    get_to(e, "b_comf", c.expert.b_comf, "expert");
    get_to(e, "s0", c.expert.s0, "expert");
    get_to(e, "delta", c.expert.delta, "expert");
    get_to(e, "lookahead", c.expert.lookahead, "expert");
  }

  if (root.contains("nets")) {
    const json& n = root["nets"];
    check_keys(n, "nets",
               {"vocab_size", "hidden", "mlp_width", "layers", "history", "mapenc_radius",
                "map_radius", "agent_radius"});
    get_to(n, "vocab_size", c.nets.vocab_size, "nets");
    get_to(n, "hidden", c.nets.hidden, "nets");
    get_to(n, "mlp_width", c.nets.mlp_width, "nets");
    get_to(n, "layers", c.nets.layers, "nets");
    get_to(n, "history", c.nets.history, "nets");
    get_to(n, "mapenc_radius", c.nets.mapenc_radius, "nets");
    get_to(n, "map_radius", c.nets.map_radius, "nets");
    get_to(n, "agent_radius", c.nets.agent_radius, "nets");
    if (c.nets.vocab_size < 2 || c.nets.hidden < 1 || c.nets.layers < 1 || c.nets.history < 1)
      throw ConfigError("config: invalid nets section values");
  }

  if (root.contains("train")) {
    const json& t = root["train"];
    check_keys(t, "train",
               {"gamma", "gae_lambda", "clip_eps", "ppo_epochs", "batch_scenarios",
                "rollout_length", "value_loss_weight", "alpha_w", "beta_w", "alpha_lambda",
                "beta_lambda", "lr_policy", "lr_disc", "lr_bc", "weight_decay", "iterations",
                "bc_steps", "bc_batch_episodes", "neighbor_cap", "score_clamp",
                "reward_momentum", "logit_guard", "reward_std_floor", "disc_warmup", "adv_std_floor", "disc_epochs",
                "bc_anchor"});
    get_to(t, "gamma", c.train.gamma, "train");
    get_to(t, "gae_lambda", c.train.gae_lambda, "train");
    get_to(t, "clip_eps", c.train.clip_eps, "train");
    get_to(t, "ppo_epochs", c.train.ppo_epochs, "train");
    get_to(t, "batch_scenarios", c.train.batch_scenarios, "train");
    get_to(t, "rollout_length", c.train.rollout_length, "train");
    get_to(t, "value_loss_weight", c.train.value_loss_weight, "train");
    get_to(t, "alpha_w", c.train.alpha_w, "train");
    get_to(t, "beta_w", c.train.beta_w, "train");
    get_to(t, "alpha_lambda", c.train.alpha_lambda, "train");
    get_to(t, "beta_lambda", c.train.beta_lambda, "train");
    get_to(t, "lr_policy", c.train.lr_policy, "train");
    get_to(t, "lr_disc", c.train.lr_disc, "train");
    get_to(t, "lr_bc", c.train.lr_bc, "train");
    get_to(t, "weight_decay", c.train.weight_decay, "train");
    get_to(t, "iterations", c.train.iterations, "train");
    get_to(t, "bc_steps", c.train.bc_steps, "train");
    get_to(t, "bc_batch_episodes", c.train.bc_batch_episodes, "train");
    get_to(t, "neighbor_cap", c.train.neighbor_cap, "train");
    get_to(t, "score_clamp", c.train.score_clamp, "train");
    get_to(t, "reward_momentum", c.train.reward_momentum, "train");
    get_to(t, "reward_std_floor", c.train.reward_std_floor, "train");
    get_to(t, "disc_warmup", c.train.disc_warmup, "train");
    get_to(t, "adv_std_floor", c.train.adv_std_floor, "train");
    get_to(t, "disc_epochs", c.train.disc_epochs, "train");
    get_to(t, "bc_anchor", c.train.bc_anchor, "train");
    get_to(t, "logit_guard", c.train.logit_guard, "train");
    if (c.train.gamma <= 0 || c.train.gamma > 1 || c.train.gae_lambda < 0 ||
        c.train.gae_lambda > 1 || c.train.clip_eps <= 0 || c.train.batch_scenarios < 1 ||
        c.train.iterations < 0 || c.train.bc_steps < 0 || c.train.bc_batch_episodes < 1 ||
        c.train.beta_w <= 0 || c.train.beta_lambda <= 0)
      throw ConfigError("config: invalid train section values");
  }

  if (root.contains("eval")) {
    const json& e = root["eval"];
    check_keys(e, "eval", {"rollouts", "holdout_modulus"});
    get_to(e, "rollouts", c.eval.rollouts, "eval");
    get_to(e, "holdout_modulus", c.eval.holdout_modulus, "eval");
    if (c.eval.rollouts < 1 || c.eval.holdout_modulus < 2)
      throw ConfigError("config: invalid eval section values");
  }

  if (c.nets.vocab_size != c.world.vocab_k)
    throw ConfigError("config: nets.vocab_size must equal world.vocab_k");
  return c;
}

std::string config_to_json(const Config& c) {
  json root;
  json w;
  w["templates"] = json::array();
  for (auto t : c.world.templates) w["templates"].push_back(template_to_string(t));
  w["scenarios_per_template"] = c.world.scenarios_per_template;
  w["agents_min"] = c.world.agents_min;
  w["agents_max"] = c.world.agents_max;
  w["vocab_k"] = c.world.vocab_k;
  root["world"] = w;
  root["expert"] = {{"v0", c.expert.v0},       {"T", c.expert.T},
                    {"a_max", c.expert.a_max}, {"b_comf", c.expert.b_comf},
                    {"s0", c.expert.s0},       {"delta", c.expert.delta},
                    {"lookahead", c.expert.lookahead}};
  root["nets"] = {{"vocab_size", c.nets.vocab_size},
                  {"hidden", c.nets.hidden},
                  {"mlp_width", c.nets.mlp_width},
                  {"layers", c.nets.layers},
                  {"history", c.nets.history},
                  {"mapenc_radius", c.nets.mapenc_radius},
                  {"map_radius", c.nets.map_radius},
                  {"agent_radius", c.nets.agent_radius}};
  root["train"] = {{"gamma", c.train.gamma},
                   {"gae_lambda", c.train.gae_lambda},
                   {"clip_eps", c.train.clip_eps},
                   {"ppo_epochs", c.train.ppo_epochs},
                   {"batch_scenarios", c.train.batch_scenarios},
                   {"rollout_length", c.train.rollout_length},
                   {"value_loss_weight", c.train.value_loss_weight},
                   {"alpha_w", c.train.alpha_w},
                   {"beta_w", c.train.beta_w},
                   {"alpha_lambda", c.train.alpha_lambda},
                   {"beta_lambda", c.train.beta_lambda},
                   {"lr_policy", c.train.lr_policy},
                   {"lr_disc", c.train.lr_disc},
                   {"lr_bc", c.train.lr_bc},
                   {"weight_decay", c.train.weight_decay},
                   {"iterations", c.train.iterations},
                   {"bc_steps", c.train.bc_steps},
                   {"bc_batch_episodes", c.train.bc_batch_episodes},
                   {"neighbor_cap", c.train.neighbor_cap},
                   {"score_clamp", c.train.score_clamp},
                   {"reward_momentum", c.train.reward_momentum},
                   {"reward_std_floor", c.train.reward_std_floor},
                   {"disc_warmup", c.train.disc_warmup},
                   {"adv_std_floor", c.train.adv_std_floor},
                   {"disc_epochs", c.train.disc_epochs},
                   {"bc_anchor", c.train.bc_anchor},
                   {"logit_guard", c.train.logit_guard}};
  root["eval"] = {{"rollouts", c.eval.rollouts},
                  {"holdout_modulus", c.eval.holdout_modulus}};
  return root.dump(2) + "\n";
}

Config load_config(const std::string& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
  return config_from_json(text);
}

}  // namespace dgail
