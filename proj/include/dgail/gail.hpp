#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "dgail/expert.hpp"
#include "dgail/nets.hpp"

namespace dgail {

struct TrainConfig {
  double gamma = 0.99;
  double gae_lambda = 0.95;
  double clip_eps = 0.2;
  int ppo_epochs = 1;
  int batch_scenarios = 8;
  int rollout_length = 16;
  double value_loss_weight = 1e-3;
  double alpha_w = 1.0;
  double beta_w = 10.0;
  double alpha_lambda = 1.0;
  double beta_lambda = 10.0;
  double lr_policy = 5e-5;
  double lr_disc = 1e-4;
  double lr_bc = 5e-4;
  double weight_decay = 0.01;
  int iterations = 200;
  int bc_steps = 2000;
  int bc_batch_episodes = 4;
  int neighbor_cap = -1;
  double score_clamp = 1e-6;       // discriminator scores clamped to [c, 1-c] before logs
  double reward_momentum = 0.99;   // running standardization of social rewards
  double reward_std_floor = 0.05;  // lower bound on the standardization std
  double adv_std_floor = 1e-8;     // lower bound on the advantage-normalization std
  int disc_warmup = 0;             // leading iterations that update only the discriminator
  int disc_epochs = 1;             // discriminator updates per training iteration
  double bc_anchor = 0.0;          // weight of a demo-anchored BC step after each PPO step
  double logit_guard = 50.0;       // divergence halt threshold on mean |policy logit|
};

/// Thrown when the divergence guard trips; the CLI maps this to exit code 3.
struct DivergenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Distance-decayed interaction weight alpha * exp(-d / beta).
double weight(double d, double alpha, double beta);

double clamp_score(double s, double c);

struct InteractionTerm {
  int j = -1;
  double score = 0.5;  // I^{ij}
  double w = 0.0;
  double dist = 0.0;
};

/// Everything needed to recompute one agent-step reward from first principles.
struct AgentStepReward {
  double scene = 0.5;  // S
  std::vector<InteractionTerm> inter;
  double r_ego = 0.0;
  double r_neighbor = 0.0;
  double r_social = 0.0;
  std::vector<std::pair<int, double>> lambdas;  // (j, lambda_ij)
};

/// r = -ln(1 - S) - sum_j w_j * ln(1 - I_j); inputs must already be clamped.
double agent_reward(double scene, const std::vector<InteractionTerm>& inter);

/// r_i + sum_j alpha * exp(-d_j / beta) * r_j.
double social_reward(double r_ego, const std::vector<std::pair<double, double>>& neighbor_rd,
                     double alpha, double beta);

/// GAE advantages and value targets; terminal bootstrap value after the last
/// step is `bootstrap` (0 for finished episodes).
void gae(const std::vector<double>& rewards, const std::vector<double>& values,
         double bootstrap, double gamma, double lambda, std::vector<double>* advantages,
         std::vector<double>* targets);

enum class DiscKind { kDecomp, kPsgail };

struct GailVariant {
  DiscKind kind = DiscKind::kDecomp;
  bool use_scene = true;
  bool use_inter = true;
  bool mean_inter_weight = false;  // w_ij = 1 / |N_i| instead of distance decay
  enum class Social { kDecay, kZero, kMean };
  Social social = Social::kDecay;
  int neighbor_cap = -1;  // PS-GAIL ablation knob (M)
};

/// Scores for one batch side (per episode, step, agent).
using RewardGrid = std::vector<std::vector<std::vector<AgentStepReward>>>;

struct DiscStepResult {
  double loss = 0.0;
  RewardGrid policy_scores;
  double policy_score_mean = 0.5;  // combined realism score on policy samples
  double policy_score_std = 0.0;
};

/// One discriminator step: BCE with expert samples labeled 1 and policy
/// samples labeled 0; interaction terms carry weight w_ij, scene terms weight
/// 1; loss normalized by total term weight. When `update` is false the loss
/// and scores are computed without touching the parameters; with `update` set
/// and `apply_optimizer` cleared, gradients are left in the store instead of
/// being consumed by the optimizer (gradient verification).
DiscStepResult disc_step(ag::ParamStore& store, const ModelConfig& mcfg,
                         const TrainConfig& tcfg, const GailVariant& variant,
                         const std::vector<const EpisodeData*>& policy_batch,
                         const std::vector<const EpisodeData*>& expert_batch,
                         const std::vector<const std::vector<Vec>*>& policy_map_feats,
                         const std::vector<const std::vector<Vec>*>& expert_map_feats,
                         bool update = true, bool apply_optimizer = true);

/// Fills r_ego / r_neighbor / r_social / lambdas in a reward grid according to
/// the variant's social-reward mode.
void assemble_rewards(RewardGrid& grid, const std::vector<const EpisodeData*>& episodes,
                      const TrainConfig& tcfg, const GailVariant& variant);

struct PpoStats {
  double surrogate_loss = 0.0;
  double value_loss = 0.0;
  double mean_abs_logit = 0.0;
};

/// One clipped-PPO epoch over the batch followed by a single optimizer step on
/// policy.* and value.* (map encoder stays frozen). Advantages are normalized
/// to zero mean / unit variance across the batch first.
PpoStats ppo_update(ag::ParamStore& store, const ModelConfig& mcfg, const TrainConfig& tcfg,
                    const std::vector<const EpisodeData*>& episodes,
                    const std::vector<const Rollout*>& rollouts,
                    const std::vector<std::vector<std::vector<double>>>& advantages,
                    const std::vector<std::vector<std::vector<double>>>& targets,
                    const std::vector<const std::vector<Vec>*>& map_feats,
                    bool apply_optimizer = true);

/// Token policy backed by the learned network; samples from the categorical
/// next-token distribution and records log-probs and value estimates.
class LearnedPolicy : public TokenPolicy {
 public:
  LearnedPolicy(ag::ParamStore& store, const ModelConfig& cfg, const std::vector<Vec>* map_feats)
      : store_(&store), cfg_(cfg), map_feats_(map_feats) {}
  /// Argmax instead of sampling (diagnostics).
  void set_greedy(bool greedy) { greedy_ = greedy; }
  std::vector<AgentAction> act(const Scenario& scenario, const EpisodeHistory& history,
                               const WorldState& state, std::mt19937_64& rng) override;

 private:
  ag::ParamStore* store_;
  ModelConfig cfg_;
  const std::vector<Vec>* map_feats_;
  bool greedy_ = false;
};

struct TrainLogRow {
  int iter = 0;
  double disc_mean_policy = 0.0;
  double disc_std_policy = 0.0;
  double disc_loss = 0.0;
  double ppo_loss = 0.0;
  double value_loss = 0.0;
  double reward_mean = 0.0;
  double collision_rate_train = 0.0;
};

struct GailResult {
  std::vector<TrainLogRow> log;
  bool diverged = false;
  std::string divergence_message;
};

/// Full adversarial fine-tuning loop: per iteration, fresh rollouts with the
/// current policy, one discriminator step, reward assembly, GAE, one PPO step.
/// Deterministic for a fixed seed. Discriminator parameters must already be
/// present in the store (ensure_discriminator).
GailResult train_gail(ag::ParamStore& store, const ModelConfig& mcfg, const TrainConfig& tcfg,
                      const GailVariant& variant, const std::vector<Scenario>& scenarios,
                      const TokenVocab& vocab, const DemoSet& demos, std::uint64_t seed,
                      int iterations);

/// Adds the variant's discriminator parameters if missing.
void ensure_discriminator(ag::ParamStore& store, const ModelConfig& mcfg,
                          const GailVariant& variant, std::uint64_t seed);

struct BcLogRow {
  int step = 0;
  double nll = 0.0;
};

/// Behavior-cloning pretraining over the demo set (map encoder trains too).
std::vector<BcLogRow> train_bc(ag::ParamStore& store, const ModelConfig& mcfg,
                               const TrainConfig& tcfg, const std::vector<Scenario>& scenarios,
                               const TokenVocab& vocab, const DemoSet& demos,
                               std::uint64_t seed, int steps);

std::string train_log_to_csv(const std::vector<TrainLogRow>& rows);

}  // namespace dgail
