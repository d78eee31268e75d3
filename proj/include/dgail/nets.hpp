#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dgail/autograd.hpp"
#include "dgail/env.hpp"
#include "dgail/world.hpp"

namespace dgail {

struct ModelConfig {
  int vocab_size = 64;
  int hidden = 64;
  int mlp_width = 128;
  int layers = 2;
  int history = 8;           // temporal attention window, steps
  double mapenc_radius = 20.0;  // map-token self-attention, m
  double map_radius = 30.0;     // agent-to-map cross attention, m
  double agent_radius = 60.0;   // agent-to-agent attention, m
};

/// Token/pose trails for one episode; poses carries one more step than tokens.
struct EpisodeData {
  const Scenario* scenario = nullptr;
  std::size_t scenario_index = 0;
  std::vector<std::vector<int>> tokens;  // [agent][step]
  std::vector<std::vector<Pose>> poses;  // [agent][step + 1]
};

/// Replays step-major joint tokens through the dynamics to recover poses.
EpisodeData episode_from_tokens(const Scenario& s,
                                const std::vector<std::vector<int>>& step_tokens,
                                const TokenVocab& vocab, std::size_t scenario_index = 0);
EpisodeData episode_from_rollout(const Scenario& s, const Rollout& r,
                                 std::size_t scenario_index = 0);

// -- parameter initialization -------------------------------------------------

/// mapenc.*, policy.*, value.* parameters. Head output layers start at zero so
/// fresh policies emit uniform logits and fresh value heads emit zero.
void init_model_params(ag::ParamStore& store, const ModelConfig& cfg, std::uint64_t seed);
/// disc.scene.* and/or disc.inter.* parameter groups (ablations drop one).
void init_decomp_discriminator(ag::ParamStore& store, const ModelConfig& cfg,
                               std::uint64_t seed, bool scene = true, bool inter = true);
/// disc.psgail.* parameters for the monolithic baseline discriminator.
void init_psgail_discriminator(ag::ParamStore& store, const ModelConfig& cfg,
                               std::uint64_t seed);

// -- map encoder --------------------------------------------------------------

/// Encoded map-token features: intrinsic embedding plus relative-position
/// self-attention over tokens within mapenc_radius. SE(2)-invariant.
std::vector<ag::Var> encode_map(ag::Tape& tape, ag::ParamStore& store,
                                const ModelConfig& cfg, const MapGraph& map);
/// No-grad variant used while the encoder is frozen; cached per scenario.
std::vector<Vec> encode_map_frozen(ag::ParamStore& store, const ModelConfig& cfg,
                                   const MapGraph& map);
/// Wraps precomputed numeric features as tape constants.
std::vector<ag::Var> wrap_map_feats(ag::Tape& tape, const std::vector<Vec>& feats);

// -- policy / value -----------------------------------------------------------

struct PolicyOutput {
  std::vector<ag::Var> logits;      // per agent, vocab_size x 1
  std::vector<ag::Var> agent_feat;  // per agent, final agent-attention feature
};

/// Joint forward for all agents at step t: per layer, temporal attention over
/// each agent's own past token embeddings, cross attention to map tokens
/// within map_radius, then self attention over neighbors' map-stage features
/// within agent_radius. All agents share the parameters.
PolicyOutput policy_forward(ag::Tape& tape, ag::ParamStore& store, const ModelConfig& cfg,
                            const EpisodeData& ep, int t,
                            const std::vector<ag::Var>& map_feats);

/// Value head on the (detached) final agent-attention feature.
ag::Var value_forward(ag::Tape& tape, ag::ParamStore& store, const ag::Var& agent_feat);

/// Mean teacher-forced NLL of the expert tokens over whole episodes.
ag::Var bc_loss(ag::Tape& tape, ag::ParamStore& store, const ModelConfig& cfg,
                const std::vector<const EpisodeData*>& batch,
                const std::vector<const std::vector<ag::Var>*>& map_feats);

// -- discriminators -----------------------------------------------------------

/// Monolithic baseline: scalar head on the full (ego, neighbors, map) agent
/// feature. neighbor_cap < 0 means all neighbors within agent_radius.
std::vector<ag::Var> psgail_logits(ag::Tape& tape, ag::ParamStore& store,
                                   const ModelConfig& cfg, const EpisodeData& ep, int t,
                                   const std::vector<ag::Var>& map_feats, int neighbor_cap);

/// Scene-realism logits for the requested egos; structurally independent of
/// every other agent (their states never enter the computation).
std::vector<ag::Var> scene_logits(ag::Tape& tape, ag::ParamStore& store,
                                  const ModelConfig& cfg, const EpisodeData& ep, int t,
                                  const std::vector<ag::Var>& map_feats,
                                  const std::vector<int>& egos);

/// Temporal features of the interaction branch for the requested agents.
std::vector<ag::Var> inter_temp_features(ag::Tape& tape, ag::ParamStore& store,
                                         const ModelConfig& cfg, const EpisodeData& ep,
                                         int t, const std::vector<int>& agents);

/// Pairwise interaction-realism logit from the two temporal features and the
/// relative encoding of j in i's frame; independent of map and third agents.
ag::Var interaction_logit(ag::Tape& tape, ag::ParamStore& store, const ModelConfig& cfg,
                          const ag::Var& temp_i, const ag::Var& temp_j,
                          const Pose& pose_i, const Pose& pose_j);

}  // namespace dgail
