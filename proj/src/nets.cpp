#include "dgail/nets.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

namespace dgail {

using ag::ParamStore;
using ag::Tape;
using ag::Var;

// -- episode construction -----------------------------------------------------

EpisodeData episode_from_tokens(const Scenario& s,
                                const std::vector<std::vector<int>>& step_tokens,
                                const TokenVocab& vocab, std::size_t scenario_index) {
  EpisodeData ep;
  ep.scenario = &s;
  ep.scenario_index = scenario_index;
  const int n = static_cast<int>(s.agents.size());
  ep.tokens.resize(n);
  ep.poses.resize(n);
  WorldState st = initial_state(s);
  for (int i = 0; i < n; ++i) ep.poses[i].push_back(st.poses[i]);
  for (const auto& joint : step_tokens) {
    st = step(st, joint, vocab, s.dt);
    for (int i = 0; i < n; ++i) {
      ep.tokens[i].push_back(joint[i]);
      ep.poses[i].push_back(st.poses[i]);
    }
  }
  return ep;
}

EpisodeData episode_from_rollout(const Scenario& s, const Rollout& r,
                                 std::size_t scenario_index) {
  EpisodeData ep;
  ep.scenario = &s;
  ep.scenario_index = scenario_index;
  const int n = static_cast<int>(s.agents.size());
  ep.tokens.resize(n);
  ep.poses.resize(n);
  for (int i = 0; i < n; ++i) {
    for (const auto& st : r.states) ep.poses[i].push_back(st.poses[i]);
    for (const auto& joint : r.tokens) ep.tokens[i].push_back(joint[i]);
  }
  return ep;
}

// -- initialization -----------------------------------------------------------

namespace {

Mat gaussian(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng, double stddev) {
  std::normal_distribution<double> dist(0.0, stddev);
  Mat m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = dist(rng);
  return m;
}

void add_dense(ParamStore& s, const std::string& name, Eigen::Index rows, Eigen::Index cols,
               std::uint64_t seed) {
  std::mt19937_64 rng(derive_seed(seed, fnv1a(name)));
  s.add(name, gaussian(rows, cols, rng, 1.0 / std::sqrt(static_cast<double>(cols))));
}

void add_linear(ParamStore& s, const std::string& prefix, Eigen::Index out, Eigen::Index in,
                std::uint64_t seed, bool zero = false) {
  if (zero)
    s.add(prefix + ".W", Mat::Zero(out, in));
  else
    add_dense(s, prefix + ".W", out, in, seed);
  s.add(prefix + ".b", Mat::Zero(out, 1));
}

void add_attn_block(ParamStore& s, const std::string& prefix, int hidden, std::uint64_t seed) {
  add_dense(s, prefix + ".Wq", hidden, hidden, seed);
  add_dense(s, prefix + ".Wk", hidden, hidden, seed);
  add_dense(s, prefix + ".Wv", hidden, hidden, seed);
  add_dense(s, prefix + ".Wo", hidden, hidden, seed);
  add_linear(s, prefix + ".rpe1", hidden, 5, seed);
  add_linear(s, prefix + ".rpe2", hidden, hidden, seed);
  s.add(prefix + ".ln.g", Mat::Ones(hidden, 1));
  s.add(prefix + ".ln.b", Mat::Zero(hidden, 1));
}

/// Two hidden layers of mlp_width, zero-initialized output layer.
void add_head(ParamStore& s, const std::string& prefix, int in, int width, int out,
              std::uint64_t seed) {
  add_linear(s, prefix + ".l1", width, in, seed);
  add_linear(s, prefix + ".l2", width, width, seed);
  add_linear(s, prefix + ".out", out, width, seed, /*zero=*/true);
}

void add_backbone(ParamStore& s, const std::string& prefix, const ModelConfig& cfg,
                  std::uint64_t seed, bool with_map, bool with_agent) {
  add_dense(s, prefix + ".emb", cfg.hidden, cfg.vocab_size, seed);
  for (int l = 0; l < cfg.layers; ++l) {
    const std::string lp = prefix + ".layer" + std::to_string(l);
    add_attn_block(s, lp + ".temp", cfg.hidden, seed);
    if (with_map) add_attn_block(s, lp + ".map", cfg.hidden, seed);
    if (with_agent) add_attn_block(s, lp + ".agent", cfg.hidden, seed);
  }
}

}  // namespace

void init_model_params(ParamStore& s, const ModelConfig& cfg, std::uint64_t seed) {
  add_linear(s, "mapenc.embed", cfg.hidden, 2, seed);
  add_attn_block(s, "mapenc.attn", cfg.hidden, seed);
  add_backbone(s, "policy", cfg, seed, true, true);
  add_head(s, "policy.head", cfg.hidden, cfg.mlp_width, cfg.vocab_size, seed);
  add_head(s, "value.head", cfg.hidden, cfg.mlp_width, 1, seed);
}

void init_decomp_discriminator(ParamStore& s, const ModelConfig& cfg, std::uint64_t seed,
                               bool scene, bool inter) {
  if (scene) {
    add_backbone(s, "disc.scene", cfg, seed, true, false);
    add_head(s, "disc.scene.head", cfg.hidden, cfg.mlp_width, 1, seed);
  }
  if (inter) {
    add_backbone(s, "disc.inter", cfg, seed, false, false);
    add_linear(s, "disc.inter.rpe1", cfg.hidden, 5, seed);
    add_linear(s, "disc.inter.rpe2", cfg.hidden, cfg.hidden, seed);
    add_head(s, "disc.inter.head", 3 * cfg.hidden, cfg.mlp_width, 1, seed);
  }
}

void init_psgail_discriminator(ParamStore& s, const ModelConfig& cfg, std::uint64_t seed) {
  add_backbone(s, "disc.psgail", cfg, seed, true, true);
  add_head(s, "disc.psgail.head", cfg.hidden, cfg.mlp_width, 1, seed);
}

// -- shared forward pieces ----------------------------------------------------

namespace {

Var embed_col(const Var& E, int idx) {
  Tape* t = E.tape();
  if (idx < 0 || idx >= E.val().cols())
    throw std::out_of_range("invalid token id " + std::to_string(idx));
  Var out = t->make(E.val().col(idx));
  if (t->grad_enabled()) {
    ag::Node* o = out.node();
    ag::NodeP en = E.ptr();
    o->back = [o, en, idx] { en->grad.col(idx) += o->grad; };
  }
  return out;
}

Vec rpe_raw(const Pose& query, const Pose& key, double dt_steps) {
  const Pose rel = relative_pose(query, key);
  Vec r(5);
  r << rel.x, rel.y, rel.theta, std::hypot(rel.x, rel.y), dt_steps;
  return r;
}

Var mlp3(Tape& tape, ParamStore& s, const std::string& prefix, const Var& x) {
  using namespace ag;
  Var h1 = relu(linear(tape.param(s, prefix + ".l1.W"), x, tape.param(s, prefix + ".l1.b")));
  Var h2 = relu(linear(tape.param(s, prefix + ".l2.W"), h1, tape.param(s, prefix + ".l2.b")));
  return linear(tape.param(s, prefix + ".out.W"), h2, tape.param(s, prefix + ".out.b"));
}

Var rpe_embed(Tape& tape, ParamStore& s, const std::string& prefix, const Vec& raw) {
  using namespace ag;
  Var x = tape.constant(raw);
  Var h = relu(linear(tape.param(s, prefix + "1.W"), x, tape.param(s, prefix + "1.b")));
  return linear(tape.param(s, prefix + "2.W"), h, tape.param(s, prefix + "2.b"));
}

Var attn_block(Tape& tape, ParamStore& s, const std::string& prefix, const Var& x,
               const std::vector<Var>& key_feats, const std::vector<Vec>& rpes) {
  using namespace ag;
  Var g = tape.param(s, prefix + ".ln.g");
  Var b = tape.param(s, prefix + ".ln.b");
  if (key_feats.empty()) return layer_norm(x, g, b);
  Var Wq = tape.param(s, prefix + ".Wq"), Wk = tape.param(s, prefix + ".Wk");
  Var Wv = tape.param(s, prefix + ".Wv"), Wo = tape.param(s, prefix + ".Wo");
  // Batched across keys: one matrix op per stage instead of per-key subgraphs.
  const Eigen::Index k = static_cast<Eigen::Index>(key_feats.size());
  Mat raw(rpes[0].size(), k);
  for (Eigen::Index j = 0; j < k; ++j) raw.col(j) = rpes[j];
  Var h = relu(bias_cols(matmul(tape.param(s, prefix + ".rpe1.W"), tape.constant(raw)),
                         tape.param(s, prefix + ".rpe1.b")));
  Var r = bias_cols(matmul(tape.param(s, prefix + ".rpe2.W"), h),
                    tape.param(s, prefix + ".rpe2.b"));
  Var kf = add(hstack(key_feats), r);
  Var q = matvec(Wq, x);
  Var scores = scale(matmul(transpose(matmul(Wk, kf)), q),
                     1.0 / std::sqrt(static_cast<double>(q.val().rows())));
  Var ctx = matmul(matmul(Wv, kf), softmax(scores));
  return layer_norm(add(x, matvec(Wo, ctx)), g, b);
}

int token_at(const EpisodeData& ep, int agent, int s) {
  // e_s embeds the token that produced pose s; s = 0 is the bootstrap token 0.
  return s == 0 ? 0 : ep.tokens[agent][s - 1];
}

enum class Branch { kFull, kScene, kTemp };

struct BranchOut {
  std::vector<Var> temp;   // per requested agent
  std::vector<Var> map;    // kFull / kScene only
  std::vector<Var> agent;  // kFull only
};

/// Shared factorized-attention backbone. `agents` selects the egos to
/// evaluate; kFull requires all agents (agent attention needs everyone's
/// map-stage features).
BranchOut run_backbone(Tape& tape, ParamStore& s, const ModelConfig& cfg,
                       const std::string& prefix, const EpisodeData& ep, int t,
                       const std::vector<Var>* map_feats, Branch branch, int neighbor_cap,
                       const std::vector<int>& agents) {
  const MapGraph& map = ep.scenario->map;
  const int m = static_cast<int>(agents.size());
  Var E = tape.param(s, prefix + ".emb");

  // Per-agent temporal context (own history only).
  std::vector<Var> x(m);
  std::vector<std::vector<Var>> past_embs(m);
  std::vector<std::vector<Vec>> past_rpes(m);
  std::vector<std::vector<int>> map_keys(m);
  std::vector<std::vector<Vec>> map_rpes(m);
  for (int a = 0; a < m; ++a) {
    const int i = agents[a];
    if (t < 0 || t >= static_cast<int>(ep.tokens[i].size()) + 1)
      throw std::out_of_range("backbone: step index out of range");
    const Pose& now = ep.poses[i][t];
    x[a] = embed_col(E, token_at(ep, i, t));
    const int hist = std::min(cfg.history, t);
    for (int tau = 1; tau <= hist; ++tau) {
      past_embs[a].push_back(embed_col(E, token_at(ep, i, t - tau)));
      past_rpes[a].push_back(rpe_raw(now, ep.poses[i][t - tau], static_cast<double>(tau)));
    }
    if (branch != Branch::kTemp) {
      for (std::size_t k = 0; k < map.map_tokens.size(); ++k) {
        const MapToken& mt = map.map_tokens[k];
        const double d = std::hypot(mt.midpoint.x() - now.x, mt.midpoint.y() - now.y);
        if (d > cfg.map_radius) continue;
        map_keys[a].push_back(static_cast<int>(k));
        const Pose mp{mt.midpoint.x(), mt.midpoint.y(),
                      std::atan2(mt.direction.y(), mt.direction.x())};
        map_rpes[a].push_back(rpe_raw(now, mp, 0.0));
      }
    }
  }

  // Neighbor lists for agent attention, sorted by (distance, id).
  std::vector<std::vector<NeighborSet::Entry>> nbrs(m);
  if (branch == Branch::kFull) {
    for (int a = 0; a < m; ++a) {
      const int i = agents[a];
      const Pose& pi = ep.poses[i][t];
      for (int b = 0; b < m; ++b) {
        const int j = agents[b];
        if (j == i) continue;
        const Pose& pj = ep.poses[j][t];
        const double d = std::hypot(pi.x - pj.x, pi.y - pj.y);
        if (d <= cfg.agent_radius) nbrs[a].push_back({b, d});
      }
      std::sort(nbrs[a].begin(), nbrs[a].end(),
                [&agents](const NeighborSet::Entry& l, const NeighborSet::Entry& r) {
                  return l.dist != r.dist ? l.dist < r.dist : agents[l.id] < agents[r.id];
                });
      if (neighbor_cap >= 0 && static_cast<int>(nbrs[a].size()) > neighbor_cap)
        nbrs[a].resize(neighbor_cap);
    }
  }

  BranchOut out;
  for (int l = 0; l < cfg.layers; ++l) {
    const std::string lp = prefix + ".layer" + std::to_string(l);
    std::vector<Var> temp(m), mapf(m), agentf(m);
    for (int a = 0; a < m; ++a)
      temp[a] = attn_block(tape, s, lp + ".temp", x[a], past_embs[a], past_rpes[a]);
    if (branch == Branch::kTemp) {
      x = temp;
      out.temp = temp;
      continue;
    }
    for (int a = 0; a < m; ++a) {
      std::vector<Var> feats;
      for (int k : map_keys[a]) feats.push_back((*map_feats)[k]);
      mapf[a] = attn_block(tape, s, lp + ".map", temp[a], feats, map_rpes[a]);
    }
    if (branch == Branch::kScene) {
      x = mapf;
      out.temp = temp;
      out.map = mapf;
      continue;
    }
    for (int a = 0; a < m; ++a) {
      const int i = agents[a];
      const Pose& pi = ep.poses[i][t];
      std::vector<Var> feats;
      std::vector<Vec> rpes;
      for (const auto& e : nbrs[a]) {
        feats.push_back(mapf[e.id]);
        rpes.push_back(rpe_raw(pi, ep.poses[agents[e.id]][t], 0.0));
      }
      agentf[a] = attn_block(tape, s, lp + ".agent", mapf[a], feats, rpes);
    }
    x = agentf;
    out.temp = temp;
    out.map = mapf;
    out.agent = agentf;
  }
  return out;
}

std::vector<int> all_agents(const EpisodeData& ep) {
  std::vector<int> v(ep.tokens.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<int>(i);
  return v;
}

}  // namespace

// -- map encoder --------------------------------------------------------------

std::vector<Var> encode_map(Tape& tape, ParamStore& s, const ModelConfig& cfg,
                            const MapGraph& map) {
  using namespace ag;
  if (map.map_tokens.empty()) throw std::invalid_argument("encode_map: map has no tokens");
  Var W = tape.param(s, "mapenc.embed.W");
  Var b = tape.param(s, "mapenc.embed.b");
  std::vector<Var> emb;
  emb.reserve(map.map_tokens.size());
  for (const auto& mt : map.map_tokens) {
    Vec in(2);
    in << mt.length, static_cast<double>(mt.lane_flag);
    emb.push_back(linear(W, tape.constant(in), b));
  }
  std::vector<Var> out;
  out.reserve(emb.size());
  for (std::size_t i = 0; i < map.map_tokens.size(); ++i) {
    const MapToken& mi = map.map_tokens[i];
    const Pose fi{mi.midpoint.x(), mi.midpoint.y(),
                  std::atan2(mi.direction.y(), mi.direction.x())};
    std::vector<Var> feats;
    std::vector<Vec> rpes;
    for (std::size_t j = 0; j < map.map_tokens.size(); ++j) {
      const MapToken& mj = map.map_tokens[j];
      const double d = (mi.midpoint - mj.midpoint).norm();
      if (d > cfg.mapenc_radius) continue;
      feats.push_back(emb[j]);
      const Pose fj{mj.midpoint.x(), mj.midpoint.y(),
                    std::atan2(mj.direction.y(), mj.direction.x())};
      rpes.push_back(rpe_raw(fi, fj, 0.0));
    }
    out.push_back(attn_block(tape, s, "mapenc.attn", emb[i], feats, rpes));
  }
  return out;
}

std::vector<Vec> encode_map_frozen(ParamStore& s, const ModelConfig& cfg, const MapGraph& map) {
  Tape tape(/*grad_enabled=*/false);
  std::vector<Var> feats = encode_map(tape, s, cfg, map);
  std::vector<Vec> out;
  out.reserve(feats.size());
  for (const auto& f : feats) out.push_back(f.val());
  return out;
}

std::vector<Var> wrap_map_feats(Tape& tape, const std::vector<Vec>& feats) {
  std::vector<Var> out;
  out.reserve(feats.size());
  for (const auto& f : feats) out.push_back(tape.constant(f));
  return out;
}

// -- policy / value -----------------------------------------------------------

PolicyOutput policy_forward(Tape& tape, ParamStore& s, const ModelConfig& cfg,
                            const EpisodeData& ep, int t,
                            const std::vector<Var>& map_feats) {
  BranchOut bo = run_backbone(tape, s, cfg, "policy", ep, t, &map_feats, Branch::kFull, -1,
                              all_agents(ep));
  PolicyOutput out;
  for (std::size_t i = 0; i < bo.agent.size(); ++i) {
    out.logits.push_back(mlp3(tape, s, "policy.head", bo.agent[i]));
    out.agent_feat.push_back(bo.agent[i]);
  }
  return out;
}

Var value_forward(Tape& tape, ParamStore& s, const Var& agent_feat) {
  return mlp3(tape, s, "value.head", ag::detach(agent_feat));
}

Var bc_loss(Tape& tape, ParamStore& s, const ModelConfig& cfg,
            const std::vector<const EpisodeData*>& batch,
            const std::vector<const std::vector<Var>*>& map_feats) {
  if (batch.empty()) throw std::invalid_argument("bc_loss: empty batch");
  std::vector<Var> terms;
  for (std::size_t e = 0; e < batch.size(); ++e) {
    const EpisodeData& ep = *batch[e];
    const int T = static_cast<int>(ep.tokens.empty() ? 0 : ep.tokens[0].size());
    for (int t = 0; t < T; ++t) {
      PolicyOutput po = policy_forward(tape, s, cfg, ep, t, *map_feats[e]);
      for (std::size_t i = 0; i < po.logits.size(); ++i) {
        Var lp = ag::pick(ag::log_softmax(po.logits[i]), ep.tokens[i][t]);
        terms.push_back(ag::scale(lp, -1.0));
      }
    }
  }
  const double w = 1.0 / static_cast<double>(terms.size());
  return ag::weighted_sum_scalars(terms, std::vector<double>(terms.size(), w));
}

// -- discriminators -----------------------------------------------------------

std::vector<Var> psgail_logits(Tape& tape, ParamStore& s, const ModelConfig& cfg,
                               const EpisodeData& ep, int t,
                               const std::vector<Var>& map_feats, int neighbor_cap) {
  BranchOut bo = run_backbone(tape, s, cfg, "disc.psgail", ep, t, &map_feats, Branch::kFull,
                              neighbor_cap, all_agents(ep));
  std::vector<Var> out;
  for (const auto& f : bo.agent) out.push_back(mlp3(tape, s, "disc.psgail.head", f));
  return out;
}

std::vector<Var> scene_logits(Tape& tape, ParamStore& s, const ModelConfig& cfg,
                              const EpisodeData& ep, int t,
                              const std::vector<Var>& map_feats,
                              const std::vector<int>& egos) {
  BranchOut bo =
      run_backbone(tape, s, cfg, "disc.scene", ep, t, &map_feats, Branch::kScene, -1, egos);
  std::vector<Var> out;
  for (const auto& f : bo.map) out.push_back(mlp3(tape, s, "disc.scene.head", f));
  return out;
}

std::vector<Var> inter_temp_features(Tape& tape, ParamStore& s, const ModelConfig& cfg,
                                     const EpisodeData& ep, int t,
                                     const std::vector<int>& agents) {
  BranchOut bo =
      run_backbone(tape, s, cfg, "disc.inter", ep, t, nullptr, Branch::kTemp, -1, agents);
  return bo.temp;
}

Var interaction_logit(Tape& tape, ParamStore& s, const ModelConfig& cfg, const Var& temp_i,
                      const Var& temp_j, const Pose& pose_i, const Pose& pose_j) {
  (void)cfg;
  Var r = rpe_embed(tape, s, "disc.inter.rpe", rpe_raw(pose_i, pose_j, 0.0));
  Var in = ag::concat({temp_i, r, temp_j});
  return mlp3(tape, s, "disc.inter.head", in);
}

}  // namespace dgail
