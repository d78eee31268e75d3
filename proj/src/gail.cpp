#include "dgail/gail.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

namespace dgail {

using ag::ParamStore;
using ag::Tape;
using ag::Var;

double weight(double d, double alpha, double beta) {
  if (d < 0.0) throw std::invalid_argument("weight: distance must be >= 0");
  if (beta <= 0.0) throw std::invalid_argument("weight: beta must be > 0");
  return alpha * std::exp(-d / beta);
}

double clamp_score(double s, double c) { return std::clamp(s, c, 1.0 - c); }

double agent_reward(double scene, const std::vector<InteractionTerm>& inter) {
  double r = -std::log(1.0 - scene);
  for (const auto& it : inter) r -= it.w * std::log(1.0 - it.score);
  return r;
}

double social_reward(double r_ego, const std::vector<std::pair<double, double>>& neighbor_rd,
                     double alpha, double beta) {
  double r = r_ego;
  for (const auto& [rj, d] : neighbor_rd) r += weight(d, alpha, beta) * rj;
  return r;
}

void gae(const std::vector<double>& rewards, const std::vector<double>& values,
         double bootstrap, double gamma, double lambda, std::vector<double>* advantages,
         std::vector<double>* targets) {
  if (rewards.size() != values.size())
    throw std::invalid_argument("gae: reward/value length mismatch");
  const int T = static_cast<int>(rewards.size());
  advantages->assign(T, 0.0);
  targets->assign(T, 0.0);
  double acc = 0.0;
  for (int t = T - 1; t >= 0; --t) {
    const double v_next = (t + 1 < T) ? values[t + 1] : bootstrap;
    const double delta = rewards[t] + gamma * v_next - values[t];
    acc = delta + gamma * lambda * acc;
    (*advantages)[t] = acc;
    (*targets)[t] = acc + values[t];
  }
}

// -- discriminator step -------------------------------------------------------

namespace {

struct NbrEntry {
  int j;
  double d;
};

std::vector<std::vector<NbrEntry>> neighbor_lists(const EpisodeData& ep, int t, double radius,
                                                  int cap) {
  const int n = static_cast<int>(ep.tokens.size());
  std::vector<std::vector<NbrEntry>> out(n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      if (j == i) continue;
      const double d = std::hypot(ep.poses[i][t].x - ep.poses[j][t].x,
                                  ep.poses[i][t].y - ep.poses[j][t].y);
      if (d <= radius) out[i].push_back({j, d});
    }
    std::sort(out[i].begin(), out[i].end(), [](const NbrEntry& a, const NbrEntry& b) {
      return a.d != b.d ? a.d < b.d : a.j < b.j;
    });
    if (cap >= 0 && static_cast<int>(out[i].size()) > cap) out[i].resize(cap);
  }
  return out;
}

double sigmoid_d(double z) { return 1.0 / (1.0 + std::exp(-z)); }

/// Adds one side's BCE terms for the decomposed discriminator; fills `scores`
/// (clamped) when non-null.
void decomp_side(Tape& tape, ParamStore& store, const ModelConfig& mcfg,
                 const TrainConfig& tcfg, const GailVariant& variant,
                 const std::vector<const EpisodeData*>& batch,
                 const std::vector<const std::vector<Vec>*>& map_feats, double label,
                 std::vector<Var>* terms, std::vector<double>* weights, RewardGrid* scores,
                 std::vector<double>* combined) {
  for (std::size_t e = 0; e < batch.size(); ++e) {
    const EpisodeData& ep = *batch[e];
    const int n = static_cast<int>(ep.tokens.size());
    const int T = static_cast<int>(ep.tokens.empty() ? 0 : ep.tokens[0].size());
    std::vector<Var> wrapped = wrap_map_feats(tape, *map_feats[e]);
    std::vector<std::vector<AgentStepReward>>* ep_scores = nullptr;
    if (scores) {
      scores->emplace_back();
      ep_scores = &scores->back();
    }
    std::vector<int> agents(n);
    for (int i = 0; i < n; ++i) agents[i] = i;
    for (int t = 1; t <= T; ++t) {
      const auto nbrs = neighbor_lists(ep, t, mcfg.agent_radius, -1);
      std::vector<Var> scene, temps;
      if (variant.use_scene)
        scene = scene_logits(tape, store, mcfg, ep, t, wrapped, agents);
      if (variant.use_inter)
        temps = inter_temp_features(tape, store, mcfg, ep, t, agents);
      if (ep_scores) ep_scores->emplace_back(n);
      for (int i = 0; i < n; ++i) {
        AgentStepReward* rec = ep_scores ? &(*ep_scores)[t - 1][i] : nullptr;
        double s_val = 0.5;
        double inter_sum = 0.0, inter_wsum = 0.0;
        if (variant.use_scene) {
          terms->push_back(ag::bce_with_logits(scene[i], label));
          weights->push_back(1.0);
          s_val = clamp_score(sigmoid_d(scene[i].scalar()), tcfg.score_clamp);
        }
        if (rec) rec->scene = variant.use_scene ? s_val : clamp_score(0.5, tcfg.score_clamp);
        if (variant.use_inter) {
          for (const auto& nb : nbrs[i]) {
            const double w = variant.mean_inter_weight
                                 ? 1.0 / static_cast<double>(nbrs[i].size())
                                 : weight(nb.d, tcfg.alpha_w, tcfg.beta_w);
            Var logit = interaction_logit(tape, store, mcfg, temps[i], temps[nb.j],
                                          ep.poses[i][t], ep.poses[nb.j][t]);
            terms->push_back(ag::bce_with_logits(logit, label));
            weights->push_back(w);
            const double iv = clamp_score(sigmoid_d(logit.scalar()), tcfg.score_clamp);
            if (rec) rec->inter.push_back({nb.j, iv, w, nb.d});
            inter_sum += w * iv;
            inter_wsum += w;
          }
        }
        if (combined) {
          double num = 0.0, den = 0.0;
          if (variant.use_scene) {
            num += s_val;
            den += 1.0;
          }
          num += inter_sum;
          den += inter_wsum;
          combined->push_back(den > 0.0 ? num / den : 0.5);
        }
      }
    }
  }
}

void psgail_side(Tape& tape, ParamStore& store, const ModelConfig& mcfg,
                 const TrainConfig& tcfg, const GailVariant& variant,
                 const std::vector<const EpisodeData*>& batch,
                 const std::vector<const std::vector<Vec>*>& map_feats, double label,
                 std::vector<Var>* terms, std::vector<double>* weights, RewardGrid* scores,
                 std::vector<double>* combined) {
  for (std::size_t e = 0; e < batch.size(); ++e) {
    const EpisodeData& ep = *batch[e];
    const int n = static_cast<int>(ep.tokens.size());
    const int T = static_cast<int>(ep.tokens.empty() ? 0 : ep.tokens[0].size());
    std::vector<Var> wrapped = wrap_map_feats(tape, *map_feats[e]);
    std::vector<std::vector<AgentStepReward>>* ep_scores = nullptr;
    if (scores) {
      scores->emplace_back();
      ep_scores = &scores->back();
    }
    for (int t = 1; t <= T; ++t) {
      std::vector<Var> logits =
          psgail_logits(tape, store, mcfg, ep, t, wrapped, variant.neighbor_cap);
      if (ep_scores) ep_scores->emplace_back(n);
      for (int i = 0; i < n; ++i) {
        terms->push_back(ag::bce_with_logits(logits[i], label));
        weights->push_back(1.0);
        const double d = clamp_score(sigmoid_d(logits[i].scalar()), tcfg.score_clamp);
        if (ep_scores) (*ep_scores)[t - 1][i].scene = d;
        if (combined) combined->push_back(d);
      }
    }
  }
}

}  // namespace

DiscStepResult disc_step(ParamStore& store, const ModelConfig& mcfg, const TrainConfig& tcfg,
                         const GailVariant& variant,
                         const std::vector<const EpisodeData*>& policy_batch,
                         const std::vector<const EpisodeData*>& expert_batch,
                         const std::vector<const std::vector<Vec>*>& policy_map_feats,
                         const std::vector<const std::vector<Vec>*>& expert_map_feats,
                         bool update, bool apply_optimizer) {
  if (policy_batch.empty() || expert_batch.empty())
    throw std::invalid_argument("disc_step: empty batch");
  Tape tape(update);
  std::vector<Var> terms;
  std::vector<double> ws;
  DiscStepResult res;
  std::vector<double> combined;
  auto side = variant.kind == DiscKind::kDecomp ? decomp_side : psgail_side;
  side(tape, store, mcfg, tcfg, variant, expert_batch, expert_map_feats, 1.0, &terms, &ws,
       nullptr, nullptr);
  side(tape, store, mcfg, tcfg, variant, policy_batch, policy_map_feats, 0.0, &terms, &ws,
       &res.policy_scores, &combined);

  double wsum = 0.0;
  for (double w : ws) wsum += w;
  std::vector<double> norm = ws;
  for (double& w : norm) w /= wsum;
  Var loss = ag::weighted_sum_scalars(terms, norm);
  res.loss = loss.scalar();

  if (!combined.empty()) {
    double mean = 0.0;
    for (double c : combined) mean += c;
    mean /= static_cast<double>(combined.size());
    double var = 0.0;
    for (double c : combined) var += (c - mean) * (c - mean);
    var /= static_cast<double>(combined.size());
    res.policy_score_mean = mean;
    res.policy_score_std = std::sqrt(var);
  }

  if (update) {
    tape.backward(loss, store);
    if (apply_optimizer) {
      ag::AdamwConfig opt;
      opt.lr = tcfg.lr_disc;
      opt.weight_decay = tcfg.weight_decay;
      adamw_update(store, opt,
                   [](const std::string& n) { return n.rfind("disc.", 0) == 0; });
    }
  }
  return res;
}

void assemble_rewards(RewardGrid& grid, const std::vector<const EpisodeData*>& episodes,
                      const TrainConfig& tcfg, const GailVariant& variant) {
  for (std::size_t e = 0; e < grid.size(); ++e) {
    const EpisodeData& ep = *episodes[e];
    for (std::size_t ti = 0; ti < grid[e].size(); ++ti) {
      const int t = static_cast<int>(ti) + 1;
      const auto nbrs = neighbor_lists(ep, t, /*radius=*/60.0, -1);
      for (std::size_t i = 0; i < grid[e][ti].size(); ++i) {
        AgentStepReward& r = grid[e][ti][i];
        r.r_ego = agent_reward(r.scene, r.inter);
      }
      for (std::size_t i = 0; i < grid[e][ti].size(); ++i) {
        AgentStepReward& r = grid[e][ti][i];
        r.r_neighbor = 0.0;
        r.lambdas.clear();
        if (variant.social != GailVariant::Social::kZero) {
          for (const auto& nb : nbrs[i]) {
            const double lam = variant.social == GailVariant::Social::kMean
                                   ? 1.0 / static_cast<double>(nbrs[i].size())
                                   : weight(nb.d, tcfg.alpha_lambda, tcfg.beta_lambda);
            r.r_neighbor += lam * grid[e][ti][nb.j].r_ego;
            r.lambdas.emplace_back(nb.j, lam);
          }
        }
        r.r_social = r.r_ego + r.r_neighbor;
      }
    }
  }
}

// -- PPO ----------------------------------------------------------------------

PpoStats ppo_update(ParamStore& store, const ModelConfig& mcfg, const TrainConfig& tcfg,
                    const std::vector<const EpisodeData*>& episodes,
                    const std::vector<const Rollout*>& rollouts,
                    const std::vector<std::vector<std::vector<double>>>& advantages,
                    const std::vector<std::vector<std::vector<double>>>& targets,
                    const std::vector<const std::vector<Vec>*>& map_feats,
                    bool apply_optimizer) {
  // Normalize advantages across the whole batch.
  double mean = 0.0;
  std::size_t count = 0;
  for (const auto& ep : advantages)
    for (const auto& step : ep)
      for (double a : step) {
        mean += a;
        ++count;
      }
  if (count == 0) throw std::invalid_argument("ppo_update: empty batch");
  mean /= static_cast<double>(count);
  double var = 0.0;
  for (const auto& ep : advantages)
    for (const auto& step : ep)
      for (double a : step) var += (a - mean) * (a - mean);
  var /= static_cast<double>(count);
  const double inv_std = 1.0 / std::max(std::sqrt(var), tcfg.adv_std_floor);

  Tape tape(true);
  std::vector<Var> ppo_terms, value_terms;
  double abs_logit_sum = 0.0;
  std::size_t logit_count = 0;
  for (std::size_t e = 0; e < episodes.size(); ++e) {
    const EpisodeData& ep = *episodes[e];
    const Rollout& ro = *rollouts[e];
    std::vector<Var> wrapped = wrap_map_feats(tape, *map_feats[e]);
    const int T = static_cast<int>(ep.tokens.empty() ? 0 : ep.tokens[0].size());
    const int n = static_cast<int>(ep.tokens.size());
    for (int t = 0; t < T; ++t) {
      PolicyOutput po = policy_forward(tape, store, mcfg, ep, t, wrapped);
      for (int i = 0; i < n; ++i) {
        abs_logit_sum += po.logits[i].val().cwiseAbs().sum();
        logit_count += po.logits[i].val().size();
        const int tok = ep.tokens[i][t];
        Var logp = ag::pick(ag::log_softmax(po.logits[i]), tok);
        const double adv = (advantages[e][t][i] - mean) * inv_std;
        ppo_terms.push_back(ag::ppo_term(logp, ro.logp[t][i], adv, tcfg.clip_eps));
        Var v = value_forward(tape, store, po.agent_feat[i]);
        value_terms.push_back(ag::squared_error(v, targets[e][t][i]));
      }
    }
  }
  PpoStats stats;
  stats.mean_abs_logit = abs_logit_sum / static_cast<double>(logit_count);
  if (stats.mean_abs_logit > tcfg.logit_guard)
    throw DivergenceError("policy divergence: mean |logit| = " +
                          std::to_string(stats.mean_abs_logit) + " exceeds " +
                          std::to_string(tcfg.logit_guard));

  const double wp = 1.0 / static_cast<double>(ppo_terms.size());
  Var surrogate = ag::weighted_sum_scalars(ppo_terms, std::vector<double>(ppo_terms.size(), wp));
  Var vloss = ag::weighted_sum_scalars(value_terms,
                                       std::vector<double>(value_terms.size(), wp));
  Var loss = ag::add(surrogate, ag::scale(vloss, tcfg.value_loss_weight));
  stats.surrogate_loss = surrogate.scalar();
  stats.value_loss = vloss.scalar();

  tape.backward(loss, store);
  if (apply_optimizer) {
    ag::AdamwConfig opt;
    opt.lr = tcfg.lr_policy;
    opt.weight_decay = tcfg.weight_decay;
    adamw_update(store, opt, [](const std::string& n) {
      return n.rfind("policy.", 0) == 0 || n.rfind("value.", 0) == 0;
    });
  }
  return stats;
}

// -- learned policy -----------------------------------------------------------

std::vector<AgentAction> LearnedPolicy::act(const Scenario& scenario,
                                            const EpisodeHistory& history,
                                            const WorldState& state, std::mt19937_64& rng) {
  (void)state;
  EpisodeData ep;
  ep.scenario = &scenario;
  ep.tokens = history.tokens;
  ep.poses = history.poses;
  const int t = static_cast<int>(ep.tokens.empty() ? 0 : ep.tokens[0].size());

  Tape tape(false);
  std::vector<Var> wrapped = wrap_map_feats(tape, *map_feats_);
  PolicyOutput po = policy_forward(tape, *store_, cfg_, ep, t, wrapped);
  const int n = static_cast<int>(po.logits.size());
  std::vector<AgentAction> acts(n);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (int i = 0; i < n; ++i) {
    const Mat& z = po.logits[i].val();
    const double mx = z.maxCoeff();
    Vec logp = (z.array() - (mx + std::log((z.array() - mx).exp().sum()))).matrix();
    Vec p = logp.array().exp().matrix();
    int tok = 0;
    if (greedy_) {
      Eigen::Index idx = 0;
      z.col(0).maxCoeff(&idx);
      tok = static_cast<int>(idx);
    } else {
      const double u = unif(rng);
      double acc = 0.0;
      tok = static_cast<int>(p.size()) - 1;
      for (int k = 0; k < p.size(); ++k) {
        acc += p(k);
        if (u <= acc) {
          tok = k;
          break;
        }
      }
    }
    acts[i].token = tok;
    acts[i].logp = logp(tok);
    acts[i].value = value_forward(tape, *store_, po.agent_feat[i]).scalar();
  }
  return acts;
}

// -- training loops -----------------------------------------------------------

void ensure_discriminator(ParamStore& store, const ModelConfig& mcfg,
                          const GailVariant& variant, std::uint64_t seed) {
  if (variant.kind == DiscKind::kPsgail) {
    if (!store.has("disc.psgail.emb")) init_psgail_discriminator(store, mcfg, seed);
    return;
  }
  const bool need_scene = variant.use_scene && !store.has("disc.scene.emb");
  const bool need_inter = variant.use_inter && !store.has("disc.inter.emb");
  if (need_scene || need_inter)
    init_decomp_discriminator(store, mcfg, seed, need_scene, need_inter);
}

GailResult train_gail(ParamStore& store, const ModelConfig& mcfg, const TrainConfig& tcfg,
                      const GailVariant& variant, const std::vector<Scenario>& scenarios,
                      const TokenVocab& vocab, const DemoSet& demos, std::uint64_t seed,
                      int iterations) {
  if (scenarios.empty()) throw std::invalid_argument("train_gail: no scenarios");
  if (demos.episodes.empty()) throw std::invalid_argument("train_gail: no demos");

  // Frozen map features, one per scenario.
  std::vector<std::vector<Vec>> map_feats;
  for (const auto& s : scenarios)
    map_feats.push_back(encode_map_frozen(store, mcfg, s.map));

  // Expert episodes replayed once.
  std::vector<EpisodeData> expert_eps;
  for (const auto& d : demos.episodes) {
    if (d.scenario_index >= scenarios.size())
      throw std::invalid_argument("train_gail: demo references missing scenario");
    expert_eps.push_back(
        episode_from_tokens(scenarios[d.scenario_index], d.tokens, vocab, d.scenario_index));
  }

  std::mt19937_64 pick_rng(derive_seed(seed, 0x6A11));
  std::uniform_int_distribution<std::size_t> scn_dist(0, scenarios.size() - 1);
  std::uniform_int_distribution<std::size_t> demo_dist(0, expert_eps.size() - 1);

  GailResult res;
  double run_mean = 0.0, run_var = 1.0;
  bool run_init = false;

  for (int iter = 0; iter < iterations; ++iter) {
    // Fresh rollouts with the current policy.
    std::vector<std::size_t> scn_idx;
    std::vector<Rollout> rollouts;
    std::vector<EpisodeData> episodes;
    for (int b = 0; b < tcfg.batch_scenarios; ++b) {
      const std::size_t si = scn_dist(pick_rng);
      scn_idx.push_back(si);
      LearnedPolicy pol(store, mcfg, &map_feats[si]);
      const std::uint64_t stream =
          0x9011ull + static_cast<std::uint64_t>(iter) * 257ull + static_cast<std::uint64_t>(b);
      rollouts.push_back(rollout(pol, scenarios[si], vocab, derive_seed(seed, stream)));
    }
    for (int b = 0; b < tcfg.batch_scenarios; ++b)
      episodes.push_back(episode_from_rollout(scenarios[scn_idx[b]], rollouts[b], scn_idx[b]));

    std::vector<const EpisodeData*> policy_batch, expert_batch;
    std::vector<const std::vector<Vec>*> policy_mf, expert_mf;
    for (int b = 0; b < tcfg.batch_scenarios; ++b) {
      policy_batch.push_back(&episodes[b]);
      policy_mf.push_back(&map_feats[scn_idx[b]]);
    }
    for (int b = 0; b < tcfg.batch_scenarios; ++b) {
      const std::size_t di = demo_dist(pick_rng);
      expert_batch.push_back(&expert_eps[di]);
      expert_mf.push_back(&map_feats[expert_eps[di].scenario_index]);
    }

    DiscStepResult disc = disc_step(store, mcfg, tcfg, variant, policy_batch, expert_batch,
                                    policy_mf, expert_mf, /*update=*/true);
    for (int de = 1; de < tcfg.disc_epochs; ++de) {
      expert_batch.clear();
      expert_mf.clear();
      for (int b = 0; b < tcfg.batch_scenarios; ++b) {
        const std::size_t di = demo_dist(pick_rng);
        expert_batch.push_back(&expert_eps[di]);
        expert_mf.push_back(&map_feats[expert_eps[di].scenario_index]);
      }
      disc = disc_step(store, mcfg, tcfg, variant, policy_batch, expert_batch, policy_mf,
                       expert_mf, /*update=*/true);
    }
    assemble_rewards(disc.policy_scores, policy_batch, tcfg, variant);

    // Running standardization of social rewards.
    double bmean = 0.0;
    std::size_t bcount = 0;
    for (const auto& ep : disc.policy_scores)
      for (const auto& st : ep)
        for (const auto& r : st) {
          bmean += r.r_social;
          ++bcount;
        }
    bmean /= static_cast<double>(bcount);
    double bvar = 0.0;
    for (const auto& ep : disc.policy_scores)
      for (const auto& st : ep)
        for (const auto& r : st) bvar += (r.r_social - bmean) * (r.r_social - bmean);
    bvar /= static_cast<double>(bcount);
    if (!run_init) {
      run_mean = bmean;
      run_var = bvar;
      run_init = true;
    } else {
      run_mean = tcfg.reward_momentum * run_mean + (1.0 - tcfg.reward_momentum) * bmean;
      run_var = tcfg.reward_momentum * run_var + (1.0 - tcfg.reward_momentum) * bvar;
    }
    const double inv_std = 1.0 / std::max(std::sqrt(run_var), tcfg.reward_std_floor);

    // GAE per agent per episode (terminal bootstrap 0). During the warmup
    // phase only the discriminator trains; the policy stays untouched so the
    // reward field is calibrated before the first PPO step.
    const bool update_policy = iter >= tcfg.disc_warmup;
    std::vector<std::vector<std::vector<double>>> adv(episodes.size()),
        tgt(episodes.size());
    for (std::size_t e = 0; update_policy && e < episodes.size(); ++e) {
      const int T = static_cast<int>(episodes[e].tokens[0].size());
      const int n = static_cast<int>(episodes[e].tokens.size());
      adv[e].assign(T, std::vector<double>(n, 0.0));
      tgt[e].assign(T, std::vector<double>(n, 0.0));
      for (int i = 0; i < n; ++i) {
        std::vector<double> rew(T), val(T), a, g;
        for (int t = 0; t < T; ++t) {
          rew[t] = (disc.policy_scores[e][t][i].r_social - run_mean) * inv_std;
          val[t] = rollouts[e].values[t][i];
        }
        gae(rew, val, 0.0, tcfg.gamma, tcfg.gae_lambda, &a, &g);
        for (int t = 0; t < T; ++t) {
          adv[e][t][i] = a[t];
          tgt[e][t][i] = g[t];
        }
      }
    }

    std::vector<const Rollout*> rops;
    for (const auto& r : rollouts) rops.push_back(&r);
    PpoStats ppo;
    if (update_policy) {
      try {
        ppo = ppo_update(store, mcfg, tcfg, policy_batch, rops, adv, tgt, policy_mf);
      } catch (const DivergenceError& err) {
        res.diverged = true;
        res.divergence_message = err.what();
        return res;
      }
      // Demo-anchored regularization: a scaled BC step keeps the token
      // distribution close to the demonstrations while the adversarial reward
      // shapes closed-loop behavior.
      if (tcfg.bc_anchor > 0.0) {
        Tape tape(true);
        std::vector<const EpisodeData*> abatch;
        std::map<std::size_t, std::vector<Var>> mf_cache;
        std::vector<const std::vector<Var>*> amfs;
        for (int b = 0; b < tcfg.batch_scenarios; ++b) {
          const EpisodeData* ep = &expert_eps[demo_dist(pick_rng)];
          abatch.push_back(ep);
          auto it = mf_cache.find(ep->scenario_index);
          if (it == mf_cache.end())
            it = mf_cache.emplace(ep->scenario_index,
                                  wrap_map_feats(tape, map_feats[ep->scenario_index]))
                     .first;
          amfs.push_back(&it->second);
        }
        Var aloss = scale(bc_loss(tape, store, mcfg, abatch, amfs), tcfg.bc_anchor);
        tape.backward(aloss, store);
        ag::AdamwConfig opt;
        opt.lr = tcfg.lr_policy;
        opt.weight_decay = tcfg.weight_decay;
        adamw_update(store, opt,
                     [](const std::string& n) { return n.rfind("policy.", 0) == 0; });
      }
    }

    // Batch collision rate (fraction of colliding agent-rollouts).
    std::size_t colliding = 0, total_agents = 0;
    for (std::size_t e = 0; e < episodes.size(); ++e) {
      const Scenario& scn = scenarios[scn_idx[e]];
      std::vector<Footprint> fps;
      for (const auto& a : scn.agents) fps.push_back({a.length, a.width});
      std::vector<bool> hit(scn.agents.size(), false);
      for (const auto& st : rollouts[e].states)
        for (const auto& [i, j] : detect_collisions(st, fps)) {
          hit[i] = true;
          hit[j] = true;
        }
      for (bool h : hit) colliding += h ? 1 : 0;
      total_agents += scn.agents.size();
    }

    double rmean_raw = 0.0;
    for (const auto& ep : disc.policy_scores)
      for (const auto& st : ep)
        for (const auto& r : st) rmean_raw += r.r_social;
    rmean_raw /= static_cast<double>(bcount);

    TrainLogRow row;
    row.iter = iter;
    row.disc_mean_policy = disc.policy_score_mean;
    row.disc_std_policy = disc.policy_score_std;
    row.disc_loss = disc.loss;
    row.ppo_loss = ppo.surrogate_loss;
    row.value_loss = ppo.value_loss;
    row.reward_mean = rmean_raw;
    row.collision_rate_train =
        static_cast<double>(colliding) / static_cast<double>(total_agents);
    res.log.push_back(row);
  }
  return res;
}

std::vector<BcLogRow> train_bc(ParamStore& store, const ModelConfig& mcfg,
                               const TrainConfig& tcfg, const std::vector<Scenario>& scenarios,
                               const TokenVocab& vocab, const DemoSet& demos,
                               std::uint64_t seed, int steps) {
  if (demos.episodes.empty()) throw std::invalid_argument("train_bc: no demos");
  std::vector<EpisodeData> expert_eps;
  for (const auto& d : demos.episodes) {
    if (d.scenario_index >= scenarios.size())
      throw std::invalid_argument("train_bc: demo references missing scenario");
    expert_eps.push_back(
        episode_from_tokens(scenarios[d.scenario_index], d.tokens, vocab, d.scenario_index));
  }
  std::mt19937_64 rng(derive_seed(seed, 0xBC));
  std::uniform_int_distribution<std::size_t> dist(0, expert_eps.size() - 1);
  std::vector<BcLogRow> log;
  for (int step = 0; step < steps; ++step) {
    Tape tape(true);
    std::vector<const EpisodeData*> batch;
    for (int b = 0; b < tcfg.bc_batch_episodes; ++b) batch.push_back(&expert_eps[dist(rng)]);
    // Map features with gradients; one encoding per distinct scenario.
    std::map<std::size_t, std::vector<Var>> mf_cache;
    std::vector<const std::vector<Var>*> mfs;
    for (const auto* ep : batch) {
      auto it = mf_cache.find(ep->scenario_index);
      if (it == mf_cache.end())
        it = mf_cache.emplace(ep->scenario_index,
                              encode_map(tape, store, mcfg, ep->scenario->map)).first;
      mfs.push_back(&it->second);
    }
    Var loss = bc_loss(tape, store, mcfg, batch, mfs);
    log.push_back({step, loss.scalar()});
    tape.backward(loss, store);
    ag::AdamwConfig opt;
    opt.lr = tcfg.lr_bc;
    opt.weight_decay = tcfg.weight_decay;
    adamw_update(store, opt, nullptr);
  }
  return log;
}

std::string train_log_to_csv(const std::vector<TrainLogRow>& rows) {
  std::ostringstream out;
  out << "iter,disc_mean_policy,disc_std_policy,disc_loss,ppo_loss,value_loss,"
         "reward_mean,collision_rate_train\n";
  out.precision(17);
  for (const auto& r : rows)
    out << r.iter << ',' << r.disc_mean_policy << ',' << r.disc_std_policy << ','
        << r.disc_loss << ',' << r.ppo_loss << ',' << r.value_loss << ',' << r.reward_mean
        << ',' << r.collision_rate_train << '\n';
  return out.str();
}

}  // namespace dgail
