#include "dgail/harness.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

namespace dgail {

Dataset build_dataset(const Config& cfg, std::uint64_t seed) {
  Dataset d;
  int idx = 0;
  const int span = cfg.world.agents_max - cfg.world.agents_min + 1;
  for (Template tmpl : cfg.world.templates)
    for (int s = 0; s < cfg.world.scenarios_per_template; ++s) {
      const int n = cfg.world.agents_min + (idx % span);
      d.scenarios.push_back(gen_scenario(tmpl, n, derive_seed(seed, 1000 + idx)));
      ++idx;
    }
  const auto deltas = collect_expert_deltas(d.scenarios, cfg.expert);
  d.vocab = build_vocab(deltas, cfg.world.vocab_k, derive_seed(seed, 2000));
  d.demos = gen_demos(d.scenarios, cfg.expert, d.vocab);
  return d;
}

Split split_holdout(const std::vector<Scenario>& scenarios, const DemoSet& demos,
                    int modulus) {
  Split sp;
  sp.train_demos.vocab_hash = demos.vocab_hash;
  sp.hold_demos.vocab_hash = demos.vocab_hash;
  std::vector<bool> held(scenarios.size(), false);
  std::vector<std::size_t> new_index(scenarios.size(), 0);
  for (std::size_t i = 0; i < scenarios.size(); ++i) {
    held[i] = scenario_hash(scenarios[i]) % static_cast<std::uint64_t>(modulus) == 0;
    if (held[i]) {
      new_index[i] = sp.hold_scn.size();
      sp.hold_scn.push_back(scenarios[i]);
    } else {
      new_index[i] = sp.train_scn.size();
      sp.train_scn.push_back(scenarios[i]);
    }
  }
  for (const auto& ep : demos.episodes) {
    if (ep.scenario_index >= scenarios.size()) continue;
    DemoEpisode copy = ep;
    copy.scenario_index = new_index[ep.scenario_index];
    (held[ep.scenario_index] ? sp.hold_demos : sp.train_demos).episodes.push_back(copy);
  }
  return sp;
}

// -- stability ----------------------------------------------------------------

namespace {

struct NamedVariant {
  std::string name;
  GailVariant variant;
};

std::vector<NamedVariant> stability_variants() {
  GailVariant ps;
  ps.kind = DiscKind::kPsgail;
  std::vector<NamedVariant> v;
  ps.neighbor_cap = 5;
  v.push_back({"psgail_m5", ps});
  ps.neighbor_cap = 10;
  v.push_back({"psgail_m10", ps});
  ps.neighbor_cap = -1;
  v.push_back({"psgail_minf", ps});
  v.push_back({"decomp", GailVariant{}});
  return v;
}

/// One untrained discriminator evaluation (no update), used when the harness
/// runs zero training iterations so the report still has a score per config.
StabilityRow probe_scores(ag::ParamStore& store, const Config& cfg,
                          const std::string& name, const GailVariant& variant,
                          const std::vector<Scenario>& scenarios, const TokenVocab& vocab,
                          const DemoSet& demos, std::uint64_t seed) {
  const int B = std::min<int>(cfg.train.batch_scenarios,
                              static_cast<int>(scenarios.size()));
  std::vector<std::vector<Vec>> feats;
  std::vector<Rollout> rollouts;
  std::vector<EpisodeData> pol_eps, exp_eps;
  for (int b = 0; b < B; ++b) {
    const std::size_t si = b % scenarios.size();
    feats.push_back(encode_map_frozen(store, cfg.nets, scenarios[si].map));
    LearnedPolicy pol(store, cfg.nets, &feats.back());
    rollouts.push_back(rollout(pol, scenarios[si], vocab, derive_seed(seed, 7000 + b)));
  }
  for (int b = 0; b < B; ++b) {
    const std::size_t si = b % scenarios.size();
    pol_eps.push_back(episode_from_rollout(scenarios[si], rollouts[b], si));
    const DemoEpisode& d = demos.episodes[b % demos.episodes.size()];
    exp_eps.push_back(
        episode_from_tokens(scenarios[d.scenario_index], d.tokens, vocab, d.scenario_index));
  }
  std::vector<const EpisodeData*> pb, eb;
  std::vector<const std::vector<Vec>*> pmf, emf;
  std::vector<std::vector<Vec>> exp_feats;
  for (int b = 0; b < B; ++b) {
    pb.push_back(&pol_eps[b]);
    pmf.push_back(&feats[b]);
    exp_feats.push_back(
        encode_map_frozen(store, cfg.nets, scenarios[exp_eps[b].scenario_index].map));
  }
  for (int b = 0; b < B; ++b) {
    eb.push_back(&exp_eps[b]);
    emf.push_back(&exp_feats[b]);
  }
  DiscStepResult res = disc_step(store, cfg.nets, cfg.train, variant, pb, eb, pmf, emf,
                                 /*update=*/false);
  return {name, 0, res.policy_score_mean, res.policy_score_std};
}

}  // namespace

StabilityReport summarize_stability(const std::vector<StabilityRow>& rows, int window) {
  StabilityReport rep;
  rep.rows = rows;
  rep.window = window;
  std::vector<std::string> order;
  std::map<std::string, std::vector<const StabilityRow*>> by_config;
  for (const auto& r : rows) {
    if (!by_config.count(r.config)) order.push_back(r.config);
    by_config[r.config].push_back(&r);
  }
  for (const auto& name : order) {
    const auto& series = by_config[name];
    const std::size_t w = std::min<std::size_t>(window, series.size());
    StabilitySummary s;
    s.config = name;
    s.iterations_run = static_cast<int>(series.size());
    for (std::size_t i = series.size() - w; i < series.size(); ++i) {
      s.final_mean += series[i]->mean;
      s.final_std += series[i]->stddev;
    }
    if (w > 0) {
      s.final_mean /= static_cast<double>(w);
      s.final_std /= static_cast<double>(w);
    }
    rep.summary.push_back(s);
  }
  const StabilitySummary* decomp = nullptr;
  const StabilitySummary* psinf = nullptr;
  for (const auto& s : rep.summary) {
    if (s.config == "decomp") decomp = &s;
    if (s.config == "psgail_minf") psinf = &s;
  }
  std::ostringstream v;
  v.precision(6);
  if (decomp && psinf) {
    v << "final-window score std: decomp " << decomp->final_std << " vs psgail_minf "
      << psinf->final_std << " -> "
      << (decomp->final_std < psinf->final_std ? "decomp more stable"
                                               : "decomp NOT more stable")
      << "; decomp final mean " << decomp->final_mean;
  } else {
    v << "incomplete run; no verdict";
  }
  rep.verdict = v.str();
  return rep;
}

StabilityReport stability_harness(const ag::ParamStore& pretrained, const Config& cfg,
                                  const std::vector<Scenario>& scenarios,
                                  const TokenVocab& vocab, const DemoSet& demos,
                                  std::uint64_t seed, int iterations, int window) {
  std::vector<StabilityRow> rows;
  std::map<std::string, bool> diverged;
  for (const auto& [name, variant] : stability_variants()) {
    ag::ParamStore store = pretrained;  // deep copy, shared start
    ensure_discriminator(store, cfg.nets, variant, derive_seed(seed, fnv1a(name)));
    GailResult res = train_gail(store, cfg.nets, cfg.train, variant, scenarios, vocab,
                                demos, derive_seed(seed, 0x57AB), iterations);
    diverged[name] = res.diverged;
    for (const auto& r : res.log)
      rows.push_back({name, r.iter, r.disc_mean_policy, r.disc_std_policy});
    if (res.log.empty() && !res.diverged)
      rows.push_back(probe_scores(store, cfg, name, variant, scenarios, vocab, demos,
                                  derive_seed(seed, 0x57AB)));
  }
  StabilityReport rep = summarize_stability(rows, window);
  for (auto& s : rep.summary) s.diverged = diverged[s.config];
  return rep;
}

std::string stability_to_csv(const StabilityReport& r) {
  std::ostringstream out;
  out.precision(17);
  out << "config,iter,mean,std\n";
  for (const auto& row : r.rows)
    out << row.config << ',' << row.iter << ',' << row.mean << ',' << row.stddev << '\n';
  return out.str();
}

std::vector<StabilityRow> stability_rows_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "config,iter,mean,std")
    throw std::invalid_argument("stability csv: bad header");
  std::vector<StabilityRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    StabilityRow r;
    std::istringstream ls(line);
    std::string field;
    if (!std::getline(ls, r.config, ',')) throw std::invalid_argument("stability csv: row");
    std::getline(ls, field, ',');
    r.iter = std::stoi(field);
    std::getline(ls, field, ',');
    r.mean = std::stod(field);
    std::getline(ls, field, ',');
    r.stddev = std::stod(field);
    rows.push_back(r);
  }
  return rows;
}

// -- ablation -----------------------------------------------------------------

GailVariant ablation_variant(const std::string& name) {
  GailVariant v;  // full
  if (name == "full" || name == "bc_only") return v;
  if (name == "wo_scene") {
    v.use_scene = false;
    return v;
  }
  if (name == "wo_interact") {
    v.use_inter = false;
    return v;
  }
  if (name == "mean_interact") {
    v.mean_inter_weight = true;
    return v;
  }
  if (name == "wo_social") {
    v.social = GailVariant::Social::kZero;
    return v;
  }
  if (name == "mean_social") {
    v.social = GailVariant::Social::kMean;
    return v;
  }
  throw std::invalid_argument("unknown ablation variant: " + name);
}

AblationReport ablation_harness(const ag::ParamStore& pretrained, const Config& cfg,
                                const Split& split, const TokenVocab& vocab,
                                std::uint64_t seed, int iterations) {
  const std::vector<std::string> names = {"bc_only",      "wo_scene",  "wo_interact",
                                          "mean_interact", "wo_social", "mean_social",
                                          "full"};
  AblationReport rep;
  for (const auto& name : names) {
    ag::ParamStore store = pretrained;
    AblationRow row;
    row.variant = name;
    if (name != "bc_only") {
      const GailVariant v = ablation_variant(name);
      ensure_discriminator(store, cfg.nets, v, derive_seed(seed, fnv1a("disc")));
      GailResult res = train_gail(store, cfg.nets, cfg.train, v, split.train_scn, vocab,
                                  split.train_demos, derive_seed(seed, 0xAB1A), iterations);
      row.diverged = res.diverged;
    }
    row.metrics = evaluate(learned_policy_factory(store, cfg.nets), split.hold_scn, vocab,
                           split.hold_demos, cfg.eval.rollouts, derive_seed(seed, 0xE0A1));
    rep.rows.push_back(row);
  }
  return rep;
}

std::string ablation_to_csv(const AblationReport& r) {
  std::ostringstream out;
  out.precision(17);
  out << "variant,diverged,collision_likelihood,offroad_rate,speed_jsd,min_ade_m,"
         "rollouts\n";
  for (const auto& row : r.rows)
    out << row.variant << ',' << (row.diverged ? 1 : 0) << ','
        << row.metrics.collision_likelihood << ',' << row.metrics.offroad_rate << ','
        << row.metrics.speed_jsd << ',' << row.metrics.min_ade_m << ','
        << row.metrics.rollouts << '\n';
  return out.str();
}

AblationReport ablation_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) ||
      line != "variant,diverged,collision_likelihood,offroad_rate,speed_jsd,min_ade_m,"
              "rollouts")
    throw std::invalid_argument("ablation csv: bad header");
  AblationReport rep;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    AblationRow r;
    std::istringstream ls(line);
    std::string field;
    std::getline(ls, r.variant, ',');
    std::getline(ls, field, ',');
    r.diverged = field == "1";
    std::getline(ls, field, ',');
    r.metrics.collision_likelihood = std::stod(field);
    std::getline(ls, field, ',');
    r.metrics.offroad_rate = std::stod(field);
    std::getline(ls, field, ',');
    r.metrics.speed_jsd = std::stod(field);
    std::getline(ls, field, ',');
    r.metrics.min_ade_m = std::stod(field);
    std::getline(ls, field, ',');
    r.metrics.rollouts = std::stoi(field);
    rep.rows.push_back(r);
  }
  return rep;
}

// -- gradient verification ----------------------------------------------------

double GradCheckReport::worst() const {
  return std::max(std::max(bc, decomp_disc), std::max(psgail_disc, ppo));
}

GradCheckReport grad_check_all(std::uint64_t seed, double sample_fraction) {
  // Small bundled data: three templates for the vocabulary, one 3-agent
  // straight scene (4 steps) for the losses.
  Config cfg;
  cfg.world.scenarios_per_template = 1;
  cfg.world.agents_min = 3;
  cfg.world.agents_max = 3;
  Dataset data = build_dataset(cfg, derive_seed(seed, 1));
  const Scenario& scn = data.scenarios[0];
  const int T = 4;
  const int n = static_cast<int>(scn.agents.size());

  std::vector<std::vector<int>> expert_tokens(T);
  for (int t = 0; t < T; ++t) expert_tokens[t] = data.demos.episodes[0].tokens[t];
  EpisodeData expert_ep = episode_from_tokens(scn, expert_tokens, data.vocab, 0);

  std::mt19937_64 rng(derive_seed(seed, 2));
  std::uniform_int_distribution<int> tok_dist(0, data.vocab.k() - 1);
  std::vector<std::vector<int>> rand_tokens(T, std::vector<int>(n));
  for (auto& st : rand_tokens)
    for (int& t : st) t = tok_dist(rng);
  EpisodeData policy_ep = episode_from_tokens(scn, rand_tokens, data.vocab, 0);

  const ModelConfig mcfg = cfg.nets;
  const TrainConfig tcfg = cfg.train;
  GradCheckReport rep;

  // BC loss: map encoder trains too; value head is out of the graph.
  {
    ag::ParamStore store;
    init_model_params(store, mcfg, derive_seed(seed, 3));
    for (auto& [name, p] : store.params)
      if (name.rfind("value.", 0) == 0) p.trainable = false;
    const EpisodeData* eps[] = {&expert_ep};
    auto f = [&](ag::ParamStore& st, bool with_grad) {
      ag::Tape tape(with_grad);
      std::vector<ag::Var> mf = encode_map(tape, st, mcfg, scn.map);
      std::vector<const std::vector<ag::Var>*> mfs = {&mf};
      ag::Var loss =
          bc_loss(tape, st, mcfg, {eps[0]}, mfs);
      if (with_grad) {
        st.zero_grad();
        tape.backward(loss, st);
      }
      return loss.scalar();
    };
    rep.bc = ag::grad_check(f, store, derive_seed(seed, 4), 1e-5, sample_fraction);
  }

  // Frozen numeric map features for the discriminator / PPO checks.
  std::vector<Vec> map_feats;
  {
    ag::ParamStore tmp;
    init_model_params(tmp, mcfg, derive_seed(seed, 3));
    map_feats = encode_map_frozen(tmp, mcfg, scn.map);
  }
  std::vector<const EpisodeData*> pol_batch = {&policy_ep}, exp_batch = {&expert_ep};
  std::vector<const std::vector<Vec>*> mf_batch = {&map_feats};

  {
    ag::ParamStore store;
    init_decomp_discriminator(store, mcfg, derive_seed(seed, 5));
    GailVariant v;
    auto f = [&](ag::ParamStore& st, bool with_grad) {
      if (with_grad) st.zero_grad();
      return disc_step(st, mcfg, tcfg, v, pol_batch, exp_batch, mf_batch, mf_batch,
                       with_grad, /*apply_optimizer=*/false)
          .loss;
    };
    rep.decomp_disc = ag::grad_check(f, store, derive_seed(seed, 6), 1e-5, sample_fraction);
  }

  {
    ag::ParamStore store;
    init_psgail_discriminator(store, mcfg, derive_seed(seed, 7));
    GailVariant v;
    v.kind = DiscKind::kPsgail;
    auto f = [&](ag::ParamStore& st, bool with_grad) {
      if (with_grad) st.zero_grad();
      return disc_step(st, mcfg, tcfg, v, pol_batch, exp_batch, mf_batch, mf_batch,
                       with_grad, /*apply_optimizer=*/false)
          .loss;
    };
    rep.psgail_disc = ag::grad_check(f, store, derive_seed(seed, 8), 1e-5, sample_fraction);
  }

  // PPO surrogate + value term with fixed old log-probs, advantages, targets.
  {
    ag::ParamStore store;
    init_model_params(store, mcfg, derive_seed(seed, 9));
    for (auto& [name, p] : store.params)
      if (name.rfind("mapenc.", 0) == 0) p.trainable = false;
    // Nudge the heads off their zero init so ratios and values are nontrivial.
    std::mt19937_64 nrng(derive_seed(seed, 10));
    std::normal_distribution<double> nd(0.0, 0.02);
    for (auto& [name, p] : store.params)
      if (name == "policy.head.out.W" || name == "value.head.out.W")
        for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value(i) += nd(nrng);

    Rollout fake;
    fake.logp.assign(T, std::vector<double>(n, 0.0));
    {
      ag::Tape tape(false);
      std::vector<ag::Var> mf = wrap_map_feats(tape, map_feats);
      for (int t = 0; t < T; ++t) {
        PolicyOutput po = policy_forward(tape, store, mcfg, policy_ep, t, mf);
        for (int i = 0; i < n; ++i) {
          const Mat& z = po.logits[i].val();
          const double mx = z.maxCoeff();
          const double lse = mx + std::log((z.array() - mx).exp().sum());
          // Old log-probs offset slightly so the ratio is not exactly 1.
          fake.logp[t][i] = z(policy_ep.tokens[i][t], 0) - lse + 0.01;
        }
      }
    }
    std::normal_distribution<double> adv_dist(0.0, 1.0);
    std::vector<std::vector<std::vector<double>>> adv(1), tgt(1);
    adv[0].assign(T, std::vector<double>(n, 0.0));
    tgt[0].assign(T, std::vector<double>(n, 0.0));
    for (int t = 0; t < T; ++t)
      for (int i = 0; i < n; ++i) {
        adv[0][t][i] = adv_dist(nrng);
        tgt[0][t][i] = adv_dist(nrng);
      }
    std::vector<const Rollout*> rops = {&fake};
    auto f = [&](ag::ParamStore& st, bool with_grad) {
      if (with_grad) st.zero_grad();
      PpoStats stats = ppo_update(st, mcfg, tcfg, pol_batch, rops, adv, tgt, mf_batch,
                                  /*apply_optimizer=*/false);
      return stats.surrogate_loss + tcfg.value_loss_weight * stats.value_loss;
    };
    rep.ppo = ag::grad_check(f, store, derive_seed(seed, 11), 1e-5, sample_fraction);
  }
  return rep;
}

}  // namespace dgail
