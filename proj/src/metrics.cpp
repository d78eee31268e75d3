#include "dgail/metrics.hpp"

#include <cmath>
#include <map>
#include <sstream>
#include <stdexcept>

namespace dgail {

std::vector<double> speed_histogram(const std::vector<double>& speeds, int bins, double lo,
                                    double hi) {
  std::vector<double> h(bins, 0.0);
  if (speeds.empty()) {
    for (double& x : h) x = 1.0 / bins;
    return h;
  }
  const double w = (hi - lo) / bins;
  for (double s : speeds) {
    int b = static_cast<int>((s - lo) / w);
    b = std::clamp(b, 0, bins - 1);
    h[b] += 1.0;
  }
  for (double& x : h) x /= static_cast<double>(speeds.size());
  return h;
}

double jensen_shannon(const std::vector<double>& p, const std::vector<double>& q) {
  if (p.size() != q.size()) throw std::invalid_argument("jensen_shannon: size mismatch");
  auto kl = [](const std::vector<double>& a, const std::vector<double>& m) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
      if (a[i] > 0.0) s += a[i] * std::log(a[i] / m[i]);
    return s;
  };
  std::vector<double> m(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) m[i] = 0.5 * (p[i] + q[i]);
  return 0.5 * kl(p, m) + 0.5 * kl(q, m);
}

MetricsReport evaluate(const PolicyFactory& make_policy,
                       const std::vector<Scenario>& scenarios, const TokenVocab& vocab,
                       const DemoSet& demos, int R, std::uint64_t seed) {
  if (R <= 0) throw std::invalid_argument("evaluate: R must be positive");
  // Reference episode per scenario position.
  std::map<std::size_t, const DemoEpisode*> ref;
  for (const auto& d : demos.episodes) ref[d.scenario_index] = &d;

  std::size_t colliding_pairs = 0, total_pairs = 0;
  std::size_t offroad_steps = 0, total_steps = 0;
  std::vector<double> policy_speeds, expert_speeds;
  double ade_sum = 0.0;
  std::size_t ade_count = 0;

  for (std::size_t si = 0; si < scenarios.size(); ++si) {
    const Scenario& scn = scenarios[si];
    auto it = ref.find(si);
    if (it == ref.end())
      throw std::invalid_argument("evaluate: no demo episode for scenario " +
                                  std::to_string(si));
    EpisodeData expert_ep = episode_from_tokens(scn, it->second->tokens, vocab, si);
    const int n = static_cast<int>(scn.agents.size());
    const int T = scn.horizon;
    for (int i = 0; i < n; ++i)
      for (int t = 1; t <= T; ++t) {
        const Pose& a = expert_ep.poses[i][t];
        const Pose& b = expert_ep.poses[i][t - 1];
        expert_speeds.push_back(std::hypot(a.x - b.x, a.y - b.y) / scn.dt);
      }

    std::vector<Footprint> fps;
    for (const auto& ag : scn.agents) fps.push_back({ag.length, ag.width});

    std::vector<double> min_ade(n, std::numeric_limits<double>::infinity());
    std::unique_ptr<TokenPolicy> policy = make_policy(scn, si);
    for (int r = 0; r < R; ++r) {
      Rollout ro = rollout(*policy, scn, vocab,
                           derive_seed(seed, 0xEEAAull + si * 1024 + r));
      std::vector<bool> hit(n, false);
      for (const auto& st : ro.states) {
        for (const auto& [i, j] : detect_collisions(st, fps)) {
          hit[i] = true;
          hit[j] = true;
        }
        if (st.t > 0)
          for (int i = 0; i < n; ++i) {
            if (offroad(st.poses[i], scn.map)) ++offroad_steps;
            ++total_steps;
            policy_speeds.push_back(st.speeds[i]);
          }
      }
      for (int i = 0; i < n; ++i) {
        colliding_pairs += hit[i] ? 1 : 0;
        ++total_pairs;
        double dsum = 0.0;
        for (int t = 1; t <= T; ++t)
          dsum += std::hypot(ro.states[t].poses[i].x - expert_ep.poses[i][t].x,
                             ro.states[t].poses[i].y - expert_ep.poses[i][t].y);
        min_ade[i] = std::min(min_ade[i], dsum / T);
      }
    }
    for (int i = 0; i < n; ++i) {
      ade_sum += min_ade[i];
      ++ade_count;
    }
  }

  MetricsReport m;
  m.rollouts = R;
  m.collision_likelihood =
      1.0 - static_cast<double>(colliding_pairs) / static_cast<double>(total_pairs);
  m.offroad_rate = static_cast<double>(offroad_steps) / static_cast<double>(total_steps);
  m.speed_jsd =
      jensen_shannon(speed_histogram(policy_speeds), speed_histogram(expert_speeds));
  m.min_ade_m = ade_sum / static_cast<double>(ade_count);
  return m;
}

PolicyFactory learned_policy_factory(ag::ParamStore& store, const ModelConfig& cfg) {
  auto cache = std::make_shared<std::map<std::uint64_t, std::vector<Vec>>>();
  return [&store, cfg, cache](const Scenario& scn,
                              std::size_t) -> std::unique_ptr<TokenPolicy> {
    const std::uint64_t h = scenario_hash(scn);
    auto it = cache->find(h);
    if (it == cache->end())
      it = cache->emplace(h, encode_map_frozen(store, cfg, scn.map)).first;
    return std::make_unique<LearnedPolicy>(store, cfg, &it->second);
  };
}

PolicyFactory expert_policy_factory(const IdmParams& idm, const TokenVocab& vocab) {
  return [idm, &vocab](const Scenario&, std::size_t) -> std::unique_ptr<TokenPolicy> {
    return std::make_unique<ExpertPolicy>(idm, &vocab);
  };
}

std::string metrics_to_csv(const MetricsReport& m) {
  std::ostringstream out;
  out.precision(17);
  out << "collision_likelihood,offroad_rate,speed_jsd,min_ade_m,rollouts\n"
      << m.collision_likelihood << ',' << m.offroad_rate << ',' << m.speed_jsd << ','
      << m.min_ade_m << ',' << m.rollouts << '\n';
  return out.str();
}

MetricsReport metrics_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string header, line;
  if (!std::getline(in, header) || !std::getline(in, line))
    throw std::invalid_argument("metrics_from_csv: malformed input");
  MetricsReport m;
  std::istringstream row(line);
  char comma;
  row >> m.collision_likelihood >> comma >> m.offroad_rate >> comma >> m.speed_jsd >>
      comma >> m.min_ade_m >> comma >> m.rollouts;
  if (row.fail()) throw std::invalid_argument("metrics_from_csv: malformed row");
  return m;
}

}  // namespace dgail
