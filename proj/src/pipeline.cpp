#include "milab/pipeline.hpp"

#include <utility>

#include "milab/estimation.hpp"
#include "milab/icp.hpp"
#include "milab/planning.hpp"

namespace milab {

namespace {

void parse_synth(const Json& j, SynthSpec& spec) {
  for (const auto& [key, value] : j.items()) {
    if (key == "d") {
      spec.d = value.get<int>();
    } else if (key == "domain_sizes") {
      spec.domain_sizes = value.get<std::vector<int>>();
    } else if (key == "action_count") {
      spec.action_count = value.get<int>();
    } else if (key == "max_parents") {
      spec.max_parents = value.get<int>();
    } else if (key == "gamma") {
      spec.gamma = value.get<double>();
    } else if (key == "r_max") {
      spec.r_max = value.get<double>();
    } else if (key == "dirichlet_alpha") {
      spec.dirichlet_alpha = value.get<double>();
    } else {
      throw InvalidInput("unknown synth key: " + key);
    }
  }
  if (spec.domain_sizes.empty()) spec.domain_sizes.assign(spec.d, 3);
}

void parse_instance(const Json& j, InstanceConfig& inst) {
  for (const auto& [key, value] : j.items()) {
    if (key == "kind") {
      inst.kind = value.get<std::string>();
    } else if (key == "synth") {
      parse_synth(value, inst.synth);
    } else if (key == "synth_seed") {
      inst.synth_seed = value.get<std::uint64_t>();
    } else if (key == "path") {
      inst.path = value.get<std::string>();
    } else {
      throw InvalidInput("unknown instance key: " + key);
    }
  }
  if (inst.kind != "linear_chain" && inst.kind != "synth" && inst.kind != "file")
    throw InvalidInput("instance kind must be linear_chain, synth, or file");
  if (inst.kind == "file" && inst.path.empty())
    throw InvalidInput("instance kind file needs a path");
}

void parse_query(const Json& j, ExperimentConfig& config) {
  for (const auto& [key, value] : j.items()) {
    if (key == "x") {
      config.query_x = value.get<StateVector>();
    } else if (key == "a") {
      config.query_a = value.get<int>();
    } else if (key == "x_next") {
      config.query_x_next = value.get<StateVector>();
    } else {
      throw InvalidInput("unknown query key: " + key);
    }
  }
  if (!config.query_x || !config.query_a || !config.query_x_next)
    throw InvalidInput("query needs x, a, and x_next");
}

}  // namespace

ExperimentConfig default_config() { return ExperimentConfig{}; }

ExperimentConfig config_from_json(const Json& j) {
  ExperimentConfig config;
  for (const auto& [key, value] : j.items()) {
    if (key == "instance") {
      parse_instance(value, config.instance);
    } else if (key == "env_count") {
      config.env_count = value.get<int>();
    } else if (key == "policy_rows") {
      config.policy_rows = value.get<std::vector<std::vector<double>>>();
    } else if (key == "alpha") {
      config.alpha = value.get<double>();
    } else if (key == "horizon") {
      config.horizon = value.get<int>();
    } else if (key == "samples_per_env") {
      config.samples_per_env = value.get<std::int64_t>();
    } else if (key == "sample_grid") {
      config.sample_grid = value.get<std::vector<std::int64_t>>();
    } else if (key == "seeds") {
      config.seeds = value.get<std::vector<std::uint64_t>>();
    } else if (key == "query") {
      parse_query(value, config);
    } else if (key == "estimator") {
      config.estimator = value.get<std::string>();
    } else if (key == "dataset_path") {
      config.dataset_path = value.get<std::string>();
    } else if (key == "phi") {
      config.phi_override = value.get<std::vector<std::vector<int>>>();
    } else if (key == "tol") {
      config.tol = value.get<double>();
    } else {
      throw InvalidInput("unknown config key: " + key);
    }
  }
  if (config.estimator != "mle" && config.estimator != "invariant")
    throw InvalidInput("estimator must be mle or invariant");
  if (config.env_count < 1) throw InvalidInput("env_count must be positive");
  if (config.horizon < 1) throw InvalidInput("horizon must be positive");
  if (config.samples_per_env < 1) throw InvalidInput("samples_per_env must be positive");
  if (config.alpha <= 0.0 || config.alpha >= 1.0)
    throw InvalidInput("alpha must lie in (0,1)");
  return config;
}

Instance build_instance(const ExperimentConfig& config, std::uint64_t seed) {
  Instance inst;
  if (config.instance.kind == "linear_chain") {
    LinearChainInstance chain = linear_chain_benchmark();
    inst.cdp = std::move(chain.cdp);
    inst.query = chain.query;
    // env_count beyond the three built-in mixtures cycles through them.
    for (int e = 0; e < config.env_count; ++e)
      inst.policies.push_back(chain.policies[e % chain.policies.size()]);
  } else if (config.instance.kind == "synth") {
    inst.cdp = synth_random_cdp(config.instance.synth, config.instance.synth_seed.value_or(seed));
  } else {
    inst.cdp = cdp_from_json(Json::parse(read_file(config.instance.path)));
  }
  inst.horizon = config.horizon;

  const std::int64_t n = inst.cdp.state_count();
  if (!config.policy_rows.empty()) {
    inst.policies.clear();
    for (const auto& row : config.policy_rows) inst.policies.push_back(Policy::from_row(n, row));
  } else if (inst.policies.empty()) {
    // One Dirichlet(1) action row per environment, state independent, so
    // different environments explore with visibly different action mixes.
    for (int e = 0; e < config.env_count; ++e) {
      Rng rng(sub_seed(seed, 9000 + static_cast<std::uint64_t>(e)));
      std::exponential_distribution<double> exp1(1.0);
      std::vector<double> row(inst.cdp.action_count);
      double total = 0.0;
      for (double& v : row) total += (v = exp1(rng));
      for (double& v : row) v /= total;
      inst.policies.push_back(Policy::from_row(n, row));
    }
  }
  for (const auto& policy : inst.policies) policy.validate(n);

  if (config.query_x) {
    TransitionQuery q;
    q.x = *config.query_x;
    q.a = *config.query_a;
    q.x_next = *config.query_x_next;
    q.truth = inst.cdp.transition_prob(q.x, q.a, q.x_next);
    inst.query = q;
  }
  return inst;
}

std::vector<EnvironmentDataset> gather_data(const ExperimentConfig& config,
                                            const Instance& instance, std::uint64_t seed) {
  if (!config.dataset_path.empty())
    return dataset_from_jsonl(read_file(config.dataset_path));
  std::vector<EnvironmentDataset> data;
  for (int e = 0; e < static_cast<int>(instance.policies.size()); ++e) {
    data.push_back(collect_n_records(instance.cdp, instance.policies[e], config.samples_per_env,
                                     instance.horizon,
                                     sub_seed(seed, 101 + static_cast<std::uint64_t>(e)), e));
  }
  return data;
}

Json run_pipeline(const ExperimentConfig& config, std::uint64_t seed) {
  const Instance inst = build_instance(config, seed);
  const std::vector<EnvironmentDataset> data = gather_data(config, inst, seed);
  const CdpShape shape = inst.cdp.shape();

  const IcpAllResult icp = icp_all(data, shape, config.alpha);
  int envs_with_records = 0;
  for (const auto& env : data) envs_with_records += env.records.empty() ? 0 : 1;
  const bool uninformative = envs_with_records < 2;

  AbstractionPhi phi_used = icp.phi;
  if (config.phi_override) {
    phi_used.index_sets = *config.phi_override;
    phi_used.validate(shape.d);
  }

  const EstimatedModel invariant = estimate_invariant(data, shape, phi_used);
  const EstimatedModel mle = estimate_mle(data, shape);
  const EstimatedModel& chosen = config.estimator == "mle" ? mle : invariant;
  const CePlanReport plan = certainty_equivalence_plan(inst.cdp, chosen, config.tol);

  Json report;
  report["seed"] = seed;
  report["alpha"] = config.alpha;
  report["env_count"] = static_cast<int>(inst.policies.size());
  report["samples_per_env"] = config.samples_per_env;
  report["estimator"] = config.estimator;
  report["icp"] = icp_all_to_json(icp);
  report["icp_uninformative"] = uninformative;
  report["recovered_parents"] = phi_to_json(icp.phi);
  report["phi_used"] = phi_to_json(phi_used);
  report["true_parents"] = inst.cdp.parents;

  if (inst.query) {
    Json q;
    q["x"] = inst.query->x;
    q["a"] = inst.query->a;
    q["x_next"] = inst.query->x_next;
    q["truth"] = inst.query->truth;
    for (const auto& [model, label] :
         {std::pair{&mle, "mle"}, std::pair{&invariant, "invariant"}}) {
      const auto est = model->transition_prob(inst.query->x, inst.query->a, inst.query->x_next);
      Json entry;
      entry["estimate"] = est ? Json(*est) : Json(nullptr);
      entry["nodata"] = !est.has_value();
      q[label] = std::move(entry);
    }
    report["query"] = std::move(q);
  } else {
    report["query"] = nullptr;
  }

  report["plan"] = Json{{"v_star", plan.v_star},
                        {"v_pi", plan.v_pi},
                        {"gap", plan.gap},
                        {"fallback_pairs", plan.fallback_pairs},
                        {"total_pairs", plan.total_pairs}};
  return report;
}

}  // namespace milab
