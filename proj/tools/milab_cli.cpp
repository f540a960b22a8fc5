// Command line front end. Subcommands cover the full loop: synthesize or
// load a process, collect multi-environment data, search invariant parent
// sets, fit both estimators, plan by certainty equivalence, and run the
// brute-force verification sweeps.
//
// Exit codes: 0 success, 2 validation failure (structured error JSON on
// stderr), 3 verification violation, 64 usage error.

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <limits>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <Eigen/Dense>

#include "milab/estimation.hpp"
#include "milab/icp.hpp"
#include "milab/invariance_loss.hpp"
#include "milab/pipeline.hpp"
#include "milab/planning.hpp"
#include "milab/verify.hpp"

namespace {

using namespace milab;
namespace fs = std::filesystem;

struct CommonOpts {
  std::string config_path;
  std::uint64_t seed = 1;
  std::string out = "out";
  double alpha = -1.0;  // negative = not set on the command line
  double tol = -1.0;
};

// LAB_OUT, when set and nonempty, wins over --out.
fs::path resolve_out(const std::string& flag_value) {
  if (const char* env = std::getenv("LAB_OUT"); env != nullptr && *env != '\0') return env;
  return flag_value;
}

ExperimentConfig load_config(const CommonOpts& opts) {
  ExperimentConfig config =
      opts.config_path.empty() ? default_config()
                               : config_from_json(Json::parse(read_file(opts.config_path)));
  if (opts.alpha >= 0.0) config.alpha = opts.alpha;
  if (opts.tol >= 0.0) config.tol = opts.tol;
  return config;
}

void write_json_file(const fs::path& path, const Json& j) {
  atomic_write_file(path, j.dump(2) + "\n");
  std::cout << "wrote " << path.string() << "\n";
}

int run_synth(const CommonOpts& opts) {
  ExperimentConfig config = load_config(opts);
  // Bare `synth` with no config means "draw me a random process".
  if (opts.config_path.empty()) config.instance.kind = "synth";
  const Instance inst = build_instance(config, opts.seed);
  write_json_file(resolve_out(opts.out) / "cdp.json", cdp_to_json(inst.cdp));
  return 0;
}

int run_collect(const CommonOpts& opts) {
  const ExperimentConfig config = load_config(opts);
  const Instance inst = build_instance(config, opts.seed);
  const auto data = gather_data(config, inst, opts.seed);
  atomic_write_file(resolve_out(opts.out) / "dataset.jsonl", dataset_to_jsonl(data));
  std::int64_t n = 0;
  for (const auto& env : data) n += static_cast<std::int64_t>(env.records.size());
  std::cout << "wrote " << (resolve_out(opts.out) / "dataset.jsonl").string() << " (" << n
            << " records, " << data.size() << " environments)\n";
  return 0;
}

int run_icp(const CommonOpts& opts) {
  const ExperimentConfig config = load_config(opts);
  const Instance inst = build_instance(config, opts.seed);
  const auto data = gather_data(config, inst, opts.seed);
  const IcpAllResult icp = icp_all(data, inst.cdp.shape(), config.alpha);
  write_json_file(resolve_out(opts.out) / "icp.json", icp_all_to_json(icp));
  for (const auto& res : icp.per_target) {
    std::cout << "variable " << res.target << ": estimate " << Json(res.parent_estimate).dump()
              << (res.model_rejected ? " (every subset rejected)" : "") << "\n";
  }
  return 0;
}

// Shared by estimate and plan: fit the configured estimator, pooling with
// the explicit phi from the config when present and the recovered one
// otherwise.
EstimatedModel fit_configured_model(const ExperimentConfig& config, const Instance& inst,
                                    const std::vector<EnvironmentDataset>& data) {
  const CdpShape shape = inst.cdp.shape();
  if (config.estimator == "mle") return estimate_mle(data, shape);
  AbstractionPhi phi;
  if (config.phi_override) {
    phi.index_sets = *config.phi_override;
    phi.validate(shape.d);
  } else {
    phi = icp_all(data, shape, config.alpha).phi;
  }
  return estimate_invariant(data, shape, phi);
}

int run_estimate(const CommonOpts& opts) {
  const ExperimentConfig config = load_config(opts);
  const Instance inst = build_instance(config, opts.seed);
  const auto data = gather_data(config, inst, opts.seed);
  const EstimatedModel model = fit_configured_model(config, inst, data);
  write_json_file(resolve_out(opts.out) / "model.json", estimated_model_to_json(model));
  if (inst.query) {
    const auto est = model.transition_prob(inst.query->x, inst.query->a, inst.query->x_next);
    std::cout << "query estimate: " << (est ? Json(*est).dump() : std::string("nodata"))
              << " (truth " << inst.query->truth << ")\n";
  }
  return 0;
}

int run_plan(const CommonOpts& opts) {
  const ExperimentConfig config = load_config(opts);
  const Instance inst = build_instance(config, opts.seed);
  const auto data = gather_data(config, inst, opts.seed);
  const EstimatedModel model = fit_configured_model(config, inst, data);
  const CePlanReport plan = certainty_equivalence_plan(inst.cdp, model, config.tol);

  Json j{{"v_star", plan.v_star},
         {"v_pi", plan.v_pi},
         {"gap", plan.gap},
         {"fallback_pairs", plan.fallback_pairs},
         {"total_pairs", plan.total_pairs},
         {"estimator", config.estimator}};
  if (inst.cdp.state_count() <= 4096) {
    std::vector<int> actions;
    for (std::int64_t x = 0; x < inst.cdp.state_count(); ++x) {
      const auto row = plan.policy.row(x);
      int best = 0;
      for (int a = 1; a < plan.policy.action_count; ++a)
        if (row[a] > row[best]) best = a;
      actions.push_back(best);
    }
    j["policy_actions"] = actions;
  }
  write_json_file(resolve_out(opts.out) / "plan.json", j);
  std::cout << "v_star " << plan.v_star << ", v_pi " << plan.v_pi << ", gap " << plan.gap
            << " (" << plan.fallback_pairs << "/" << plan.total_pairs
            << " state-action pairs unseen)\n";
  return 0;
}

int run_fig2(const CommonOpts& opts) {
  const ExperimentConfig config = load_config(opts);
  const Instance inst = build_instance(config, opts.seed);
  if (!inst.query)
    throw InvalidInput("the convergence sweep needs a probe query (linear_chain has a built-in "
                       "one; other instances need a query block in the config)");
  ConvergenceSpec spec;
  spec.sample_grid = config.sample_grid;
  spec.seeds = config.seeds;
  spec.horizon = inst.horizon;
  spec.query = *inst.query;
  const auto rows = convergence_experiment(inst.cdp, inst.policies, spec, opts.seed);
  const fs::path path = resolve_out(opts.out) / "fig2.csv";
  atomic_write_file(path, convergence_rows_to_csv(rows));
  std::cout << "wrote " << path.string() << " (" << rows.size() << " rows)\n";
  return 0;
}

int run_pipeline_cmd(const CommonOpts& opts) {
  const ExperimentConfig config = load_config(opts);
  const Json report = run_pipeline(config, opts.seed);
  write_json_file(resolve_out(opts.out) / "report.json", report);
  std::cout << "recovered parents " << report.at("recovered_parents").dump() << ", plan gap "
            << report.at("plan").at("gap").dump() << "\n";
  return 0;
}

int run_verify_theorem1(const CommonOpts& opts, int count) {
  const auto rep = parent_invariance_sweep(count, opts.seed);
  write_json_file(resolve_out(opts.out) / "verify_theorem1.json", parent_sweep_to_json(rep));
  std::cout << "parent-abstraction invariance: " << rep.count << " instances, " << rep.failures
            << " failures, " << rep.seconds << "s\n";
  return rep.ok() ? 0 : 3;
}

int run_verify_lemma1(const CommonOpts& opts, int count) {
  const auto rep = model_error_bound_sweep(count, opts.seed);
  write_json_file(resolve_out(opts.out) / "verify_lemma1.json", model_error_sweep_to_json(rep));
  std::cout << "model-error bound: " << rep.count << " instances, " << rep.violations
            << " violations, " << rep.route_disagreements << " route disagreements, min slack "
            << rep.min_slack << ", " << rep.seconds << "s\n";
  return rep.ok() ? 0 : 3;
}

int run_verify_theorem2(const CommonOpts& opts, int count) {
  const auto rep = value_loss_bound_sweep(count, opts.seed);
  write_json_file(resolve_out(opts.out) / "verify_theorem2.json", value_loss_sweep_to_json(rep));
  std::cout << "value-loss bound: " << rep.count << " instances, " << rep.violations
            << " violations, min slacks " << rep.min_slack1 << " / " << rep.min_slack2 << ", "
            << rep.seconds << "s\n";
  return rep.ok() ? 0 : 3;
}

Eigen::MatrixXd random_gaussian(int rows, int cols, Rng& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  Eigen::MatrixXd m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = gauss(rng);
  return m;
}

Eigen::MatrixXd random_stochastic(int rows, int cols, Rng& rng) {
  std::exponential_distribution<double> exp1(1.0);
  Eigen::MatrixXd m(rows, cols);
  for (int i = 0; i < rows; ++i) {
    double total = 0.0;
    for (int j = 0; j < cols; ++j) total += (m(i, j) = exp1(rng));
    m.row(i) /= total;
  }
  return m;
}

int run_loss_kernel_check(const CommonOpts& opts) {
  const auto start = std::chrono::steady_clock::now();
  bool all_ok = true;

  // Identical inputs must give a loss of exactly zero, no tolerance.
  bool exact_ok = true;
  for (int k = 0; k < 5; ++k) {
    Rng rng(sub_seed(opts.seed, 100 + static_cast<std::uint64_t>(k)));
    const int n = 3 + k % 3, d = 2 + k % 3;
    const Eigen::MatrixXd z = random_gaussian(n, d, rng);
    for (const LossMode mode : {LossMode::kPerDimension, LossMode::kPerState}) {
      LossConfig cfg;
      cfg.mode = mode;
      cfg.selected_dim = k % d;
      const LinearCritic critic = LinearCritic::random(
          3, mode == LossMode::kPerDimension ? 1 + d : d, sub_seed(opts.seed, 200 + k));
      if (invariance_loss(z, z, cfg, critic).loss != 0.0) exact_ok = false;
    }
  }
  std::cout << "identical-input loss exactly zero          "
            << (exact_ok ? "pass" : "FAIL") << "\n";
  all_ok = all_ok && exact_ok;

  // Analytic gradient vs central finite differences of the split form.
  double worst_rel = 0.0;
  for (int k = 0; k < 20; ++k) {
    Rng rng(sub_seed(opts.seed, 300 + static_cast<std::uint64_t>(k)));
    const int n = 3 + k % 4, d = 2 + k % 3;
    LossConfig cfg;
    cfg.mode = k % 2 == 0 ? LossMode::kPerDimension : LossMode::kPerState;
    cfg.selected_dim = k % d;
    cfg.detach_second = (k / 2) % 2 == 0;
    const LinearCritic critic = LinearCritic::random(
        2 + k % 2, cfg.mode == LossMode::kPerDimension ? 1 + d : d,
        sub_seed(opts.seed, 400 + k));
    const Eigen::MatrixXd z1 = random_gaussian(n, d, rng);
    const Eigen::MatrixXd z2 = random_gaussian(n, d, rng);
    const Eigen::MatrixXd analytic = invariance_loss(z1, z2, cfg, critic).grad_z1;

    const double h = 1e-5;
    Eigen::MatrixXd fd(n, d);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < d; ++j) {
        Eigen::MatrixXd zp = z1, zm = z1;
        zp(i, j) += h;
        zm(i, j) -= h;
        fd(i, j) = (invariance_loss_split(zp, z1, z2, cfg, critic) -
                    invariance_loss_split(zm, z1, z2, cfg, critic)) /
                   (2.0 * h);
      }
    }
    // Floor the scale at 1e-6: below that the central-difference quotient is
    // dominated by cancellation noise (~eps/h), so "relative" error against
    // it would measure the probe, not the gradient.
    const double scale = std::max(fd.cwiseAbs().maxCoeff(), 1e-6);
    worst_rel = std::max(worst_rel, (analytic - fd).cwiseAbs().maxCoeff() / scale);
  }
  const bool grad_ok = worst_rel < 1e-4;
  std::cout << "analytic gradient vs finite differences    " << (grad_ok ? "pass" : "FAIL")
            << " (max rel err " << worst_rel << ")\n";
  all_ok = all_ok && grad_ok;

  // KL of row-stochastic matrices never goes negative.
  double min_kl = std::numeric_limits<double>::infinity();
  for (int k = 0; k < 1000; ++k) {
    Rng rng(sub_seed(opts.seed, 500 + static_cast<std::uint64_t>(k)));
    const int n = 2 + k % 5, m = 2 + (k / 5) % 5;
    const Eigen::MatrixXd p = random_stochastic(n, m, rng);
    const Eigen::MatrixXd q = random_stochastic(n, m, rng);
    min_kl = std::min(min_kl, kl_rows(p, q));
  }
  const bool kl_ok = min_kl >= 0.0;
  std::cout << "kl_rows nonnegative on 1000 random pairs   " << (kl_ok ? "pass" : "FAIL")
            << " (min " << min_kl << ")\n";
  all_ok = all_ok && kl_ok;

  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  std::cout << "elapsed " << seconds << "s\n";
  return all_ok ? 0 : 3;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"laboratory for invariant state abstractions in factored decision processes"};
  app.require_subcommand(1);

  CommonOpts opts;
  const auto add_common = [&opts](CLI::App* sub, bool with_alpha = false, bool with_tol = false) {
    sub->add_option("--config", opts.config_path, "experiment config JSON");
    sub->add_option("--seed", opts.seed, "run seed")->capture_default_str();
    sub->add_option("--out", opts.out, "output directory (LAB_OUT overrides)")
        ->capture_default_str();
    if (with_alpha) sub->add_option("--alpha", opts.alpha, "test level, overrides the config");
    if (with_tol) sub->add_option("--tol", opts.tol, "planner tolerance, overrides the config");
  };

  int verify_count = -1;
  int rc = 0;

  auto* synth = app.add_subcommand("synth", "write a process spec drawn from the config");
  add_common(synth);
  synth->callback([&] { rc = run_synth(opts); });

  auto* collect = app.add_subcommand("collect", "collect per-environment datasets");
  add_common(collect);
  collect->callback([&] { rc = run_collect(opts); });

  auto* icp = app.add_subcommand("icp", "invariant parent search per variable");
  add_common(icp, /*with_alpha=*/true);
  icp->callback([&] { rc = run_icp(opts); });

  auto* estimate = app.add_subcommand("estimate", "fit the configured transition estimator");
  add_common(estimate, /*with_alpha=*/true);
  estimate->callback([&] { rc = run_estimate(opts); });

  auto* plan = app.add_subcommand("plan", "certainty-equivalence planning against the truth");
  add_common(plan, /*with_alpha=*/true, /*with_tol=*/true);
  plan->callback([&] { rc = run_plan(opts); });

  auto* verify = app.add_subcommand("verify", "brute-force verification sweeps");
  verify->require_subcommand(1);
  auto* theorem1 = verify->add_subcommand(
      "theorem1", "parent abstraction satisfies exact per-variable invariance");
  add_common(theorem1);
  theorem1->add_option("--count", verify_count, "instances (default 100)");
  theorem1->callback([&] { rc = run_verify_theorem1(opts, verify_count < 0 ? 100 : verify_count); });
  auto* lemma1 = verify->add_subcommand(
      "lemma1", "pushforward model error bounded by summed per-variable defects");
  add_common(lemma1);
  lemma1->add_option("--count", verify_count, "instances (default 100)");
  lemma1->callback([&] { rc = run_verify_lemma1(opts, verify_count < 0 ? 100 : verify_count); });
  auto* theorem2 = verify->add_subcommand(
      "theorem2", "value loss of the lifted abstract optimum within its bound");
  add_common(theorem2);
  theorem2->add_option("--count", verify_count, "instances (default 50)");
  theorem2->callback([&] { rc = run_verify_theorem2(opts, verify_count < 0 ? 50 : verify_count); });

  auto* fig2 = app.add_subcommand("fig2", "estimator convergence sweep, CSV output");
  add_common(fig2);
  fig2->callback([&] { rc = run_fig2(opts); });

  auto* loss = app.add_subcommand("loss-kernel-check",
                                  "exactness, gradient, and nonnegativity checks of the "
                                  "invariance loss kernel");
  loss->add_option("--seed", opts.seed, "run seed")->capture_default_str();
  loss->callback([&] { rc = run_loss_kernel_check(opts); });

  auto* pipeline = app.add_subcommand("pipeline",
                                      "collect, recover parents, estimate, and plan in one run");
  add_common(pipeline, /*with_alpha=*/true, /*with_tol=*/true);
  pipeline->callback([&] { rc = run_pipeline_cmd(opts); });

  const auto error_json = [](const char* kind, const std::exception& e) {
    std::cerr << Json{{"error", kind}, {"message", e.what()}}.dump() << "\n";
    return 2;
  };

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n(run with --help for usage)\n";
    return 64;
  } catch (const InvalidInput& e) {
    return error_json("invalid_input", e);
  } catch (const TooLarge& e) {
    return error_json("too_large", e);
  } catch (const NoData& e) {
    return error_json("no_data", e);
  } catch (const SingularDesign& e) {
    return error_json("singular_design", e);
  } catch (const DivergentKL& e) {
    return error_json("divergent_kl", e);
  } catch (const Unbounded& e) {
    return error_json("unbounded", e);
  } catch (const Json::exception& e) {
    return error_json("json", e);
  } catch (const std::exception& e) {
    return error_json("error", e);
  }
  return rc;
}
