#include "milab/serialization.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <utility>

namespace milab {

namespace {

// Shortest value-preserving decimal form, same routine nlohmann uses for
// doubles, so text written here reparses to the identical bits.
std::string number_text(double v) { return Json(v).dump(); }

}  // namespace

Json cdp_to_json(const FactoredCdp& cdp) {
  Json j;
  j["d"] = cdp.d;
  j["domain_sizes"] = cdp.domain_sizes;
  j["action_count"] = cdp.action_count;
  j["gamma"] = cdp.gamma;
  j["r_max"] = cdp.r_max;
  j["parents"] = cdp.parents;

  Json factors = Json::array();
  for (int i = 0; i < cdp.d; ++i) {
    Json table = Json::array();
    for (std::int64_t key = 0; key < cdp.key_count(i); ++key) {
      Json per_action = Json::array();
      for (int a = 0; a < cdp.action_count; ++a) {
        auto row = cdp.factor_row(i, key, a);
        per_action.push_back(std::vector<double>(row.begin(), row.end()));
      }
      table.push_back(std::move(per_action));
    }
    factors.push_back(std::move(table));
  }
  j["factors"] = std::move(factors);

  Json reward = Json::array();
  const std::int64_t n = cdp.state_count();
  for (std::int64_t x = 0; x < n; ++x) {
    Json per_action = Json::array();
    for (int a = 0; a < cdp.action_count; ++a) per_action.push_back(cdp.reward_at(x, a));
    reward.push_back(std::move(per_action));
  }
  j["reward"] = std::move(reward);
  j["mu0"] = cdp.mu0;
  return j;
}

FactoredCdp cdp_from_json(const Json& j) {
  FactoredCdp cdp;
  cdp.d = j.at("d").get<int>();
  cdp.domain_sizes = j.at("domain_sizes").get<std::vector<int>>();
  cdp.action_count = j.at("action_count").get<int>();
  cdp.gamma = j.at("gamma").get<double>();
  cdp.r_max = j.at("r_max").get<double>();
  cdp.parents = j.at("parents").get<std::vector<std::vector<int>>>();

  const Json& factors = j.at("factors");
  if (!factors.is_array() || static_cast<int>(factors.size()) != cdp.d)
    throw InvalidInput("factors must be an array with one table per variable");
  cdp.factors.resize(cdp.d);
  for (int i = 0; i < cdp.d; ++i) {
    std::vector<double> flat;
    for (const Json& per_action : factors.at(i)) {
      for (const Json& row : per_action) {
        for (const Json& v : row) flat.push_back(v.get<double>());
      }
    }
    cdp.factors[i] = std::move(flat);
  }

  cdp.reward.clear();
  for (const Json& per_action : j.at("reward")) {
    for (const Json& v : per_action) cdp.reward.push_back(v.get<double>());
  }
  cdp.mu0 = j.at("mu0").get<std::vector<double>>();
  cdp.validate();
  return cdp;
}

Json phi_to_json(const AbstractionPhi& phi) { return Json(phi.index_sets); }

AbstractionPhi phi_from_json(const Json& j) {
  AbstractionPhi phi;
  phi.index_sets = j.get<std::vector<std::vector<int>>>();
  return phi;
}

std::string dataset_to_jsonl(const std::vector<EnvironmentDataset>& data) {
  std::string out;
  for (const auto& env : data) {
    for (const auto& rec : env.records) {
      Json line;
      line["env"] = rec.env;
      line["t"] = rec.t;
      line["x"] = rec.x;
      line["a"] = rec.a;
      line["x_next"] = rec.x_next;
      line["r"] = rec.r;
      out += line.dump();
      out += '\n';
    }
  }
  return out;
}

std::vector<EnvironmentDataset> dataset_from_jsonl(const std::string& text) {
  std::vector<EnvironmentDataset> out;
  std::vector<int> env_pos;  // env id -> index into out, -1 when unseen
  std::istringstream stream(text);
  std::string line;
  while (std::getline(stream, line)) {
    if (line.empty()) continue;
    const Json j = Json::parse(line);
    TransitionRecord rec;
    rec.env = j.at("env").get<int>();
    rec.t = j.at("t").get<int>();
    rec.x = j.at("x").get<StateVector>();
    rec.a = j.at("a").get<int>();
    rec.x_next = j.at("x_next").get<StateVector>();
    rec.r = j.at("r").get<double>();
    if (rec.env < 0) throw InvalidInput("record env id must be nonnegative");
    if (rec.env >= static_cast<int>(env_pos.size())) env_pos.resize(rec.env + 1, -1);
    if (env_pos[rec.env] < 0) {
      env_pos[rec.env] = static_cast<int>(out.size());
      out.push_back(EnvironmentDataset{rec.env, 0, {}});
    }
    auto& env = out[env_pos[rec.env]];
    env.horizon = std::max(env.horizon, rec.t + 1);
    env.records.push_back(std::move(rec));
  }
  std::sort(out.begin(), out.end(),
            [](const EnvironmentDataset& a, const EnvironmentDataset& b) {
              return a.env_id < b.env_id;
            });
  return out;
}

Json icp_result_to_json(const IcpResult& r) {
  Json j;
  j["target"] = r.target;
  j["alpha"] = r.alpha;
  Json accepted = Json::array();
  for (const auto& v : r.accepted) accepted.push_back(Json{{"subset", v.subset}, {"p", v.p}});
  j["accepted"] = std::move(accepted);
  j["estimate"] = r.parent_estimate;
  j["rejected"] = r.model_rejected;
  return j;
}

Json icp_all_to_json(const IcpAllResult& r) {
  Json targets = Json::array();
  for (const auto& res : r.per_target) targets.push_back(icp_result_to_json(res));
  return Json{{"targets", std::move(targets)}, {"phi", phi_to_json(r.phi)}};
}

Json estimated_model_to_json(const EstimatedModel& m) {
  Json j;
  j["kind"] = m.kind == EstimatorKind::kMle ? "mle" : "invariant";
  j["shape"] = Json{{"d", m.shape.d},
                    {"domain_sizes", m.shape.domain_sizes},
                    {"action_count", m.shape.action_count}};
  if (m.kind == EstimatorKind::kInvariant) j["phi"] = phi_to_json(m.phi);

  // Hash maps iterate in unspecified order; sort by key so equal models
  // serialize to equal bytes.
  std::vector<std::int64_t> keys;
  keys.reserve(m.mle.size());
  for (const auto& [key, counts] : m.mle) keys.push_back(key);
  std::sort(keys.begin(), keys.end());
  Json pairs = Json::array();
  for (std::int64_t key : keys) {
    const auto& counts = m.mle.at(key);
    Json next = Json::array();
    for (const auto& [state, hits] : counts.next) next.push_back(Json::array({state, hits}));
    pairs.push_back(Json{{"key", key}, {"total", counts.total}, {"next", std::move(next)}});
  }
  j["pairs"] = std::move(pairs);

  Json dims = Json::array();
  for (const auto& table : m.dims) {
    keys.clear();
    for (const auto& [key, counts] : table) keys.push_back(key);
    std::sort(keys.begin(), keys.end());
    Json rows = Json::array();
    for (std::int64_t key : keys) {
      const auto& counts = table.at(key);
      rows.push_back(Json{{"key", key}, {"counts", counts.counts}, {"total", counts.total}});
    }
    dims.push_back(std::move(rows));
  }
  j["dims"] = std::move(dims);
  return j;
}

EstimatedModel estimated_model_from_json(const Json& j) {
  EstimatedModel m;
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "mle") {
    m.kind = EstimatorKind::kMle;
  } else if (kind == "invariant") {
    m.kind = EstimatorKind::kInvariant;
  } else {
    throw InvalidInput("estimator kind must be mle or invariant");
  }
  const Json& shape = j.at("shape");
  m.shape.d = shape.at("d").get<int>();
  m.shape.domain_sizes = shape.at("domain_sizes").get<std::vector<int>>();
  m.shape.action_count = shape.at("action_count").get<int>();
  m.shape.validate();
  if (j.contains("phi")) m.phi = phi_from_json(j.at("phi"));

  for (const Json& pair : j.at("pairs")) {
    EstimatedModel::SparseCounts counts;
    counts.total = pair.at("total").get<std::int64_t>();
    for (const Json& entry : pair.at("next"))
      counts.next.emplace_back(entry.at(0).get<std::int64_t>(), entry.at(1).get<std::int64_t>());
    m.mle.emplace(pair.at("key").get<std::int64_t>(), std::move(counts));
  }
  for (const Json& table : j.at("dims")) {
    std::unordered_map<std::int64_t, EstimatedModel::DimCounts> dim;
    for (const Json& row : table) {
      EstimatedModel::DimCounts counts;
      counts.counts = row.at("counts").get<std::vector<std::int64_t>>();
      counts.total = row.at("total").get<std::int64_t>();
      dim.emplace(row.at("key").get<std::int64_t>(), std::move(counts));
    }
    m.dims.push_back(std::move(dim));
  }
  return m;
}

Json model_error_report_to_json(const ModelErrorBoundReport& r) {
  return Json{{"states", r.states},
              {"actions", r.actions},
              {"eps_sum", r.eps_sum},
              {"max_lhs", r.max_lhs},
              {"min_slack", r.min_slack},
              {"max_route_gap", r.max_route_gap},
              {"bound_holds", r.bound_holds},
              {"routes_agree", r.routes_agree},
              {"lhs", r.lhs}};
}

Json value_loss_report_to_json(const ValueLossBoundReport& r) {
  return Json{{"c", r.c},
              {"bound1_lhs", r.bound1_lhs},
              {"bound1_rhs", r.bound1_rhs},
              {"slack1", r.slack1},
              {"bound2_lhs", r.bound2_lhs},
              {"bound2_rhs", r.bound2_rhs},
              {"slack2", r.slack2},
              {"holds", r.holds}};
}

Json parent_sweep_to_json(const ParentInvarianceSweepReport& r) {
  return Json{
      {"count", r.count}, {"failures", r.failures}, {"seconds", r.seconds}, {"ok", r.ok()}};
}

Json model_error_sweep_to_json(const ModelErrorSweepReport& r) {
  return Json{{"count", r.count},
              {"violations", r.violations},
              {"route_disagreements", r.route_disagreements},
              {"min_slack", r.min_slack},
              {"max_route_gap", r.max_route_gap},
              {"seconds", r.seconds},
              {"ok", r.ok()}};
}

Json value_loss_sweep_to_json(const ValueLossSweepReport& r) {
  return Json{{"count", r.count},
              {"violations", r.violations},
              {"min_slack1", r.min_slack1},
              {"min_slack2", r.min_slack2},
              {"seconds", r.seconds},
              {"ok", r.ok()}};
}

std::string convergence_rows_to_csv(const std::vector<ConvergenceRow>& rows) {
  std::string out = "env_id,n,estimator,seed,estimate,truth,flag\n";
  for (const auto& row : rows) {
    out += std::to_string(row.env_id);
    out += ',';
    out += std::to_string(row.n);
    out += ',';
    out += row.estimator;
    out += ',';
    out += std::to_string(row.seed);
    out += ',';
    out += number_text(row.estimate);
    out += ',';
    out += number_text(row.truth);
    out += ',';
    out += row.nodata ? "nodata" : "ok";
    out += '\n';
  }
  return out;
}

void atomic_write_file(const std::filesystem::path& path, const std::string& content) {
  namespace fs = std::filesystem;
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw InvalidInput("cannot open for write: " + tmp.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    out.flush();
    if (!out) throw InvalidInput("short write: " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidInput("cannot open for read: " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

}  // namespace milab
