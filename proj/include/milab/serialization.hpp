#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "milab/estimation.hpp"
#include "milab/icp.hpp"
#include "milab/planning.hpp"
#include "milab/verify.hpp"

namespace milab {

using Json = nlohmann::json;

// Process spec as a JSON document:
//   {d, domain_sizes, action_count, gamma, r_max, parents: [[...]],
//    factors: per variable [key][action][value], reward: [state][action],
//    mu0: [state]}
// Round-trips exactly: nlohmann serializes doubles with shortest
// value-preserving representation.
Json cdp_to_json(const FactoredCdp& cdp);
FactoredCdp cdp_from_json(const Json& j);

// Array of integer arrays, one per variable.
Json phi_to_json(const AbstractionPhi& phi);
AbstractionPhi phi_from_json(const Json& j);

// JSON-lines, one record per line with keys {env, t, x, a, x_next, r}.
std::string dataset_to_jsonl(const std::vector<EnvironmentDataset>& data);
std::vector<EnvironmentDataset> dataset_from_jsonl(const std::string& text);

// {target, alpha, accepted: [{subset, p}], estimate, rejected: bool}
Json icp_result_to_json(const IcpResult& r);
Json icp_all_to_json(const IcpAllResult& r);

Json estimated_model_to_json(const EstimatedModel& m);
EstimatedModel estimated_model_from_json(const Json& j);

Json model_error_report_to_json(const ModelErrorBoundReport& r);
Json value_loss_report_to_json(const ValueLossBoundReport& r);
Json parent_sweep_to_json(const ParentInvarianceSweepReport& r);
Json model_error_sweep_to_json(const ModelErrorSweepReport& r);
Json value_loss_sweep_to_json(const ValueLossSweepReport& r);

// CSV with header env_id,n,estimator,seed,estimate,truth,flag; flag is
// "nodata" for fallback rows and "ok" otherwise.
std::string convergence_rows_to_csv(const std::vector<ConvergenceRow>& rows);

// Write-temp-then-rename so readers never observe a partial file. Creates
// parent directories as needed.
void atomic_write_file(const std::filesystem::path& path, const std::string& content);
std::string read_file(const std::filesystem::path& path);

}  // namespace milab
