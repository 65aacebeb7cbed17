#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "expertgen/evalharness.hpp"

namespace expertgen {

/// Every CSV starts with a header row; reals are written with %.17g so reruns are byte-identical.
std::string format_real(double v);

/// chain,x_0,...,x_{n-1}
void write_samples_csv(const std::string& path, const Mat& samples);

/// chain,step,t,s,applied_weight,loss,grad_norm,clipped_fraction,max_abs_clipped,
/// z_0..z_{d-1},x0_0..x0_{d-1},obs_0..obs_{m-1}
void write_trace_csv(const std::string& path, const std::vector<SamplerTrace>& traces);

/// name,task_metric,mean_nll,sw,penalty_count,n_samples,fingerprint
void write_metrics_csv(const std::string& path, const std::vector<MetricReport>& reports);

/// axis,value,expert,task_metric,mean_nll,sw,penalty_count,n_samples
void write_sweep_csv(const std::string& path, const std::vector<SweepRow>& rows);

/// step,t,backend,sw,cosine,baseline_sw
void write_trajectory_csv(const std::string& path, const TrajectoryReport& report);

/// evaluator,task_metric,mean_nll,penalty_count,n_samples
void write_invariance_csv(const std::string& path, const std::vector<InvarianceRow>& rows);

void write_manifest(const std::string& path, const nlohmann::json& manifest);

/// 2-D scatter of the first two columns over 1- and 2-sigma ellipses of each component.
void write_scatter_svg(const std::string& path, const Mat& samples, const GaussianMixture& mixture);

/// SW and cosine against grid step, one line per backend.
void write_trajectory_svg(const std::string& path, const TrajectoryReport& report);

/// Short stable hash (FNV-1a, hex) of a JSON document, used as a config fingerprint.
std::string fingerprint(const nlohmann::json& doc);

}  // namespace expertgen
