#pragma once

#include <map>
#include <string>
#include <vector>

#include "latentda/assimilation.hpp"
#include "latentda/dynamics.hpp"
#include "latentda/harness.hpp"
#include "latentda/neural.hpp"
#include "latentda/reduction.hpp"

namespace latentda {

// Dataset format "al96 v1": one text header line
//   al96 v1 <time> <n_sim> <dim> <space_tag> <seed> <delta_t> <forcing> <burn>
// followed by little-endian float64 in (time, sim, dim) row-major order.
void save_dataset(const std::string& path, const TrajectoryDataset& data);
TrajectoryDataset load_dataset(const std::string& path);

std::string space_tag_name(SpaceTag tag);
SpaceTag parse_space_tag(const std::string& name);

// Checkpoint format "mlp v1": self-describing text header (net sections with
// layer shapes, activations and ReZero alpha counts, plus training metadata)
// followed by a little-endian float64 blob holding parameters and, when the
// moments flag is set, Adam moment mirrors.
void save_checkpoint(const std::string& path, const Checkpoint& ckpt,
                     bool include_moments = true);
Checkpoint load_checkpoint(const std::string& path);

// "pca v1" and "linreg v1": same header + blob conventions as checkpoints.
void save_pca(const std::string& path, const PcaModel& model);
PcaModel load_pca(const std::string& path);
void save_linreg(const std::string& path, const LinRegModel& model);
LinRegModel load_linreg(const std::string& path);

void save_loss_curves_csv(const std::string& path,
                          const std::vector<EpochStats>& curves);
void save_rmse_csv(const std::string& path, const std::vector<double>& series);
void save_grid_csv(const std::string& path, const GridReport& report);

void save_run_report_json(const std::string& path, const RunReport& report);
void save_grid_report_json(const std::string& path, const GridReport& report,
                           const DaConfig& base);
void save_timing_report_json(const std::string& path, const std::string& method,
                             const TimingReport& report, const DaConfig& cfg);

// Flat "key = value" text (# comments allowed), mirroring DaConfig/GridSpec
// field names.
std::map<std::string, std::string> load_kv_config(const std::string& path);
void apply_kv(const std::map<std::string, std::string>& kv, DaConfig& cfg);
GridSpec parse_grid_spec(const std::map<std::string, std::string>& kv);

}  // namespace latentda
