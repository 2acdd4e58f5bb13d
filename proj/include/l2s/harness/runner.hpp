#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <ostream>
#include <string>
#include <vector>

#include "l2s/core/gaussian.hpp"
#include "l2s/core/view.hpp"
#include "l2s/model/l2s_model.hpp"

namespace l2s::harness {

enum class OptimizerKind { Sgd, Adam3dgs, Adam3dgsStar, L2s, LoBaseline };

OptimizerKind optimizer_from_name(const std::string& name);  // ConfigError
const char* optimizer_name(OptimizerKind kind);

enum class ViewPolicy { FixedAll, Fps8 };

struct RunConfig {
    OptimizerKind optimizer = OptimizerKind::Adam3dgs;
    int iterations = 100;
    std::vector<int> eval_cadence;  // ascending; 0 and `iterations` are implied
    ViewPolicy views = ViewPolicy::FixedAll;
    std::array<bool, kNumParamGroups> freeze{};  // frozen groups get zero update
    std::uint64_t seed = 0;
    std::string model_path;  // checkpoint for l2s / lo-baseline; empty = fresh init
    model::L2SConfig model_cfg = model::L2SConfig::desk();
    std::string snapshot_dir;        // empty disables snapshots
    std::vector<int> snapshot_iters;  // defaults to the eval cadence
    double psnr_cap = 99.0;

    void validate() const;                 // throws ConfigError
    std::vector<int> cadence() const;      // sorted, unique, with 0 and end
};

struct OptimizeRow {
    int iter = 0;
    double wall_ms = 0;  // cumulative optimization time, eval excluded
    double psnr_context = 0, psnr_target = 0;
    double ssim_context = 0, ssim_target = 0;
};

std::string optimize_csv_header();
void write_csv_row(std::ostream& os, const OptimizeRow& row);

// One optimizer's view of an inner iteration: given the current params and
// the raw averaged gradients, return the displacement D (new = params - D)
// and advance any internal state. Swap studies apply mixed displacements, so
// state always tracks the trajectory actually taken.
class Stepper {
  public:
    virtual ~Stepper() = default;
    virtual MatrixF displacement(const MatrixF& params, const MatrixF& raw_grads,
                                 int iter) = 0;
};

std::unique_ptr<Stepper> make_stepper(OptimizerKind kind, const RunConfig& cfg,
                                      const MatrixF& initial_params);

struct OptimizeResult {
    std::vector<OptimizeRow> rows;
    GaussianCloud cloud;
};

OptimizeResult run_optimize(const SceneDataset& scene, const RunConfig& cfg,
                            std::ostream* csv = nullptr);

// Threshold crossings against a reference run: levels at {25,50,75,90,100}%
// of the reference's target-PSNR gain, crossing iterations linearly
// interpolated between cadence points; `reached` false when a run never gets
// there.
struct ThresholdCrossing {
    int percent = 0;
    double level_db = 0;
    bool reached = false;
    double iter = 0;
};

std::vector<ThresholdCrossing> threshold_crossings(
    const std::vector<OptimizeRow>& rows, const std::vector<OptimizeRow>& reference);

// Element-wise mean over runs sharing one cadence (multi-scene aggregation).
std::vector<OptimizeRow> mean_rows(const std::vector<std::vector<OptimizeRow>>& runs);

struct CompareResult {
    std::vector<OptimizerKind> methods;               // [0] is the reference
    std::vector<std::vector<OptimizeRow>> rows;       // per method
    std::vector<std::vector<ThresholdCrossing>> crossings;
};

CompareResult run_compare(const SceneDataset& scene, const RunConfig& base,
                          const std::vector<OptimizerKind>& methods,
                          std::ostream* out = nullptr);

// Per parameter group: rerun the target optimizer but take that group's
// update columns from the source optimizer each iteration.
struct SwapRun {
    std::string group;  // "baseline" for the unswapped control
    std::vector<OptimizeRow> rows;
};

std::vector<SwapRun> run_swap_study(const SceneDataset& scene, const RunConfig& target,
                                    OptimizerKind source, std::ostream* out = nullptr);

}  // namespace l2s::harness
