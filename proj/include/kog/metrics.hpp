#pragma once

#include <optional>
#include <string>
#include <vector>

#include "kog/data.hpp"

namespace kog {

// Evaluation metrics in millimeters / percent. MPJPE, PCK and AUC are
// root-aligned (both arrays re-centered on the root joint first); MPVE
// compares vertices directly.
double mpjpe(const std::vector<RowMat>& pred, const std::vector<RowMat>& gt,
             int root_index);

double mpve(const std::vector<RowMat>& pred, const std::vector<RowMat>& gt);

// PCK at `threshold_mm` plus AUC as the mean PCK over the threshold grid
// 0..threshold_mm in steps of `grid_step_mm`.
std::pair<double, double> pck_and_auc(const std::vector<RowMat>& pred,
                                      const std::vector<RowMat>& gt,
                                      int root_index,
                                      double threshold_mm = 150.0,
                                      double grid_step_mm = 5.0);

struct MetricReport {
  std::optional<double> mpjpe_mm;
  std::optional<double> mpve_mm;
  std::optional<double> pck_percent;
  std::optional<double> auc;
  std::size_t sample_count = 0;

  void validate() const;
  std::string to_json() const;
  std::string to_csv() const;
  static MetricReport from_json(const std::string& text);
};

}  // namespace kog
