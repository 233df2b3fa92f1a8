#include "kog/metrics.hpp"

#include <cmath>
#include <sstream>

#include <json.hpp>

namespace kog {

namespace {

void check_pairing(const std::vector<RowMat>& pred, const std::vector<RowMat>& gt) {
  if (pred.size() != gt.size() || pred.empty())
    throw ShapeError("metric inputs must be non-empty and equally sized, got " +
                     std::to_string(pred.size()) + " vs " +
                     std::to_string(gt.size()));
  for (std::size_t i = 0; i < pred.size(); ++i)
    if (pred[i].rows != gt[i].rows || pred[i].cols != 3 || gt[i].cols != 3)
      throw ShapeError("metric sample " + std::to_string(i) +
                       " has mismatched shapes");
}

double joint_distance(const RowMat& a, const RowMat& b, std::size_t r) {
  double s = 0.0;
  for (std::size_t c = 0; c < 3; ++c) {
    const double d = a.at(r, c) - b.at(r, c);
    s += d * d;
  }
  return std::sqrt(s);
}

}  // namespace

double mpjpe(const std::vector<RowMat>& pred, const std::vector<RowMat>& gt,
             int root_index) {
  check_pairing(pred, gt);
  double total = 0.0;
  std::size_t joints = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const RowMat p = root_center(pred[i], root_index);
    const RowMat g = root_center(gt[i], root_index);
    for (std::size_t r = 0; r < p.rows; ++r) total += joint_distance(p, g, r);
    joints += p.rows;
  }
  return total / static_cast<double>(joints);
}

double mpve(const std::vector<RowMat>& pred, const std::vector<RowMat>& gt) {
  check_pairing(pred, gt);
  double total = 0.0;
  std::size_t verts = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    for (std::size_t r = 0; r < pred[i].rows; ++r)
      total += joint_distance(pred[i], gt[i], r);
    verts += pred[i].rows;
  }
  return total / static_cast<double>(verts);
}

std::pair<double, double> pck_and_auc(const std::vector<RowMat>& pred,
                                      const std::vector<RowMat>& gt,
                                      int root_index, double threshold_mm,
                                      double grid_step_mm) {
  check_pairing(pred, gt);
  std::vector<double> dists;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const RowMat p = root_center(pred[i], root_index);
    const RowMat g = root_center(gt[i], root_index);
    for (std::size_t r = 0; r < p.rows; ++r) dists.push_back(joint_distance(p, g, r));
  }
  auto pck_at = [&](double thr) {
    std::size_t within = 0;
    for (double d : dists)
      if (d <= thr) ++within;
    return 100.0 * static_cast<double>(within) / static_cast<double>(dists.size());
  };
  const double pck = pck_at(threshold_mm);
  double auc_sum = 0.0;
  std::size_t auc_n = 0;
  for (double t = 0.0; t <= threshold_mm + 1e-9; t += grid_step_mm) {
    auc_sum += pck_at(t);
    ++auc_n;
  }
  return {pck, auc_sum / static_cast<double>(auc_n)};
}

void MetricReport::validate() const {
  if (sample_count == 0) throw ContractError("metric report has no samples");
  if (mpjpe_mm && *mpjpe_mm < 0.0) throw ContractError("negative mpjpe");
  if (mpve_mm && *mpve_mm < 0.0) throw ContractError("negative mpve");
  if (pck_percent && (*pck_percent < 0.0 || *pck_percent > 100.0))
    throw ContractError("pck outside [0, 100]");
  if (auc && (*auc < 0.0 || *auc > 100.0)) throw ContractError("auc outside [0, 100]");
}

std::string MetricReport::to_json() const {
  nlohmann::json j;
  j["sample_count"] = sample_count;
  if (mpjpe_mm) j["mpjpe_mm"] = *mpjpe_mm;
  if (mpve_mm) j["mpve_mm"] = *mpve_mm;
  if (pck_percent) j["pck_percent"] = *pck_percent;
  if (auc) j["auc"] = *auc;
  return j.dump(2);
}

std::string MetricReport::to_csv() const {
  std::ostringstream out;
  out.precision(17);
  out << "metric,value\n";
  out << "sample_count," << sample_count << "\n";
  if (mpjpe_mm) out << "mpjpe_mm," << *mpjpe_mm << "\n";
  if (mpve_mm) out << "mpve_mm," << *mpve_mm << "\n";
  if (pck_percent) out << "pck_percent," << *pck_percent << "\n";
  if (auc) out << "auc," << *auc << "\n";
  return out.str();
}

MetricReport MetricReport::from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("bad metric report JSON: ") + e.what());
  }
  MetricReport r;
  r.sample_count = j.at("sample_count").get<std::size_t>();
  if (j.contains("mpjpe_mm")) r.mpjpe_mm = j.at("mpjpe_mm").get<double>();
  if (j.contains("mpve_mm")) r.mpve_mm = j.at("mpve_mm").get<double>();
  if (j.contains("pck_percent")) r.pck_percent = j.at("pck_percent").get<double>();
  if (j.contains("auc")) r.auc = j.at("auc").get<double>();
  return r;
}

}  // namespace kog
