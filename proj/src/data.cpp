#include "kog/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <queue>
#include <thread>

#include <json.hpp>

namespace kog {

namespace {

RowMat mat_from_json(const nlohmann::json& j, const char* field,
                     std::size_t line_no) {
  if (!j.is_array() || j.empty())
    throw IoError("line " + std::to_string(line_no) + ": '" + field +
                  "' must be a non-empty 2D array");
  RowMat m;
  m.rows = j.size();
  m.cols = j[0].size();
  if (m.cols == 0)
    throw IoError("line " + std::to_string(line_no) + ": '" + field +
                  "' has an empty row");
  m.v.reserve(m.rows * m.cols);
  for (const auto& row : j) {
    if (!row.is_array() || row.size() != m.cols)
      throw IoError("line " + std::to_string(line_no) + ": ragged rows in '" +
                    std::string(field) + "'");
    for (const auto& x : row) {
      double val = x.get<double>();
      if (!std::isfinite(val))
        throw IoError("line " + std::to_string(line_no) + ": non-finite value in '" +
                      std::string(field) + "'");
      m.v.push_back(val);
    }
  }
  return m;
}

PoseSample parse_line(const std::string& line, std::size_t line_no) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("line " + std::to_string(line_no) + ": " + e.what());
  }
  if (!j.is_object() || !j.contains("input") || !j.contains("target"))
    throw IoError("line " + std::to_string(line_no) +
                  ": expected {\"input\": ..., \"target\": ...}");
  PoseSample s;
  s.input = mat_from_json(j.at("input"), "input", line_no);
  s.target = mat_from_json(j.at("target"), "target", line_no);
  return s;
}

int loader_threads() {
  if (const char* env = std::getenv("KOG_THREADS")) {
    int n = std::atoi(env);
    if (n >= 1) return n;
  }
  return 1;
}

}  // namespace

void NormalizationStats::validate() const {
  if (input_mean.size() != input_std.size() ||
      target_mean.size() != target_std.size() || input_std.empty() ||
      target_std.empty())
    throw ConfigError("normalization stats are incomplete");
  for (std::size_t i = 0; i < input_std.size(); ++i)
    if (!(input_std[i] > 0.0))
      throw ConfigError("input coordinate " + std::to_string(i) +
                        " has zero standard deviation");
  for (std::size_t i = 0; i < target_std.size(); ++i)
    if (!(target_std[i] > 0.0))
      throw ConfigError("target coordinate " + std::to_string(i) +
                        " has zero standard deviation");
}

RowMat root_center(const RowMat& m, int root_index) {
  if (root_index < 0 || static_cast<std::size_t>(root_index) >= m.rows)
    throw ConfigError("root index " + std::to_string(root_index) +
                      " outside matrix with " + std::to_string(m.rows) + " rows");
  RowMat out = m;
  for (std::size_t r = 0; r < m.rows; ++r)
    for (std::size_t c = 0; c < m.cols; ++c)
      out.at(r, c) -= m.at(static_cast<std::size_t>(root_index), c);
  return out;
}

NormalizationStats compute_stats(const std::vector<PoseSample>& samples,
                                 int root_index) {
  if (samples.empty()) throw ConfigError("cannot compute stats of an empty dataset");
  const std::size_t ic = samples[0].input.cols, tc = samples[0].target.cols;
  NormalizationStats st;
  st.root_index = root_index;
  st.input_mean.assign(ic, 0.0);
  st.input_std.assign(ic, 0.0);
  st.target_mean.assign(tc, 0.0);
  st.target_std.assign(tc, 0.0);

  std::size_t in_n = 0, tg_n = 0;
  for (const auto& s : samples) {
    for (std::size_t r = 0; r < s.input.rows; ++r)
      for (std::size_t c = 0; c < ic; ++c) st.input_mean[c] += s.input.at(r, c);
    in_n += s.input.rows;
    RowMat t = root_index >= 0 ? root_center(s.target, root_index) : s.target;
    for (std::size_t r = 0; r < t.rows; ++r)
      for (std::size_t c = 0; c < tc; ++c) st.target_mean[c] += t.at(r, c);
    tg_n += t.rows;
  }
  for (auto& v : st.input_mean) v /= static_cast<double>(in_n);
  for (auto& v : st.target_mean) v /= static_cast<double>(tg_n);

  for (const auto& s : samples) {
    for (std::size_t r = 0; r < s.input.rows; ++r)
      for (std::size_t c = 0; c < ic; ++c) {
        double dlt = s.input.at(r, c) - st.input_mean[c];
        st.input_std[c] += dlt * dlt;
      }
    RowMat t = root_index >= 0 ? root_center(s.target, root_index) : s.target;
    for (std::size_t r = 0; r < t.rows; ++r)
      for (std::size_t c = 0; c < tc; ++c) {
        double dlt = t.at(r, c) - st.target_mean[c];
        st.target_std[c] += dlt * dlt;
      }
  }
  for (auto& v : st.input_std) v = std::sqrt(v / static_cast<double>(in_n));
  for (auto& v : st.target_std) v = std::sqrt(v / static_cast<double>(tg_n));
  st.validate();
  return st;
}

PoseSample normalize(const PoseSample& s, const NormalizationStats& stats) {
  stats.validate();
  PoseSample out;
  out.input = s.input;
  for (std::size_t r = 0; r < out.input.rows; ++r)
    for (std::size_t c = 0; c < out.input.cols; ++c)
      out.input.at(r, c) =
          (out.input.at(r, c) - stats.input_mean[c]) / stats.input_std[c];
  out.target =
      stats.root_index >= 0 ? root_center(s.target, stats.root_index) : s.target;
  for (std::size_t r = 0; r < out.target.rows; ++r)
    for (std::size_t c = 0; c < out.target.cols; ++c)
      out.target.at(r, c) =
          (out.target.at(r, c) - stats.target_mean[c]) / stats.target_std[c];
  return out;
}

PoseSample denormalize(const PoseSample& s, const NormalizationStats& stats) {
  stats.validate();
  PoseSample out;
  out.input = s.input;
  for (std::size_t r = 0; r < out.input.rows; ++r)
    for (std::size_t c = 0; c < out.input.cols; ++c)
      out.input.at(r, c) =
          out.input.at(r, c) * stats.input_std[c] + stats.input_mean[c];
  out.target = denormalize_target(s.target, stats);
  return out;
}

RowMat denormalize_target(const RowMat& m, const NormalizationStats& stats) {
  RowMat out = m;
  for (std::size_t r = 0; r < out.rows; ++r)
    for (std::size_t c = 0; c < out.cols; ++c)
      out.at(r, c) = out.at(r, c) * stats.target_std[c] + stats.target_mean[c];
  return out;
}

std::vector<PoseSample> load_dataset(const std::string& path,
                                     const SkeletonGraph& skeleton) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open dataset file: " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) lines.push_back(line);
  }
  std::vector<PoseSample> samples(lines.size());

  const int threads = std::min<int>(loader_threads(), 8);
  if (threads <= 1 || lines.size() < 64) {
    for (std::size_t i = 0; i < lines.size(); ++i)
      samples[i] = parse_line(lines[i], i + 1);
  } else {
    std::vector<std::thread> pool;
    std::vector<std::string> errors(threads);
    const std::size_t chunk = (lines.size() + threads - 1) / threads;
    for (int t = 0; t < threads; ++t) {
      pool.emplace_back([&, t]() {
        const std::size_t lo = t * chunk;
        const std::size_t hi = std::min(lines.size(), lo + chunk);
        try {
          for (std::size_t i = lo; i < hi; ++i)
            samples[i] = parse_line(lines[i], i + 1);
        } catch (const std::exception& e) {
          errors[t] = e.what();
        }
      });
    }
    for (auto& th : pool) th.join();
    for (const auto& e : errors)
      if (!e.empty()) throw IoError(e);
  }

  const std::size_t l = static_cast<std::size_t>(skeleton.num_nodes);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    if (s.input.rows != l)
      throw IoError("line " + std::to_string(i + 1) + ": input has " +
                    std::to_string(s.input.rows) + " nodes but the skeleton has " +
                    std::to_string(l));
    if (s.input.cols != 2 && s.input.cols != 3)
      throw IoError("line " + std::to_string(i + 1) +
                    ": input must have 2 or 3 coordinates per node");
    if (s.target.cols != 3)
      throw IoError("line " + std::to_string(i + 1) +
                    ": target must have 3 coordinates per node");
    if (i > 0 && (s.input.cols != samples[0].input.cols ||
                  s.target.rows != samples[0].target.rows))
      throw IoError("line " + std::to_string(i + 1) +
                    ": sample dimensions differ from the first sample");
  }
  return samples;
}

void save_dataset(const std::string& path, const std::vector<PoseSample>& samples) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open dataset file for writing: " + path);
  for (const auto& s : samples) {
    nlohmann::json j;
    auto to_json_mat = [](const RowMat& m) {
      auto arr = nlohmann::json::array();
      for (std::size_t r = 0; r < m.rows; ++r) {
        auto row = nlohmann::json::array();
        for (std::size_t c = 0; c < m.cols; ++c) row.push_back(m.at(r, c));
        arr.push_back(std::move(row));
      }
      return arr;
    };
    j["input"] = to_json_mat(s.input);
    j["target"] = to_json_mat(s.target);
    out << j.dump() << "\n";
  }
  if (!out) throw IoError("write failure on dataset file: " + path);
}

// ------------------------------------------------------------ synthesis

namespace {

// BFS parent order rooted at node 0.
std::vector<std::pair<int, int>> edge_order(const SkeletonGraph& skeleton) {
  auto adj = skeleton.adjacency();
  std::vector<bool> seen(skeleton.num_nodes, false);
  std::vector<std::pair<int, int>> order;  // (parent, child)
  std::queue<int> q;
  q.push(0);
  seen[0] = true;
  while (!q.empty()) {
    int u = q.front();
    q.pop();
    for (int v : adj[u]) {
      if (!seen[v]) {
        seen[v] = true;
        order.emplace_back(u, v);
        q.push(v);
      }
    }
  }
  return order;
}

// Uniform direction on the unit sphere.
std::array<double, 3> random_direction(Rng& rng) {
  const double z = rng.uniform(-1.0, 1.0);
  const double phi = rng.uniform(0.0, 6.283185307179586);
  const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
  return {r * std::cos(phi), r * std::sin(phi), z};
}

RowMat fk_pose(const SkeletonGraph& skeleton,
               const std::vector<std::pair<int, int>>& order, double bone_len,
               Rng& rng) {
  RowMat pose(static_cast<std::size_t>(skeleton.num_nodes), 3);
  for (const auto& [parent, child] : order) {
    auto dir = random_direction(rng);
    for (int c = 0; c < 3; ++c)
      pose.at(child, c) = pose.at(parent, c) + bone_len * dir[c];
  }
  return pose;
}

}  // namespace

std::vector<PoseSample> generate_synthetic_pose(const SkeletonGraph& skeleton,
                                                const SynthOptions& options) {
  skeleton.validate();
  if (options.camera.focal <= 0.0)
    throw ConfigError("camera focal length must be positive");
  const auto order = edge_order(skeleton);
  Rng rng(options.seed);
  std::vector<PoseSample> samples;
  samples.reserve(options.count);
  while (samples.size() < options.count) {
    RowMat pose = fk_pose(skeleton, order, options.bone_length_mm, rng);
    const double cx = rng.uniform(-300.0, 300.0);
    const double cy = rng.uniform(-300.0, 300.0);
    const double cz = rng.uniform(options.camera.depth_min, options.camera.depth_max);
    bool in_front = true;
    for (std::size_t r = 0; r < pose.rows; ++r) {
      for (int c = 0; c < 3; ++c) pose.at(r, c) += (c == 0 ? cx : c == 1 ? cy : cz);
      if (pose.at(r, 2) < 1.0) in_front = false;
    }
    if (!in_front) continue;  // resample behind-camera poses

    PoseSample s;
    s.input = RowMat(pose.rows, 2);
    for (std::size_t r = 0; r < pose.rows; ++r) {
      auto [u, v] = project_point(options.camera, pose.at(r, 0), pose.at(r, 1),
                                  pose.at(r, 2));
      s.input.at(r, 0) = u;
      s.input.at(r, 1) = v;
    }
    s.target = root_center(pose, 0);
    samples.push_back(std::move(s));
  }
  return samples;
}

std::vector<PoseSample> generate_synthetic_mesh(const SkeletonGraph& skeleton,
                                                int vertex_count,
                                                const SynthOptions& options) {
  skeleton.validate();
  if (vertex_count < 1) throw ConfigError("mesh vertex count must be >= 1");
  const auto order = edge_order(skeleton);
  Rng rng(options.seed);

  // Fixed per-dataset skinning: each vertex interpolates two joints plus a
  // constant offset, so the mapping is learnable and deterministic.
  const std::size_t l = static_cast<std::size_t>(skeleton.num_nodes);
  struct Blend {
    int j1, j2;
    double lambda;
    std::array<double, 3> offset;
  };
  std::vector<Blend> blends(vertex_count);
  for (auto& b : blends) {
    b.j1 = static_cast<int>(rng.next_index(l));
    b.j2 = static_cast<int>(rng.next_index(l));
    b.lambda = rng.next_unit();
    for (auto& o : b.offset) o = rng.uniform(-20.0, 20.0);
  }

  std::vector<PoseSample> samples;
  samples.reserve(options.count);
  for (std::size_t i = 0; i < options.count; ++i) {
    RowMat pose = fk_pose(skeleton, order, options.bone_length_mm, rng);
    PoseSample s;
    s.input = pose;  // root-relative by construction (root pinned at origin)
    s.target = RowMat(static_cast<std::size_t>(vertex_count), 3);
    for (int vtx = 0; vtx < vertex_count; ++vtx) {
      const auto& b = blends[vtx];
      for (int c = 0; c < 3; ++c)
        s.target.at(vtx, c) = b.lambda * pose.at(b.j1, c) +
                              (1.0 - b.lambda) * pose.at(b.j2, c) + b.offset[c];
    }
    samples.push_back(std::move(s));
  }
  return samples;
}

// ------------------------------------------------------------ checkpoint

namespace {

void write_u32(std::ofstream& out, std::uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
void write_u64(std::ofstream& out, std::uint64_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

std::uint32_t read_u32(std::ifstream& in) {
  std::uint32_t v = 0;
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(v)))
    throw IoError("checkpoint truncated");
  return v;
}
std::uint64_t read_u64(std::ifstream& in) {
  std::uint64_t v = 0;
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(v)))
    throw IoError("checkpoint truncated");
  return v;
}

nlohmann::json stats_to_json(const NormalizationStats& st) {
  return nlohmann::json{{"input_mean", st.input_mean},
                        {"input_std", st.input_std},
                        {"target_mean", st.target_mean},
                        {"target_std", st.target_std},
                        {"root_index", st.root_index}};
}

NormalizationStats stats_from_json(const nlohmann::json& j) {
  NormalizationStats st;
  st.input_mean = j.at("input_mean").get<std::vector<double>>();
  st.input_std = j.at("input_std").get<std::vector<double>>();
  st.target_mean = j.at("target_mean").get<std::vector<double>>();
  st.target_std = j.at("target_std").get<std::vector<double>>();
  st.root_index = j.at("root_index").get<int>();
  return st;
}

static_assert(sizeof(float) == 4, "checkpoint format assumes 32-bit floats");

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open checkpoint for writing: " + path);
  out.write("KOGT", 4);
  write_u32(out, kCheckpointVersion);

  nlohmann::json meta;
  meta["kind"] = ckpt.kind;
  meta["config"] = nlohmann::json::parse(ckpt.config_json);
  meta["stats"] = ckpt.stats ? stats_to_json(*ckpt.stats) : nlohmann::json();
  meta["seed"] = ckpt.seed;
  meta["activation"] = "gelu";
  const std::string meta_text = meta.dump();
  write_u64(out, meta_text.size());
  out.write(meta_text.data(), static_cast<std::streamsize>(meta_text.size()));

  write_u32(out, static_cast<std::uint32_t>(ckpt.params.size()));
  for (const auto& p : ckpt.params) {
    write_u32(out, static_cast<std::uint32_t>(p.name.size()));
    out.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    write_u32(out, static_cast<std::uint32_t>(p.shape.size()));
    for (std::size_t d : p.shape) write_u64(out, d);
    out.write(reinterpret_cast<const char*>(p.values.data()),
              static_cast<std::streamsize>(p.values.size() * sizeof(float)));
  }
  if (!out) throw IoError("write failure on checkpoint: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path);
  char magic[4] = {};
  if (!in.read(magic, 4) || std::memcmp(magic, "KOGT", 4) != 0)
    throw IoError("bad checkpoint magic (expected KOGT): " + path);
  const std::uint32_t version = read_u32(in);
  if (version != kCheckpointVersion)
    throw IoError("unsupported checkpoint version " + std::to_string(version) +
                  " (expected " + std::to_string(kCheckpointVersion) + ")");

  const std::uint64_t meta_len = read_u64(in);
  std::string meta_text(meta_len, '\0');
  if (!in.read(meta_text.data(), static_cast<std::streamsize>(meta_len)))
    throw IoError("checkpoint truncated in configuration block");
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(meta_text);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("corrupt checkpoint configuration: ") + e.what());
  }

  Checkpoint ckpt;
  ckpt.kind = meta.at("kind").get<std::string>();
  ckpt.config_json = meta.at("config").dump();
  if (!meta.at("stats").is_null()) ckpt.stats = stats_from_json(meta.at("stats"));
  ckpt.seed = meta.at("seed").get<std::uint64_t>();

  const std::uint32_t count = read_u32(in);
  ckpt.params.resize(count);
  for (auto& p : ckpt.params) {
    const std::uint32_t name_len = read_u32(in);
    p.name.resize(name_len);
    if (!in.read(p.name.data(), name_len))
      throw IoError("checkpoint truncated in parameter names");
    const std::uint32_t rank = read_u32(in);
    p.shape.resize(rank);
    std::size_t numel = 1;
    for (auto& d : p.shape) {
      d = static_cast<std::size_t>(read_u64(in));
      numel *= d;
    }
    p.values.resize(numel);
    if (!in.read(reinterpret_cast<char*>(p.values.data()),
                 static_cast<std::streamsize>(numel * sizeof(float))))
      throw IoError("checkpoint truncated in parameter '" + p.name + "'");
  }
  return ckpt;
}

}  // namespace kog
