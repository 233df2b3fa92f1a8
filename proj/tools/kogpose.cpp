// Command-line front end: train / eval / gradcheck / inspect / synth.
// Exit codes: 0 success, 1 validation failure, 2 verification failure.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "kog/fdsuite.hpp"
#include "kog/train.hpp"

namespace {

using nlohmann::json;

json load_config_file(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream in(path);
  if (!in) throw kog::IoError("cannot open config file: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw kog::IoError(std::string("config parse failure: ") + e.what());
  }
  return j;
}

std::string model_config_json(const json& cfg, const std::string& kind) {
  json model = cfg.contains("model") ? cfg.at("model") : json::object();
  if (kind == "kog") {
    kog::KogConfig parsed = model.get<kog::KogConfig>();
    return json(parsed).dump();
  }
  kog::GaseConfig parsed = model.get<kog::GaseConfig>();
  return json(parsed).dump();
}

kog::TrainOptions train_options(const json& cfg, const std::string& kind,
                                std::uint64_t seed, const std::string& out_dir) {
  auto opts = kog::TrainOptions::defaults_for(kind);
  opts.seed = seed;
  opts.out_dir = out_dir;
  if (cfg.contains("train")) {
    const auto& t = cfg.at("train");
    if (t.contains("lr")) opts.lr = t.at("lr").get<double>();
    if (t.contains("batch_size")) opts.batch_size = t.at("batch_size").get<std::size_t>();
    if (t.contains("max_steps")) opts.max_steps = t.at("max_steps").get<std::size_t>();
    if (t.contains("eval_interval"))
      opts.eval_interval = t.at("eval_interval").get<std::size_t>();
    if (t.contains("checkpoint_interval"))
      opts.checkpoint_interval = t.at("checkpoint_interval").get<std::size_t>();
    if (t.contains("target_train_error_mm"))
      opts.target_train_error_mm = t.at("target_train_error_mm").get<double>();
    if (t.contains("schedule")) {
      const auto& s = t.at("schedule");
      if (s.contains("kind"))
        opts.schedule.kind = s.at("kind").get<std::string>() == "epoch"
                                 ? kog::LrSchedule::Kind::Epoch
                                 : kog::LrSchedule::Kind::Step;
      if (s.contains("factor")) opts.schedule.factor = s.at("factor").get<double>();
      if (s.contains("interval"))
        opts.schedule.interval = s.at("interval").get<std::uint64_t>();
    }
  }
  return opts;
}

template <typename T>
int run_train(const std::string& skeleton_path, const std::string& train_path,
              const std::string& eval_path, const json& cfg,
              const std::string& kind, std::uint64_t seed,
              const std::string& out_dir) {
  auto skeleton = kog::SkeletonGraph::from_json_file(skeleton_path);
  auto train_set = kog::load_dataset(train_path, skeleton);
  std::vector<kog::PoseSample> eval_set;
  if (!eval_path.empty()) eval_set = kog::load_dataset(eval_path, skeleton);

  auto opts = train_options(cfg, kind, seed, out_dir);
  auto outcome = kog::run_training<T>(skeleton, model_config_json(cfg, kind),
                                      train_set, eval_set, opts, &std::cout);
  json summary{{"steps", outcome.steps},
               {"final_loss", outcome.final_loss},
               {"train_error_mm", outcome.train_error_mm},
               {"reached_target", outcome.reached_target},
               {"checkpoint", outcome.checkpoint_path}};
  if (outcome.eval_error_mm) summary["eval_error_mm"] = *outcome.eval_error_mm;
  std::cout << summary.dump() << "\n";
  return 0;
}

template <typename T>
int run_eval(const std::string& checkpoint_path, const std::string& skeleton_path,
             const std::string& eval_path, const std::string& out_dir) {
  auto ckpt = kog::load_checkpoint(checkpoint_path);
  auto skeleton = kog::SkeletonGraph::from_json_file(skeleton_path);
  auto [model, stats] = kog::restore_model<T>(ckpt, skeleton);
  auto samples = kog::load_dataset(eval_path, skeleton);
  if (samples.empty()) throw kog::ConfigError("evaluation dataset is empty");
  auto report = kog::evaluate_model(model, samples, stats);
  std::cout << report.to_json() << "\n";
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    std::ofstream(out_dir + "/report.json") << report.to_json();
    std::ofstream(out_dir + "/report.csv") << report.to_csv();
  }
  return 0;
}

int run_gradcheck(std::uint64_t seed, int instances) {
  auto rep = kog::run_fd_suite_all(seed, instances);
  for (const auto& r : rep.results)
    std::printf("[%s] %-28s rel_err %.3e over %zu entries\n",
                r.pass ? "PASS" : "FAIL", r.name.c_str(), r.max_rel_err,
                r.checked);
  std::printf("gradcheck: %zu checks, max rel err %.3e -> %s\n",
              rep.results.size(), rep.max_rel_err,
              rep.all_pass ? "all passed" : "FAILURES");
  return rep.all_pass ? 0 : 2;
}

void write_int_matrix_csv(const std::string& path, int n,
                          const std::function<std::string(int, int)>& cell) {
  std::ofstream out(path);
  for (int m = 0; m < n; ++m) {
    for (int i = 0; i < n; ++i) out << (i ? "," : "") << cell(m, i);
    out << "\n";
  }
}

int run_inspect(const std::string& skeleton_path, const std::string& checkpoint_path,
                const json& cfg, const std::string& out_dir) {
  auto skeleton = kog::SkeletonGraph::from_json_file(skeleton_path);

  kog::KogConfig model_cfg;
  std::optional<kog::Checkpoint> ckpt;
  if (!checkpoint_path.empty()) {
    ckpt = kog::load_checkpoint(checkpoint_path);
    if (ckpt->kind != "kog")
      throw kog::ConfigError("inspect expects a kog checkpoint, got kind '" +
                             ckpt->kind + "'");
    model_cfg = json::parse(ckpt->config_json).get<kog::KogConfig>();
  } else {
    model_cfg = (cfg.contains("model") ? cfg.at("model") : json::object())
                    .get<kog::KogConfig>();
  }
  if (skeleton.num_nodes != model_cfg.joints)
    throw kog::ConfigError("skeleton node count does not match the model config");

  std::filesystem::create_directories(out_dir);
  const auto dist = kog::build_signed_distance(skeleton);
  const auto index_map =
      kog::build_relative_index_map(dist, model_cfg.delta, model_cfg.directed);
  const auto masks = kog::build_order_masks(skeleton, model_cfg.order);
  const int l = skeleton.num_nodes;

  write_int_matrix_csv(out_dir + "/distance_matrix.csv", l, [&](int m, int n) {
    return std::to_string(dist.at(m, n));
  });
  write_int_matrix_csv(out_dir + "/relative_index.csv", l, [&](int m, int n) {
    return std::to_string(index_map.at(m, n));
  });
  for (int i = 0; i <= masks.order; ++i)
    write_int_matrix_csv(out_dir + "/order_mask_" + std::to_string(i) + ".csv", l,
                         [&](int m, int n) {
                           return masks.admitted(i, m, n) ? std::string("0")
                                                          : std::string("-inf");
                         });

  // Fusion weights: from the checkpoint when given, otherwise fresh init.
  kog::Rng rng(ckpt ? ckpt->seed : 0);
  kog::KogTransformer<float> model(model_cfg, skeleton, rng);
  if (ckpt) kog::apply_checkpoint(*ckpt, model.params());
  std::ofstream fw(out_dir + "/fusion_weights.csv");
  fw << "sublayer";
  for (int i = 0; i <= model_cfg.order; ++i) fw << ",c_" << i;
  fw << "\n";
  fw.precision(9);
  for (const auto& [label, values] : model.fusion_rows()) {
    fw << label;
    for (double v : values) fw << "," << v;
    fw << "\n";
  }
  std::cout << "inspect: wrote distance_matrix.csv, relative_index.csv, "
            << masks.order + 1 << " order masks, fusion_weights.csv to "
            << out_dir << "\n";
  return 0;
}

int run_synth(const std::string& skeleton_path, const json& cfg,
              const std::string& kind, std::uint64_t seed,
              std::size_t train_count, std::size_t eval_count,
              const std::string& out_dir) {
  auto skeleton = kog::SkeletonGraph::from_json_file(skeleton_path);
  kog::SynthOptions opts;
  opts.seed = seed;
  int mesh_vertices = 96;
  if (cfg.contains("synth")) {
    const auto& s = cfg.at("synth");
    if (s.contains("bone_length_mm"))
      opts.bone_length_mm = s.at("bone_length_mm").get<double>();
    if (s.contains("focal")) opts.camera.focal = s.at("focal").get<double>();
    if (s.contains("depth_min")) opts.camera.depth_min = s.at("depth_min").get<double>();
    if (s.contains("depth_max")) opts.camera.depth_max = s.at("depth_max").get<double>();
    if (s.contains("mesh_vertices")) mesh_vertices = s.at("mesh_vertices").get<int>();
  }

  std::filesystem::create_directories(out_dir);
  auto emit = [&](const std::string& name, std::size_t count, std::uint64_t s) {
    opts.count = count;
    opts.seed = s;
    auto samples = kind == "mesh"
                       ? kog::generate_synthetic_mesh(skeleton, mesh_vertices, opts)
                       : kog::generate_synthetic_pose(skeleton, opts);
    kog::save_dataset(out_dir + "/" + name, samples);
  };
  emit("train.jsonl", train_count, seed);
  emit("eval.jsonl", eval_count, seed + 1);
  std::cout << "synth: wrote " << train_count << " train and " << eval_count
            << " eval samples to " << out_dir << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"KOG-Transformer and GASE-Net toolkit"};
  app.require_subcommand(1);

  std::string skeleton_path, train_path, eval_path, config_path, out_dir,
      checkpoint_path;
  std::string precision = "f32";
  std::string kind = "kog";
  std::string synth_kind = "pose";
  std::uint64_t seed = 0;
  std::size_t train_count = 64, eval_count = 16;
  int gradcheck_instances = 20;

  auto* train = app.add_subcommand("train", "train a model");
  train->add_option("--skeleton", skeleton_path)->required();
  train->add_option("--train-data", train_path)->required();
  train->add_option("--eval-data", eval_path);
  train->add_option("--config", config_path);
  train->add_option("--seed", seed);
  train->add_option("--precision", precision)->check(CLI::IsMember({"f32", "f64"}));
  auto* kind_opt =
      train->add_option("--kind", kind)->check(CLI::IsMember({"kog", "gase"}));
  train->add_option("--out", out_dir)->required();

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  eval->add_option("--checkpoint", checkpoint_path)->required();
  eval->add_option("--skeleton", skeleton_path)->required();
  eval->add_option("--eval-data", eval_path)->required();
  eval->add_option("--precision", precision)->check(CLI::IsMember({"f32", "f64"}));
  eval->add_option("--out", out_dir);

  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference suite");
  gradcheck->add_option("--seed", seed);
  gradcheck->add_option("--instances", gradcheck_instances);

  auto* inspect = app.add_subcommand("inspect", "dump structural matrices");
  inspect->add_option("--skeleton", skeleton_path)->required();
  inspect->add_option("--checkpoint", checkpoint_path);
  inspect->add_option("--config", config_path);
  inspect->add_option("--out", out_dir)->required();

  auto* synth = app.add_subcommand("synth", "generate synthetic datasets");
  synth->add_option("--skeleton", skeleton_path)->required();
  synth->add_option("--config", config_path);
  synth->add_option("--seed", seed);
  synth->add_option("--kind", synth_kind)->check(CLI::IsMember({"pose", "mesh"}));
  synth->add_option("--train-count", train_count);
  synth->add_option("--eval-count", eval_count);
  synth->add_option("--out", out_dir)->required();

  CLI11_PARSE(app, argc, argv);

  try {
    const json cfg = load_config_file(config_path);
    // An explicit --kind flag wins over the config file.
    if (cfg.contains("kind") && kind_opt->count() == 0)
      kind = cfg.at("kind").get<std::string>();

    if (train->parsed()) {
      return precision == "f64"
                 ? run_train<double>(skeleton_path, train_path, eval_path, cfg,
                                     kind, seed, out_dir)
                 : run_train<float>(skeleton_path, train_path, eval_path, cfg,
                                    kind, seed, out_dir);
    }
    if (eval->parsed()) {
      return precision == "f64"
                 ? run_eval<double>(checkpoint_path, skeleton_path, eval_path,
                                    out_dir)
                 : run_eval<float>(checkpoint_path, skeleton_path, eval_path,
                                   out_dir);
    }
    if (gradcheck->parsed()) return run_gradcheck(seed, gradcheck_instances);
    if (inspect->parsed())
      return run_inspect(skeleton_path, checkpoint_path, cfg, out_dir);
    if (synth->parsed())
      return run_synth(skeleton_path, cfg, synth_kind, seed, train_count,
                       eval_count, out_dir);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
