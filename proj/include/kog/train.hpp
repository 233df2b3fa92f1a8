#pragma once

#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "kog/data.hpp"
#include "kog/metrics.hpp"
#include "kog/model.hpp"

namespace kog {

// Uniform handle over the two model kinds so training/eval/inspect code can
// stay generic.
template <typename T>
class ModelHandle {
 public:
  static ModelHandle make(const std::string& kind, const std::string& config_json,
                          const SkeletonGraph& skeleton, Rng& rng) {
    ModelHandle h;
    h.kind_ = kind;
    const auto j = nlohmann::json::parse(config_json);
    if (kind == "kog") {
      KogConfig cfg = j.get<KogConfig>();
      h.kog_ = std::make_unique<KogTransformer<T>>(cfg, skeleton, rng);
      h.config_json_ = nlohmann::json(cfg).dump();
    } else if (kind == "gase") {
      GaseConfig cfg = j.get<GaseConfig>();
      h.gase_ = std::make_unique<GaseNet<T>>(cfg, skeleton, rng);
      h.config_json_ = nlohmann::json(cfg).dump();
    } else {
      throw ConfigError("unknown model kind '" + kind + "' (expected kog or gase)");
    }
    return h;
  }

  Tensor<T> forward(Tensor<T> x, bool train, Rng* rng) const {
    return kog_ ? kog_->forward(x, train, rng) : gase_->forward(x, train, rng);
  }

  ParamList<T>& params() { return kog_ ? kog_->params() : gase_->params(); }
  const std::string& kind() const { return kind_; }
  const std::string& config_json() const { return config_json_; }
  std::size_t input_cols() const { return kog_ ? 2 : 3; }
  KogTransformer<T>* kog() { return kog_.get(); }
  GaseNet<T>* gase() { return gase_.get(); }

 private:
  std::string kind_, config_json_;
  std::unique_ptr<KogTransformer<T>> kog_;
  std::unique_ptr<GaseNet<T>> gase_;
};

// Pack normalized samples into batch tensors.
template <typename T>
Tensor<T> pack_inputs(const std::vector<PoseSample>& samples,
                      const std::vector<std::size_t>& idx) {
  const std::size_t rows = samples[idx[0]].input.rows;
  const std::size_t cols = samples[idx[0]].input.cols;
  Tensor<T> out({idx.size(), rows, cols});
  T* dst = out.data();
  for (std::size_t i : idx)
    for (double v : samples[i].input.v) *dst++ = static_cast<T>(v);
  return out;
}

template <typename T>
Tensor<T> pack_targets(const std::vector<PoseSample>& samples,
                       const std::vector<std::size_t>& idx) {
  const std::size_t rows = samples[idx[0]].target.rows;
  Tensor<T> out({idx.size(), rows, 3});
  T* dst = out.data();
  for (std::size_t i : idx)
    for (double v : samples[i].target.v) *dst++ = static_cast<T>(v);
  return out;
}

// Eval-mode predictions for a raw dataset, denormalized back to millimeters.
template <typename T>
std::vector<RowMat> predict_all(const ModelHandle<T>& model,
                                const std::vector<PoseSample>& raw,
                                const NormalizationStats& stats,
                                std::size_t batch = 64) {
  std::vector<RowMat> preds;
  preds.reserve(raw.size());
  std::vector<PoseSample> norm(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) norm[i] = normalize(raw[i], stats);
  for (std::size_t start = 0; start < raw.size(); start += batch) {
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < std::min(raw.size(), start + batch); ++i)
      idx.push_back(i);
    auto out = model.forward(pack_inputs<T>(norm, idx), false, nullptr);
    const std::size_t rows = out.dim(1);
    for (std::size_t b = 0; b < idx.size(); ++b) {
      RowMat m(rows, 3);
      for (std::size_t p = 0; p < rows * 3; ++p)
        m.v[p] = static_cast<double>(out.data()[b * rows * 3 + p]);
      preds.push_back(denormalize_target(m, stats));
    }
  }
  return preds;
}

template <typename T>
MetricReport evaluate_model(const ModelHandle<T>& model,
                            const std::vector<PoseSample>& raw,
                            const NormalizationStats& stats) {
  auto preds = predict_all(model, raw, stats);
  std::vector<RowMat> gts;
  gts.reserve(raw.size());
  for (const auto& s : raw) gts.push_back(s.target);
  MetricReport rep;
  rep.sample_count = raw.size();
  if (model.kind() == "kog") {
    rep.mpjpe_mm = mpjpe(preds, gts, stats.root_index);
    auto [pck, auc] = pck_and_auc(preds, gts, stats.root_index);
    rep.pck_percent = pck;
    rep.auc = auc;
  } else {
    rep.mpve_mm = mpve(preds, gts);
  }
  rep.validate();
  return rep;
}

// ------------------------------------------------------------ training

struct TrainOptions {
  std::string kind = "kog";
  double lr = 1e-3;
  std::size_t batch_size = 64;
  std::size_t max_steps = 5000;
  std::size_t eval_interval = 100;
  std::size_t checkpoint_interval = 1000;
  LrSchedule schedule;  // base is overwritten with lr
  double target_train_error_mm = 0.0;  // > 0 enables early stop on train error
  std::uint64_t seed = 0;
  std::string out_dir;  // empty: no files written

  static TrainOptions defaults_for(const std::string& kind) {
    TrainOptions o;
    o.kind = kind;
    if (kind == "gase") {
      o.lr = 1e-5;
      o.schedule = {LrSchedule::Kind::Epoch, o.lr, 0.8, 5};
    } else {
      o.lr = 1e-3;
      o.schedule = {LrSchedule::Kind::Step, o.lr, 0.9, 50000};
    }
    return o;
  }
};

struct TrainOutcome {
  std::size_t steps = 0;
  double final_loss = 0.0;
  double train_error_mm = 0.0;
  std::optional<double> eval_error_mm;
  bool reached_target = false;
  std::string checkpoint_path;
};

template <typename T>
TrainOutcome run_training(const SkeletonGraph& skeleton,
                          const std::string& model_config_json,
                          const std::vector<PoseSample>& train_set,
                          const std::vector<PoseSample>& eval_set,
                          TrainOptions opts, std::ostream* console) {
  if (train_set.empty()) throw ConfigError("training set is empty");
  if (opts.batch_size < 1 || opts.max_steps < 1 || opts.eval_interval < 1 ||
      opts.checkpoint_interval < 1)
    throw ConfigError("batch size, step counts and intervals must be >= 1");
  opts.schedule.base = opts.lr;
  opts.schedule.validate();

  const int root_index = opts.kind == "kog" ? 0 : -1;
  const NormalizationStats stats = compute_stats(train_set, root_index);

  Rng init_rng(opts.seed);
  auto model =
      ModelHandle<T>::make(opts.kind, model_config_json, skeleton, init_rng);
  Rng drop_rng(opts.seed + 1);
  Rng batch_rng(opts.seed + 2);

  std::vector<PoseSample> norm(train_set.size());
  for (std::size_t i = 0; i < train_set.size(); ++i)
    norm[i] = normalize(train_set[i], stats);

  const std::size_t n = train_set.size();
  const std::size_t batch = std::min(opts.batch_size, n);
  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = i;
  std::size_t cursor = n;  // trigger shuffle on first use

  Adam<T> adam;
  auto err_of = [&](const MetricReport& rep) {
    return opts.kind == "kog" ? *rep.mpjpe_mm : *rep.mpve_mm;
  };
  auto save = [&](const std::string& name) {
    if (opts.out_dir.empty()) return std::string();
    std::filesystem::create_directories(opts.out_dir);
    Checkpoint ckpt;
    ckpt.kind = opts.kind;
    ckpt.config_json = model.config_json();
    ckpt.stats = stats;
    ckpt.seed = opts.seed;
    ckpt.params = collect_blobs(model.params());
    const std::string path = opts.out_dir + "/" + name;
    save_checkpoint(path, ckpt);
    return path;
  };

  std::ofstream log;
  if (!opts.out_dir.empty()) {
    std::filesystem::create_directories(opts.out_dir);
    log.open(opts.out_dir + "/train_log.jsonl");
  }

  TrainOutcome outcome;
  double best_eval = std::numeric_limits<double>::infinity();
  for (std::size_t step = 1; step <= opts.max_steps; ++step) {
    std::vector<std::size_t> idx(batch);
    for (std::size_t b = 0; b < batch; ++b) {
      if (cursor >= n) {
        // Fisher-Yates with the deterministic Rng.
        for (std::size_t i = n; i > 1; --i)
          std::swap(perm[i - 1], perm[batch_rng.next_index(i)]);
        cursor = 0;
      }
      idx[b] = perm[cursor++];
    }

    auto inputs = pack_inputs<T>(norm, idx);
    auto targets = pack_targets<T>(norm, idx);

    Tape<T> tape;
    double loss_val = 0.0;
    {
      TapeScope<T> scope(tape);
      auto pred = model.forward(inputs, true, &drop_rng);
      auto loss = sq_err(pred, targets);
      loss_val = static_cast<double>(loss.item());
      tape.backward(loss);
    }
    const std::uint64_t counter = opts.schedule.kind == LrSchedule::Kind::Epoch
                                      ? (step * batch) / n
                                      : step;
    const double lr_now = opts.schedule.at(counter);
    adam.step(model.params(), lr_now);
    adam.zero_grad(model.params());

    outcome.steps = step;
    outcome.final_loss = loss_val;

    const bool due_eval = step % opts.eval_interval == 0 || step == opts.max_steps;
    if (due_eval) {
      auto train_rep = evaluate_model(model, train_set, stats);
      outcome.train_error_mm = err_of(train_rep);
      nlohmann::json line{{"step", step},
                          {"lr", lr_now},
                          {"loss", loss_val},
                          {opts.kind == "kog" ? "train_mpjpe_mm" : "train_mpve_mm",
                           outcome.train_error_mm}};
      if (!eval_set.empty()) {
        auto eval_rep = evaluate_model(model, eval_set, stats);
        outcome.eval_error_mm = err_of(eval_rep);
        line[opts.kind == "kog" ? "eval_mpjpe_mm" : "eval_mpve_mm"] =
            *outcome.eval_error_mm;
        if (*outcome.eval_error_mm < best_eval) {
          best_eval = *outcome.eval_error_mm;
          save("model_best.kogt");
        }
      }
      if (log) log << line.dump() << std::endl;
      if (console) *console << line.dump() << std::endl;
      if (opts.target_train_error_mm > 0.0 &&
          outcome.train_error_mm < opts.target_train_error_mm) {
        outcome.reached_target = true;
        break;
      }
    }
    if (step % opts.checkpoint_interval == 0) save("model.kogt");
  }

  outcome.checkpoint_path = save("model.kogt");
  if (log) log.flush();
  return outcome;
}

// Rebuild a model (fresh RNG for any unmatched state) and load checkpoint
// parameters into it.
template <typename T>
std::pair<ModelHandle<T>, NormalizationStats> restore_model(
    const Checkpoint& ckpt, const SkeletonGraph& skeleton) {
  Rng rng(ckpt.seed);
  auto model = ModelHandle<T>::make(ckpt.kind, ckpt.config_json, skeleton, rng);
  apply_checkpoint(ckpt, model.params());
  if (!ckpt.stats)
    throw IoError("checkpoint lacks normalization statistics");
  return {std::move(model), *ckpt.stats};
}

}  // namespace kog
