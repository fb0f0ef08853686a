#include "gnv3/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "gnv3/common.hpp"

namespace gnv3 {

namespace {

std::string format_double(double v) {
  std::ostringstream oss;
  oss.precision(17);
  oss << v;
  return oss.str();
}

std::vector<int64_t> parse_milestones(const std::string& text) {
  std::vector<int64_t> out;
  std::istringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (item.find_first_not_of(" \t") == std::string::npos) continue;
    out.push_back(std::stoll(item));
  }
  return out;
}

// Copies one normalized image into row `row` of the batch tensor.
void place_sample(Tensor& batch, int64_t row, const Tensor& img) {
  const int64_t stride = img.numel();
  std::copy(img.data(), img.data() + stride, batch.data() + row * stride);
}

}  // namespace

RecipeConfig RecipeConfig::from_ini(const IniFile& ini) {
  RecipeConfig c;
  c.model = spec_from_ini(ini);

  c.kd.alpha = static_cast<float>(ini.get_double("kd", "alpha", 0.0));
  c.kd.tau = static_cast<float>(ini.get_double("kd", "tau", 1.0));
  c.kd.literal_temp = ini.get_bool("kd", "literal_temp", false);

  const std::string sk = ini.get("schedule", "kind", "cosine");
  if (sk == "cosine")
    c.schedule.kind = ScheduleKind::cosine;
  else if (sk == "step")
    c.schedule.kind = ScheduleKind::step;
  else
    fail(ErrorCode::bad_format, "unknown schedule kind: " + sk);
  c.schedule.lr_max = ini.get_double("schedule", "lr_max", 0.005);
  c.schedule.lr_min = ini.get_double("schedule", "lr_min", 0.0);
  c.schedule.total_steps = ini.get_int("schedule", "total_steps", 0);
  c.schedule.step_factor = ini.get_double("schedule", "factor", 0.1);
  c.schedule.warmup_steps = ini.get_int("schedule", "warmup_steps", 0);
  c.schedule.milestones =
      parse_milestones(ini.get("schedule", "milestones", ""));

  c.augment.rand_transforms = ini.get_bool("augment", "rand_transforms", true);
  c.augment.transforms_per_image =
      static_cast<int>(ini.get_int("augment", "transforms_per_image", 2));
  c.augment.mixup = ini.get_bool("augment", "mixup", false);
  c.augment.mixup_alpha = ini.get_double("augment", "mixup_alpha", 0.8);
  c.augment.cutmix = ini.get_bool("augment", "cutmix", false);
  c.augment.erasing = ini.get_bool("augment", "erasing", true);
  c.augment.erase_prob = ini.get_double("augment", "erase_prob", 0.25);
  c.augment.erase_area_lo = ini.get_double("augment", "erase_area_lo", 0.02);
  c.augment.erase_area_hi = ini.get_double("augment", "erase_area_hi", 0.2);
  c.augment.erase_aspect_lo =
      ini.get_double("augment", "erase_aspect_lo", 0.3);
  c.augment.erase_aspect_hi =
      ini.get_double("augment", "erase_aspect_hi", 10.0 / 3.0);

  const std::string ok = ini.get("optimizer", "kind", "lamb");
  if (ok == "lamb")
    c.optimizer.kind = OptimizerKind::lamb;
  else if (ok == "sgd")
    c.optimizer.kind = OptimizerKind::sgd;
  else
    fail(ErrorCode::bad_format, "unknown optimizer kind: " + ok);
  c.optimizer.momentum = ini.get_double("optimizer", "momentum", 0.9);
  c.optimizer.beta1 = ini.get_double("optimizer", "beta1", 0.9);
  c.optimizer.beta2 = ini.get_double("optimizer", "beta2", 0.999);
  c.optimizer.eps = ini.get_double("optimizer", "eps", 1e-6);
  c.optimizer.weight_decay = ini.get_double("optimizer", "weight_decay", 0.05);
  c.optimizer.trust_lo = ini.get_double("optimizer", "trust_lo", 0.0);
  c.optimizer.trust_hi = ini.get_double("optimizer", "trust_hi", 10.0);

  c.ema_beta = ini.get_double("train", "ema_beta", 0.99);
  c.epochs = ini.get_int("train", "epochs", 10);
  c.batch = ini.get_int("train", "batch", 64);
  c.seed = static_cast<uint64_t>(ini.get_int("train", "seed", 0));
  c.save_ema = ini.get_bool("train", "save_ema", false);

  c.paths.train_data = ini.get("data", "train", "");
  c.paths.val_data = ini.get("data", "val", "");
  c.paths.teacher_ckpt = ini.get("data", "teacher", "");
  c.paths.teacher_logits = ini.get("data", "teacher_logits", "");
  c.paths.out_checkpoint = ini.get("train", "out", "model.gnv3");
  c.paths.out_metrics = ini.get("train", "metrics", "metrics.csv");
  c.validate();
  return c;
}

void RecipeConfig::to_ini(IniFile& ini) const {
  spec_to_ini(model, ini);
  ini.set("kd", "alpha", format_double(kd.alpha));
  ini.set("kd", "tau", format_double(kd.tau));
  ini.set("kd", "literal_temp", kd.literal_temp ? "true" : "false");

  ini.set("schedule", "kind",
          schedule.kind == ScheduleKind::cosine ? "cosine" : "step");
  ini.set("schedule", "lr_max", format_double(schedule.lr_max));
  ini.set("schedule", "lr_min", format_double(schedule.lr_min));
  ini.set("schedule", "total_steps", std::to_string(schedule.total_steps));
  ini.set("schedule", "factor", format_double(schedule.step_factor));
  ini.set("schedule", "warmup_steps", std::to_string(schedule.warmup_steps));
  std::ostringstream ms;
  for (size_t i = 0; i < schedule.milestones.size(); ++i) {
    if (i) ms << ",";
    ms << schedule.milestones[i];
  }
  ini.set("schedule", "milestones", ms.str());

  ini.set("augment", "rand_transforms", augment.rand_transforms ? "true" : "false");
  ini.set("augment", "transforms_per_image",
          std::to_string(augment.transforms_per_image));
  ini.set("augment", "mixup", augment.mixup ? "true" : "false");
  ini.set("augment", "mixup_alpha", format_double(augment.mixup_alpha));
  ini.set("augment", "cutmix", augment.cutmix ? "true" : "false");
  ini.set("augment", "erasing", augment.erasing ? "true" : "false");
  ini.set("augment", "erase_prob", format_double(augment.erase_prob));
  ini.set("augment", "erase_area_lo", format_double(augment.erase_area_lo));
  ini.set("augment", "erase_area_hi", format_double(augment.erase_area_hi));
  ini.set("augment", "erase_aspect_lo", format_double(augment.erase_aspect_lo));
  ini.set("augment", "erase_aspect_hi", format_double(augment.erase_aspect_hi));

  ini.set("optimizer", "kind",
          optimizer.kind == OptimizerKind::lamb ? "lamb" : "sgd");
  ini.set("optimizer", "momentum", format_double(optimizer.momentum));
  ini.set("optimizer", "beta1", format_double(optimizer.beta1));
  ini.set("optimizer", "beta2", format_double(optimizer.beta2));
  ini.set("optimizer", "eps", format_double(optimizer.eps));
  ini.set("optimizer", "weight_decay", format_double(optimizer.weight_decay));
  ini.set("optimizer", "trust_lo", format_double(optimizer.trust_lo));
  ini.set("optimizer", "trust_hi", format_double(optimizer.trust_hi));

  ini.set("train", "ema_beta", format_double(ema_beta));
  ini.set("train", "epochs", std::to_string(epochs));
  ini.set("train", "batch", std::to_string(batch));
  ini.set("train", "seed", std::to_string(seed));
  ini.set("train", "save_ema", save_ema ? "true" : "false");
  ini.set("train", "out", paths.out_checkpoint);
  ini.set("train", "metrics", paths.out_metrics);
  ini.set("data", "train", paths.train_data);
  ini.set("data", "val", paths.val_data);
  ini.set("data", "teacher", paths.teacher_ckpt);
  ini.set("data", "teacher_logits", paths.teacher_logits);
}

void RecipeConfig::validate() const {
  model.validate();
  kd.validate();
  augment.validate();
  optimizer.validate();
  GNV3_CHECK_ARG(epochs >= 1, "epochs must be positive");
  GNV3_CHECK_ARG(batch >= 1, "batch size must be positive");
  GNV3_CHECK_ARG(ema_beta >= 0.0 && ema_beta <= 1.0,
                 "ema decay must lie in [0, 1]");
  GNV3_CHECK_ARG(paths.teacher_ckpt.empty() || paths.teacher_logits.empty(),
                 "configure either a live teacher or a logit file, not both");
}

TrainResult train_loop(const RecipeConfig& cfg, Model& model,
                       const Dataset& train_data, const Dataset& val_data,
                       const Model* teacher, const LogitTable* teacher_logits,
                       EmaState* ema_out, std::ostream* log) {
  cfg.validate();
  train_data.validate();
  val_data.validate();
  GNV3_CHECK_ARG(train_data.classes == model.spec.num_classes,
                 "dataset classes do not match model classes");
  if (cfg.kd.alpha > 0.0f) {
    GNV3_CHECK_ARG(teacher != nullptr || teacher_logits != nullptr,
                   "kd alpha > 0 but no teacher source given");
    if (teacher_logits != nullptr) {
      GNV3_CHECK_ARG(teacher_logits->classes == train_data.classes,
                     "teacher logit classes do not match dataset");
      GNV3_CHECK_ARG(teacher_logits->count() == train_data.count(),
                     "teacher logit rows do not match dataset size");
    }
  }

  const int64_t n = train_data.count();
  const int64_t steps_per_epoch = (n + cfg.batch - 1) / cfg.batch;
  ScheduleConfig sched = cfg.schedule;
  if (sched.total_steps == 0) sched.total_steps = cfg.epochs * steps_per_epoch;
  sched.validate();

  std::vector<TensorSlot> all_slots = model.slots();
  std::vector<TensorSlot> learnable;
  for (const auto& s : all_slots)
    if (s.learnable) learnable.push_back(s);

  Optimizer opt(cfg.optimizer, learnable);
  EmaState ema = EmaState::init(all_slots, cfg.ema_beta);

  std::vector<Vec> grads;
  grads.reserve(learnable.size());
  GradSink sink;
  for (const auto& s : learnable) {
    grads.emplace_back(s.size, 0.0f);
    sink.bind(s.data, grads.back().data(), s.size);
  }

  std::vector<int64_t> order(n);
  std::iota(order.begin(), order.end(), 0);

  TrainResult result;
  int64_t global_step = 0;

  for (int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::mt19937_64 shuffle_rng(mix_seed(cfg.seed, 0xE000000ULL + epoch));
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    const double epoch_lr = lr_at(sched, global_step);

    double loss_sum = 0.0;
    int64_t loss_count = 0;

    for (int64_t b = 0; b < steps_per_epoch; ++b) {
      const int64_t lo = b * cfg.batch;
      const int64_t hi = std::min(n, lo + cfg.batch);
      const int64_t bs = hi - lo;

      // Per-batch stream drives pairing decisions; per-sample streams drive
      // the individual transforms. Both depend only on (seed, epoch, index).
      std::mt19937_64 batch_rng(
          mix_seed(cfg.seed, 0xB000000ULL + epoch * steps_per_epoch + b));

      std::vector<Tensor> images(bs);
      std::vector<int> labels(bs);
      for (int64_t i = 0; i < bs; ++i) {
        const int64_t idx = order[lo + i];
        images[i] = train_data.image(idx);
        labels[i] = train_data.label(idx);
        if (cfg.augment.rand_transforms) {
          std::mt19937_64 rng(
              mix_seed(cfg.seed, 0xA0000000ULL + epoch * n + (lo + i)));
          apply_rand_transforms(images[i], rng, cfg.augment.transforms_per_image);
        }
      }

      // Mixed targets: start one-hot, adjust per pairing below.
      Tensor targets = one_hot(labels, train_data.classes);
      bool use_mix = cfg.augment.mixup, use_cut = cfg.augment.cutmix;
      if (use_mix && use_cut) {
        // Both enabled: one of the two is chosen per batch.
        std::uniform_int_distribution<int> coin(0, 1);
        if (coin(batch_rng) == 0)
          use_cut = false;
        else
          use_mix = false;
      }
      if ((use_mix || use_cut) && bs >= 2) {
        std::vector<Tensor> mixed(bs);
        float* trow = targets.data();
        for (int64_t i = 0; i < bs; ++i) {
          const int64_t j = (i + 1) % bs;
          std::mt19937_64 rng(
              mix_seed(cfg.seed, 0xC0000000ULL + epoch * n + (lo + i)));
          float wa;
          if (use_mix) {
            wa = sample_mixup_lambda(rng, cfg.augment.mixup_alpha);
            mixed[i] = mixup(images[i], images[j], wa);
          } else {
            CutmixResult r = cutmix(images[i], images[j], rng);
            mixed[i] = std::move(r.image);
            wa = r.weight_a;
          }
          const float wb = 1.0f - wa;
          float* row = trow + i * train_data.classes;
          for (int64_t k = 0; k < train_data.classes; ++k) row[k] = 0.0f;
          row[labels[i]] += wa;
          row[labels[j]] += wb;
        }
        images = std::move(mixed);
      }

      if (cfg.augment.erasing) {
        for (int64_t i = 0; i < bs; ++i) {
          std::mt19937_64 rng(
              mix_seed(cfg.seed, 0xD0000000ULL + epoch * n + (lo + i)));
          random_erasing(images[i], rng, cfg.augment);
        }
      }

      Tensor batch(bs, train_data.channels, train_data.height, train_data.width);
      for (int64_t i = 0; i < bs; ++i)
        place_sample(batch, i, train_data.normalize(images[i]));

      Model::Cache cache;
      Tensor logits = model.forward_train(batch, cache);

      Tensor teacher_rows;
      const Tensor* teacher_ptr = nullptr;
      if (cfg.kd.alpha > 0.0f) {
        if (teacher != nullptr) {
          teacher_rows = teacher->forward(batch);
        } else {
          teacher_rows = Tensor(bs, train_data.classes, 1, 1);
          for (int64_t i = 0; i < bs; ++i) {
            const float* src = teacher_logits->row(order[lo + i]);
            std::copy(src, src + train_data.classes,
                      teacher_rows.data() + i * train_data.classes);
          }
        }
        teacher_ptr = &teacher_rows;
      }

      const float ce = cross_entropy(logits, targets);
      const float kdv = (cfg.kd.alpha > 0.0f)
                            ? kd_loss(logits, *teacher_ptr, cfg.kd.tau,
                                      cfg.kd.literal_temp)
                            : 0.0f;
      const float loss = total_loss(ce, kdv, cfg.kd.alpha);
      GNV3_CHECK(std::isfinite(loss), ErrorCode::numeric_error,
                 "training diverged (non-finite loss) at epoch "
                     << epoch << " step " << b);

      Tensor d_logits = total_loss_grad(logits, targets, teacher_ptr, cfg.kd);
      for (auto& g : grads) std::fill(g.begin(), g.end(), 0.0f);
      model.backward(cache, d_logits, sink);
      opt.step(learnable, grads, lr_at(sched, global_step));
      ema_update(ema, all_slots);

      loss_sum += double(loss) * bs;
      loss_count += bs;
      ++global_step;
    }

    EpochMetrics em;
    em.epoch = epoch;
    em.lr = epoch_lr;
    em.train_loss = loss_sum / double(loss_count);
    em.top1_raw = evaluate(model, val_data, cfg.batch).top1;
    {
      Model ema_model(model);
      ema.copy_to(ema_model.slots());
      em.top1_ema = evaluate(ema_model, val_data, cfg.batch).top1;
    }
    result.history.push_back(em);
    if (log) {
      char line[160];
      std::snprintf(line, sizeof(line),
                    "epoch %3lld  lr %.6f  loss %.4f  top1 %.2f  ema %.2f\n",
                    static_cast<long long>(epoch), em.lr, em.train_loss,
                    em.top1_raw, em.top1_ema);
      (*log) << line << std::flush;
    }
  }

  result.top1_raw = result.history.back().top1_raw;
  result.top1_ema = result.history.back().top1_ema;
  if (ema_out) *ema_out = std::move(ema);
  return result;
}

TrainResult run_recipe(const RecipeConfig& cfg, std::ostream* log) {
  cfg.validate();
  GNV3_CHECK_ARG(!cfg.paths.train_data.empty(), "recipe names no training data");
  GNV3_CHECK_ARG(!cfg.paths.val_data.empty(), "recipe names no validation data");
  const Dataset train_data = load_dataset(cfg.paths.train_data);
  const Dataset val_data = load_dataset(cfg.paths.val_data);

  std::unique_ptr<Model> teacher;
  LogitTable logits;
  const LogitTable* logits_ptr = nullptr;
  if (cfg.kd.alpha > 0.0f) {
    if (!cfg.paths.teacher_ckpt.empty()) {
      // Folding the teacher is free accuracy-wise and much faster to query.
      std::unique_ptr<Model> raw = load_checkpoint(cfg.paths.teacher_ckpt);
      teacher = fold_model(*raw);
    } else if (!cfg.paths.teacher_logits.empty()) {
      logits = load_logits(cfg.paths.teacher_logits);
      logits_ptr = &logits;
    }
  }

  std::unique_ptr<Model> model = build_model(cfg.model, cfg.seed);
  EmaState ema;
  TrainResult result = train_loop(cfg, *model, train_data, val_data,
                                  teacher.get(), logits_ptr, &ema, log);

  if (!cfg.paths.out_checkpoint.empty()) {
    if (cfg.save_ema) {
      Model ema_model(*model);
      ema.copy_to(ema_model.slots());
      save_checkpoint(ema_model, cfg.paths.out_checkpoint);
    } else {
      save_checkpoint(*model, cfg.paths.out_checkpoint);
    }
  }
  if (!cfg.paths.out_metrics.empty()) {
    std::ofstream out(cfg.paths.out_metrics, std::ios::binary | std::ios::trunc);
    GNV3_CHECK_IO(out.good(), "cannot create metrics file: " + cfg.paths.out_metrics);
    out << metrics_csv(result.history);
    out.flush();
    GNV3_CHECK_IO(out.good(), "write failed: " + cfg.paths.out_metrics);
  }
  return result;
}

EvalResult evaluate(const Model& m, const Dataset& d, int64_t batch) {
  d.validate();
  GNV3_CHECK_ARG(batch >= 1, "batch size must be positive");
  EvalResult r;
  r.count = d.count();
  if (r.count == 0) return r;
  const int k5 = static_cast<int>(std::min<int64_t>(5, d.classes));
  double top1_hits = 0.0, top5_hits = 0.0;
  for (int64_t lo = 0; lo < d.count(); lo += batch) {
    const int64_t hi = std::min(d.count(), lo + batch);
    const int64_t bs = hi - lo;
    Tensor x(bs, d.channels, d.height, d.width);
    std::vector<int> labels(bs);
    for (int64_t i = 0; i < bs; ++i) {
      place_sample(x, i, d.normalize(d.image(lo + i)));
      labels[i] = d.label(lo + i);
    }
    Tensor logits = m.forward(x);
    top1_hits += topk_accuracy(logits, labels, 1) * bs / 100.0;
    top5_hits += topk_accuracy(logits, labels, k5) * bs / 100.0;
  }
  r.top1 = 100.0 * top1_hits / double(r.count);
  r.top5 = 100.0 * top5_hits / double(r.count);
  return r;
}

LogitTable predict_logits(const Model& m, const Dataset& d, int64_t batch) {
  d.validate();
  LogitTable t;
  t.classes = m.spec.num_classes;
  t.rows.resize(d.count() * t.classes);
  for (int64_t lo = 0; lo < d.count(); lo += batch) {
    const int64_t hi = std::min(d.count(), lo + batch);
    const int64_t bs = hi - lo;
    Tensor x(bs, d.channels, d.height, d.width);
    for (int64_t i = 0; i < bs; ++i)
      place_sample(x, i, d.normalize(d.image(lo + i)));
    Tensor logits = m.forward(x);
    std::copy(logits.data(), logits.data() + bs * t.classes,
              t.rows.data() + lo * t.classes);
  }
  return t;
}

std::string metrics_csv(const std::vector<EpochMetrics>& history) {
  std::ostringstream out;
  out << "epoch,lr,train_loss,val_top1_raw,val_top1_ema\n";
  char line[160];
  for (const auto& e : history) {
    std::snprintf(line, sizeof(line), "%lld,%.8f,%.6f,%.4f,%.4f\n",
                  static_cast<long long>(e.epoch), e.lr, e.train_loss,
                  e.top1_raw, e.top1_ema);
    out << line;
  }
  return out.str();
}

}  // namespace gnv3
