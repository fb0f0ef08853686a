// gnv3: train / fold / verify-fold / bench / eval / ingest front end over the
// C API. Exit codes: 0 success (for verify-fold: error within tolerance),
// 1 failure, 2 usage error.

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "gnv3.h"

namespace {

int fail(const char* action) {
  std::fprintf(stderr, "gnv3: %s: %s\n", action, gnv3_last_error());
  return 1;
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CLI::ValidationError("--config", "cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct ModelHandle {
  gnv3_model* m = nullptr;
  ~ModelHandle() { gnv3_model_free(m); }
};

struct DatasetHandle {
  gnv3_dataset* d = nullptr;
  ~DatasetHandle() { gnv3_dataset_free(d); }
};

int cmd_train(const std::string& config_path, int64_t seed, bool quiet) {
  const std::string text = read_text_file(config_path);
  double top1 = 0.0;
  if (gnv3_train(text.c_str(), seed, quiet ? 0 : 1, &top1)) return fail("train");
  std::printf("final val top-1: %.4f%%\n", top1);
  return 0;
}

int cmd_fold(const std::string& in_path, const std::string& out_path) {
  ModelHandle in, folded;
  if (gnv3_model_load(in_path.c_str(), &in.m)) return fail("load");
  if (gnv3_model_fold(in.m, &folded.m)) return fail("fold");
  int64_t params_in = 0, params_out = 0;
  if (gnv3_model_params(in.m, &params_in)) return fail("count params");
  if (gnv3_model_params(folded.m, &params_out)) return fail("count params");
  if (gnv3_model_save(folded.m, out_path.c_str())) return fail("save");
  std::printf("params: %lld -> %lld\n", static_cast<long long>(params_in),
              static_cast<long long>(params_out));
  return 0;
}

int cmd_verify_fold(const std::string& a_path, const std::string& b_path,
                    int64_t inputs, int64_t height, int64_t width,
                    uint64_t seed, double tolerance) {
  ModelHandle a, b;
  if (gnv3_model_load(a_path.c_str(), &a.m)) return fail("load");
  if (gnv3_model_load(b_path.c_str(), &b.m)) return fail("load");
  double err = 0.0;
  if (gnv3_verify_fold(a.m, b.m, inputs, height, width, seed, &err))
    return fail("verify");
  const bool ok = err <= tolerance;
  std::printf("# verify-fold tolerance=%.3e inputs=%lld input=%lldx%lld seed=%llu\n",
              tolerance, static_cast<long long>(inputs),
              static_cast<long long>(height), static_cast<long long>(width),
              static_cast<unsigned long long>(seed));
  std::printf("max relative error: %.6e (%s)\n", err, ok ? "PASS" : "FAIL");
  return ok ? 0 : 1;
}

int cmd_bench(const std::string& path, int64_t runs, int64_t warmup,
              int64_t height, int64_t width, uint64_t seed) {
  const int threads = 1;  // bench_model pins timing to one thread
  ModelHandle h;
  if (gnv3_model_load(path.c_str(), &h.m)) return fail("load");
  int32_t in_channels = 0, folded = 0;
  gnv3_model_in_channels(h.m, &in_channels);
  gnv3_model_is_folded(h.m, &folded);
  gnv3_bench_result r;
  if (gnv3_bench(h.m, height, width, runs, warmup, seed, &r)) return fail("bench");

  std::printf("model    : %s (%s)\n", path.c_str(), folded ? "folded" : "train-form");
  std::printf("input    : 1x%dx%lldx%lld   runs %lld, warmup %lld, 1 thread\n",
              in_channels, static_cast<long long>(height),
              static_cast<long long>(width), static_cast<long long>(r.runs),
              static_cast<long long>(r.warmup));
  std::printf("latency  : median %.3f ms   p10 %.3f   p90 %.3f   mean %.3f\n",
              r.median_ms, r.p10_ms, r.p90_ms, r.mean_ms);
  std::printf("params   : %lld\n", static_cast<long long>(r.params));
  std::printf("flops    : %lld (multiply-accumulates)\n",
              static_cast<long long>(r.flops));
  // Machine-readable block; protocol columns make each row self-describing.
  std::printf("csv: model,folded,runs,warmup,height,width,seed,threads,"
              "median_ms,p10_ms,p90_ms,mean_ms,params,flops\n");
  std::printf("csv: %s,%d,%lld,%lld,%lld,%lld,%llu,%d,%.6f,%.6f,%.6f,%.6f,%lld,%lld\n",
              path.c_str(), folded, static_cast<long long>(r.runs),
              static_cast<long long>(r.warmup), static_cast<long long>(height),
              static_cast<long long>(width),
              static_cast<unsigned long long>(seed), threads, r.median_ms,
              r.p10_ms, r.p90_ms, r.mean_ms, static_cast<long long>(r.params),
              static_cast<long long>(r.flops));
  return 0;
}

int cmd_eval(const std::string& ckpt, const std::string& data, int64_t batch) {
  ModelHandle m;
  DatasetHandle d;
  if (gnv3_model_load(ckpt.c_str(), &m.m)) return fail("load model");
  if (gnv3_dataset_open(data.c_str(), &d.d)) return fail("open dataset");
  int64_t count = 0;
  gnv3_dataset_info(d.d, &count, nullptr, nullptr, nullptr, nullptr);
  double top1 = 0.0, top5 = 0.0;
  if (gnv3_eval(m.m, d.d, batch, &top1, &top5)) return fail("eval");
  std::printf("samples: %lld\ntop-1: %.4f%%\ntop-5: %.4f%%\n",
              static_cast<long long>(count), top1, top5);
  return 0;
}

int cmd_ingest(const std::string& dir, const std::string& out, int64_t height,
               int64_t width) {
  if (gnv3_dataset_ingest(dir.c_str(), height, width, out.c_str()))
    return fail("ingest");
  DatasetHandle d;
  if (gnv3_dataset_open(out.c_str(), &d.d)) return fail("reopen");
  int64_t count = 0, classes = 0;
  gnv3_dataset_info(d.d, &count, nullptr, nullptr, nullptr, &classes);
  std::printf("wrote %s: %lld samples, %lld classes, %lldx%lld\n", out.c_str(),
              static_cast<long long>(count), static_cast<long long>(classes),
              static_cast<long long>(height), static_cast<long long>(width));
  return 0;
}

int cmd_synth(const std::string& out, int64_t classes, int64_t per_class,
              int64_t height, int64_t width, uint64_t seed, double noise,
              double label_noise) {
  if (gnv3_dataset_synth(classes, per_class, height, width, seed, noise,
                         label_noise, out.c_str()))
    return fail("synth");
  std::printf("wrote %s: %lld samples, %lld classes, %lldx%lld\n", out.c_str(),
              static_cast<long long>(classes * per_class),
              static_cast<long long>(classes), static_cast<long long>(height),
              static_cast<long long>(width));
  return 0;
}

int cmd_export_logits(const std::string& ckpt, const std::string& data,
                      const std::string& out, int64_t batch) {
  ModelHandle m;
  DatasetHandle d;
  if (gnv3_model_load(ckpt.c_str(), &m.m)) return fail("load model");
  if (gnv3_dataset_open(data.c_str(), &d.d)) return fail("open dataset");
  if (gnv3_export_logits(m.m, d.d, batch, out.c_str()))
    return fail("export logits");
  std::printf("wrote %s\n", out.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Re-parameterizable compact convnets: train, fold, verify, bench"};
  app.require_subcommand(1);

  int threads = 0;  // 0 = hardware default
  app.add_option("--threads", threads, "Worker threads (0 = all cores)")
      ->capture_default_str();

  std::string config_path, in_path, out_path, data_path;
  int64_t seed_override = -1;
  uint64_t seed = 0;
  bool quiet = false;
  int64_t inputs = 16, runs = 100, warmup = 10, batch = 64;
  int64_t height = 32, width = 32, classes = 10, per_class = 500;
  double tolerance = 1e-3, noise = 0.25, label_noise = 0.0;

  auto* train = app.add_subcommand("train", "Train a model from an INI recipe");
  train->add_option("--config", config_path, "Recipe INI file")->required();
  train->add_option("--seed", seed_override, "Override [train] seed");
  train->add_flag("--quiet", quiet, "Suppress per-epoch log lines");

  auto* fold = app.add_subcommand("fold", "Fold a checkpoint for inference");
  fold->add_option("input", in_path, "Input checkpoint")->required();
  fold->add_option("output", out_path, "Output checkpoint")->required();

  auto* verify = app.add_subcommand(
      "verify-fold", "Compare two checkpoints on random inputs");
  verify->add_option("first", in_path, "Checkpoint (train-form)")->required();
  verify->add_option("second", out_path, "Checkpoint (folded)")->required();
  verify->add_option("--inputs", inputs, "Random inputs")->capture_default_str();
  verify->add_option("--height", height, "Input height")->capture_default_str();
  verify->add_option("--width", width, "Input width")->capture_default_str();
  verify->add_option("--seed", seed, "Input RNG seed")->capture_default_str();
  verify->add_option("--tolerance", tolerance, "Max relative error accepted")
      ->capture_default_str();

  auto* bench = app.add_subcommand("bench", "Single-thread latency benchmark");
  bench->add_option("checkpoint", in_path, "Checkpoint")->required();
  bench->add_option("--runs", runs, "Timed iterations")->capture_default_str();
  bench->add_option("--warmup", warmup, "Untimed iterations")
      ->capture_default_str();
  bench->add_option("--height", height, "Input height")->capture_default_str();
  bench->add_option("--width", width, "Input width")->capture_default_str();
  bench->add_option("--seed", seed, "Input RNG seed")->capture_default_str();

  auto* eval = app.add_subcommand("eval", "Top-1/top-5 accuracy on a dataset");
  eval->add_option("checkpoint", in_path, "Checkpoint")->required();
  eval->add_option("dataset", data_path, "Dataset file")->required();
  eval->add_option("--batch", batch, "Batch size")->capture_default_str();

  auto* ingest = app.add_subcommand(
      "ingest", "Build a dataset from per-class PPM/PGM directories");
  ingest->add_option("directory", in_path, "Root with per-class subdirs")
      ->required();
  ingest->add_option("output", out_path, "Output dataset file")->required();
  ingest->add_option("--height", height, "Target height")->capture_default_str();
  ingest->add_option("--width", width, "Target width")->capture_default_str();

  auto* synth = app.add_subcommand("synth", "Write a synthetic dataset");
  synth->add_option("output", out_path, "Output dataset file")->required();
  synth->add_option("--classes", classes, "Class count")->capture_default_str();
  synth->add_option("--per-class", per_class, "Samples per class")
      ->capture_default_str();
  synth->add_option("--height", height, "Image height")->capture_default_str();
  synth->add_option("--width", width, "Image width")->capture_default_str();
  synth->add_option("--seed", seed, "Generator seed")->capture_default_str();
  synth->add_option("--noise", noise, "Additive noise sigma")
      ->capture_default_str();
  synth->add_option("--label-noise", label_noise,
                    "Fraction of labels randomized")
      ->capture_default_str();

  auto* exp = app.add_subcommand("export-logits",
                                 "Write model logits for every sample");
  exp->add_option("checkpoint", in_path, "Checkpoint")->required();
  exp->add_option("dataset", data_path, "Dataset file")->required();
  exp->add_option("output", out_path, "Output logit file")->required();
  exp->add_option("--batch", batch, "Batch size")->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  const char* det = std::getenv("GNV3_DETERMINISTIC");
  if (det && std::string(det) == "1") threads = 1;
  gnv3_set_threads(threads);

  try {
    if (*train) return cmd_train(config_path, seed_override, quiet);
    if (*fold) return cmd_fold(in_path, out_path);
    if (*verify)
      return cmd_verify_fold(in_path, out_path, inputs, height, width, seed,
                             tolerance);
    if (*bench)
      return cmd_bench(in_path, runs, warmup, height, width, seed);
    if (*eval) return cmd_eval(in_path, data_path, batch);
    if (*ingest) return cmd_ingest(in_path, out_path, height, width);
    if (*synth)
      return cmd_synth(out_path, classes, per_class, height, width, seed,
                       noise, label_noise);
    if (*exp) return cmd_export_logits(in_path, data_path, out_path, batch);
  } catch (const CLI::Error& e) {
    return app.exit(e);
  }
  return 2;
}
