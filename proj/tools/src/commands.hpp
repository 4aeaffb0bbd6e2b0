#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace tba::cli {

using Path = std::filesystem::path;

// Probe settings shared by eval, generalize and compare.
struct ProbeFlags {
  std::vector<std::uint64_t> seeds = {0, 1, 2};
  std::size_t epochs = 5;
  double lr = 1e-3;
  std::size_t batch = 256;
  std::string feature = "cls";  // cls | mean
  bool no_final_norm = false;
};

// Fitting settings shared by fit, generalize, drift and compare.
struct FitFlags {
  std::size_t samples = 3000;
  std::uint64_t seed = 0;
  bool bias = false;
  double rcond = 1e-6;
};

// Trained-baseline settings.
struct TrainFlags {
  std::size_t steps = 300;
  double lr = 1e-3;
  std::size_t batch = 256;
  double dropout_p = 0.1;
};

struct SynthOptions {
  Path out;
  std::size_t blocks = 8, dim = 32, heads = 4, mlp_hidden = 128;
  std::size_t image_size = 16, patch = 4, channels = 3;
  std::vector<std::string> plants;  // kind:s:e
  double noise_scale = 0.2;
  double strength = 0.3;
  std::size_t gelu_width = 8;
  double gelu_scale = 2.0;
  std::uint64_t seed = 0;
  std::size_t classes = 10, per_class = 100, test_per_class = 100;
  double margin = 160.0, data_noise = 1.0, shift = 0.0;
  std::uint64_t data_seed = 0;
};

struct CaptureCmdOptions {
  Path out, model, data;
  std::size_t samples = 500;
  std::uint64_t seed = 0;
  std::string reduce = "mean";
  bool exclude_cls = false;
  std::vector<std::size_t> blocks;  // 0-based block indices; empty = all
};

struct IdentifyOptions {
  Path out, model, data, activations;
  std::size_t samples = 500;
  std::uint64_t seed = 0;
  std::string reduce = "mean";
  bool exclude_cls = false;
  std::string metric = "mse";
  std::size_t max_span = 0;  // 0 = any length
  std::size_t top_k = 10;
  std::string replacement = "linear";
};

struct FitCmdOptions {
  Path out, model, data;
  std::string spans;
  std::string approximator = "linear";  // linear | identity | mlp | resmlp
  FitFlags fit;
  TrainFlags train;
};

struct PatchOptions {
  Path out, model, data;
  std::vector<Path> approx;
  std::size_t samples = 500;
  std::uint64_t seed = 0;
  std::string reduce = "mean";
  bool final_norm = false;
};

struct EvalOptions {
  Path out, model, train, test;
  std::vector<Path> approx;
  ProbeFlags probe;
};

struct GeneralizeOptions {
  Path out, model, fit_data, train, test;
  std::string span;
  FitFlags fit;
  ProbeFlags probe;
};

struct DriftOptions {
  Path out, model, data, eval_data;
  FitFlags fit;
  std::size_t eval_samples = 500;
  std::string reduce = "mean";
  bool final_norm = false;
};

struct PcaOptions {
  Path out, model, data;
  std::vector<Path> approx;
  std::size_t samples = 500;
  std::uint64_t seed = 0;
  std::size_t k = 2;
  std::string feature = "cls";
  bool no_final_norm = false;
};

struct CompareOptions {
  Path out, model, data, train, test;
  std::string spans;
  std::vector<std::string> methods = {"tba", "skipat", "mlp", "resmlp"};
  FitFlags fit;
  TrainFlags train_flags;
  std::size_t eval_samples = 500;
  std::string reduce = "mean";
  bool final_norm = false;
  ProbeFlags probe;
};

// Input images for IDX pairs are normalized with these per-channel constants.
struct IngestFlags {
  double norm_mean = 0.5;
  double norm_std = 0.5;
};

void cmd_synth(const SynthOptions& o);
void cmd_capture(const CaptureCmdOptions& o, const IngestFlags& ingest);
void cmd_identify(const IdentifyOptions& o, const IngestFlags& ingest);
void cmd_fit(const FitCmdOptions& o, const IngestFlags& ingest);
void cmd_patch(const PatchOptions& o, const IngestFlags& ingest);
void cmd_eval(const EvalOptions& o, const IngestFlags& ingest);
void cmd_generalize(const GeneralizeOptions& o, const IngestFlags& ingest);
void cmd_drift(const DriftOptions& o, const IngestFlags& ingest);
void cmd_pca(const PcaOptions& o, const IngestFlags& ingest);
void cmd_compare(const CompareOptions& o, const IngestFlags& ingest);

}  // namespace tba::cli
