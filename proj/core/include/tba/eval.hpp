#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "tba/approx.hpp"
#include "tba/dataset.hpp"
#include "tba/tensor.hpp"

namespace tba {

struct ProbeConfig {
  std::size_t epochs = 5;
  double lr = 1e-3;
  std::size_t batch = 256;
  FeatureOptions features;  // CLS token after the final norm by default
};

// Single linear softmax classifier: logits = x W + b.
struct Probe {
  Tensor w;  // [d x C]
  Tensor b;  // [C]

  std::size_t num_classes() const { return b.numel(); }
  Tensor logits(const Tensor& features) const;
  // Arg-max class per row; ties go to the lowest index.
  std::vector<int> predict(const Tensor& features) const;
};

// Softmax cross-entropy trained by Adam on shuffled mini-batches, with
// gradients derived by hand and accumulated in double. Initialization is
// uniform in +-1/sqrt(d). Throws ArgumentError when num_classes < 2 or a
// label is out of range.
Probe train_probe(const Tensor& features, const std::vector<int>& labels, std::size_t num_classes,
                  const ProbeConfig& cfg, std::uint64_t seed);

struct ProbeResult {
  double accuracy = 0.0;
  std::vector<double> per_class;                 // accuracy per class (0 for absent classes)
  std::vector<std::size_t> class_counts;
  std::vector<std::vector<std::size_t>> confusion;  // [true][predicted]
  std::uint64_t seed = 0;
  std::size_t epochs = 0;
  std::string encoder_fingerprint;
  std::string plan;
};

// Scores predictions; the accuracy is recounted from the raw predictions and
// checked against the confusion matrix.
ProbeResult score(const std::vector<int>& predicted, const std::vector<int>& labels, std::size_t num_classes);

struct EvalSummary {
  std::vector<ProbeResult> runs;  // one per seed
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation (0 for one seed)
};

// Trains one probe per seed on the training features and scores it on the
// test features.
EvalSummary evaluate_features(const Tensor& train_x, const std::vector<int>& train_y, const Tensor& test_x,
                              const std::vector<int>& test_y, std::size_t num_classes, const ProbeConfig& cfg,
                              const std::vector<std::uint64_t>& seeds);

// Frozen-encoder evaluation of a (possibly patched) model. An unpatched model
// is a PatchedModel with an empty plan.
EvalSummary evaluate(const PatchedModel& model, const Dataset& train, const Dataset& test, const ProbeConfig& cfg,
                     const std::vector<std::uint64_t>& seeds);

// Short text form of a plan, e.g. "linear 3:4" or "none".
std::string describe_plan(const ApproxPlan& plan);

struct FitConfig {
  std::size_t samples = 3000;
  std::uint64_t seed = 0;
  bool use_bias = false;
  double rcond = kDefaultRcond;
};

// Captures per-token activations of blocks s and e on a sample of `data`
// and fits the linear map for `span`.
LinearMap fit_span(const TransformerModel& model, const Dataset& data, const Span& span, const FitConfig& fit);

// Fits T on `fit_data`, patches `span`, and evaluates the patched encoder on
// the apply datasets (probe trained on the apply train split).
EvalSummary generalize(const TransformerModel& model, const Dataset& fit_data, const Span& span,
                       const Dataset& apply_train, const Dataset& apply_test, const FitConfig& fit,
                       const ProbeConfig& cfg, const std::vector<std::uint64_t>& seeds);

struct DriftPoint {
  Span span;
  double drift = 0.0;     // final-layer drift with the fitted map
  double residual = 0.0;  // fitting-set residual per row
};

// Single-block spans (k-1, k) for k = 2..B: fit T on `fit_data` and measure
// the final-layer drift on `subset` of `eval_data`.
std::vector<DriftPoint> drift_curve(const TransformerModel& model, const Dataset& fit_data, const FitConfig& fit,
                                    const Dataset& eval_data, const DataSubset& subset,
                                    const FeatureOptions& features);
void write_drift_csv(const std::vector<DriftPoint>& curve, const std::filesystem::path& path);

struct PcaRow {
  std::size_t sample = 0;  // dataset index
  int label = 0;
  std::vector<double> pcs;
  std::string variant;  // "original" or "tba"
};

// Projects the features of both models on principal axes fitted to the
// original model's features only. Rows: all original samples, then all
// patched samples.
std::vector<PcaRow> pca_export(const TransformerModel& original, const PatchedModel& patched, const Dataset& data,
                               const DataSubset& subset, std::size_t k, const FeatureOptions& features);
void write_pca_csv(const std::vector<PcaRow>& rows, std::size_t k, const std::filesystem::path& path);

struct ClassDelta {
  std::vector<double> accuracy_delta;            // patched - original, per class
  std::vector<std::vector<double>> confusion_delta;  // row-normalized patched - original
};

// Confusion matrices are summed over runs before normalizing. Throws
// ArgumentError when the class counts disagree.
ClassDelta per_class_delta(const std::vector<ProbeResult>& original, const std::vector<ProbeResult>& patched);
void write_class_delta_csv(const ClassDelta& delta, const std::filesystem::path& path);
void write_confusion_delta_csv(const ClassDelta& delta, const std::filesystem::path& path);

using NamedSummary = std::pair<std::string, EvalSummary>;
// "variant,seed,accuracy,epochs,encoder,plan", one row per run.
void write_eval_csv(const std::vector<NamedSummary>& summaries, const std::filesystem::path& path);
// "variant,mean,std,seeds".
void write_summary_csv(const std::vector<NamedSummary>& summaries, const std::filesystem::path& path);

}  // namespace tba
