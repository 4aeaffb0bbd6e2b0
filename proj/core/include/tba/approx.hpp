#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "tba/approximators.hpp"
#include "tba/capture.hpp"
#include "tba/container.hpp"
#include "tba/linalg.hpp"
#include "tba/model.hpp"

namespace tba {

// A bypassed range of blocks. s and e are 1-based block outputs with
// 1 <= s < e <= B: blocks s+1..e are skipped and the output of block s is
// mapped onto an estimate of the output of block e.
struct Span {
  std::size_t s = 0;
  std::size_t e = 0;

  std::size_t length() const { return e - s; }
  bool operator==(const Span&) const = default;
};

// Command-line notation "s:e" uses 0-based block indices: "3:4" names the
// outputs of the 4th and 5th blocks, i.e. Span{4, 5}.
Span parse_span(const std::string& text);
std::string format_span(const Span& span);
// Throws PlanError unless 1 <= s < e <= num_blocks.
void check_span(const Span& span, std::size_t num_blocks);

// Affine map x -> x T + bias fitted by least squares on token rows.
struct LinearMap {
  Tensor t;      // [d_s x d_e]
  Tensor bias;   // [d_e], empty when fitted without bias
  Span span;
  std::size_t rows = 0;
  std::size_t rank = 0;
  double rcond = kDefaultRcond;
  double residual = 0.0;        // ||Xe - f(Xs)||_F^2 / rows
  double residual_total = 0.0;  // ||Xe - f(Xs)||_F^2
  std::string source_fingerprint;

  bool has_bias() const { return !bias.empty(); }
  Tensor apply(const Tensor& x) const;
  std::uint64_t param_count() const { return t.numel() + bias.numel(); }
};

// Least-squares fit of xe ~ xs T (+ bias). The bias is fitted jointly by
// appending a column of ones to xs.
LinearMap fit_linear(const Tensor& xs, const Tensor& xe, bool use_bias = false, double rcond = kDefaultRcond);
// Fit on captured per-token activations (reduce "all" is required).
LinearMap fit_linear(const ActivationSet& acts, const Span& span, bool use_bias = false,
                     double rcond = kDefaultRcond);

// ||Xe - f(Xs)||_F^2 for any row-wise map.
double residual_total(const Tensor& xs, const Tensor& xe, const Tensor& predicted);

struct IdentityMap {};

// The replacement for a bypassed span: identity (pure skip), the fitted
// linear map, or one of the trained baselines.
class Approximator {
 public:
  Approximator() = default;
  Approximator(IdentityMap) {}
  Approximator(LinearMap map) : impl_(std::move(map)) {}
  Approximator(std::shared_ptr<const TrainableApprox> net) : impl_(std::move(net)) {}

  // "identity", "linear", "mlp" or "resmlp".
  std::string kind() const;
  Tensor apply(const Tensor& x) const;
  std::uint64_t param_count() const;
  // Input width the map accepts; 0 for identity (any width).
  std::size_t width() const;

  const LinearMap* linear() const { return std::get_if<LinearMap>(&impl_); }
  const TrainableApprox* trainable() const;

 private:
  std::variant<IdentityMap, LinearMap, std::shared_ptr<const TrainableApprox>> impl_;
};

// Parameters of a baseline of the given kind at width d, for ranking spans:
// identity 0, linear d^2, mlp d*(d/2) + d/2 + (d/2)*d + d, resmlp 2(d^2 + d) + 4d.
std::uint64_t approximator_param_count(const std::string& kind, std::size_t d);

// On-disk form: tensors of the map plus a "__meta__" document holding kind,
// span (1-based s and e) and whatever `info` adds.
Container approximator_to_container(const Approximator& approx, const Span& span, const nlohmann::json& info = {});
struct StoredApproximator {
  Approximator approx;
  Span span;
  nlohmann::json meta;
};
StoredApproximator approximator_from_container(const Container& c);
void save_approximator(const Approximator& approx, const Span& span, const std::filesystem::path& path,
                       const nlohmann::json& info = {});
StoredApproximator load_approximator(const std::filesystem::path& path);

struct PlanEntry {
  Span span;
  Approximator approx;
};

// Ordered, non-overlapping spans: e_i < s_j for i < j.
class ApproxPlan {
 public:
  ApproxPlan() = default;
  explicit ApproxPlan(std::vector<PlanEntry> entries) : entries_(std::move(entries)) {}

  void add(Span span, Approximator approx) { entries_.push_back({span, std::move(approx)}); }
  const std::vector<PlanEntry>& entries() const { return entries_; }
  bool empty() const { return entries_.empty(); }

  // Throws PlanError for bad indices, unordered or overlapping spans, or an
  // approximator whose width does not match d_model.
  void validate(std::size_t num_blocks, std::size_t d_model) const;

 private:
  std::vector<PlanEntry> entries_;
};

// Identity-replacement plan that skips blocks s+1..e of every span.
ApproxPlan make_skip_plan(const std::vector<Span>& spans);

// A host model with spans of blocks replaced. Holds a reference to the host,
// which must outlive it.
class PatchedModel {
 public:
  PatchedModel(const TransformerModel& host, ApproxPlan plan);

  const TransformerModel& host() const { return *host_; }
  const ApproxPlan& plan() const { return plan_; }

  // Observer sees every block output the patched model produces, including
  // the approximated output e of each span; outputs of skipped blocks
  // s+1..e-1 are not reported.
  Tensor forward_hidden(const Tensor& image, const BlockObserver& observer = {}) const;
  Tensor forward(const Tensor& image) const;

 private:
  const TransformerModel* host_;
  ApproxPlan plan_;
};

// Host parameters minus every bypassed block plus the approximators.
std::uint64_t count_params(const PatchedModel& model);

// Representation of one sample that downstream evaluation works on.
struct FeatureOptions {
  Reduce reduce = Reduce::kCls;
  bool mean_includes_cls = true;
  bool final_norm = true;  // apply the host's final layernorm first
};

// One row per sample ([N x d]); kAll is not accepted here.
Tensor extract_features(const TransformerModel& model, const Dataset& dataset, const DataSubset& subset,
                        const FeatureOptions& options);
Tensor extract_features(const PatchedModel& model, const Dataset& dataset, const DataSubset& subset,
                        const FeatureOptions& options);

// Mean squared row distance between the two models' final-block outputs.
double final_layer_drift(const TransformerModel& original, const PatchedModel& patched, const Dataset& dataset,
                         const DataSubset& subset, const FeatureOptions& options);

}  // namespace tba
