#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "tba/capture.hpp"
#include "tba/tensor.hpp"

namespace tba {

enum class Metric { kMse, kCosine, kCka };

std::string to_string(Metric m);
Metric parse_metric(const std::string& s);
// MSE is a distance (lower = more similar); cosine and CKA are similarities.
bool lower_is_better(Metric m);

// Mean over rows of the squared Euclidean distance between matching rows.
double mse(const Tensor& xs, const Tensor& xe);
// Mean over rows of the cosine similarity of matching rows. A row pair in
// which either row is all zeros contributes 0.
double cosine(const Tensor& xs, const Tensor& xe);

struct CkaValue {
  double value = 0.0;
  bool degenerate = false;  // a centered input was all zeros; value is 0
};

// Linear CKA on column-centered inputs:
//   ||X~^T Y~||_F^2 / (||X~^T X~||_F ||Y~^T Y~||_F)
CkaValue cka(const Tensor& xs, const Tensor& xe);

// Block-indexed forms; s and e are 1-based block outputs.
double mse(const ActivationSet& acts, std::size_t s, std::size_t e);
double cosine(const ActivationSet& acts, std::size_t s, std::size_t e);
CkaValue cka(const ActivationSet& acts, std::size_t s, std::size_t e);

struct SimilarityMatrix {
  Metric metric = Metric::kMse;
  std::size_t num_blocks = 0;
  Tensor values;  // [B x B], entry (s-1, e-1)
  Reduce reduce = Reduce::kMean;
  std::size_t num_rows = 0;
  std::string model_fingerprint;
  // Block pairs whose CKA input was degenerate.
  std::vector<std::pair<std::size_t, std::size_t>> degenerate_pairs;

  double at(std::size_t s, std::size_t e) const { return values.at(s - 1, e - 1); }
};

SimilarityMatrix similarity_matrix(const ActivationSet& acts, Metric metric);

struct SpanCandidate {
  std::size_t s = 0;  // 1-based, s < e
  std::size_t e = 0;
  double score = 0.0;
  std::uint64_t params_saved = 0;

  bool operator==(const SpanCandidate&) const = default;
};

// params_saved for span (s, e) from a per-block parameter table (entry k-1
// holds block k) minus the cost of the replacement map.
std::uint64_t span_params_saved(const std::vector<std::uint64_t>& block_params, std::size_t s, std::size_t e,
                                std::uint64_t replacement_params);

// All spans with e - s <= max_span_len, best first: ascending score for MSE,
// descending for cosine/CKA; ties go to the larger params_saved, then the
// smaller s (then smaller e). Overlap is not resolved here.
std::vector<SpanCandidate> rank_spans(const SimilarityMatrix& matrix, std::size_t max_span_len, std::size_t top_k,
                                      const std::vector<std::uint64_t>& block_params,
                                      std::uint64_t replacement_params);

// "s,e,value" rows with 1-based indices, upper and lower triangle included,
// 9 significant digits.
void write_similarity_csv(const SimilarityMatrix& m, const std::filesystem::path& path);
// B rows x B columns, no header.
void write_similarity_dense_csv(const SimilarityMatrix& m, const std::filesystem::path& path);
void write_candidates_csv(const std::vector<SpanCandidate>& c, Metric metric, const std::filesystem::path& path);

}  // namespace tba
