#include "tba/similarity.hpp"

#include <algorithm>
#include <cmath>

#include "tba/csv.hpp"
#include "tba/error.hpp"
#include "tba/linalg.hpp"
#include "tba/parallel.hpp"

namespace tba {

std::string to_string(Metric m) {
  switch (m) {
    case Metric::kMse: return "mse";
    case Metric::kCosine: return "cosine";
    case Metric::kCka: return "cka";
  }
  return "mse";
}

Metric parse_metric(const std::string& s) {
  if (s == "mse") return Metric::kMse;
  if (s == "cosine") return Metric::kCosine;
  if (s == "cka") return Metric::kCka;
  throw ArgumentError("unknown metric '" + s + "' (expected mse, cosine or cka)");
}

bool lower_is_better(Metric m) { return m == Metric::kMse; }

namespace {

void require_pair(const Tensor& xs, const Tensor& xe, const char* what) {
  if (xs.rank() != 2 || xe.rank() != 2 || xs.rows() != xe.rows()) {
    throw DimensionError(std::string(what) + ": inputs " + shape_str(xs.shape()) + " and " +
                         shape_str(xe.shape()) + " must be 2-D with equal row counts");
  }
  if (xs.rows() == 0) throw DimensionError(std::string(what) + ": no rows");
}

Tensor centered(const Tensor& x) {
  const std::size_t n = x.rows(), d = x.cols();
  std::vector<double> mean(d, 0.0);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t j = 0; j < d; ++j) mean[j] += x.at(r, j);
  for (auto& m : mean) m /= static_cast<double>(n);
  Tensor out({n, d});
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t j = 0; j < d; ++j) out.at(r, j) = static_cast<float>(x.at(r, j) - mean[j]);
  return out;
}

double squared_frobenius(const std::vector<double>& m) {
  double s = 0.0;
  for (double v : m) s += v * v;
  return s;
}

void require_block(const ActivationSet& acts, std::size_t k) {
  if (k < 1 || k > acts.num_blocks) {
    throw ArgumentError("block index " + std::to_string(k) + " outside [1, " + std::to_string(acts.num_blocks) + "]");
  }
}

}  // namespace

double mse(const Tensor& xs, const Tensor& xe) {
  require_pair(xs, xe, "mse");
  if (xs.cols() != xe.cols()) throw DimensionError("mse: feature dimensions differ");
  const std::size_t n = xs.rows(), d = xs.cols();
  double total = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    const float* a = xs.data() + r * d;
    const float* b = xe.data() + r * d;
    double row = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double diff = static_cast<double>(b[j]) - a[j];
      row += diff * diff;
    }
    total += row;
  }
  return total / static_cast<double>(n);
}

double cosine(const Tensor& xs, const Tensor& xe) {
  require_pair(xs, xe, "cosine");
  if (xs.cols() != xe.cols()) throw DimensionError("cosine: feature dimensions differ");
  const std::size_t n = xs.rows(), d = xs.cols();
  double total = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double a = xs.at(r, j), b = xe.at(r, j);
      dot += a * b;
      na += a * a;
      nb += b * b;
    }
    if (na == 0.0 || nb == 0.0) continue;
    total += std::clamp(dot / std::sqrt(na * nb), -1.0, 1.0);
  }
  return total / static_cast<double>(n);
}

CkaValue cka(const Tensor& xs, const Tensor& xe) {
  require_pair(xs, xe, "cka");
  if (xs.rows() < 2) throw DimensionError("cka needs at least 2 rows");
  const Tensor x = centered(xs), y = centered(xe);
  const double xx = squared_frobenius(gram(x).a);
  const double yy = squared_frobenius(gram(y).a);
  if (xx == 0.0 || yy == 0.0) return {0.0, true};
  const double xy = squared_frobenius(cross_gram(x, y));
  return {xy / (std::sqrt(xx) * std::sqrt(yy)), false};
}

double mse(const ActivationSet& acts, std::size_t s, std::size_t e) {
  require_block(acts, s);
  require_block(acts, e);
  return mse(acts.block(s), acts.block(e));
}

double cosine(const ActivationSet& acts, std::size_t s, std::size_t e) {
  require_block(acts, s);
  require_block(acts, e);
  return cosine(acts.block(s), acts.block(e));
}

CkaValue cka(const ActivationSet& acts, std::size_t s, std::size_t e) {
  require_block(acts, s);
  require_block(acts, e);
  return cka(acts.block(s), acts.block(e));
}

SimilarityMatrix similarity_matrix(const ActivationSet& acts, Metric metric) {
  if (!acts.complete()) throw ArgumentError("similarity matrix needs activations for every block");
  const std::size_t b = acts.num_blocks;
  SimilarityMatrix m;
  m.metric = metric;
  m.num_blocks = b;
  m.values = Tensor({b, b});
  m.reduce = acts.reduce;
  m.num_rows = acts.rows();
  m.model_fingerprint = acts.model_fingerprint;

  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t s = 1; s <= b; ++s)
    for (std::size_t e = s + 1; e <= b; ++e) pairs.emplace_back(s, e);
  std::vector<double> value(pairs.size());
  std::vector<char> degenerate(pairs.size(), 0);
  parallel_for(pairs.size(), [&](std::size_t i) {
    const auto [s, e] = pairs[i];
    switch (metric) {
      case Metric::kMse: value[i] = mse(acts, s, e); break;
      case Metric::kCosine: value[i] = cosine(acts, s, e); break;
      case Metric::kCka: {
        const auto c = cka(acts, s, e);
        value[i] = c.value;
        degenerate[i] = c.degenerate;
        break;
      }
    }
  });
  // The diagonal is the metric's self-comparison value by definition.
  const float diag = metric == Metric::kMse ? 0.0f : 1.0f;
  for (std::size_t k = 0; k < b; ++k) m.values.at(k, k) = diag;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto [s, e] = pairs[i];
    m.values.at(s - 1, e - 1) = m.values.at(e - 1, s - 1) = static_cast<float>(value[i]);
    if (degenerate[i]) m.degenerate_pairs.push_back(pairs[i]);
  }
  return m;
}

std::uint64_t span_params_saved(const std::vector<std::uint64_t>& block_params, std::size_t s, std::size_t e,
                                std::uint64_t replacement_params) {
  if (s < 1 || e <= s || e > block_params.size()) throw ArgumentError("invalid span for parameter table");
  std::uint64_t removed = 0;
  for (std::size_t k = s + 1; k <= e; ++k) removed += block_params[k - 1];
  return removed > replacement_params ? removed - replacement_params : 0;
}

std::vector<SpanCandidate> rank_spans(const SimilarityMatrix& matrix, std::size_t max_span_len, std::size_t top_k,
                                      const std::vector<std::uint64_t>& block_params,
                                      std::uint64_t replacement_params) {
  if (max_span_len < 1) throw ArgumentError("max_span_len must be >= 1");
  if (block_params.size() != matrix.num_blocks) {
    throw ArgumentError("parameter table has " + std::to_string(block_params.size()) + " entries for " +
                        std::to_string(matrix.num_blocks) + " blocks");
  }
  std::vector<SpanCandidate> out;
  for (std::size_t s = 1; s <= matrix.num_blocks; ++s) {
    for (std::size_t e = s + 1; e <= std::min(matrix.num_blocks, s + max_span_len); ++e) {
      out.push_back({s, e, matrix.at(s, e), span_params_saved(block_params, s, e, replacement_params)});
    }
  }
  const bool ascending = lower_is_better(matrix.metric);
  std::sort(out.begin(), out.end(), [ascending](const SpanCandidate& a, const SpanCandidate& b) {
    if (a.score != b.score) return ascending ? a.score < b.score : a.score > b.score;
    if (a.params_saved != b.params_saved) return a.params_saved > b.params_saved;
    if (a.s != b.s) return a.s < b.s;
    return a.e < b.e;
  });
  if (top_k < out.size()) out.resize(top_k);
  return out;
}

void write_similarity_csv(const SimilarityMatrix& m, const std::filesystem::path& path) {
  CsvWriter csv(path, {"s", "e", "value"});
  for (std::size_t s = 1; s <= m.num_blocks; ++s) {
    for (std::size_t e = 1; e <= m.num_blocks; ++e) {
      csv.field(s).field(e).field(m.at(s, e));
      csv.end_row();
    }
  }
}

void write_similarity_dense_csv(const SimilarityMatrix& m, const std::filesystem::path& path) {
  CsvWriter csv(path, {});
  for (std::size_t s = 1; s <= m.num_blocks; ++s) {
    for (std::size_t e = 1; e <= m.num_blocks; ++e) csv.field(m.at(s, e));
    csv.end_row();
  }
}

void write_candidates_csv(const std::vector<SpanCandidate>& c, Metric metric, const std::filesystem::path& path) {
  CsvWriter csv(path, {"rank", "s", "e", to_string(metric), "params_saved"});
  for (std::size_t i = 0; i < c.size(); ++i) {
    csv.field(i + 1).field(c[i].s).field(c[i].e).field(c[i].score).field(c[i].params_saved);
    csv.end_row();
  }
}

}  // namespace tba
