#include "tba/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "tba/adam.hpp"
#include "tba/csv.hpp"
#include "tba/error.hpp"
#include "tba/linalg.hpp"
#include "tba/rng.hpp"

namespace tba {

Tensor Probe::logits(const Tensor& features) const {
  if (features.rank() != 2 || features.cols() != w.dim(0)) {
    throw DimensionError("probe expects [n x " + std::to_string(w.dim(0)) + "] features, got " +
                         shape_str(features.shape()));
  }
  return linear(features, w, b);
}

std::vector<int> Probe::predict(const Tensor& features) const {
  const Tensor z = logits(features);
  std::vector<int> out(z.rows());
  for (std::size_t r = 0; r < z.rows(); ++r) {
    const auto row = z.row(r);
    out[r] = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return out;
}

namespace {

void check_labels(const std::vector<int>& labels, std::size_t num_classes, std::size_t rows) {
  if (labels.size() != rows) {
    throw DimensionError(std::to_string(labels.size()) + " labels for " + std::to_string(rows) + " feature rows");
  }
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= num_classes) {
      throw ArgumentError("label " + std::to_string(y) + " outside [0, " + std::to_string(num_classes) + ")");
    }
  }
}

}  // namespace

Probe train_probe(const Tensor& features, const std::vector<int>& labels, std::size_t num_classes,
                  const ProbeConfig& cfg, std::uint64_t seed) {
  if (num_classes < 2) throw ArgumentError("a probe needs at least 2 classes, got " + std::to_string(num_classes));
  if (features.rank() != 2 || features.rows() == 0) {
    throw DimensionError("probe features must be a non-empty 2-D tensor, got " + shape_str(features.shape()));
  }
  if (cfg.batch == 0) throw ArgumentError("probe batch size must be positive");
  check_labels(labels, num_classes, features.rows());
  require_finite(features, "probe features");

  const std::size_t n = features.rows(), d = features.cols(), c = num_classes;
  Rng root(seed);
  Rng init_rng = root.fork(1);
  Rng order_rng = root.fork(2);

  std::vector<double> w(d * c), b(c);
  const double bound = 1.0 / std::sqrt(static_cast<double>(d));
  for (auto& v : w) v = init_rng.uniform(-bound, bound);
  for (auto& v : b) v = init_rng.uniform(-bound, bound);

  Adam<double> adam(AdamConfig{.lr = cfg.lr}, {w.size(), b.size()});
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> gw(w.size()), gb(c), p(c);

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    order_rng.shuffle(std::span<std::size_t>(order));
    for (std::size_t start = 0; start < n; start += cfg.batch) {
      const std::size_t stop = std::min(n, start + cfg.batch);
      const double inv_batch = 1.0 / static_cast<double>(stop - start);
      std::fill(gw.begin(), gw.end(), 0.0);
      std::fill(gb.begin(), gb.end(), 0.0);
      for (std::size_t i = start; i < stop; ++i) {
        const std::size_t r = order[i];
        const float* x = features.data() + r * d;
        for (std::size_t k = 0; k < c; ++k) p[k] = b[k];
        for (std::size_t j = 0; j < d; ++j) {
          const double xj = x[j];
          for (std::size_t k = 0; k < c; ++k) p[k] += xj * w[j * c + k];
        }
        // d(mean CE)/dz = (softmax(z) - onehot) / batch
        const double zmax = *std::max_element(p.begin(), p.end());
        double total = 0.0;
        for (auto& v : p) {
          v = std::exp(v - zmax);
          total += v;
        }
        for (auto& v : p) v /= total;
        p[static_cast<std::size_t>(labels[r])] -= 1.0;
        for (std::size_t k = 0; k < c; ++k) {
          const double g = p[k] * inv_batch;
          gb[k] += g;
          for (std::size_t j = 0; j < d; ++j) gw[j * c + k] += x[j] * g;
        }
      }
      const std::span<double> params[] = {w, b};
      const std::span<const double> grads[] = {gw, gb};
      adam.step(params, grads);
    }
  }
  for (double v : w) {
    if (!std::isfinite(v)) throw NumericError("probe training produced non-finite weights");
  }

  Probe probe{Tensor({d, c}), Tensor({c})};
  for (std::size_t i = 0; i < w.size(); ++i) probe.w[i] = static_cast<float>(w[i]);
  for (std::size_t k = 0; k < c; ++k) probe.b[k] = static_cast<float>(b[k]);
  return probe;
}

ProbeResult score(const std::vector<int>& predicted, const std::vector<int>& labels, std::size_t num_classes) {
  check_labels(labels, num_classes, predicted.size());
  ProbeResult r;
  r.class_counts.assign(num_classes, 0);
  r.confusion.assign(num_classes, std::vector<std::size_t>(num_classes, 0));
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto t = static_cast<std::size_t>(labels[i]);
    const auto p = static_cast<std::size_t>(predicted[i]);
    if (p >= num_classes) throw ArgumentError("prediction " + std::to_string(predicted[i]) + " out of range");
    ++r.class_counts[t];
    ++r.confusion[t][p];
    correct += predicted[i] == labels[i] ? 1 : 0;
  }
  const double n = static_cast<double>(labels.size());
  r.accuracy = labels.empty() ? 0.0 : static_cast<double>(correct) / n;
  r.per_class.assign(num_classes, 0.0);
  double weighted = 0.0;
  for (std::size_t k = 0; k < num_classes; ++k) {
    if (r.class_counts[k] == 0) continue;
    r.per_class[k] = static_cast<double>(r.confusion[k][k]) / static_cast<double>(r.class_counts[k]);
    weighted += r.per_class[k] * static_cast<double>(r.class_counts[k]);
  }
  if (!labels.empty() && std::abs(weighted / n - r.accuracy) > 1e-12) {
    throw NumericError("accuracy recount disagrees with the confusion matrix");
  }
  return r;
}

EvalSummary evaluate_features(const Tensor& train_x, const std::vector<int>& train_y, const Tensor& test_x,
                              const std::vector<int>& test_y, std::size_t num_classes, const ProbeConfig& cfg,
                              const std::vector<std::uint64_t>& seeds) {
  if (seeds.empty()) throw ArgumentError("evaluation needs at least one seed");
  EvalSummary summary;
  for (auto seed : seeds) {
    const Probe probe = train_probe(train_x, train_y, num_classes, cfg, seed);
    ProbeResult r = score(probe.predict(test_x), test_y, num_classes);
    r.seed = seed;
    r.epochs = cfg.epochs;
    summary.runs.push_back(std::move(r));
  }
  const double k = static_cast<double>(summary.runs.size());
  for (const auto& r : summary.runs) summary.mean += r.accuracy;
  summary.mean /= k;
  if (summary.runs.size() > 1) {
    double ss = 0.0;
    for (const auto& r : summary.runs) ss += (r.accuracy - summary.mean) * (r.accuracy - summary.mean);
    summary.stddev = std::sqrt(ss / (k - 1.0));
  }
  return summary;
}

std::string describe_plan(const ApproxPlan& plan) {
  if (plan.empty()) return "none";
  std::string out;
  for (const auto& e : plan.entries()) {
    if (!out.empty()) out += "+";
    out += e.approx.kind() + "@" + format_span(e.span);
  }
  return out;
}

EvalSummary evaluate(const PatchedModel& model, const Dataset& train, const Dataset& test, const ProbeConfig& cfg,
                     const std::vector<std::uint64_t>& seeds) {
  if (train.num_classes != test.num_classes) {
    throw ArgumentError("train and test datasets disagree on the number of classes");
  }
  const Tensor train_x = extract_features(model, train, full_subset(train), cfg.features);
  const Tensor test_x = extract_features(model, test, full_subset(test), cfg.features);
  EvalSummary s = evaluate_features(train_x, train.labels, test_x, test.labels, train.num_classes, cfg, seeds);
  const std::string fp = model_fingerprint(model.host());
  const std::string plan = describe_plan(model.plan());
  for (auto& r : s.runs) {
    r.encoder_fingerprint = fp;
    r.plan = plan;
  }
  return s;
}

LinearMap fit_span(const TransformerModel& model, const Dataset& data, const Span& span, const FitConfig& fit) {
  check_span(span, model.num_blocks());
  const std::size_t n = std::min(fit.samples, data.size());
  const DataSubset subset = sample_subset(data, n, fit.seed);
  CaptureOptions opts;
  opts.reduce = Reduce::kAll;
  opts.blocks = {span.s, span.e};
  const ActivationSet acts = capture(model, data, subset, opts);
  return fit_linear(acts, span, fit.use_bias, fit.rcond);
}

EvalSummary generalize(const TransformerModel& model, const Dataset& fit_data, const Span& span,
                       const Dataset& apply_train, const Dataset& apply_test, const FitConfig& fit,
                       const ProbeConfig& cfg, const std::vector<std::uint64_t>& seeds) {
  ApproxPlan plan;
  plan.add(span, fit_span(model, fit_data, span, fit));
  const PatchedModel patched(model, std::move(plan));
  return evaluate(patched, apply_train, apply_test, cfg, seeds);
}

std::vector<DriftPoint> drift_curve(const TransformerModel& model, const Dataset& fit_data, const FitConfig& fit,
                                    const Dataset& eval_data, const DataSubset& subset,
                                    const FeatureOptions& features) {
  const std::size_t b = model.num_blocks();
  if (b < 2) throw ArgumentError("a drift curve needs at least 2 blocks");
  std::vector<DriftPoint> curve;
  for (std::size_t k = 2; k <= b; ++k) {
    const Span span{k - 1, k};
    LinearMap map = fit_span(model, fit_data, span, fit);
    const double residual = map.residual;
    ApproxPlan plan;
    plan.add(span, std::move(map));
    const PatchedModel patched(model, std::move(plan));
    curve.push_back({span, final_layer_drift(model, patched, eval_data, subset, features), residual});
  }
  return curve;
}

void write_drift_csv(const std::vector<DriftPoint>& curve, const std::filesystem::path& path) {
  CsvWriter csv(path, {"s", "e", "span", "drift", "fit_residual"});
  for (const auto& p : curve) {
    csv.field(p.span.s).field(p.span.e).field(format_span(p.span)).field(p.drift).field(p.residual);
    csv.end_row();
  }
}

std::vector<PcaRow> pca_export(const TransformerModel& original, const PatchedModel& patched, const Dataset& data,
                               const DataSubset& subset, std::size_t k, const FeatureOptions& features) {
  const Tensor a = extract_features(original, data, subset, features);
  const Tensor b = extract_features(patched, data, subset, features);
  const PcaFit fit = pca_fit(a, k);
  std::vector<PcaRow> rows;
  const std::pair<const char*, Tensor> variants[] = {{"original", pca_transform(fit, a)},
                                                     {"tba", pca_transform(fit, b)}};
  for (const auto& [name, proj] : variants) {
    for (std::size_t i = 0; i < subset.size(); ++i) {
      PcaRow row;
      row.sample = subset.indices[i];
      row.label = data.labels[subset.indices[i]];
      row.variant = name;
      for (std::size_t j = 0; j < k; ++j) row.pcs.push_back(proj.at(i, j));
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

void write_pca_csv(const std::vector<PcaRow>& rows, std::size_t k, const std::filesystem::path& path) {
  std::vector<std::string> header = {"sample", "label"};
  for (std::size_t j = 1; j <= k; ++j) header.push_back("pc" + std::to_string(j));
  header.push_back("variant");
  CsvWriter csv(path, header);
  for (const auto& r : rows) {
    csv.field(r.sample).field(r.label);
    for (double v : r.pcs) csv.field(v);
    csv.field(r.variant);
    csv.end_row();
  }
}

namespace {

std::vector<std::vector<double>> normalized_confusion(const std::vector<ProbeResult>& runs, std::size_t c) {
  std::vector<std::vector<double>> m(c, std::vector<double>(c, 0.0));
  for (const auto& r : runs) {
    if (r.confusion.size() != c) throw ArgumentError("results disagree on the number of classes");
    for (std::size_t i = 0; i < c; ++i)
      for (std::size_t j = 0; j < c; ++j) m[i][j] += static_cast<double>(r.confusion[i][j]);
  }
  for (auto& row : m) {
    const double total = std::accumulate(row.begin(), row.end(), 0.0);
    if (total > 0.0)
      for (auto& v : row) v /= total;
  }
  return m;
}

}  // namespace

ClassDelta per_class_delta(const std::vector<ProbeResult>& original, const std::vector<ProbeResult>& patched) {
  if (original.empty() || patched.empty()) throw ArgumentError("per-class delta needs results on both sides");
  const std::size_t c = original.front().confusion.size();
  if (patched.front().confusion.size() != c) {
    throw ArgumentError("original has " + std::to_string(c) + " classes, patched has " +
                        std::to_string(patched.front().confusion.size()));
  }
  const auto a = normalized_confusion(original, c);
  const auto b = normalized_confusion(patched, c);
  ClassDelta out;
  out.accuracy_delta.resize(c);
  out.confusion_delta.assign(c, std::vector<double>(c, 0.0));
  for (std::size_t i = 0; i < c; ++i) {
    out.accuracy_delta[i] = b[i][i] - a[i][i];
    for (std::size_t j = 0; j < c; ++j) out.confusion_delta[i][j] = b[i][j] - a[i][j];
  }
  return out;
}

void write_class_delta_csv(const ClassDelta& delta, const std::filesystem::path& path) {
  CsvWriter csv(path, {"class", "accuracy_delta"});
  for (std::size_t k = 0; k < delta.accuracy_delta.size(); ++k) {
    csv.field(k).field(delta.accuracy_delta[k]);
    csv.end_row();
  }
}

void write_confusion_delta_csv(const ClassDelta& delta, const std::filesystem::path& path) {
  std::vector<std::string> header = {"true"};
  for (std::size_t k = 0; k < delta.confusion_delta.size(); ++k) header.push_back("pred" + std::to_string(k));
  CsvWriter csv(path, header);
  for (std::size_t i = 0; i < delta.confusion_delta.size(); ++i) {
    csv.field(i);
    for (double v : delta.confusion_delta[i]) csv.field(v);
    csv.end_row();
  }
}

void write_eval_csv(const std::vector<NamedSummary>& summaries, const std::filesystem::path& path) {
  CsvWriter csv(path, {"variant", "seed", "accuracy", "epochs", "encoder", "plan"});
  for (const auto& [variant, s] : summaries) {
    for (const auto& r : s.runs) {
      csv.field(variant).field(static_cast<unsigned long long>(r.seed)).field(r.accuracy).field(r.epochs);
      csv.field(r.encoder_fingerprint).field(r.plan);
      csv.end_row();
    }
  }
}

void write_summary_csv(const std::vector<NamedSummary>& summaries, const std::filesystem::path& path) {
  CsvWriter csv(path, {"variant", "mean", "std", "seeds"});
  for (const auto& [variant, s] : summaries) {
    csv.field(variant).field(s.mean).field(s.stddev).field(s.runs.size());
    csv.end_row();
  }
}

}  // namespace tba
