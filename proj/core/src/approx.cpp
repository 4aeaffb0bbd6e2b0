#include "tba/approx.hpp"

#include <charconv>

#include "tba/error.hpp"
#include "tba/parallel.hpp"

namespace tba {

namespace {

std::size_t parse_index(std::string_view text, const std::string& whole) {
  std::size_t v = 0;
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (text.empty() || ec != std::errc() || ptr != end) {
    throw ArgumentError("malformed span '" + whole + "' (expected s:e with 0-based block indices)");
  }
  return v;
}

}  // namespace

Span parse_span(const std::string& text) {
  const auto colon = text.find(':');
  if (colon == std::string::npos) {
    throw ArgumentError("malformed span '" + text + "' (expected s:e with 0-based block indices)");
  }
  const std::size_t s = parse_index(std::string_view(text).substr(0, colon), text);
  const std::size_t e = parse_index(std::string_view(text).substr(colon + 1), text);
  return {s + 1, e + 1};
}

std::string format_span(const Span& span) {
  return std::to_string(span.s - 1) + ":" + std::to_string(span.e - 1);
}

void check_span(const Span& span, std::size_t num_blocks) {
  if (span.s < 1 || span.e <= span.s || span.e > num_blocks) {
    throw PlanError("span (s=" + std::to_string(span.s) + ", e=" + std::to_string(span.e) +
                    ") must satisfy 1 <= s < e <= " + std::to_string(num_blocks));
  }
}

Tensor LinearMap::apply(const Tensor& x) const {
  if (x.rank() != 2 || x.cols() != t.dim(0)) {
    throw DimensionError("linear map expects [n x " + std::to_string(t.dim(0)) + "], got " + shape_str(x.shape()));
  }
  return linear(x, t, bias);
}

double residual_total(const Tensor& xs, const Tensor& xe, const Tensor& predicted) {
  if (predicted.shape() != xe.shape() || xs.rows() != xe.rows()) {
    throw DimensionError("residual: prediction " + shape_str(predicted.shape()) + " vs target " +
                         shape_str(xe.shape()));
  }
  double total = 0.0;
  for (std::size_t i = 0; i < xe.numel(); ++i) {
    const double diff = static_cast<double>(xe[i]) - predicted[i];
    total += diff * diff;
  }
  return total;
}

LinearMap fit_linear(const Tensor& xs, const Tensor& xe, bool use_bias, double rcond) {
  if (xs.rank() != 2 || xe.rank() != 2 || xs.rows() != xe.rows()) {
    throw DimensionError("fit: inputs " + shape_str(xs.shape()) + " and " + shape_str(xe.shape()) +
                         " must be 2-D with equal row counts");
  }
  const std::size_t n = xs.rows(), d = xs.cols();
  LinearMap map;
  map.rows = n;
  map.rcond = rcond;
  if (use_bias) {
    Tensor a({n, d + 1});
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t j = 0; j < d; ++j) a.at(r, j) = xs.at(r, j);
      a.at(r, d) = 1.0f;
    }
    const LstsqResult fit = lstsq_solve(a, xe, rcond);
    const std::size_t q = xe.cols();
    map.t = fit.solution.slice_rows(0, d);
    map.bias = Tensor({q});
    for (std::size_t j = 0; j < q; ++j) map.bias[j] = fit.solution.at(d, j);
    map.rank = fit.rank;
  } else {
    const LstsqResult fit = lstsq_solve(xs, xe, rcond);
    map.t = fit.solution;
    map.rank = fit.rank;
  }
  map.residual_total = residual_total(xs, xe, map.apply(xs));
  map.residual = n > 0 ? map.residual_total / static_cast<double>(n) : 0.0;
  return map;
}

LinearMap fit_linear(const ActivationSet& acts, const Span& span, bool use_bias, double rcond) {
  check_span(span, acts.num_blocks);
  if (acts.reduce != Reduce::kAll) {
    throw ArgumentError("fitting needs per-token activations (reduce 'all'), got '" + to_string(acts.reduce) + "'");
  }
  LinearMap map = fit_linear(acts.block(span.s), acts.block(span.e), use_bias, rcond);
  map.span = span;
  map.source_fingerprint = acts.model_fingerprint;
  return map;
}

std::string Approximator::kind() const {
  if (std::holds_alternative<IdentityMap>(impl_)) return "identity";
  if (std::holds_alternative<LinearMap>(impl_)) return "linear";
  return std::get<std::shared_ptr<const TrainableApprox>>(impl_)->kind();
}

Tensor Approximator::apply(const Tensor& x) const {
  if (std::holds_alternative<IdentityMap>(impl_)) return x;
  if (const auto* m = std::get_if<LinearMap>(&impl_)) return m->apply(x);
  return std::get<std::shared_ptr<const TrainableApprox>>(impl_)->apply(x);
}

std::uint64_t Approximator::param_count() const {
  if (std::holds_alternative<IdentityMap>(impl_)) return 0;
  if (const auto* m = std::get_if<LinearMap>(&impl_)) return m->param_count();
  return std::get<std::shared_ptr<const TrainableApprox>>(impl_)->param_count();
}

std::size_t Approximator::width() const {
  if (std::holds_alternative<IdentityMap>(impl_)) return 0;
  if (const auto* m = std::get_if<LinearMap>(&impl_)) return m->t.dim(0);
  return std::get<std::shared_ptr<const TrainableApprox>>(impl_)->params().front().shape.front();
}

const TrainableApprox* Approximator::trainable() const {
  const auto* p = std::get_if<std::shared_ptr<const TrainableApprox>>(&impl_);
  return p ? p->get() : nullptr;
}

std::uint64_t approximator_param_count(const std::string& kind, std::size_t d) {
  const std::uint64_t n = d, h = d / 2;
  if (kind == "identity") return 0;
  if (kind == "linear") return n * n;
  if (kind == "mlp") return n * h + h + h * n + n;
  if (kind == "resmlp") return 2 * (n * n + n) + 4 * n;
  throw ArgumentError("unknown approximator kind '" + kind + "'");
}

Container approximator_to_container(const Approximator& approx, const Span& span, const nlohmann::json& info) {
  Container c;
  nlohmann::json meta = nlohmann::json::object();
  if (const auto* net = approx.trainable()) {
    c = net->to_container();
    meta = c.documents["__meta__"];
  }
  if (const auto* m = approx.linear()) {
    c.tensors["T"] = m->t;
    if (m->has_bias()) c.tensors["bias"] = m->bias;
    meta["rows"] = m->rows;
    meta["rank"] = m->rank;
    meta["rcond"] = m->rcond;
    meta["residual"] = m->residual;
    meta["residual_total"] = m->residual_total;
    meta["source_fingerprint"] = m->source_fingerprint;
  }
  if (info.is_object()) {
    for (const auto& [k, v] : info.items()) meta[k] = v;
  }
  meta["kind"] = approx.kind();
  meta["span"] = {{"s", span.s}, {"e", span.e}};
  c.documents["__meta__"] = std::move(meta);
  return c;
}

StoredApproximator approximator_from_container(const Container& c) {
  const auto& meta = c.document("__meta__");
  StoredApproximator out;
  out.meta = meta;
  try {
    out.span = {meta.at("span").at("s").get<std::size_t>(), meta.at("span").at("e").get<std::size_t>()};
    const std::string kind = meta.at("kind").get<std::string>();
    if (kind == "identity") {
      out.approx = IdentityMap{};
    } else if (kind == "linear") {
      LinearMap m;
      m.t = c.tensor("T");
      if (m.t.rank() != 2) throw ShapeMismatchError("T must be 2-D, found " + shape_str(m.t.shape()));
      if (c.has("bias")) {
        m.bias = c.tensor("bias");
        if (m.bias.shape() != Shape{m.t.dim(1)}) {
          throw ShapeMismatchError("bias: expected " + shape_str({m.t.dim(1)}) + ", found " +
                                   shape_str(m.bias.shape()));
        }
      }
      m.span = out.span;
      m.rows = meta.value("rows", std::size_t{0});
      m.rank = meta.value("rank", std::size_t{0});
      m.rcond = meta.value("rcond", kDefaultRcond);
      m.residual = meta.value("residual", 0.0);
      m.residual_total = meta.value("residual_total", 0.0);
      m.source_fingerprint = meta.value("source_fingerprint", std::string());
      out.approx = std::move(m);
    } else if (kind == "mlp") {
      out.approx = std::shared_ptr<const TrainableApprox>(std::make_shared<MlpApprox>(MlpApprox::from_container(c)));
    } else if (kind == "resmlp") {
      out.approx =
          std::shared_ptr<const TrainableApprox>(std::make_shared<ResMlpApprox>(ResMlpApprox::from_container(c)));
    } else {
      throw HeaderError("unknown approximator kind '" + kind + "'");
    }
  } catch (const nlohmann::json::exception& ex) {
    throw HeaderError(std::string("approximator metadata: ") + ex.what());
  }
  return out;
}

void save_approximator(const Approximator& approx, const Span& span, const std::filesystem::path& path,
                       const nlohmann::json& info) {
  save_container(approximator_to_container(approx, span, info), path);
}

StoredApproximator load_approximator(const std::filesystem::path& path) {
  return approximator_from_container(load_container(path));
}

void ApproxPlan::validate(std::size_t num_blocks, std::size_t d_model) const {
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const auto& entry = entries_[i];
    check_span(entry.span, num_blocks);
    if (i > 0 && entries_[i - 1].span.e >= entry.span.s) {
      throw PlanError("spans " + format_span(entries_[i - 1].span) + " and " + format_span(entry.span) +
                      " overlap or are out of order");
    }
    const std::size_t w = entry.approx.width();
    if (w != 0 && w != d_model) {
      throw PlanError("approximator for span " + format_span(entry.span) + " has width " + std::to_string(w) +
                      ", model width is " + std::to_string(d_model));
    }
  }
}

ApproxPlan make_skip_plan(const std::vector<Span>& spans) {
  ApproxPlan plan;
  for (const auto& s : spans) plan.add(s, IdentityMap{});
  return plan;
}

PatchedModel::PatchedModel(const TransformerModel& host, ApproxPlan plan) : host_(&host), plan_(std::move(plan)) {
  plan_.validate(host.num_blocks(), host.config().d_model);
}

Tensor PatchedModel::forward_hidden(const Tensor& image, const BlockObserver& observer) const {
  Tensor x = host_->embed(image);
  const auto& entries = plan_.entries();
  std::size_t next = 0;  // first plan entry not yet applied
  std::size_t done = 0;  // block outputs produced so far
  const std::size_t b = host_->num_blocks();
  while (done < b) {
    if (next < entries.size() && entries[next].span.s == done) {
      x = entries[next].approx.apply(x);
      done = entries[next].span.e;
      ++next;
    } else {
      x = host_->block_forward(done, x);
      ++done;
    }
    if (observer) observer(done, x);
  }
  return x;
}

Tensor PatchedModel::forward(const Tensor& image) const { return host_->final_norm(forward_hidden(image)); }

std::uint64_t count_params(const PatchedModel& model) {
  std::uint64_t total = count_params(model.host());
  const std::uint64_t per_block = count_block_params(model.host().config());
  for (const auto& entry : model.plan().entries()) {
    total -= per_block * entry.span.length();
    total += entry.approx.param_count();
  }
  return total;
}

namespace {

template <typename Forward>
Tensor features_with(Forward&& forward_hidden, const TransformerModel& host, const Dataset& dataset,
                     const DataSubset& subset, const FeatureOptions& options) {
  if (options.reduce == Reduce::kAll) throw ArgumentError("features need one row per sample (reduce mean or cls)");
  const auto& cfg = host.config();
  if (options.reduce == Reduce::kCls && !cfg.has_cls) {
    throw ArgumentError("cls features requested on a model without a CLS token");
  }
  for (auto i : subset.indices) {
    if (i >= dataset.size()) throw ArgumentError("subset index " + std::to_string(i) + " outside the dataset");
  }
  const std::size_t n = subset.size(), d = cfg.d_model;
  Tensor out({n, d});
  parallel_for(n, [&](std::size_t r) {
    Tensor h = forward_hidden(dataset.image(subset.indices[r]));
    if (options.final_norm) h = host.final_norm(h);
    const Tensor row = reduce_tokens(h, options.reduce, cfg, options.mean_includes_cls);
    std::copy(row.values().begin(), row.values().end(), out.data() + r * d);
  });
  require_finite(out, "features");
  return out;
}

}  // namespace

Tensor extract_features(const TransformerModel& model, const Dataset& dataset, const DataSubset& subset,
                        const FeatureOptions& options) {
  return features_with([&](const Tensor& img) { return model.forward_hidden(img); }, model, dataset, subset,
                       options);
}

Tensor extract_features(const PatchedModel& model, const Dataset& dataset, const DataSubset& subset,
                        const FeatureOptions& options) {
  return features_with([&](const Tensor& img) { return model.forward_hidden(img); }, model.host(), dataset,
                       subset, options);
}

double final_layer_drift(const TransformerModel& original, const PatchedModel& patched, const Dataset& dataset,
                         const DataSubset& subset, const FeatureOptions& options) {
  const Tensor a = extract_features(original, dataset, subset, options);
  const Tensor b = extract_features(patched, dataset, subset, options);
  double total = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    const double diff = static_cast<double>(a[i]) - b[i];
    total += diff * diff;
  }
  return a.rows() > 0 ? total / static_cast<double>(a.rows()) : 0.0;
}

}  // namespace tba
