#include "tba/capture.hpp"

#include <algorithm>

#include "tba/error.hpp"
#include "tba/parallel.hpp"
#include "tba/rng.hpp"

namespace tba {

std::string to_string(Reduce r) {
  switch (r) {
    case Reduce::kMean: return "mean";
    case Reduce::kCls: return "cls";
    case Reduce::kAll: return "all";
  }
  return "mean";
}

Reduce parse_reduce(const std::string& s) {
  if (s == "mean") return Reduce::kMean;
  if (s == "cls") return Reduce::kCls;
  if (s == "all") return Reduce::kAll;
  throw ArgumentError("unknown token reduction '" + s + "' (expected mean, cls or all)");
}

DataSubset sample_subset(const Dataset& dataset, std::size_t count, std::uint64_t seed) {
  if (count < 1 || count > dataset.size()) {
    throw ArgumentError("subset size " + std::to_string(count) + " outside [1, " +
                        std::to_string(dataset.size()) + "] for dataset '" + dataset.name + "'");
  }
  Rng rng(seed);
  return {dataset.name, dataset.size(), seed, sample_without_replacement(dataset.size(), count, rng)};
}

DataSubset full_subset(const Dataset& dataset) {
  DataSubset s{dataset.name, dataset.size(), 0, {}};
  s.indices.resize(dataset.size());
  for (std::size_t i = 0; i < s.indices.size(); ++i) s.indices[i] = i;
  return s;
}

const Tensor& ActivationSet::block(std::size_t k) const {
  auto it = blocks.find(k);
  if (it == blocks.end()) {
    throw ArgumentError("block " + std::to_string(k) + " not present in activation set (B=" +
                        std::to_string(num_blocks) + ")");
  }
  return it->second;
}

bool ActivationSet::complete() const {
  if (blocks.size() != num_blocks) return false;
  for (std::size_t k = 1; k <= num_blocks; ++k)
    if (!blocks.contains(k)) return false;
  return true;
}

std::size_t ActivationSet::rows() const { return blocks.empty() ? 0 : blocks.begin()->second.rows(); }

Tensor reduce_tokens(const Tensor& tokens, Reduce reduce, const ModelConfig& config, bool mean_includes_cls) {
  const std::size_t n = tokens.rows(), d = tokens.cols();
  switch (reduce) {
    case Reduce::kAll:
      return tokens;
    case Reduce::kCls: {
      if (!config.has_cls) throw ArgumentError("cls reduction requested on a model without a CLS token");
      return tokens.slice_rows(config.cls_row(), config.cls_row() + 1);
    }
    case Reduce::kMean: {
      const std::size_t skip = (!mean_includes_cls && config.has_cls) ? 1 : 0;
      std::vector<double> acc(d, 0.0);
      for (std::size_t r = skip; r < n; ++r) {
        const auto row = tokens.row(r);
        for (std::size_t j = 0; j < d; ++j) acc[j] += row[j];
      }
      Tensor out({1, d});
      for (std::size_t j = 0; j < d; ++j) out[j] = static_cast<float>(acc[j] / static_cast<double>(n - skip));
      return out;
    }
  }
  return tokens;
}

ActivationSet capture(const TransformerModel& model, const Dataset& dataset, const DataSubset& subset,
                      const CaptureOptions& options) {
  const auto& cfg = model.config();
  if (options.reduce == Reduce::kCls && !cfg.has_cls) {
    throw ArgumentError("cls reduction requested on a model without a CLS token");
  }
  if (options.batch_size == 0) throw ArgumentError("capture batch size must be positive");
  const Shape expected = {cfg.image_size, cfg.image_size, cfg.channels};
  if (dataset.images.rank() != 4 ||
      Shape(dataset.images.shape().begin() + 1, dataset.images.shape().end()) != expected) {
    throw DimensionError("dataset '" + dataset.name + "' images " + shape_str(dataset.images.shape()) +
                         " do not match model input " + shape_str(expected));
  }
  for (auto i : subset.indices) {
    if (i >= dataset.size()) throw ArgumentError("subset index " + std::to_string(i) + " out of range");
  }

  std::vector<std::size_t> wanted = options.blocks;
  if (wanted.empty()) {
    for (std::size_t k = 1; k <= model.num_blocks(); ++k) wanted.push_back(k);
  }
  std::sort(wanted.begin(), wanted.end());
  wanted.erase(std::unique(wanted.begin(), wanted.end()), wanted.end());
  for (auto k : wanted) {
    if (k < 1 || k > model.num_blocks()) {
      throw ArgumentError("block " + std::to_string(k) + " outside [1, " + std::to_string(model.num_blocks()) + "]");
    }
  }
  const std::size_t last = wanted.back();

  ActivationSet acts;
  acts.reduce = options.reduce;
  acts.mean_includes_cls = options.mean_includes_cls;
  acts.num_blocks = model.num_blocks();
  acts.tokens_per_sample = cfg.num_tokens();
  acts.model_fingerprint = model_fingerprint(model);
  acts.subset = subset;

  const std::size_t rows_per_sample = options.reduce == Reduce::kAll ? cfg.num_tokens() : 1;
  const std::size_t d = cfg.d_model;
  for (auto k : wanted) acts.blocks.emplace(k, Tensor({subset.size() * rows_per_sample, d}));

  // Each sample writes its own row range, so the result is identical to a
  // sequential pass whatever the batch size or thread count.
  for (std::size_t begin = 0; begin < subset.size(); begin += options.batch_size) {
    const std::size_t end = std::min(subset.size(), begin + options.batch_size);
    parallel_for(end - begin, [&](std::size_t local) {
      const std::size_t s = begin + local;
      Tensor x = model.embed(dataset.image(subset.indices[s]));
      for (std::size_t b = 0; b < last; ++b) {
        x = model.block_forward(b, x);
        auto it = acts.blocks.find(b + 1);
        if (it == acts.blocks.end()) continue;
        const Tensor reduced = reduce_tokens(x, options.reduce, cfg, options.mean_includes_cls);
        std::copy(reduced.values().begin(), reduced.values().end(),
                  it->second.data() + s * rows_per_sample * d);
      }
    });
  }
  for (const auto& [k, t] : acts.blocks) require_finite(t, "activations of block " + std::to_string(k));
  return acts;
}

Container activations_to_container(const ActivationSet& acts) {
  Container c;
  std::vector<std::size_t> ids;
  for (const auto& [k, t] : acts.blocks) {
    c.tensors["block." + std::to_string(k)] = t;
    ids.push_back(k);
  }
  c.documents["__meta__"] = {{"kind", "activations"},
                             {"reduce", to_string(acts.reduce)},
                             {"mean_includes_cls", acts.mean_includes_cls},
                             {"N", acts.subset.size()},
                             {"seed", acts.subset.seed},
                             {"dataset", acts.subset.dataset},
                             {"dataset_size", acts.subset.dataset_size},
                             {"indices", acts.subset.indices},
                             {"num_blocks", acts.num_blocks},
                             {"tokens_per_sample", acts.tokens_per_sample},
                             {"blocks", ids},
                             {"model_fingerprint", acts.model_fingerprint}};
  return c;
}

ActivationSet activations_from_container(const Container& c) {
  const auto& meta = c.document("__meta__");
  ActivationSet acts;
  std::vector<std::size_t> ids;
  try {
    acts.reduce = parse_reduce(meta.at("reduce").get<std::string>());
    acts.mean_includes_cls = meta.value("mean_includes_cls", true);
    acts.num_blocks = meta.at("num_blocks").get<std::size_t>();
    acts.tokens_per_sample = meta.at("tokens_per_sample").get<std::size_t>();
    acts.model_fingerprint = meta.value("model_fingerprint", std::string());
    acts.subset.dataset = meta.value("dataset", std::string());
    acts.subset.dataset_size = meta.value("dataset_size", std::size_t{0});
    acts.subset.seed = meta.value("seed", std::uint64_t{0});
    acts.subset.indices = meta.at("indices").get<std::vector<std::size_t>>();
    ids = meta.at("blocks").get<std::vector<std::size_t>>();
  } catch (const nlohmann::json::exception& e) {
    throw HeaderError(std::string("malformed activation metadata: ") + e.what());
  } catch (const ArgumentError& e) {
    throw HeaderError(std::string("malformed activation metadata: ") + e.what());
  }
  std::size_t rows = 0;
  for (auto k : ids) {
    const Tensor& t = c.tensor("block." + std::to_string(k));
    if (t.rank() != 2) throw ShapeMismatchError("block." + std::to_string(k) + " must be 2-D");
    if (!acts.blocks.empty() && t.rows() != rows) {
      throw ShapeMismatchError("block." + std::to_string(k) + " row count differs from other blocks");
    }
    rows = t.rows();
    acts.blocks.emplace(k, t);
  }
  return acts;
}

void save_activations(const ActivationSet& acts, const std::filesystem::path& path) {
  save_container(activations_to_container(acts), path);
}

ActivationSet load_activations(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  return activations_from_container(decode_container(bytes, path.string()));
}

}  // namespace tba
