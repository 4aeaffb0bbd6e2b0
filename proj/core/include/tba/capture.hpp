#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "tba/container.hpp"
#include "tba/dataset.hpp"
#include "tba/model.hpp"

namespace tba {

// How per-token block outputs collapse into rows.
enum class Reduce {
  kMean,  // one row per sample: mean over tokens
  kCls,   // one row per sample: the CLS token
  kAll,   // one row per token, sample-major then token-major
};

std::string to_string(Reduce r);
Reduce parse_reduce(const std::string& s);

// Uniform sample without replacement from a dataset, indices ascending.
struct DataSubset {
  std::string dataset;
  std::size_t dataset_size = 0;
  std::uint64_t seed = 0;
  std::vector<std::size_t> indices;

  std::size_t size() const { return indices.size(); }
};

DataSubset sample_subset(const Dataset& dataset, std::size_t count, std::uint64_t seed);
// Every index of the dataset, in order.
DataSubset full_subset(const Dataset& dataset);

struct CaptureOptions {
  Reduce reduce = Reduce::kMean;
  // Whether the CLS row takes part in the token mean (kMean only).
  bool mean_includes_cls = true;
  // Samples handed to the worker pool at a time; does not affect results.
  std::size_t batch_size = 64;
  // 1-based block outputs to record; empty records all of them.
  std::vector<std::size_t> blocks;
};

// Per-block output representations for a data subset. Blocks are indexed
// 1..B as block outputs; a capture restricted to a few blocks only holds
// those.
struct ActivationSet {
  Reduce reduce = Reduce::kMean;
  bool mean_includes_cls = true;
  std::size_t num_blocks = 0;  // B of the source model
  std::size_t tokens_per_sample = 0;
  std::string model_fingerprint;
  DataSubset subset;
  std::map<std::size_t, Tensor> blocks;

  bool has_block(std::size_t k) const { return blocks.contains(k); }
  // Throws ArgumentError for a block that was not captured.
  const Tensor& block(std::size_t k) const;
  bool complete() const;
  std::size_t rows() const;
};

ActivationSet capture(const TransformerModel& model, const Dataset& dataset, const DataSubset& subset,
                      const CaptureOptions& options);

// Applies the reduction to one sample's [n_tokens x d] matrix.
Tensor reduce_tokens(const Tensor& tokens, Reduce reduce, const ModelConfig& config,
                     bool mean_includes_cls = true);

Container activations_to_container(const ActivationSet& acts);
ActivationSet activations_from_container(const Container& c);
void save_activations(const ActivationSet& acts, const std::filesystem::path& path);
ActivationSet load_activations(const std::filesystem::path& path);

}  // namespace tba
