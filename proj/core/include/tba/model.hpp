#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tba/container.hpp"
#include "tba/kernels.hpp"
#include "tba/tensor.hpp"

namespace tba {

struct ModelConfig {
  std::size_t image_size = 224;
  std::size_t patch_size = 16;
  std::size_t channels = 3;
  std::size_t d_model = 384;
  std::size_t num_blocks = 12;
  std::size_t num_heads = 6;
  std::size_t mlp_hidden = 1536;
  std::size_t num_register_tokens = 0;
  bool has_cls = true;
  bool has_distill_token = false;
  double layernorm_eps = kLayerNormEps;
  GeluVariant gelu = GeluVariant::kTanh;

  // Throws ArgumentError on an inconsistent configuration.
  void validate() const;

  std::size_t grid() const { return image_size / patch_size; }
  std::size_t num_patches() const { return grid() * grid(); }
  std::size_t patch_dim() const { return patch_size * patch_size * channels; }
  std::size_t head_dim() const { return d_model / num_heads; }
  // Tokens that receive a positional embedding: CLS, distillation, patches.
  std::size_t num_positions() const;
  // Sequence length entering the blocks: positions plus register tokens.
  std::size_t num_tokens() const { return num_positions() + num_register_tokens; }
  // Row of the CLS token in the token matrix (always 0 when present).
  std::size_t cls_row() const { return 0; }

  bool operator==(const ModelConfig&) const = default;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

// ViT-S/16 at 224 px: 12 blocks, width 384, 6 heads, MLP 1536.
ModelConfig vit_small_config();
// ViT-Ti/16 at 224 px: 12 blocks, width 192, 3 heads, MLP 768.
ModelConfig vit_tiny_config();

struct BlockWeights {
  Tensor ln1_gamma, ln1_beta;
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;
  Tensor ln2_gamma, ln2_beta;
  Tensor fc1_w, fc1_b, fc2_w, fc2_b;
};

// Receives (k, tokens) for each block output k = 1..B, before the final norm.
using BlockObserver = std::function<void(std::size_t, const Tensor&)>;

// Pre-norm ViT encoder. Linear weights are stored [in x out] so a layer is
// y = x W + b. Token order is [CLS][distillation][registers...][patches...];
// positional embeddings cover CLS, distillation and patch tokens, registers
// are appended after they are added.
//
// Patches are taken in row-major grid order from an [H x W x C] image and each
// patch is flattened as (row, column, channel).
class TransformerModel {
 public:
  // All weights zero except layernorm gains (one).
  explicit TransformerModel(ModelConfig config);

  const ModelConfig& config() const noexcept { return config_; }
  std::size_t num_blocks() const noexcept { return blocks_.size(); }

  Tensor patch_kernel, patch_bias;  // [patch_dim x d], [d]
  Tensor pos_embed;                 // [num_positions x d]
  Tensor cls_token;                 // [d] (empty when !has_cls)
  Tensor distill_token;             // [d] (empty unless has_distill_token)
  Tensor register_tokens;           // [R x d] (empty when R == 0)
  Tensor final_gamma, final_beta;   // [d]

  BlockWeights& block(std::size_t index) { return blocks_.at(index); }
  const BlockWeights& block(std::size_t index) const { return blocks_.at(index); }

  // Patchify, embed, prepend special tokens and add positions.
  Tensor embed(const Tensor& image) const;
  // One transformer block, 0 <= index < B, on a [n_tokens x d] matrix:
  //   x += MHSA(LN1(x));  x += MLP(LN2(x))
  Tensor block_forward(std::size_t index, const Tensor& x) const;
  Tensor final_norm(const Tensor& x) const;
  // Output of the last block (before the final norm).
  Tensor forward_hidden(const Tensor& image, const BlockObserver& observer = {}) const;
  // Full encoder output after the final norm.
  Tensor forward(const Tensor& image) const;

  // Named weights, in the container naming scheme, without the config.
  std::vector<std::pair<std::string, const Tensor*>> named_weights() const;
  std::vector<std::pair<std::string, Tensor*>> named_weights();

  Container to_container() const;
  // Validates names and shapes against the embedded "__config__".
  static TransformerModel from_container(const Container& c);

 private:
  ModelConfig config_;
  std::vector<BlockWeights> blocks_;
};

// Expected shape of every named weight under `config`, in naming order.
std::vector<std::pair<std::string, Shape>> weight_layout(const ModelConfig& config);

std::uint64_t count_params(const ModelConfig& config);
std::uint64_t count_params(const TransformerModel& model);
std::uint64_t count_block_params(const ModelConfig& config);

void save_model(const TransformerModel& model, const std::filesystem::path& path);
TransformerModel load_model(const std::filesystem::path& path);
std::string model_fingerprint(const TransformerModel& model);

}  // namespace tba
