#include "tba/model.hpp"

#include <cmath>

#include "tba/error.hpp"
#include "tba/linalg.hpp"

namespace tba {

void ModelConfig::validate() const {
  auto fail = [](const std::string& why) { return ArgumentError("invalid model config: " + why); };
  if (num_blocks < 1) throw fail("num_blocks must be >= 1");
  if (d_model < 1 || num_heads < 1) throw fail("d_model and num_heads must be positive");
  if (d_model % num_heads != 0) {
    throw fail("d_model " + std::to_string(d_model) + " not divisible by num_heads " +
               std::to_string(num_heads));
  }
  if (patch_size < 1 || image_size < patch_size || image_size % patch_size != 0) {
    throw fail("image_size " + std::to_string(image_size) + " not divisible by patch_size " +
               std::to_string(patch_size));
  }
  if (channels < 1) throw fail("channels must be positive");
  if (mlp_hidden < 1) throw fail("mlp_hidden must be positive");
  if (!(layernorm_eps > 0.0)) throw fail("layernorm_eps must be positive");
}

std::size_t ModelConfig::num_positions() const {
  return num_patches() + (has_cls ? 1 : 0) + (has_distill_token ? 1 : 0);
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = {{"image_size", c.image_size},
       {"patch_size", c.patch_size},
       {"channels", c.channels},
       {"d_model", c.d_model},
       {"num_blocks", c.num_blocks},
       {"num_heads", c.num_heads},
       {"mlp_hidden", c.mlp_hidden},
       {"num_register_tokens", c.num_register_tokens},
       {"has_cls", c.has_cls},
       {"has_distill_token", c.has_distill_token},
       {"layernorm_eps", c.layernorm_eps},
       {"gelu", c.gelu == GeluVariant::kErf ? "erf" : "tanh"}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  try {
    c = ModelConfig{};
    j.at("image_size").get_to(c.image_size);
    j.at("patch_size").get_to(c.patch_size);
    c.channels = j.value("channels", std::size_t{3});
    j.at("d_model").get_to(c.d_model);
    j.at("num_blocks").get_to(c.num_blocks);
    j.at("num_heads").get_to(c.num_heads);
    j.at("mlp_hidden").get_to(c.mlp_hidden);
    c.num_register_tokens = j.value("num_register_tokens", std::size_t{0});
    c.has_cls = j.value("has_cls", true);
    c.has_distill_token = j.value("has_distill_token", false);
    c.layernorm_eps = j.value("layernorm_eps", kLayerNormEps);
    const auto gelu = j.value("gelu", std::string("tanh"));
    if (gelu != "tanh" && gelu != "erf") throw HeaderError("unknown gelu variant '" + gelu + "'");
    c.gelu = gelu == "erf" ? GeluVariant::kErf : GeluVariant::kTanh;
  } catch (const nlohmann::json::exception& e) {
    throw HeaderError(std::string("malformed model config: ") + e.what());
  }
}

ModelConfig vit_small_config() { return ModelConfig{}; }

ModelConfig vit_tiny_config() {
  ModelConfig c;
  c.d_model = 192;
  c.num_heads = 3;
  c.mlp_hidden = 768;
  return c;
}

std::vector<std::pair<std::string, Shape>> weight_layout(const ModelConfig& c) {
  const std::size_t d = c.d_model;
  std::vector<std::pair<std::string, Shape>> out = {
      {"patch_embed.kernel", {c.patch_dim(), d}},
      {"patch_embed.bias", {d}},
      {"pos_embed", {c.num_positions(), d}},
  };
  if (c.has_cls) out.push_back({"cls_token", {d}});
  if (c.has_distill_token) out.push_back({"dist_token", {d}});
  if (c.num_register_tokens > 0) out.push_back({"register_tokens", {c.num_register_tokens, d}});
  for (std::size_t i = 0; i < c.num_blocks; ++i) {
    const std::string p = "blocks." + std::to_string(i) + ".";
    out.push_back({p + "ln1.gamma", {d}});
    out.push_back({p + "ln1.beta", {d}});
    for (const char* w : {"wq", "wk", "wv", "wo"}) {
      out.push_back({p + "attn." + w + ".weight", {d, d}});
      out.push_back({p + "attn." + w + ".bias", {d}});
    }
    out.push_back({p + "ln2.gamma", {d}});
    out.push_back({p + "ln2.beta", {d}});
    out.push_back({p + "mlp.fc1.weight", {d, c.mlp_hidden}});
    out.push_back({p + "mlp.fc1.bias", {c.mlp_hidden}});
    out.push_back({p + "mlp.fc2.weight", {c.mlp_hidden, d}});
    out.push_back({p + "mlp.fc2.bias", {d}});
  }
  out.push_back({"final_norm.gamma", {d}});
  out.push_back({"final_norm.beta", {d}});
  return out;
}

TransformerModel::TransformerModel(ModelConfig config) : config_(config) {
  config_.validate();
  const std::size_t d = config_.d_model;
  blocks_.resize(config_.num_blocks);
  // named_weights() and weight_layout() enumerate the same names in the same
  // order, optional tokens included only when configured.
  const auto layout = weight_layout(config_);
  auto slots = named_weights();
  for (std::size_t i = 0; i < layout.size(); ++i) *slots[i].second = Tensor(layout[i].second);
  const Tensor ones({d}, 1.0f);
  final_gamma = ones;
  for (auto& b : blocks_) {
    b.ln1_gamma = ones;
    b.ln2_gamma = ones;
  }
}

std::vector<std::pair<std::string, Tensor*>> TransformerModel::named_weights() {
  std::vector<std::pair<std::string, Tensor*>> out = {
      {"patch_embed.kernel", &patch_kernel},
      {"patch_embed.bias", &patch_bias},
      {"pos_embed", &pos_embed},
  };
  if (config_.has_cls) out.push_back({"cls_token", &cls_token});
  if (config_.has_distill_token) out.push_back({"dist_token", &distill_token});
  if (config_.num_register_tokens > 0) out.push_back({"register_tokens", &register_tokens});
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    auto& b = blocks_[i];
    const std::string p = "blocks." + std::to_string(i) + ".";
    out.push_back({p + "ln1.gamma", &b.ln1_gamma});
    out.push_back({p + "ln1.beta", &b.ln1_beta});
    out.push_back({p + "attn.wq.weight", &b.wq});
    out.push_back({p + "attn.wq.bias", &b.bq});
    out.push_back({p + "attn.wk.weight", &b.wk});
    out.push_back({p + "attn.wk.bias", &b.bk});
    out.push_back({p + "attn.wv.weight", &b.wv});
    out.push_back({p + "attn.wv.bias", &b.bv});
    out.push_back({p + "attn.wo.weight", &b.wo});
    out.push_back({p + "attn.wo.bias", &b.bo});
    out.push_back({p + "ln2.gamma", &b.ln2_gamma});
    out.push_back({p + "ln2.beta", &b.ln2_beta});
    out.push_back({p + "mlp.fc1.weight", &b.fc1_w});
    out.push_back({p + "mlp.fc1.bias", &b.fc1_b});
    out.push_back({p + "mlp.fc2.weight", &b.fc2_w});
    out.push_back({p + "mlp.fc2.bias", &b.fc2_b});
  }
  out.push_back({"final_norm.gamma", &final_gamma});
  out.push_back({"final_norm.beta", &final_beta});
  return out;
}

std::vector<std::pair<std::string, const Tensor*>> TransformerModel::named_weights() const {
  auto mut = const_cast<TransformerModel*>(this)->named_weights();
  std::vector<std::pair<std::string, const Tensor*>> out;
  out.reserve(mut.size());
  for (auto& [name, t] : mut) out.emplace_back(std::move(name), t);
  return out;
}

Tensor TransformerModel::embed(const Tensor& image) const {
  const auto& c = config_;
  const Shape expected = {c.image_size, c.image_size, c.channels};
  if (image.shape() != expected) {
    throw DimensionError("image shape " + shape_str(image.shape()) + " does not match model input " +
                         shape_str(expected));
  }
  const std::size_t g = c.grid(), ps = c.patch_size, ch = c.channels, d = c.d_model;
  Tensor patches({c.num_patches(), c.patch_dim()});
  for (std::size_t gy = 0; gy < g; ++gy) {
    for (std::size_t gx = 0; gx < g; ++gx) {
      float* dst = patches.row(gy * g + gx).data();
      for (std::size_t dy = 0; dy < ps; ++dy) {
        const float* src = image.data() + ((gy * ps + dy) * c.image_size + gx * ps) * ch;
        std::copy(src, src + ps * ch, dst + dy * ps * ch);
      }
    }
  }
  const Tensor patch_tokens = linear(patches, patch_kernel, patch_bias);

  Tensor tokens({c.num_tokens(), d});
  std::size_t pos_row = 0;
  std::size_t out_row = 0;
  auto put = [&](std::span<const float> src, bool positional) {
    auto dst = tokens.row(out_row++);
    for (std::size_t j = 0; j < d; ++j) {
      dst[j] = src[j] + (positional ? pos_embed.at(pos_row, j) : 0.0f);
    }
    if (positional) ++pos_row;
  };
  if (c.has_cls) put(cls_token.values(), true);
  if (c.has_distill_token) put(distill_token.values(), true);
  // Registers sit between the special tokens and the patches but carry no
  // positional embedding, so reserve their rows and fill them last.
  const std::size_t register_start = out_row;
  out_row += c.num_register_tokens;
  for (std::size_t p = 0; p < c.num_patches(); ++p) put(patch_tokens.row(p), true);
  for (std::size_t r = 0; r < c.num_register_tokens; ++r) {
    auto dst = tokens.row(register_start + r);
    const auto src = register_tokens.row(r);
    std::copy(src.begin(), src.end(), dst.begin());
  }
  return tokens;
}

namespace {

// Scaled dot-product attention over all heads; q, k, v are [n x d].
Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads) {
  const std::size_t n = q.rows(), d = q.cols(), hd = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  Tensor out({n, d});
  std::vector<double> scores(n);
  std::vector<double> acc(hd);
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t off = h * hd;
    for (std::size_t i = 0; i < n; ++i) {
      const float* qi = q.data() + i * d + off;
      double mx = -INFINITY;
      for (std::size_t j = 0; j < n; ++j) {
        const float* kj = k.data() + j * d + off;
        double s = 0.0;
        for (std::size_t t = 0; t < hd; ++t) s += static_cast<double>(qi[t]) * kj[t];
        scores[j] = s * scale;
        mx = std::max(mx, scores[j]);
      }
      double sum = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        scores[j] = std::exp(scores[j] - mx);
        sum += scores[j];
      }
      std::fill(acc.begin(), acc.end(), 0.0);
      for (std::size_t j = 0; j < n; ++j) {
        const double w = scores[j] / sum;
        const float* vj = v.data() + j * d + off;
        for (std::size_t t = 0; t < hd; ++t) acc[t] += w * vj[t];
      }
      float* o = out.data() + i * d + off;
      for (std::size_t t = 0; t < hd; ++t) o[t] = static_cast<float>(acc[t]);
    }
  }
  return out;
}

}  // namespace

Tensor TransformerModel::block_forward(std::size_t index, const Tensor& x) const {
  if (index >= blocks_.size()) {
    throw ArgumentError("block index " + std::to_string(index) + " out of range [0, " +
                        std::to_string(blocks_.size()) + ")");
  }
  if (x.rank() != 2 || x.cols() != config_.d_model) {
    throw DimensionError("block input " + shape_str(x.shape()) + " does not have width " +
                         std::to_string(config_.d_model));
  }
  const auto& b = blocks_[index];
  const double eps = config_.layernorm_eps;

  const Tensor h1 = layernorm(x, b.ln1_gamma, b.ln1_beta, eps);
  const Tensor attn = multi_head_attention(linear(h1, b.wq, b.bq), linear(h1, b.wk, b.bk),
                                           linear(h1, b.wv, b.bv), config_.num_heads);
  Tensor x1 = x + linear(attn, b.wo, b.bo);

  const Tensor h2 = layernorm(x1, b.ln2_gamma, b.ln2_beta, eps);
  const Tensor hidden = gelu(linear(h2, b.fc1_w, b.fc1_b), config_.gelu);
  return x1 + linear(hidden, b.fc2_w, b.fc2_b);
}

Tensor TransformerModel::final_norm(const Tensor& x) const {
  return layernorm(x, final_gamma, final_beta, config_.layernorm_eps);
}

Tensor TransformerModel::forward_hidden(const Tensor& image, const BlockObserver& observer) const {
  Tensor x = embed(image);
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    x = block_forward(i, x);
    if (observer) observer(i + 1, x);
  }
  return x;
}

Tensor TransformerModel::forward(const Tensor& image) const { return final_norm(forward_hidden(image)); }

Container TransformerModel::to_container() const {
  Container c;
  c.documents["__config__"] = config_;
  for (const auto& [name, t] : named_weights()) c.tensors.emplace(name, *t);
  return c;
}

TransformerModel TransformerModel::from_container(const Container& c) {
  const ModelConfig config = c.document("__config__").get<ModelConfig>();
  try {
    config.validate();
  } catch (const ArgumentError& e) {
    throw HeaderError(std::string("embedded config: ") + e.what());
  }
  TransformerModel model(config);
  const auto layout = weight_layout(config);
  auto slots = model.named_weights();
  for (std::size_t i = 0; i < layout.size(); ++i) {
    const auto& [name, shape] = layout[i];
    const Tensor& t = c.tensor(name);
    if (t.shape() != shape) {
      throw ShapeMismatchError("weight '" + name + "' has shape " + shape_str(t.shape()) +
                               ", config implies " + shape_str(shape));
    }
    *slots[i].second = t;
  }
  if (c.tensors.size() != layout.size()) {
    for (const auto& [name, _] : c.tensors) {
      bool known = false;
      for (const auto& [lname, s] : layout) known = known || lname == name;
      if (!known) throw HeaderError("unexpected tensor '" + name + "' in model container");
    }
  }
  return model;
}

std::uint64_t count_block_params(const ModelConfig& c) {
  const std::uint64_t d = c.d_model, h = c.mlp_hidden;
  return 4 * d            // two layernorms
         + 4 * (d * d + d)  // q, k, v, o
         + d * h + h + h * d + d;
}

std::uint64_t count_params(const ModelConfig& c) {
  const std::uint64_t d = c.d_model;
  std::uint64_t total = c.patch_dim() * d + d + c.num_positions() * d;
  if (c.has_cls) total += d;
  if (c.has_distill_token) total += d;
  total += c.num_register_tokens * d;
  total += c.num_blocks * count_block_params(c);
  total += 2 * d;
  return total;
}

std::uint64_t count_params(const TransformerModel& model) {
  std::uint64_t total = 0;
  for (const auto& [name, t] : model.named_weights()) total += t->numel();
  return total;
}

void save_model(const TransformerModel& model, const std::filesystem::path& path) {
  save_container(model.to_container(), path);
}

TransformerModel load_model(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  return TransformerModel::from_container(decode_container(bytes, path.string()));
}

std::string model_fingerprint(const TransformerModel& model) { return fingerprint(model.to_container()); }

}  // namespace tba
