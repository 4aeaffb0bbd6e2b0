#include "tba/synth.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "tba/error.hpp"
#include "tba/linalg.hpp"
#include "tba/rng.hpp"

namespace tba {

std::string to_string(PlantKind k) {
  switch (k) {
    case PlantKind::kIdentity: return "identity";
    case PlantKind::kLinear: return "linear";
    case PlantKind::kAffine: return "affine";
    case PlantKind::kGelu: return "gelu";
  }
  return "identity";
}

PlantKind parse_plant_kind(const std::string& s) {
  if (s == "identity") return PlantKind::kIdentity;
  if (s == "linear") return PlantKind::kLinear;
  if (s == "affine") return PlantKind::kAffine;
  if (s == "gelu") return PlantKind::kGelu;
  throw ArgumentError("unknown plant kind '" + s + "' (expected identity, linear, affine or gelu)");
}

PlantedSpan parse_plant(const std::string& text) {
  const auto colon = text.find(':');
  if (colon == std::string::npos) throw ArgumentError("malformed plant '" + text + "' (expected kind:s:e)");
  PlantedSpan p;
  p.kind = parse_plant_kind(text.substr(0, colon));
  p.span = parse_span(text.substr(colon + 1));
  return p;
}

namespace {

void fill_normal(Tensor& t, double stddev, Rng& rng) {
  for (auto& v : t.values()) v = static_cast<float>(stddev * rng.normal());
}

void zero_block(BlockWeights& b) {
  for (Tensor* t : {&b.ln1_gamma, &b.ln1_beta, &b.wq, &b.bq, &b.wk, &b.bk, &b.wv, &b.bv, &b.wo, &b.bo,
                    &b.ln2_gamma, &b.ln2_beta, &b.fc1_w, &b.fc1_b, &b.fc2_w, &b.fc2_b}) {
    std::fill(t->values().begin(), t->values().end(), 0.0f);
  }
}

void randomize_block(BlockWeights& b, const ModelConfig& cfg, double noise, double gain, Rng& rng) {
  const double d = static_cast<double>(cfg.d_model);
  std::fill(b.ln1_gamma.values().begin(), b.ln1_gamma.values().end(), static_cast<float>(gain));
  std::fill(b.ln2_gamma.values().begin(), b.ln2_gamma.values().end(), static_cast<float>(gain));
  fill_normal(b.wq, 1.0 / std::sqrt(d), rng);
  fill_normal(b.wk, 1.0 / std::sqrt(d), rng);
  fill_normal(b.wv, 1.0 / std::sqrt(d), rng);
  fill_normal(b.wo, noise / std::sqrt(d), rng);
  fill_normal(b.fc1_w, 1.0 / std::sqrt(d), rng);
  fill_normal(b.fc2_w, noise / std::sqrt(static_cast<double>(cfg.mlp_hidden)), rng);
}

// Ratio of the largest to the smallest singular value, from the eigenvalues
// of A^T A.
double condition_number(const Tensor& a) {
  const DenseMatrix g = gram(a);
  const SymmetricEigen eig = symmetric_eigen(g);
  const double hi = eig.values.front(), lo = eig.values.back();
  if (!(lo > 0.0)) return std::numeric_limits<double>::infinity();
  return std::sqrt(hi / lo);
}

struct WriteTarget {
  Tensor m;   // [d x d] linear part of the write, applied to h = x P
  Tensor b;   // [d] or empty
  Tensor w1;  // gelu plant only: [d x k]
  Tensor w2;  // gelu plant only: [k x d]
};

// Configures block `blk` (attention zeroed) so that it adds
//   gelu(h [M, -M]) [I; -I] + gelu(h W1) W2 + b  =  h M + gelu(h W1) W2 + b
// to the residual stream, with h = LN2(x) = x - mean(x).
void write_mlp(BlockWeights& blk, const ModelConfig& cfg, double gain, const WriteTarget& w) {
  zero_block(blk);
  const std::size_t d = cfg.d_model;
  std::fill(blk.ln2_gamma.values().begin(), blk.ln2_gamma.values().end(), static_cast<float>(gain));
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      blk.fc1_w.at(i, j) = w.m.at(i, j);
      blk.fc1_w.at(i, d + j) = -w.m.at(i, j);
    }
  }
  for (std::size_t j = 0; j < d; ++j) {
    blk.fc2_w.at(j, j) = 1.0f;
    blk.fc2_w.at(d + j, j) = -1.0f;
  }
  if (!w.w1.empty()) {
    const std::size_t k = w.w1.dim(1);
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < k; ++j) blk.fc1_w.at(i, 2 * d + j) = w.w1.at(i, j);
    for (std::size_t j = 0; j < k; ++j)
      for (std::size_t c = 0; c < d; ++c) blk.fc2_w.at(2 * d + j, c) = w.w2.at(j, c);
  }
  if (!w.b.empty()) std::copy(w.b.values().begin(), w.b.values().end(), blk.fc2_b.values().begin());
}

bool needs_linear_regime(const PlantSpec& spec) {
  return std::any_of(spec.plants.begin(), spec.plants.end(),
                     [](const PlantedSpan& p) { return p.kind != PlantKind::kIdentity; });
}

void validate_spec(const PlantSpec& spec) {
  try {
    spec.base.validate();
  } catch (const ArgumentError& e) {
    throw SpecError(std::string("base config: ") + e.what());
  }
  if (!(spec.noise_scale >= 0.0)) throw SpecError("noise scale must be non-negative");
  std::vector<Span> spans;
  for (const auto& p : spec.plants) {
    try {
      check_span(p.span, spec.base.num_blocks);
    } catch (const PlanError& e) {
      throw SpecError(std::string("plant ") + format_span(p.span) + ": " + e.what());
    }
    spans.push_back(p.span);
  }
  std::sort(spans.begin(), spans.end(), [](const Span& a, const Span& b) { return a.s < b.s; });
  for (std::size_t i = 1; i < spans.size(); ++i) {
    if (spans[i - 1].e > spans[i].s) {
      throw SpecError("planted spans " + format_span(spans[i - 1]) + " and " + format_span(spans[i]) + " overlap");
    }
  }
}

}  // namespace

PlantedModel make_planted(const PlantSpec& spec) {
  validate_spec(spec);
  ModelConfig cfg = spec.base;
  const bool linear_regime = needs_linear_regime(spec);
  if (linear_regime) cfg.layernorm_eps = kLinearRegimeEps;
  const double gain = linear_regime ? std::sqrt(kLinearRegimeEps) : 1.0;
  const std::size_t d = cfg.d_model;

  TransformerModel model(cfg);
  Rng root(spec.seed);
  Rng embed_rng = root.fork(1);
  fill_normal(model.patch_kernel, 1.0 / std::sqrt(static_cast<double>(cfg.patch_dim())), embed_rng);
  fill_normal(model.pos_embed, 0.1, embed_rng);
  fill_normal(model.cls_token, 1.0, embed_rng);
  fill_normal(model.distill_token, 1.0, embed_rng);
  fill_normal(model.register_tokens, 1.0, embed_rng);
  std::fill(model.final_gamma.values().begin(), model.final_gamma.values().end(), static_cast<float>(gain));

  // Block weights come from per-block streams so planting one span does not
  // change the random weights of the others.
  for (std::size_t i = 0; i < cfg.num_blocks; ++i) {
    Rng block_rng = root.fork(100 + i);
    randomize_block(model.block(i), cfg, spec.noise_scale, gain, block_rng);
  }

  PlantedModel out{std::move(model), {}};
  for (std::size_t pi = 0; pi < spec.plants.size(); ++pi) {
    const PlantedSpan& p = spec.plants[pi];
    Rng plant_rng = root.fork(1000 + pi);
    const std::string label = to_string(p.kind) + ":" + format_span(p.span);
    // Blocks s+1..e-1 (and e for identity plants) contribute nothing.
    const std::size_t last_zero = p.kind == PlantKind::kIdentity ? p.span.e : p.span.e - 1;
    for (std::size_t k = p.span.s + 1; k <= last_zero; ++k) zero_block(out.model.block(k - 1));

    PlantedMap map{p.span, p.kind, {}, {}};
    if (p.kind == PlantKind::kIdentity) {
      out.maps.push_back(std::move(map));
      continue;
    }
    const std::size_t needed = 2 * d + (p.kind == PlantKind::kGelu ? p.gelu_width : 0);
    if (cfg.mlp_hidden < needed) {
      throw SpecError("plant " + label + " needs mlp_hidden >= " + std::to_string(needed) + ", config has " +
                      std::to_string(cfg.mlp_hidden));
    }

    WriteTarget w;
    if (p.kind == PlantKind::kGelu) {
      if (p.gelu_width == 0) throw SpecError("plant " + label + ": gelu width must be positive");
      // The write -h cancels the centered stream, leaving mean(x) 1 plus the
      // nonlinear term.
      w.m = Tensor({d, d});
      for (std::size_t j = 0; j < d; ++j) w.m.at(j, j) = -1.0f;
      w.w1 = Tensor({d, p.gelu_width});
      w.w2 = Tensor({p.gelu_width, d});
      fill_normal(w.w1, p.gelu_scale / std::sqrt(static_cast<double>(d)), plant_rng);
      fill_normal(w.w2, 1.0 / std::sqrt(static_cast<double>(p.gelu_width)), plant_rng);
    } else {
      Tensor a = p.a;
      if (a.empty()) {
        Tensor e({d, d});
        fill_normal(e, p.strength / std::sqrt(static_cast<double>(d)), plant_rng);
        // A = I + P E: subtracting column means makes each column of A - I sum to 0.
        a = Tensor::identity(d);
        for (std::size_t j = 0; j < d; ++j) {
          double mean = 0.0;
          for (std::size_t i = 0; i < d; ++i) mean += e.at(i, j);
          mean /= static_cast<double>(d);
          for (std::size_t i = 0; i < d; ++i) a.at(i, j) += static_cast<float>(e.at(i, j) - mean);
        }
      }
      if (a.shape() != Shape{d, d}) {
        throw SpecError("plant " + label + ": A must be " + shape_str({d, d}) + ", got " + shape_str(a.shape()));
      }
      w.m = a;
      for (std::size_t j = 0; j < d; ++j) w.m.at(j, j) -= 1.0f;
      for (std::size_t j = 0; j < d; ++j) {
        double col = 0.0, scale = 0.0;
        for (std::size_t i = 0; i < d; ++i) {
          col += w.m.at(i, j);
          scale += std::abs(a.at(i, j));
        }
        if (std::abs(col) > 1e-5 * (scale + 1.0)) {
          throw SpecError("plant " + label + ": a pre-norm block cannot write x A - x unless every column of A - I " +
                          "sums to zero (column " + std::to_string(j) + " sums to " + std::to_string(col) + ")");
        }
      }
      const double cond = condition_number(a);
      if (!(cond <= 100.0)) {
        throw SpecError("plant " + label + ": condition number of A is " + std::to_string(cond) + " (limit 100)");
      }
      if (p.kind == PlantKind::kAffine) {
        w.b = p.b;
        if (w.b.empty()) {
          w.b = Tensor({d});
          fill_normal(w.b, p.strength, plant_rng);
        }
        if (w.b.shape() != Shape{d}) throw SpecError("plant " + label + ": b must have length " + std::to_string(d));
      }
      map.a = a;
      map.b = w.b;
    }
    write_mlp(out.model.block(p.span.e - 1), cfg, gain, w);
    out.maps.push_back(std::move(map));
  }
  return out;
}

TransformerModel make_planted_model(const PlantSpec& spec) { return make_planted(spec).model; }

Dataset make_synth_dataset(const SynthDataSpec& spec, const std::string& split) {
  if (spec.num_classes < 2) throw ArgumentError("synthetic dataset needs at least 2 classes");
  if (spec.samples_per_class == 0 || spec.image_size == 0 || spec.channels == 0) {
    throw ArgumentError("synthetic dataset sizes must be positive");
  }
  if (!(spec.margin > 0.0)) throw ArgumentError("margin must be positive");
  std::uint64_t stream = 0;
  if (split == "train") {
    stream = 3;
  } else if (split == "test") {
    stream = 4;
  } else {
    throw ArgumentError("split must be 'train' or 'test', got '" + split + "'");
  }

  const std::size_t pixels = spec.image_size * spec.image_size * spec.channels;
  Rng root(spec.seed);
  Rng mean_rng = root.fork(1);
  Rng shift_rng = root.fork(2);
  Rng sample_rng = root.fork(stream);

  // Independent Gaussian directions in high dimension are nearly orthogonal,
  // so means of norm margin / sqrt(2) sit about `margin` apart.
  auto random_direction = [&](Rng& rng, double norm) {
    std::vector<double> v(pixels);
    double sq = 0.0;
    for (auto& x : v) {
      x = rng.normal();
      sq += x * x;
    }
    const double scale = sq > 0.0 ? norm / std::sqrt(sq) : 0.0;
    for (auto& x : v) x *= scale;
    return v;
  };
  std::vector<std::vector<double>> means;
  for (std::size_t c = 0; c < spec.num_classes; ++c) {
    means.push_back(random_direction(mean_rng, spec.margin * spec.noise / std::sqrt(2.0)));
  }
  const std::vector<double> shift = random_direction(shift_rng, spec.shift);

  const std::size_t m = spec.num_classes * spec.samples_per_class;
  std::vector<int> labels(m);
  for (std::size_t i = 0; i < m; ++i) labels[i] = static_cast<int>(i / spec.samples_per_class);
  sample_rng.shuffle(std::span<int>(labels));

  Dataset ds;
  ds.name = "synth";
  ds.split = split;
  ds.num_classes = spec.num_classes;
  ds.normalization = Normalization::identity(spec.channels);
  ds.images = Tensor({m, spec.image_size, spec.image_size, spec.channels});
  for (std::size_t i = 0; i < m; ++i) {
    const auto& mu = means[static_cast<std::size_t>(labels[i])];
    float* px = ds.images.data() + i * pixels;
    for (std::size_t j = 0; j < pixels; ++j) {
      px[j] = static_cast<float>(mu[j] + shift[j] + spec.noise * sample_rng.normal());
    }
  }
  ds.labels = std::move(labels);
  return ds;
}

}  // namespace tba
