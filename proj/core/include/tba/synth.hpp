#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tba/approx.hpp"
#include "tba/dataset.hpp"
#include "tba/model.hpp"

namespace tba {

enum class PlantKind {
  kIdentity,  // blocks s+1..e leave the residual stream unchanged
  kLinear,    // blocks s+1..e compose to x -> x A
  kAffine,    // blocks s+1..e compose to x -> x A + b
  kGelu,      // blocks s+1..e compose to x -> x (11^T/d) + gelu(x P W1) W2
};

std::string to_string(PlantKind k);
PlantKind parse_plant_kind(const std::string& s);

struct PlantedSpan {
  Span span;
  PlantKind kind = PlantKind::kLinear;
  // Optional explicit map for kLinear / kAffine ([d x d] and [d]). When
  // empty, A = I + P E with E Gaussian of scale `strength` and P the
  // centering projection.
  Tensor a;
  Tensor b;
  double strength = 0.3;
  // kGelu: hidden units of the planted nonlinear write and the standard
  // deviation of their pre-activations.
  std::size_t gelu_width = 8;
  double gelu_scale = 2.0;
};

// "kind:s:e" with 0-based block indices, e.g. "linear:3:5".
PlantedSpan parse_plant(const std::string& text);

struct PlantSpec {
  ModelConfig base;
  std::vector<PlantedSpan> plants;
  double noise_scale = 0.2;  // scale of the random residual writes
  std::uint64_t seed = 0;
};

// LayerNorm epsilon used when a span must compose to an exactly linear map.
// Normalization is scale invariant, so no pre-norm block can write x A - x
// for general A; with eps far above the stream variance and gains of
// sqrt(eps), every layernorm reduces to centering (x - mean(x)) up to a
// relative error of var(x) / (2 eps), well below float precision.
inline constexpr double kLinearRegimeEps = 1e8;

// Random-weight transformer with the requested spans planted. Construction:
//  * identity: every weight of blocks s+1..e is zero, so each block adds 0.
//  * linear/affine: blocks s+1..e-1 are zeroed; block e has its attention
//    branch zeroed and its MLP computes, for h = LN2(x) = x P,
//      gelu(h [E, -E]) [I; -I] + b = h E + b        (gelu(z) - gelu(-z) = z)
//    so x_e = x (I + P E) + b = x A + b. This requires the columns of A - I to
//    sum to zero (ones vector is fixed) and mlp_hidden >= 2d.
//  * gelu: as linear, with the write -h + gelu(h W1) W2, needing
//    mlp_hidden >= 2d + gelu_width.
// Throws SpecError for infeasible or inconsistent plants (shape, overlap,
// hidden width, fixed-ones violation, condition number of A above 100).
TransformerModel make_planted_model(const PlantSpec& spec);

// The exact map each planted span realizes, in plant order: A and b for
// linear and affine plants (b empty for linear), empty tensors otherwise.
struct PlantedMap {
  Span span;
  PlantKind kind = PlantKind::kIdentity;
  Tensor a;
  Tensor b;
};

struct PlantedModel {
  TransformerModel model;
  std::vector<PlantedMap> maps;
};

PlantedModel make_planted(const PlantSpec& spec);

struct SynthDataSpec {
  std::size_t num_classes = 10;
  std::size_t samples_per_class = 100;
  std::size_t image_size = 16;
  std::size_t channels = 3;
  // Expected distance between two class means in units of the pixel noise
  // standard deviation.
  double margin = 160.0;
  double noise = 1.0;
  // Common translation (Euclidean norm) applied to every class mean, for
  // shifted copies of a distribution.
  double shift = 0.0;
  std::uint64_t seed = 0;
};

// Class-conditional Gaussian images: class means depend only on the seed,
// so the train and test splits share them; samples draw from a split-specific
// stream. Labels are balanced and shuffled.
Dataset make_synth_dataset(const SynthDataSpec& spec, const std::string& split = "train");

}  // namespace tba
