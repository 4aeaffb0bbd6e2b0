#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "tba/container.hpp"
#include "tba/model.hpp"
#include "tba/tensor.hpp"

namespace tba {

struct Normalization {
  std::vector<double> mean;  // per channel
  std::vector<double> std;   // per channel

  static Normalization identity(std::size_t channels) {
    return {std::vector<double>(channels, 0.0), std::vector<double>(channels, 1.0)};
  }
};

// Labelled images, [M x H x W x C] float32 plus integer labels.
struct Dataset {
  std::string name;
  std::string split = "train";
  Tensor images;
  std::vector<int> labels;
  std::size_t num_classes = 0;
  Normalization normalization;

  std::size_t size() const { return labels.size(); }
  // [H x W x C] copy of image i.
  Tensor image(std::size_t i) const;
  // Throws ArgumentError on label range or shape violations.
  void validate() const;
  std::vector<std::size_t> class_counts() const;
  Dataset subset(std::span<const std::size_t> indices) const;
};

Container dataset_to_container(const Dataset& ds);
Dataset dataset_from_container(const Container& c);
void save_dataset(const Dataset& ds, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);

// IDX array of unsigned bytes (type code 0x08), as used by the MNIST family.
// Magic is big-endian: two zero bytes, the type code, the number of dimensions;
// each dimension follows as a big-endian 32-bit size.
struct IdxArray {
  std::vector<std::uint32_t> dims;
  std::vector<std::uint8_t> data;
};

IdxArray decode_idx(std::span<const std::uint8_t> bytes, const std::string& source = "<memory>");
std::vector<std::uint8_t> encode_idx(const IdxArray& array);

// Images file (magic 0x00000803) plus labels file (magic 0x00000801). Pixels
// are scaled to [0, 1]; images come out [M x rows x cols x 1].
Dataset load_idx_dataset(const std::filesystem::path& images, const std::filesystem::path& labels,
                         const std::string& name, const std::string& split);

// Bilinear resize with half-pixel centres, [H x W x C] -> [size x size x C].
Tensor resize_bilinear(const Tensor& image, std::size_t height, std::size_t width);

// Resizes to the model's input size, replicates single-channel images across
// the model's channels, and applies per-channel (x - mean) / std.
Dataset ingest(const Dataset& raw, const ModelConfig& config, const Normalization& norm);

}  // namespace tba
