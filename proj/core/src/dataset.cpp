#include "tba/dataset.hpp"

#include <algorithm>
#include <cmath>

#include "tba/error.hpp"

namespace tba {

Tensor Dataset::image(std::size_t i) const {
  const std::size_t h = images.dim(1), w = images.dim(2), c = images.dim(3);
  const std::size_t stride = h * w * c;
  std::vector<float> data(images.data() + i * stride, images.data() + (i + 1) * stride);
  return Tensor({h, w, c}, std::move(data));
}

void Dataset::validate() const {
  if (images.rank() != 4) {
    throw ArgumentError("dataset '" + name + "': images must be [M x H x W x C], got " +
                        shape_str(images.shape()));
  }
  if (images.dim(0) != labels.size()) {
    throw ArgumentError("dataset '" + name + "': " + std::to_string(images.dim(0)) + " images but " +
                        std::to_string(labels.size()) + " labels");
  }
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= num_classes) {
      throw ArgumentError("dataset '" + name + "': label " + std::to_string(y) + " outside [0, " +
                          std::to_string(num_classes) + ")");
    }
  }
}

std::vector<std::size_t> Dataset::class_counts() const {
  std::vector<std::size_t> counts(num_classes, 0);
  for (int y : labels) ++counts.at(static_cast<std::size_t>(y));
  return counts;
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  Dataset out;
  out.name = name;
  out.split = split;
  out.num_classes = num_classes;
  out.normalization = normalization;
  Shape shape = images.shape();
  shape[0] = indices.size();
  const std::size_t stride = shape_numel(images.shape()) / std::max<std::size_t>(1, images.dim(0));
  std::vector<float> data;
  data.reserve(indices.size() * stride);
  for (auto i : indices) {
    if (i >= size()) throw ArgumentError("dataset subset index out of range");
    data.insert(data.end(), images.data() + i * stride, images.data() + (i + 1) * stride);
    out.labels.push_back(labels[i]);
  }
  out.images = Tensor(std::move(shape), std::move(data));
  return out;
}

Container dataset_to_container(const Dataset& ds) {
  ds.validate();
  Container c;
  c.tensors["images"] = ds.images;
  Tensor labels({ds.labels.size()});
  for (std::size_t i = 0; i < ds.labels.size(); ++i) labels[i] = static_cast<float>(ds.labels[i]);
  c.tensors["labels"] = std::move(labels);
  c.documents["__meta__"] = {{"kind", "dataset"},
                             {"name", ds.name},
                             {"split", ds.split},
                             {"num_classes", ds.num_classes},
                             {"normalization", {{"mean", ds.normalization.mean}, {"std", ds.normalization.std}}}};
  return c;
}

Dataset dataset_from_container(const Container& c) {
  Dataset ds;
  const auto& meta = c.document("__meta__");
  try {
    ds.name = meta.value("name", std::string("dataset"));
    ds.split = meta.value("split", std::string("train"));
    ds.num_classes = meta.at("num_classes").get<std::size_t>();
    if (meta.contains("normalization")) {
      ds.normalization.mean = meta["normalization"].at("mean").get<std::vector<double>>();
      ds.normalization.std = meta["normalization"].at("std").get<std::vector<double>>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw HeaderError(std::string("malformed dataset metadata: ") + e.what());
  }
  ds.images = c.tensor("images");
  const Tensor& labels = c.tensor("labels");
  if (labels.rank() != 1) throw ShapeMismatchError("labels must be 1-D, got " + shape_str(labels.shape()));
  for (float v : labels.values()) {
    if (v != std::floor(v)) throw HeaderError("labels must hold integer values");
    ds.labels.push_back(static_cast<int>(v));
  }
  try {
    ds.validate();
  } catch (const ArgumentError& e) {
    throw ShapeMismatchError(e.what());
  }
  return ds;
}

void save_dataset(const Dataset& ds, const std::filesystem::path& path) {
  save_container(dataset_to_container(ds), path);
}

Dataset load_dataset(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  return dataset_from_container(decode_container(bytes, path.string()));
}

IdxArray decode_idx(std::span<const std::uint8_t> bytes, const std::string& source) {
  if (bytes.size() < 4) throw TruncatedError(source + ": shorter than the IDX magic");
  if (bytes[0] != 0 || bytes[1] != 0) throw BadMagicError(source + ": not an IDX file (bad magic)");
  if (bytes[2] != 0x08) {
    throw HeaderError(source + ": unsupported IDX element type 0x" +
                      std::to_string(static_cast<int>(bytes[2])) + " (only unsigned byte)");
  }
  const std::size_t ndims = bytes[3];
  if (ndims == 0) throw HeaderError(source + ": IDX array with zero dimensions");
  if (bytes.size() < 4 + 4 * ndims) throw TruncatedError(source + ": truncated IDX dimension list");
  IdxArray out;
  std::size_t count = 1;
  for (std::size_t i = 0; i < ndims; ++i) {
    const std::uint8_t* p = bytes.data() + 4 + 4 * i;
    const std::uint32_t d = (std::uint32_t{p[0]} << 24) | (std::uint32_t{p[1]} << 16) |
                            (std::uint32_t{p[2]} << 8) | std::uint32_t{p[3]};
    out.dims.push_back(d);
    count *= d;
  }
  const std::size_t header = 4 + 4 * ndims;
  if (bytes.size() - header < count) {
    throw TruncatedError(source + ": IDX payload has " + std::to_string(bytes.size() - header) +
                         " bytes, dimensions need " + std::to_string(count));
  }
  if (bytes.size() - header > count) throw HeaderError(source + ": trailing bytes after IDX payload");
  out.data.assign(bytes.begin() + static_cast<std::ptrdiff_t>(header), bytes.end());
  return out;
}

std::vector<std::uint8_t> encode_idx(const IdxArray& array) {
  if (array.dims.empty() || array.dims.size() > 255) throw ArgumentError("IDX needs 1..255 dimensions");
  std::size_t count = 1;
  for (auto d : array.dims) count *= d;
  if (count != array.data.size()) throw DimensionError("IDX data size does not match dimensions");
  std::vector<std::uint8_t> out = {0, 0, 0x08, static_cast<std::uint8_t>(array.dims.size())};
  for (auto d : array.dims) {
    out.push_back(static_cast<std::uint8_t>(d >> 24));
    out.push_back(static_cast<std::uint8_t>(d >> 16));
    out.push_back(static_cast<std::uint8_t>(d >> 8));
    out.push_back(static_cast<std::uint8_t>(d));
  }
  out.insert(out.end(), array.data.begin(), array.data.end());
  return out;
}

Dataset load_idx_dataset(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
                         const std::string& name, const std::string& split) {
  const auto image_bytes = read_file(images_path);
  const auto label_bytes = read_file(labels_path);
  const IdxArray images = decode_idx(image_bytes, images_path.string());
  const IdxArray labels = decode_idx(label_bytes, labels_path.string());
  if (image_bytes[3] != 3) throw BadMagicError(images_path.string() + ": expected magic 0x00000803");
  if (label_bytes[3] != 1) throw BadMagicError(labels_path.string() + ": expected magic 0x00000801");
  if (images.dims[0] != labels.dims[0]) {
    throw ShapeMismatchError("IDX image count " + std::to_string(images.dims[0]) + " vs label count " +
                             std::to_string(labels.dims[0]));
  }
  Dataset ds;
  ds.name = name;
  ds.split = split;
  ds.images = Tensor({images.dims[0], images.dims[1], images.dims[2], 1});
  for (std::size_t i = 0; i < images.data.size(); ++i) ds.images[i] = images.data[i] / 255.0f;
  int max_label = 0;
  for (auto v : labels.data) {
    ds.labels.push_back(v);
    max_label = std::max<int>(max_label, v);
  }
  ds.num_classes = static_cast<std::size_t>(max_label) + 1;
  ds.normalization = Normalization::identity(1);
  return ds;
}

Tensor resize_bilinear(const Tensor& image, std::size_t height, std::size_t width) {
  if (image.rank() != 3) throw DimensionError("resize expects [H x W x C], got " + shape_str(image.shape()));
  const std::size_t ih = image.dim(0), iw = image.dim(1), ch = image.dim(2);
  if (ih == height && iw == width) return image;
  Tensor out({height, width, ch});
  const double sy = static_cast<double>(ih) / height, sx = static_cast<double>(iw) / width;
  for (std::size_t y = 0; y < height; ++y) {
    const double fy = std::max(0.0, (y + 0.5) * sy - 0.5);
    const std::size_t y0 = std::min(static_cast<std::size_t>(fy), ih - 1);
    const std::size_t y1 = std::min(y0 + 1, ih - 1);
    const double wy = fy - static_cast<double>(y0);
    for (std::size_t x = 0; x < width; ++x) {
      const double fx = std::max(0.0, (x + 0.5) * sx - 0.5);
      const std::size_t x0 = std::min(static_cast<std::size_t>(fx), iw - 1);
      const std::size_t x1 = std::min(x0 + 1, iw - 1);
      const double wx = fx - static_cast<double>(x0);
      for (std::size_t c = 0; c < ch; ++c) {
        auto px = [&](std::size_t yy, std::size_t xx) { return static_cast<double>(image[(yy * iw + xx) * ch + c]); };
        const double top = px(y0, x0) * (1 - wx) + px(y0, x1) * wx;
        const double bottom = px(y1, x0) * (1 - wx) + px(y1, x1) * wx;
        out[(y * width + x) * ch + c] = static_cast<float>(top * (1 - wy) + bottom * wy);
      }
    }
  }
  return out;
}

Dataset ingest(const Dataset& raw, const ModelConfig& config, const Normalization& norm) {
  raw.validate();
  const std::size_t in_c = raw.images.dim(3), out_c = config.channels;
  if (in_c != out_c && in_c != 1) {
    throw DimensionError("cannot map " + std::to_string(in_c) + "-channel images to " +
                         std::to_string(out_c) + " channels");
  }
  if (norm.mean.size() != out_c || norm.std.size() != out_c) {
    throw ArgumentError("normalization constants must have one entry per model channel");
  }
  for (double s : norm.std)
    if (!(s > 0.0)) throw ArgumentError("normalization std must be positive");

  Dataset out;
  out.name = raw.name;
  out.split = raw.split;
  out.labels = raw.labels;
  out.num_classes = raw.num_classes;
  out.normalization = norm;
  const std::size_t s = config.image_size;
  out.images = Tensor({raw.size(), s, s, out_c});
  const std::size_t stride = s * s * out_c;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const Tensor resized = resize_bilinear(raw.image(i), s, s);
    float* dst = out.images.data() + i * stride;
    for (std::size_t p = 0; p < s * s; ++p) {
      for (std::size_t c = 0; c < out_c; ++c) {
        const float v = resized[p * in_c + (in_c == 1 ? 0 : c)];
        dst[p * out_c + c] = static_cast<float>((v - norm.mean[c]) / norm.std[c]);
      }
    }
  }
  return out;
}

}  // namespace tba
