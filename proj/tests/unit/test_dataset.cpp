#include <gtest/gtest.h>

#include "tba/container.hpp"
#include "tba/dataset.hpp"
#include "tba/error.hpp"
#include "unit/test_util.hpp"

namespace tba {
namespace {

using Bytes = std::vector<std::uint8_t>;

Dataset small_dataset() {
  Dataset ds;
  ds.name = "toy";
  ds.split = "test";
  Rng rng(1);
  ds.images = test::random_tensor({6, 4, 4, 3}, rng);
  ds.labels = {0, 1, 2, 0, 1, 2};
  ds.num_classes = 3;
  ds.normalization = Normalization::identity(3);
  return ds;
}

TEST(Idx, EncodesBigEndianHeader) {
  const IdxArray a{{2, 3}, {1, 2, 3, 4, 5, 6}};
  const Bytes expected = {0, 0, 8, 2, 0, 0, 0, 2, 0, 0, 0, 3, 1, 2, 3, 4, 5, 6};
  EXPECT_EQ(encode_idx(a), expected);
}

TEST(Idx, RoundTripIsBitwise) {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    IdxArray a;
    const std::size_t rank = 1 + rng.below(3);
    std::size_t n = 1;
    for (std::size_t r = 0; r < rank; ++r) {
      a.dims.push_back(static_cast<std::uint32_t>(1 + rng.below(5)));
      n *= a.dims.back();
    }
    for (std::size_t i = 0; i < n; ++i) a.data.push_back(static_cast<std::uint8_t>(rng.below(256)));
    const Bytes bytes = encode_idx(a);
    const IdxArray back = decode_idx(bytes);
    EXPECT_EQ(back.dims, a.dims);
    EXPECT_EQ(back.data, a.data);
    EXPECT_EQ(encode_idx(back), bytes);
  }
}

TEST(IdxErrors, EachFailureHasItsType) {
  EXPECT_THROW(decode_idx(Bytes{0, 0}), TruncatedError);
  EXPECT_THROW(decode_idx(Bytes{1, 0, 8, 1, 0, 0, 0, 0}), BadMagicError);
  EXPECT_THROW(decode_idx(Bytes{0, 0, 0x0D, 1, 0, 0, 0, 0}), HeaderError);
  EXPECT_THROW(decode_idx(Bytes{0, 0, 8, 0}), HeaderError);
  EXPECT_THROW(decode_idx(Bytes{0, 0, 8, 2, 0, 0, 0, 1}), TruncatedError);
  EXPECT_THROW(decode_idx(Bytes{0, 0, 8, 1, 0, 0, 0, 3, 1, 2}), TruncatedError);
  EXPECT_THROW(decode_idx(Bytes{0, 0, 8, 1, 0, 0, 0, 1, 1, 2}), HeaderError);
}

TEST(Idx, LoadsImageLabelPair) {
  test::TempDir dir("idx");
  const IdxArray images{{2, 2, 2}, {0, 255, 51, 102, 10, 20, 30, 40}};
  const IdxArray labels{{2}, {7, 3}};
  write_file(dir / "t10k-images-idx3-ubyte", encode_idx(images));
  write_file(dir / "t10k-labels-idx1-ubyte", encode_idx(labels));
  const Dataset ds = load_idx_dataset(dir / "t10k-images-idx3-ubyte", dir / "t10k-labels-idx1-ubyte", "m", "test");
  EXPECT_EQ(ds.images.shape(), (Shape{2, 2, 2, 1}));
  EXPECT_EQ(ds.images[1], 1.0f);
  EXPECT_FLOAT_EQ(ds.images[2], 0.2f);
  EXPECT_EQ(ds.labels, (std::vector<int>{7, 3}));
  EXPECT_EQ(ds.num_classes, 8u);
  // Swapped files are rejected by magic.
  EXPECT_THROW(load_idx_dataset(dir / "t10k-labels-idx1-ubyte", dir / "t10k-images-idx3-ubyte", "m", "test"),
               BadMagicError);
  write_file(dir / "short-labels", encode_idx(IdxArray{{1}, {0}}));
  EXPECT_THROW(load_idx_dataset(dir / "t10k-images-idx3-ubyte", dir / "short-labels", "m", "test"),
               ShapeMismatchError);
}

TEST(Dataset, ContainerRoundTrip) {
  const Dataset ds = small_dataset();
  const Bytes bytes = encode_container(dataset_to_container(ds));
  const Dataset back = dataset_from_container(decode_container(bytes));
  EXPECT_EQ(back.images, ds.images);
  EXPECT_EQ(back.labels, ds.labels);
  EXPECT_EQ(back.name, "toy");
  EXPECT_EQ(back.split, "test");
  EXPECT_EQ(back.num_classes, 3u);
  EXPECT_EQ(encode_container(dataset_to_container(back)), bytes);
}

TEST(Dataset, RejectsBadLabels) {
  Dataset ds = small_dataset();
  ds.labels[0] = 5;
  EXPECT_THROW(ds.validate(), ArgumentError);
  Container c = dataset_to_container(small_dataset());
  c.tensors["labels"][0] = 0.5f;
  EXPECT_THROW(dataset_from_container(c), HeaderError);
  c = dataset_to_container(small_dataset());
  c.tensors["labels"] = Tensor({5});
  EXPECT_THROW(dataset_from_container(c), ShapeMismatchError);
  c.tensors.erase("labels");
  EXPECT_THROW(dataset_from_container(c), MissingWeightError);
}

TEST(Dataset, SubsetAndCounts) {
  const Dataset ds = small_dataset();
  EXPECT_EQ(ds.class_counts(), (std::vector<std::size_t>{2, 2, 2}));
  const std::vector<std::size_t> idx = {1, 4};
  const Dataset sub = ds.subset(idx);
  EXPECT_EQ(sub.labels, (std::vector<int>{1, 1}));
  EXPECT_EQ(sub.image(1), ds.image(4));
}

TEST(Resize, HalfPixelCentres) {
  // 1 x 2 -> 1 x 4: sample positions -0.25, 0.25, 0.75, 1.25 (clamped).
  const Tensor img({1, 2, 1}, std::vector<float>{0, 1});
  const Tensor out = resize_bilinear(img, 1, 4);
  EXPECT_FLOAT_EQ(out[0], 0.0f);
  EXPECT_FLOAT_EQ(out[1], 0.25f);
  EXPECT_FLOAT_EQ(out[2], 0.75f);
  EXPECT_FLOAT_EQ(out[3], 1.0f);
  // Downsampling 4 -> 2 averages neighbouring pairs.
  const Tensor wide({1, 4, 1}, std::vector<float>{0, 2, 4, 6});
  const Tensor down = resize_bilinear(wide, 1, 2);
  EXPECT_FLOAT_EQ(down[0], 1.0f);
  EXPECT_FLOAT_EQ(down[1], 5.0f);
}

TEST(Resize, ConstantImageStaysConstant) {
  const Tensor img({3, 5, 2}, 0.7f);
  const Tensor out = resize_bilinear(img, 7, 4);
  for (float v : out.values()) EXPECT_FLOAT_EQ(v, 0.7f);
}

TEST(Ingest, ResizesReplicatesAndNormalizes) {
  Dataset raw;
  raw.name = "gray";
  raw.images = Tensor({1, 2, 2, 1}, 0.5f);
  raw.images[0] = 1.0f;
  raw.labels = {0};
  raw.num_classes = 1;
  raw.normalization = Normalization::identity(1);
  ModelConfig cfg = test::tiny_config();
  cfg.image_size = 4;
  const Normalization norm{{0.5, 0.5, 0.0}, {0.5, 0.5, 2.0}};
  const Dataset out = ingest(raw, cfg, norm);
  EXPECT_EQ(out.images.shape(), (Shape{1, 4, 4, 3}));
  // Pixel (3,3) sits in the constant region: (0.5 - 0.5) / 0.5 = 0.
  const std::size_t last = (3 * 4 + 3) * 3;
  EXPECT_FLOAT_EQ(out.images[last], 0.0f);
  EXPECT_FLOAT_EQ(out.images[last + 2], 0.25f);
  // Pixel (0,0) sees the bright corner: (1 - 0.5) / 0.5 = 1.
  EXPECT_FLOAT_EQ(out.images[0], 1.0f);
  EXPECT_EQ(out.normalization.std[2], 2.0);
  EXPECT_THROW(ingest(raw, cfg, Normalization::identity(1)), ArgumentError);
  EXPECT_THROW(ingest(raw, cfg, Normalization{{0, 0, 0}, {1, 0, 1}}), ArgumentError);
}

}  // namespace
}  // namespace tba
