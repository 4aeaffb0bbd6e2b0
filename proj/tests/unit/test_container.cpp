#include <gtest/gtest.h>

#include <cstring>
#include <string>

#include "tba/container.hpp"
#include "tba/error.hpp"
#include "unit/test_util.hpp"

namespace tba {
namespace {

using Bytes = std::vector<std::uint8_t>;

// Builds a container file by hand from a header string and raw payload.
Bytes raw_container(const std::string& header, const Bytes& payload, const char* magic = kContainerMagic) {
  Bytes out(magic, magic + 8);
  std::uint64_t n = header.size();
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(n >> (8 * i)));
  out.insert(out.end(), header.begin(), header.end());
  out.insert(out.end(), payload.begin(), payload.end());
  return out;
}

Bytes f32_bytes(std::initializer_list<float> values) {
  Bytes out;
  for (float v : values) {
    std::uint32_t u;
    std::memcpy(&u, &v, 4);
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(u >> (8 * i)));
  }
  return out;
}

TEST(Container, EncodesTheDocumentedLayout) {
  Container c;
  c.tensors["x"] = Tensor::vector({1.0f, -2.5f});
  const Bytes expected =
      raw_container(R"({"x":{"dtype":"f32","nbytes":8,"offset":0,"shape":[2]}})", f32_bytes({1.0f, -2.5f}));
  EXPECT_EQ(encode_container(c), expected);
}

TEST(Container, DecodesHandBuiltFile) {
  const std::string header =
      R"({"__meta__":{"dtype":"u8","nbytes":7,"offset":8,"shape":[7]},"w":{"dtype":"f32","nbytes":8,"offset":0,"shape":[1,2]}})";
  Bytes payload = f32_bytes({3.0f, 4.0f});
  const std::string doc = R"({"a":1})";
  payload.insert(payload.end(), doc.begin(), doc.end());
  const Container c = decode_container(raw_container(header, payload));
  EXPECT_EQ(c.tensor("w"), Tensor::from_rows({{3, 4}}));
  EXPECT_EQ(c.document("__meta__")["a"], 1);
}

TEST(Container, RoundTripIsBitwise) {
  Rng rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    Container c;
    const std::size_t n = 1 + rng.below(5);
    for (std::size_t i = 0; i < n; ++i) {
      Shape shape;
      const std::size_t rank = rng.below(4);
      for (std::size_t r = 0; r < rank; ++r) shape.push_back(rng.below(4));
      c.tensors["t" + std::to_string(i)] = test::random_tensor(shape, rng);
    }
    c.documents["__config__"] = {{"trial", trial}, {"name", "x"}};
    const Bytes bytes = encode_container(c);
    const Container back = decode_container(bytes);
    EXPECT_EQ(back.tensors, c.tensors);
    EXPECT_EQ(back.documents, c.documents);
    EXPECT_EQ(encode_container(back), bytes);
    EXPECT_EQ(fingerprint(back), fingerprint(c));
  }
}

TEST(Container, PreservesNonFiniteAndSignedZeroBits) {
  Container c;
  c.tensors["x"] = Tensor::vector({-0.0f, std::numeric_limits<float>::infinity(), 1e-45f});
  const Container back = decode_container(encode_container(c));
  EXPECT_TRUE(std::signbit(back.tensor("x")[0]));
  EXPECT_TRUE(std::isinf(back.tensor("x")[1]));
  EXPECT_EQ(back.tensor("x")[2], 1e-45f);
}

TEST(Container, FileRoundTrip) {
  test::TempDir dir("container");
  Container c;
  c.tensors["a"] = Tensor::from_rows({{1, 2}, {3, 4}});
  save_container(c, dir / "a.ntc");
  EXPECT_EQ(load_container(dir / "a.ntc").tensors, c.tensors);
  EXPECT_THROW(load_container(dir / "missing.ntc"), IoError);
}

TEST(ContainerErrors, BadMagic) {
  EXPECT_THROW(decode_container(raw_container("{}", {}, "NOTANTC\0")), BadMagicError);
}

TEST(ContainerErrors, Truncated) {
  EXPECT_THROW(decode_container(Bytes{'N', 'T', 'C'}), TruncatedError);
  Bytes b = raw_container("{}", {});
  b[8] = 100;  // header length beyond the file
  EXPECT_THROW(decode_container(b), TruncatedError);
  EXPECT_THROW(decode_container(raw_container(R"({"x":{"dtype":"f32","nbytes":8,"offset":0,"shape":[2]}})",
                                              f32_bytes({1.0f}))),
               TruncatedError);
}

TEST(ContainerErrors, HeaderProblems) {
  EXPECT_THROW(decode_container(raw_container("{not json", {})), HeaderError);
  EXPECT_THROW(decode_container(raw_container("[]", {})), HeaderError);
  EXPECT_THROW(decode_container(raw_container(R"({"x":{"dtype":"f64","nbytes":8,"offset":0,"shape":[1]}})",
                                              f32_bytes({1.0f, 2.0f}))),
               HeaderError);
  EXPECT_THROW(decode_container(raw_container(R"({"x":{"dtype":"f32","nbytes":4,"offset":0,"shape":[2]}})",
                                              f32_bytes({1.0f, 2.0f}))),
               HeaderError);
  EXPECT_THROW(decode_container(raw_container(R"({"x":{"dtype":"f32","offset":0,"shape":[1]}})",
                                              f32_bytes({1.0f}))),
               HeaderError);
  EXPECT_THROW(decode_container(raw_container(R"({"__m__":{"dtype":"u8","nbytes":2,"offset":0,"shape":[2]}})",
                                              Bytes{'{', '{'})),
               HeaderError);
}

TEST(ContainerErrors, OverlappingEntries) {
  const std::string header =
      R"({"a":{"dtype":"f32","nbytes":8,"offset":0,"shape":[2]},"b":{"dtype":"f32","nbytes":8,"offset":4,"shape":[2]}})";
  EXPECT_THROW(decode_container(raw_container(header, f32_bytes({1, 2, 3}))), OverlapError);
}

TEST(ContainerErrors, MissingWeightNamesKey) {
  const Container c;
  try {
    c.tensor("blocks.0.ln1.gamma");
    FAIL();
  } catch (const MissingWeightError& e) {
    EXPECT_EQ(e.key(), "blocks.0.ln1.gamma");
    EXPECT_NE(std::string(e.what()).find("blocks.0.ln1.gamma"), std::string::npos);
  }
}

TEST(ContainerErrors, ReservedNamesAreChecked) {
  Container c;
  c.tensors["__x__"] = Tensor({1});
  EXPECT_THROW(encode_container(c), ArgumentError);
  Container d;
  d.documents["meta"] = 1;
  EXPECT_THROW(encode_container(d), ArgumentError);
}

TEST(Fingerprint, Fnv1aReferenceValues) {
  EXPECT_EQ(fingerprint(Bytes{}), "cbf29ce484222325");
  EXPECT_EQ(fingerprint(Bytes{'a'}), "af63dc4c8601ec8c");
}

}  // namespace
}  // namespace tba
