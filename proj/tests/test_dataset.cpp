#include <gtest/gtest.h>

#include <cstring>
#include <sstream>

#include "pcb/dataset.hpp"
#include "pcb/poisoner.hpp"
#include "test_helpers.hpp"

namespace pcb {
namespace {

std::vector<std::uint8_t> f32_bytes(std::initializer_list<float> values) {
  std::vector<std::uint8_t> out;
  for (float v : values) {
    std::uint8_t b[4];
    std::memcpy(b, &v, 4);
    out.insert(out.end(), b, b + 4);
  }
  return out;
}

TEST(Xyzf, DecodesSingleRecord) {
  const auto cloud = decode_xyzf(f32_bytes({1, 2, 3, 0.5f}), 1);
  ASSERT_EQ(cloud.size(), 1u);
  EXPECT_EQ(cloud.positions.row(0), Eigen::RowVector3d(1, 2, 3));
  EXPECT_EQ(cloud.features(0, 0), 0.5);
}

TEST(Xyzf, RejectsEmptyMisalignedAndNonFinite) {
  EXPECT_THROW(decode_xyzf({}, 1), FormatError);
  auto bytes = f32_bytes({1, 2, 3, 0.5f});
  bytes.push_back(0);
  EXPECT_THROW(decode_xyzf(bytes, 1), FormatError);
  EXPECT_THROW(decode_xyzf(f32_bytes({1, 2, std::numeric_limits<float>::infinity(), 0.5f}), 1), FormatError);
}

TEST(Xyzf, RoundTripThroughFile) {
  auto cloud = test::random_cloud(7, 2, 1);
  // float32 storage: start from float-representable values.
  cloud.positions = cloud.positions.cast<float>().cast<double>();
  cloud.features = cloud.features.cast<float>().cast<double>();
  const auto dir = test::scratch_dir("xyzf");
  binio::write_file_atomic(dir / "a.xyzf", encode_xyzf(cloud));
  EXPECT_EQ(load_xyzfeat_binary(dir / "a.xyzf", 2), cloud);
}

TEST(Off, SingleTriangleNormals) {
  std::istringstream in("OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n");
  const auto cloud = sample_mesh(parse_off(in), 4, 3);
  ASSERT_EQ(cloud.size(), 4u);
  for (Eigen::Index i = 0; i < 4; ++i) {
    EXPECT_EQ(cloud.features.row(i), Eigen::RowVector3d(0, 0, 1));
    EXPECT_EQ(cloud.positions(i, 2), 0.0);
  }
}

TEST(Off, ReversedWindingFlipsNormal) {
  std::istringstream in("OFF 3 1 0\n0 0 0\n0 1 0\n1 0 0\n3 0 1 2\n");
  const auto cloud = sample_mesh(parse_off(in), 2, 3);
  EXPECT_EQ(cloud.features.row(0), Eigen::RowVector3d(0, 0, -1));
}

TEST(Off, DegenerateMeshRejected) {
  std::istringstream in("OFF\n3 1 0\n0 0 0\n1 0 0\n2 0 0\n3 0 1 2\n");
  EXPECT_THROW(sample_mesh(parse_off(in), 4, 3), FormatError);
}

TEST(Off, MalformedInputs) {
  for (const char* text : {"", "PLY\n", "OFF\n3 1 0\n0 0 0\n1 0 0\n", "OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 9\n",
                           "OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n2 0 1\n"}) {
    std::istringstream in(text);
    EXPECT_THROW(parse_off(in), FormatError) << text;
  }
}

TEST(Off, CubeNormalsAreFaceNormals) {
  std::istringstream in(
      "OFF\n# unit cube\n8 6 0\n"
      "0 0 0\n1 0 0\n1 1 0\n0 1 0\n0 0 1\n1 0 1\n1 1 1\n0 1 1\n"
      "4 0 3 2 1\n4 4 5 6 7\n4 0 1 5 4\n4 2 3 7 6\n4 1 2 6 5\n4 0 4 7 3\n");
  const auto cloud = sample_mesh(parse_off(in), 600, 11);
  const std::vector<Eigen::RowVector3d> allowed{{0, 0, -1}, {0, 0, 1}, {0, -1, 0}, {0, 1, 0}, {1, 0, 0}, {-1, 0, 0}};
  for (Eigen::Index i = 0; i < 600; ++i) {
    const Eigen::RowVector3d f = cloud.features.row(i);
    int axis = -1;
    for (std::size_t a = 0; a < allowed.size(); ++a)
      if ((f - allowed[a]).cwiseAbs().maxCoeff() <= 1e-12) axis = static_cast<int>(a);
    ASSERT_GE(axis, 0) << f;
    // The point lies on the face the normal belongs to.
    const Eigen::RowVector3d p = cloud.positions.row(i);
    const int k = axis / 2 == 0 ? 2 : (axis < 4 ? 1 : 0);
    const double expect = allowed[static_cast<std::size_t>(axis)](k) > 0 ? 1.0 : 0.0;
    EXPECT_NEAR(p(k), expect, 1e-12);
  }
}

TEST(Synthetic, CountsAndBalance) {
  SyntheticSpec spec;
  spec.classes = {{ShapeFamily::sphere, FeatureLaw::beta(2, 8)}, {ShapeFamily::box, FeatureLaw::beta(8, 2)}};
  spec.n = 64;
  spec.train_per_class = 10;
  spec.test_per_class = 0;
  const auto data = gen_synthetic(spec, 4);
  EXPECT_EQ(data.train.size(), 20u);
  EXPECT_EQ(data.train.class_counts(), (std::vector<std::size_t>{10, 10}));
  data.train.validate();
  EXPECT_EQ(gen_synthetic(spec, 4).train, data.train);
  EXPECT_NE(gen_synthetic(spec, 5).train, data.train);
}

TEST(Synthetic, BetaLawMeansSeparate) {
  SyntheticSpec spec;
  spec.classes = {{ShapeFamily::sphere, FeatureLaw::beta(2, 8)}, {ShapeFamily::box, FeatureLaw::beta(8, 2)}};
  spec.n = 64;
  spec.train_per_class = 10;
  const auto data = gen_synthetic(spec, 4);
  double mean[2] = {0, 0};
  for (const auto& lc : data.train.clouds) mean[lc.label] += lc.cloud.features.mean() / 10.0;
  // Beta(2,8) has mean 0.2, Beta(8,2) mean 0.8.
  EXPECT_NEAR(mean[0], 0.2, 0.02);
  EXPECT_NEAR(mean[1], 0.8, 0.02);
  EXPECT_GT(mean[1] - mean[0], 0.3);
}

TEST(Synthetic, NormalsLawGivesUnitFeatures) {
  SyntheticSpec spec;
  spec.classes = {{ShapeFamily::torus, FeatureLaw::normals()}, {ShapeFamily::cylinder, FeatureLaw::normals()}};
  spec.c = 3;
  spec.n = 50;
  spec.train_per_class = 2;
  const auto data = gen_synthetic(spec, 1);
  for (const auto& lc : data.train.clouds)
    EXPECT_LE((lc.cloud.features.rowwise().norm().array() - 1.0).abs().maxCoeff(), 1e-12);
  spec.c = 1;
  EXPECT_THROW(gen_synthetic(spec, 1), InvalidArgument);
}

TEST(Synthetic, CloudsAreNormalized) {
  const auto spec = default_synthetic_spec();
  auto small = spec;
  small.train_per_class = 3;
  small.test_per_class = 1;
  const auto data = gen_synthetic(small, 2);
  EXPECT_EQ(data.train.size(), 12u);
  EXPECT_EQ(data.test.size(), 4u);
  for (const auto& lc : data.train.clouds) {
    EXPECT_NEAR(lc.cloud.positions.rowwise().norm().maxCoeff(), 1.0, 1e-9);
    EXPECT_GE(lc.cloud.features.minCoeff(), 0.0);
    EXPECT_LE(lc.cloud.features.maxCoeff(), 1.0);
  }
}

Dataset poisoned_sample() {
  SyntheticSpec spec;
  spec.classes = {{ShapeFamily::sphere, FeatureLaw::beta(2, 8)}, {ShapeFamily::box, FeatureLaw::beta(8, 2)}};
  spec.n = 40;
  spec.train_per_class = 10;
  auto d = gen_synthetic(spec, 9).train;
  PoisonSpec ps;
  ps.trigger = Trigger::in_box(Vec::Constant(1, 0.3), 0, 1);
  ps.w = 10;
  ps.rate = 0.2;
  return poison_dataset(d, ps, 1).dataset;
}

TEST(Pcbd, RoundTripIsExact) {
  const auto d = poisoned_sample();
  ASSERT_TRUE(d.poison.has_value());
  EXPECT_EQ(decode_dataset(encode_dataset(d)), d);
  const auto dir = test::scratch_dir("pcbd");
  save_dataset(d, dir / "d.pcbd");
  EXPECT_EQ(load_dataset(dir / "d.pcbd"), d);
  EXPECT_FALSE(std::filesystem::exists(dir / "d.pcbd.partial"));
}

TEST(Pcbd, EmptyDatasetRoundTrips) {
  Dataset d;
  d.K = 3;
  d.c = 2;
  d.n = 16;
  const auto back = decode_dataset(encode_dataset(d));
  EXPECT_EQ(back, d);
  EXPECT_TRUE(back.empty());
}

TEST(Pcbd, CorruptionIsDetected) {
  const auto bytes = encode_dataset(poisoned_sample());
  for (std::size_t pos : {std::size_t{5}, bytes.size() / 2, bytes.size() - 9}) {
    auto bad = bytes;
    bad[pos] ^= 0x10;
    EXPECT_THROW(decode_dataset(bad), FormatError) << pos;
  }
  auto truncated = bytes;
  truncated.resize(bytes.size() - 3);
  EXPECT_THROW(decode_dataset(truncated), FormatError);
}

TEST(Pcbd, VersionMismatchRejected) {
  auto bytes = encode_dataset(poisoned_sample());
  bytes[4] = 99;
  // Re-seal so only the version check can fire.
  const auto h = binio::fnv1a64(bytes.data(), bytes.size() - 8);
  for (int i = 0; i < 8; ++i) bytes[bytes.size() - 8 + static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(h >> (8 * i));
  try {
    decode_dataset(bytes);
    FAIL() << "expected a format error";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("version"), std::string::npos) << e.what();
  }
}

}  // namespace
}  // namespace pcb
