#include <cmath>
#include <fstream>

#include <gtest/gtest.h>

#include "geofl/datasets.hpp"
#include "geofl/checkpoint.hpp"
#include "test_support.hpp"

using namespace geofl;
namespace gt = geofl::testing;

TEST(LoadIdx, ParsesAndScales) {
  const auto dir = gt::temp_dir("idx_ok");
  std::vector<std::vector<unsigned char>> px{{0, 255, 128, 1, 2, 3}, {9, 8, 7, 6, 5, 4}};
  gt::write_idx(dir / "img", dir / "lab", 2, 3, px, {7, 0});
  const auto s = load_idx<double>(dir / "img", dir / "lab");
  EXPECT_EQ(s.rows(), 2U);
  EXPECT_EQ(s.cols, 6U);
  EXPECT_EQ(s.labels, (std::vector<int>{7, 0}));
  EXPECT_EQ(s.row(0)[1], 1.0);
  EXPECT_EQ(s.row(0)[0], 0.0);
  EXPECT_DOUBLE_EQ(s.row(0)[2], 128.0 / 255.0);
  EXPECT_DOUBLE_EQ(s.row(1)[5], 4.0 / 255.0);
}

TEST(LoadIdx, RejectsSwappedMagic) {
  const auto dir = gt::temp_dir("idx_magic");
  gt::write_idx(dir / "img", dir / "lab", 1, 1, {{1}}, {1});
  // Passing the image file as labels trips the label magic check.
  EXPECT_THROW(load_idx<double>(dir / "img", dir / "img"), DataError);
  gt::write_idx(dir / "img2", dir / "lab2", 1, 1, {{1}}, {1}, 2049, 2049);
  EXPECT_THROW(load_idx<double>(dir / "img2", dir / "lab2"), DataError);
}

TEST(LoadIdx, RejectsTruncationAndCountMismatch) {
  const auto dir = gt::temp_dir("idx_bad");
  gt::write_idx(dir / "img", dir / "lab", 2, 2, {{1, 2, 3, 4}, {5, 6, 7, 8}}, {1});
  EXPECT_THROW(load_idx<double>(dir / "img", dir / "lab"), DataError);

  gt::write_idx(dir / "img3", dir / "lab3", 2, 2, {{1, 2, 3, 4}, {5, 6, 7, 8}}, {1, 2});
  std::filesystem::resize_file(dir / "img3", 16 + 6);
  EXPECT_THROW(load_idx<double>(dir / "img3", dir / "lab3"), DataError);
  std::filesystem::resize_file(dir / "img3", 10);
  EXPECT_THROW(load_idx<double>(dir / "img3", dir / "lab3"), DataError);
  EXPECT_THROW(load_idx<double>(dir / "missing", dir / "lab3"), DataError);
}

TEST(LoadIdx, FmnistFilesWhenAvailable) {
  const char* root = std::getenv("GEOFL_FMNIST_DIR");
  if (root == nullptr) GTEST_SKIP() << "GEOFL_FMNIST_DIR not set";
  const std::filesystem::path d(root);
  const auto s = load_idx<float>(d / "train-images-idx3-ubyte", d / "train-labels-idx1-ubyte");
  EXPECT_EQ(s.rows(), 60000U);
  EXPECT_EQ(s.cols, 784U);
  for (const int y : s.labels) ASSERT_LT(y, 10);
}

TEST(LoadCifar10, ParsesRecordsInOrder) {
  const auto dir = gt::temp_dir("cifar_ok");
  gt::write_cifar(dir / "b1.bin", {7, 3});
  gt::write_cifar(dir / "b2.bin", {9}, 5);
  const auto s = load_cifar10<double>({dir / "b1.bin", dir / "b2.bin"});
  EXPECT_EQ(s.rows(), 3U);
  EXPECT_EQ(s.cols, 3072U);
  EXPECT_EQ(s.labels, (std::vector<int>{7, 3, 9}));
  EXPECT_DOUBLE_EQ(s.row(0)[255], 1.0);
  EXPECT_DOUBLE_EQ(s.row(2)[0], 5.0 / 255.0);
}

TEST(LoadCifar10, Errors) {
  const auto dir = gt::temp_dir("cifar_bad");
  EXPECT_THROW(load_cifar10<double>({}), DataError);
  gt::write_cifar(dir / "b.bin", {1, 2});
  std::filesystem::resize_file(dir / "b.bin", 3073 + 100);
  EXPECT_THROW(load_cifar10<double>({dir / "b.bin"}), DataError);
  gt::write_cifar(dir / "c.bin", {1, 10});
  EXPECT_THROW(load_cifar10<double>({dir / "c.bin"}), DataError);
}

TEST(SyntheticBlobs, ShapesAndDeterminism) {
  BlobSpec spec;
  spec.samples_per_class = 1;
  spec.test_per_class = 2;
  auto r1 = RandomStream(4);
  auto r2 = RandomStream(4);
  const auto a = synthetic_blobs<double>(spec, r1);
  const auto b = synthetic_blobs<double>(spec, r2);
  EXPECT_EQ(a.train->rows(), spec.num_classes);
  EXPECT_EQ(a.test->rows(), 2 * spec.num_classes);
  EXPECT_EQ(a.train->values, b.train->values);
  EXPECT_EQ(a.test->values, b.test->values);
  for (const double v : a.train->values) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
  for (std::size_t c = 0; c < spec.num_classes; ++c) EXPECT_EQ(a.per_class_index[c].size(), 1U);
}

TEST(SyntheticBlobs, NearestCentroidIsPerfectWhenWellSeparated) {
  BlobSpec spec;
  spec.samples_per_class = 200;
  spec.test_per_class = 200;
  spec.dim = 16;
  spec.separation = 1.0;
  spec.sigma = 0.02;
  auto rng = RandomStream(8);
  const auto src = synthetic_blobs<double>(spec, rng);
  // Class means estimated from train, applied to test.
  std::vector<std::vector<double>> mean(spec.num_classes, std::vector<double>(spec.dim, 0.0));
  for (std::size_t i = 0; i < src.train->rows(); ++i) {
    for (std::size_t d = 0; d < spec.dim; ++d) {
      mean[static_cast<std::size_t>(src.train->labels[i])][d] += src.train->row(i)[d] / 200.0;
    }
  }
  std::size_t correct = 0;
  for (std::size_t i = 0; i < src.test->rows(); ++i) {
    std::size_t best = 0;
    double bd = 1e300;
    for (std::size_t c = 0; c < spec.num_classes; ++c) {
      double d2 = 0;
      for (std::size_t d = 0; d < spec.dim; ++d) {
        d2 += (src.test->row(i)[d] - mean[c][d]) * (src.test->row(i)[d] - mean[c][d]);
      }
      if (d2 < bd) {
        bd = d2;
        best = c;
      }
    }
    if (static_cast<int>(best) == src.test->labels[i]) ++correct;
  }
  EXPECT_EQ(correct, src.test->rows());
}

TEST(SyntheticBlobs, ImpossibleSeparationRejected) {
  BlobSpec spec;
  spec.dim = 1;
  spec.separation = 0.5;
  auto rng = RandomStream(1);
  EXPECT_THROW(synthetic_blobs<double>(spec, rng), ConfigError);
}

TEST(BindPoints, LabelConsistentSharedAndDeterministic) {
  WorldConfig w;
  w.intensity = 20;
  w.num_ues = 40;
  w.seed = 3;
  const auto part = make_partition(w, Labeling::region);
  BlobSpec spec;
  spec.samples_per_class = 5;
  auto rng = RandomStream(2);
  auto src = synthetic_blobs<double>(spec, rng);
  auto b1 = RandomStream(9);
  auto b2 = RandomStream(9);
  const auto binding = bind_points(part, src, b1);
  EXPECT_EQ(binding, bind_points(part, src, b2));
  for (std::size_t p = 0; p < binding.size(); ++p) {
    ASSERT_EQ(src.train->labels[binding[p]], part.points.labels[p]);
  }
  const auto fd = make_federated_data(part, src, 9);
  ASSERT_EQ(fd.clients.size(), 40U);
  for (std::size_t k = 0; k < 40; ++k) {
    ASSERT_EQ(fd.clients[k].size(), part.capture_lists[k].size());
    for (std::size_t j = 0; j < fd.clients[k].size(); ++j) {
      // A shared point maps to the same row for every capturing UE.
      EXPECT_EQ(fd.clients[k].rows()[j], fd.binding[part.capture_lists[k][j]]);
      EXPECT_EQ(fd.clients[k].label(j), part.points.labels[part.capture_lists[k][j]]);
    }
  }
}

TEST(BindPoints, MissingClassRejected) {
  WorldConfig w;
  w.intensity = 5;
  w.num_ues = 3;
  const auto part = make_partition(w, Labeling::region);
  LabeledSamples<double> train;
  train.cols = 1;
  train.push_back(std::vector<double>{0.5}, 0);
  const auto src = make_source(std::move(train), LabeledSamples<double>{}, 10);
  auto rng = RandomStream(1);
  EXPECT_THROW(bind_points(part, src, rng), DataError);
}

TEST(BindPoints, DuplicatesAllowedBeyondClassSize) {
  // Points per class: 500 * 14 * strip width. Inner strips are 1.2 wide; the
  // edge strips absorb the margin and are 2.2 wide. 3 train rows per class
  // means rows are reused.
  WorldConfig w;
  w.intensity = 500;
  w.num_ues = 1;
  const auto part = make_partition(w, Labeling::region);
  BlobSpec spec;
  spec.samples_per_class = 3;
  auto rng = RandomStream(2);
  const auto src = synthetic_blobs<double>(spec, rng);
  auto b = RandomStream(3);
  const auto binding = bind_points(part, src, b);
  std::vector<std::size_t> per_class(10, 0);
  for (std::size_t p = 0; p < binding.size(); ++p) ++per_class[static_cast<std::size_t>(part.points.labels[p])];
  for (std::size_t c = 0; c < 10; ++c) {
    const double expect = 500.0 * 14.0 * (c == 0 || c == 9 ? 2.2 : 1.2);
    EXPECT_NEAR(static_cast<double>(per_class[c]), expect, 4 * std::sqrt(expect)) << c;
  }
}

TEST(Checkpoint, BitExactRoundTrip) {
  const MlpArchitecture a{13, 7, 5, true};
  auto rng = RandomStream(4);
  auto p = init_params<double>(a, rng);
  p.values[3] = -0.0;
  p.values[4] = 1e-310;  // subnormal
  const Checkpoint<double> ck{p, 123456789ULL, 42};
  const auto dir = gt::temp_dir("ckpt");
  save_checkpoint(dir / "m.ckpt", ck);
  const auto back = load_checkpoint<double>(dir / "m.ckpt");
  EXPECT_EQ(back.seed, ck.seed);
  EXPECT_EQ(back.round, 42U);
  EXPECT_EQ(back.params.arch, a);
  ASSERT_EQ(back.params.size(), p.size());
  EXPECT_EQ(std::memcmp(back.params.values.data(), p.values.data(), p.size() * sizeof(double)), 0);
  EXPECT_EQ(encode_checkpoint(back), encode_checkpoint(ck));
}

TEST(Checkpoint, HeaderLayoutIsLittleEndian) {
  ModelParams<float> p(MlpArchitecture{1, 1, 1, false});
  p.values = {1.0F, -2.0F};
  const auto buf = encode_checkpoint(Checkpoint<float>{p, 0x0102030405060708ULL, 3});
  ASSERT_EQ(buf.size(), 72U + 8U);
  EXPECT_EQ(std::string(buf.begin(), buf.begin() + 8), "GEOFLCK1");
  EXPECT_EQ(buf[12], 4);
  EXPECT_EQ(buf[48], 0x08);
  EXPECT_EQ(buf[55], 0x01);
  EXPECT_EQ(buf[56], 3);
  // 1.0f = 0x3F800000
  EXPECT_EQ(static_cast<unsigned char>(buf[75]), 0x3F);
  EXPECT_EQ(static_cast<unsigned char>(buf[74]), 0x80);
}

TEST(Checkpoint, RejectsCorruption) {
  const MlpArchitecture a{3, 2, 2, true};
  const Checkpoint<double> ck{ModelParams<double>(a), 1, 1};
  auto buf = encode_checkpoint(ck);
  auto bad_magic = buf;
  bad_magic[0] = 'X';
  EXPECT_THROW(decode_checkpoint<double>(bad_magic), DataError);
  auto short_buf = buf;
  short_buf.pop_back();
  EXPECT_THROW(decode_checkpoint<double>(short_buf), DataError);
  EXPECT_THROW(decode_checkpoint<float>(buf), DataError);
  EXPECT_THROW(decode_checkpoint<double>(std::vector<char>(10)), DataError);
}
