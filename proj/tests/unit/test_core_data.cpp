#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <random>

#include "perfuseg/error.hpp"
#include "perfuseg/io.hpp"
#include "perfuseg/labels.hpp"
#include "perfuseg/tiling.hpp"
#include "perfuseg/volume.hpp"

using namespace perfuseg;

namespace {

ErrorKind kind_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "expected an error";
  return ErrorKind::Validation;
}

CtpVolume ramp_volume(int frames, int slices, int h, int w) {
  VolumeGeometry g;
  g.frames = frames;
  g.slices = slices;
  g.height = h;
  g.width = w;
  CtpVolume v("P", g);
  for (std::size_t i = 0; i < v.voxels().size(); ++i) v.voxels()[i] = static_cast<float>(i % 9973);
  return v;
}

LabelMap random_labels(int h, int w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const int values[4] = {0, 76, 150, 255};
  LabelMap m;
  m.pixels = ImageF(h, w);
  for (Eigen::Index i = 0; i < m.pixels.size(); ++i) m.pixels.data()[i] = static_cast<float>(values[rng() % 4]);
  return m;
}

ImageF patch_with(std::initializer_list<std::pair<int, int>> counts) {
  ImageF p(16, 16);
  int i = 0;
  for (auto [value, n] : counts)
    for (int k = 0; k < n; ++k) p.data()[i++] = static_cast<float>(value);
  return p;
}

}  // namespace

TEST(Labels, TargetValueBijection) {
  for (auto c : kAllClasses) EXPECT_EQ(class_from_target(target_value(c)), c);
  EXPECT_EQ(target_value(TissueClass::Background), 255);
  EXPECT_EQ(target_value(TissueClass::Brain), 0);
  EXPECT_EQ(target_value(TissueClass::Penumbra), 76);
  EXPECT_EQ(target_value(TissueClass::Core), 150);
  EXPECT_FALSE(class_from_target(77).has_value());
}

TEST(Labels, GroundTruthValidation) {
  auto m = random_labels(4, 4, 1);
  EXPECT_NO_THROW(m.validate_ground_truth());
  m.pixels(1, 1) = 100;
  EXPECT_EQ(kind_of([&] { m.validate_ground_truth(); }), ErrorKind::LabelEncoding);
}

TEST(Tiling, GridCounts) {
  EXPECT_EQ(make_grid(512, 512, 16).tile_count(), 1024u);
  const auto g8 = make_grid(512, 512, 8);
  EXPECT_EQ(g8.tile_count(), 63u * 63u);
  EXPECT_EQ(g8.rows.back(), 496);
  EXPECT_EQ(make_grid(16, 16, 16).tile_count(), 1u);
  // Edge anchoring for a non-multiple extent.
  EXPECT_EQ(tile_offsets(40, 16, 16), (std::vector<int>{0, 16, 24}));
  EXPECT_EQ(kind_of([] { make_grid(8, 32, 16); }), ErrorKind::Config);
  EXPECT_EQ(kind_of([] { make_grid(32, 32, 17); }), ErrorKind::Config);
}

TEST(Tiling, CoverageIsComplete) {
  for (int stride : {1, 5, 8, 13, 16}) {
    const auto g = make_grid(53, 40, stride);
    EXPECT_GE(g.coverage().minCoeff(), 1) << stride;
    for (int r : g.rows) EXPECT_TRUE(r % stride == 0 || r == 53 - 16);
  }
}

TEST(Tiling, SingleTileEqualsLabelMap) {
  auto v = ramp_volume(3, 1, 16, 16);
  auto labels = random_labels(16, 16, 3);
  const auto tiles = tile_slice(v, 0, labels, 16);
  ASSERT_EQ(tiles.size(), 1u);
  EXPECT_TRUE((tiles[0].target == labels.pixels).all());
  EXPECT_EQ(tiles[0].frames, 3);
  EXPECT_EQ(tiles[0].input[2 * 256 + 5 * 16 + 7], v.at(2, 0, 5, 7));
}

TEST(Tiling, StrideSixteenComposeRoundTrip) {
  auto v = ramp_volume(2, 2, 64, 48);
  auto labels = random_labels(64, 48, 9);
  labels.slice_index = 1;
  const auto tiles = tile_slice(v, 1, labels, 16);
  std::vector<ImageF> patches;
  for (const auto& t : tiles) patches.push_back(t.target);
  const auto grid = make_grid(64, 48, 16);
  EXPECT_TRUE((grid.compose(patches) == labels.pixels).all());
  // Overlapping identity composition also reproduces the map.
  const auto tiles8 = tile_slice(v, 1, labels, 8);
  std::vector<ImageF> p8;
  for (const auto& t : tiles8) p8.push_back(t.target);
  EXPECT_TRUE((make_grid(64, 48, 8).compose(p8) == labels.pixels).all());
}

TEST(Tiling, MisalignedLabelsRejected) {
  auto v = ramp_volume(2, 1, 32, 32);
  auto labels = random_labels(32, 16, 1);
  EXPECT_EQ(kind_of([&] { tile_slice(v, 0, labels, 16); }), ErrorKind::Alignment);
}

TEST(Tiling, TileLabelRule) {
  EXPECT_EQ(assign_tile_label(patch_with({{0, 256}})), TissueClass::Brain);
  EXPECT_EQ(assign_tile_label(patch_with({{76, 136}, {0, 120}})), TissueClass::Penumbra);
  EXPECT_EQ(assign_tile_label(patch_with({{150, 128}, {0, 128}})), TissueClass::Core);
  EXPECT_EQ(assign_tile_label(patch_with({{255, 128}, {0, 128}})), TissueClass::Brain);
  EXPECT_EQ(kind_of([] { assign_tile_label(patch_with({{3, 256}})); }), ErrorKind::LabelEncoding);
}

TEST(Augment, NoCoreTilesIsNoOp) {
  auto v = ramp_volume(2, 1, 32, 32);
  LabelMap labels;
  labels.pixels = ImageF::Zero(32, 32);
  auto tiles = tile_slice(v, 0, labels, 16);
  label_tiles(tiles);
  const auto out = augment_core_tiles(tiles, 1);
  ASSERT_EQ(out.size(), tiles.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    EXPECT_EQ(out[i].input, tiles[i].input);
    EXPECT_FALSE(out[i].augmented());
  }
}

TEST(Augment, CoreTileGetsFiveVariants) {
  auto v = ramp_volume(3, 1, 32, 32);
  auto labels = random_labels(32, 32, 4);
  labels.pixels.block(0, 16, 16, 16) = 150;
  auto tiles = tile_slice(v, 0, labels, 16);
  label_tiles(tiles);
  const auto out = augment_core_tiles(tiles, 1);
  int core = 0;
  for (const auto& s : out) {
    if (s.label == TissueClass::Core) ++core;
    if (s.augmented()) {
      EXPECT_EQ(s.label, TissueClass::Core);
      std::vector<float> a(s.target.data(), s.target.data() + 256);
      std::vector<float> b(out[1].target.data(), out[1].target.data() + 256);
      std::sort(a.begin(), a.end());
      std::sort(b.begin(), b.end());
      EXPECT_EQ(a, b);
    }
  }
  EXPECT_EQ(core, 6);
  EXPECT_EQ(out.size(), tiles.size() + 5);
}

TEST(Augment, FourQuarterTurnsAreIdentity) {
  auto v = ramp_volume(4, 1, 16, 16);
  auto labels = random_labels(16, 16, 2);
  auto s = tile_slice(v, 0, labels, 16)[0];
  auto r = s;
  for (int i = 0; i < 4; ++i) r = transform_sample(r, TileTransform::Rot90);
  EXPECT_EQ(r.input, s.input);
  EXPECT_TRUE((r.target == s.target).all());
  // Every frame is rotated with the target.
  auto once = transform_sample(s, TileTransform::Rot90);
  const auto rotated = transform_patch(s.target, TileTransform::Rot90);
  EXPECT_TRUE((once.target == rotated).all());
  for (int t = 0; t < 4; ++t) {
    ImageF frame = ConstImageMap<float>(s.input.data() + t * 256, 16, 16);
    ImageF want = transform_patch(frame, TileTransform::Rot90);
    EXPECT_TRUE((ConstImageMap<float>(once.input.data() + t * 256, 16, 16) == want).all());
  }
}

TEST(Io, CtpvRoundTrip) {
  auto v = ramp_volume(3, 2, 5, 7);
  v.set_patient_id("abc");
  const auto bytes = io::encode_ctpv(v);
  EXPECT_EQ(bytes.size(), 8 + 4 * 4 + 3 * 4 + 3 * 2 * 5 * 7 * 4u);
  EXPECT_EQ(io::decode_ctpv(bytes, "abc"), v);
  auto cut = bytes;
  cut.resize(cut.size() - 4);
  EXPECT_EQ(kind_of([&] { io::decode_ctpv(cut, "abc"); }), ErrorKind::IncompleteFile);
  cut = bytes;
  cut[0] = 'X';
  EXPECT_EQ(kind_of([&] { io::decode_ctpv(cut, "abc"); }), ErrorKind::Format);
}

TEST(Io, NonFiniteVoxelsRejected) {
  auto v = ramp_volume(1, 1, 2, 2);
  v.voxels()[1] = std::numeric_limits<float>::quiet_NaN();
  EXPECT_THROW(v.validate(), Error);
}

TEST(Io, PgmRoundTrip) {
  const auto labels = random_labels(9, 13, 5);
  const auto bytes = io::encode_pgm(labels.to_bytes());
  const auto back = LabelMap::from_bytes(0, io::decode_pgm(bytes));
  EXPECT_TRUE((back.pixels == labels.pixels).all());
  EXPECT_EQ(io::encode_pgm(back.to_bytes()), bytes);
  const auto path = std::filesystem::temp_directory_path() / "perfuseg_pgm_test.pgm";
  io::write_label_map(labels, path);
  EXPECT_TRUE((io::read_label_map(path, 0).pixels == labels.pixels).all());
  std::filesystem::remove(path);
  EXPECT_EQ(kind_of([] { io::read_pgm("/nonexistent/dir/x.pgm"); }), ErrorKind::Io);
}
