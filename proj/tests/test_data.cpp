#include "support.hpp"

#include <cmath>
#include <fstream>
#include <random>
#include <set>

#include "aging/data.hpp"
#include "aging/errors.hpp"

using namespace aging;
namespace fs = std::filesystem;

namespace {

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p);
  out << text;
}

Image8 solid(std::int64_t w, std::int64_t h, std::uint8_t v) {
  Image8 img;
  img.width = w;
  img.height = h;
  img.rgb.assign(static_cast<std::size_t>(w * h * 3), v);
  return img;
}

// Counts dark bands crossed by rays from the face center, skipping rays that
// pass near a marker spot. Returns the count shared by every clean ray, or -1.
int count_rings_by_rays(std::uint64_t identity_seed, double age) {
  constexpr std::int64_t side = 256;
  const auto img = synthesize_face({identity_seed, age, side});
  const auto markers = identity_markers(identity_seed);
  const double center_row = 0.56;
  const double center_col = 0.5;
  const double reach = 0.34;
  int agreed = -2;
  for (int k = 0; k < 64; ++k) {
    const double theta = 2.0 * M_PI * k / 64.0;
    const double dr = std::sin(theta);
    const double dc = std::cos(theta);
    bool blocked = false;
    for (const auto& s : markers.spots) {
      const double along = std::clamp((s.row - center_row) * dr + (s.col - center_col) * dc, 0.0, reach);
      if (std::hypot(center_row + along * dr - s.row, center_col + along * dc - s.col) < 0.065) blocked = true;
    }
    if (blocked) continue;
    std::vector<double> lum;
    for (double r = 0.01; r <= reach; r += 0.5 / side) {
      const auto row = static_cast<std::int64_t>((center_row + r * dr) * side);
      const auto col = static_cast<std::int64_t>((center_col + r * dc) * side);
      lum.push_back(img.select(1, row).select(1, col).mean().item<double>());
    }
    const double skin = *std::max_element(lum.begin(), lum.end());
    const double floor_lum = -1.0;
    const double threshold = skin - 0.15 * (skin - floor_lum);
    int bands = 0;
    bool inside = false;
    for (double l : lum) {
      if (l < threshold && !inside) ++bands;
      inside = l < threshold;
    }
    if (agreed == -2) agreed = bands;
    if (agreed != bands) return -1;
  }
  return agreed;
}

}  // namespace

TEST_CASE("png round trip and range mapping") {
  const auto dir = testing::scratch_dir("png");
  Image8 img = solid(3, 2, 0);
  for (std::size_t i = 0; i < img.rgb.size(); ++i) img.rgb[i] = static_cast<std::uint8_t>(i * 13);
  write_png(dir / "a.png", img);
  const auto back = read_png(dir / "a.png");
  CHECK(back.width == 3);
  CHECK(back.height == 2);
  CHECK(back.rgb == img.rgb);

  const auto profile = SizeProfile::desk();
  write_png(dir / "black.png", solid(64, 64, 0));
  write_png(dir / "white.png", solid(64, 64, 255));
  write_png(dir / "gray.png", solid(64, 64, 128));
  CHECK(torch::equal(load_image(dir / "black.png", profile), -torch::ones({3, 64, 64})));
  CHECK(torch::equal(load_image(dir / "white.png", profile), torch::ones({3, 64, 64})));
  const double gray = 2.0 * (128.0 / 255.0) - 1.0;
  CHECK(gray == doctest::Approx(0.00392).epsilon(1e-3));
  CHECK((load_image(dir / "gray.png", profile) - gray).abs().max().item<double>() <= 1e-6);
}

TEST_CASE("load_image resizes to the profile side") {
  const auto dir = testing::scratch_dir("resize");
  write_png(dir / "small.png", solid(20, 30, 255));
  const auto t = load_image(dir / "small.png", SizeProfile::desk());
  CHECK(t.sizes() == torch::IntArrayRef({3, 64, 64}));
  CHECK((t - 1.0).abs().max().item<double>() <= 1e-6);
}

TEST_CASE("load_image is idempotent under lossless re-encode") {
  const auto dir = testing::scratch_dir("idem");
  write_png(dir / "face.png", tensor_to_image(synthesize_face({5, 33.0, 64})));
  const auto first = load_image(dir / "face.png", SizeProfile::desk());
  write_png(dir / "again.png", tensor_to_image(first));
  CHECK(torch::equal(load_image(dir / "again.png", SizeProfile::desk()), first));
}

TEST_CASE("decode failures name the file") {
  const auto dir = testing::scratch_dir("bad");
  write_file(dir / "junk.png", "not a png");
  try {
    read_png(dir / "junk.png");
    FAIL("expected IoError");
  } catch (const IoError& e) {
    CHECK(std::string(e.what()).find("junk.png") != std::string::npos);
  }
  CHECK_THROWS_AS(load_image(dir / "missing.png", SizeProfile::desk()), IoError);
}

TEST_CASE("load_manifest") {
  const auto dir = testing::scratch_dir("manifest");
  SUBCASE("header only") {
    write_file(dir / "m.csv", "path,age,gender,split\n");
    CHECK(load_manifest(dir / "m.csv").empty());
  }
  SUBCASE("golden three-row file") {
    write_file(dir / "m.csv", "path,age,gender,split\nb/2.png,40,f,test\na/1.png,15,,train\nc.png,99,m,train\n");
    const auto entries = load_manifest(dir / "m.csv");
    const std::vector<ManifestEntry> expected = {{"b/2.png", 40, "f", Split::kTest},
                                                 {"a/1.png", 15, "", Split::kTrain},
                                                 {"c.png", 99, "m", Split::kTrain}};
    CHECK((entries == expected));
    CHECK(resolve_entry(dir / "m.csv", entries[0]) == dir / "b/2.png");
    CHECK(filter_split(entries, Split::kTest).size() == 1);
  }
  SUBCASE("age out of range names the row") {
    write_file(dir / "m.csv", "path,age,gender,split\na.png,30,,train\nb.png,150,,train\n");
    try {
      load_manifest(dir / "m.csv");
      FAIL("expected ValidationError");
    } catch (const ValidationError& e) {
      CHECK(std::string(e.what()).find(":3:") != std::string::npos);
      CHECK(std::string(e.what()).find("150") != std::string::npos);
    }
  }
  SUBCASE("malformed rows") {
    write_file(dir / "m.csv", "path,age,gender,split\na.png,30,train\n");
    CHECK_THROWS_AS(load_manifest(dir / "m.csv"), ValidationError);
    write_file(dir / "m.csv", "path,age,gender,split\na.png,thirty,,train\n");
    CHECK_THROWS_AS(load_manifest(dir / "m.csv"), ValidationError);
    write_file(dir / "m.csv", "path,age,gender,split\na.png,30,,valid\n");
    CHECK_THROWS_AS(load_manifest(dir / "m.csv"), ValidationError);
    write_file(dir / "m.csv", "file,age\n");
    CHECK_THROWS_AS(load_manifest(dir / "m.csv"), ValidationError);
  }
  SUBCASE("missing file") { CHECK_THROWS_AS(load_manifest(dir / "none.csv"), IoError); }
  SUBCASE("write then load round trip") {
    const std::vector<ManifestEntry> entries = {{"x/1.png", 0, "", Split::kTrain}, {"y.png", 71, "f", Split::kTest}};
    write_manifest(dir / "rt.csv", entries);
    CHECK((load_manifest(dir / "rt.csv") == entries));
  }
}

TEST_CASE("synthesize_face") {
  const SyntheticFaceSpec spec{42, 37.5, 64};
  const auto a = synthesize_face(spec);
  CHECK(a.sizes() == torch::IntArrayRef({3, 64, 64}));
  CHECK(torch::equal(a, synthesize_face(spec)));
  CHECK(a.min().item<double>() >= -1.0);
  CHECK(a.max().item<double>() <= 1.0);
  CHECK_THROWS_AS(synthesize_face({1, 14.0, 64}), ValidationError);
  CHECK_THROWS_AS(synthesize_face({1, 71.0, 64}), ValidationError);
}

TEST_CASE("ring count is floor(age / 10)") {
  CHECK(count_rings_by_rays(7, 47.0) == 4);
  // Identities whose markers hide every ray (-2) cannot be read this way.
  int checked = 0;
  for (std::uint64_t id = 1; id <= 8; ++id) {
    if (count_rings_by_rays(id, 15.0) == -2) continue;
    ++checked;
    for (double age : {15.0, 19.9, 20.0, 33.0, 58.0, 70.0}) {
      INFO("identity " << id << " age " << age);
      CHECK(count_rings_by_rays(id, age) == static_cast<int>(std::floor(age / 10.0)));
    }
  }
  CHECK(checked >= 3);
  const auto f = oracle_features(synthesize_face({7, 47.0, 64}));
  REQUIRE(f.has_value());
  CHECK(f->ring_count == std::optional<std::int64_t>(4));
}

TEST_CASE("identity features are age-invariant") {
  for (std::uint64_t id = 0; id < 20; ++id) {
    const auto markers = identity_markers(id);
    CHECK((markers == identity_markers(id)));
    const auto young = detect_markers(synthesize_face({id, 20.0, 64}));
    const auto old = detect_markers(synthesize_face({id, 60.0, 64}));
    REQUIRE(young.size() == markers.spots.size());
    REQUIRE(old.size() == young.size());
    // Detection order follows blob area, so pair markers by hue.
    for (const auto& y : young) {
      const auto match = std::min_element(old.begin(), old.end(), [&](const auto& a, const auto& b) {
        return std::abs(a.hue - y.hue) < std::abs(b.hue - y.hue);
      });
      CHECK(std::abs(y.row - match->row) <= 1.0 / 64);
      CHECK(std::abs(y.col - match->col) <= 1.0 / 64);
    }
  }
}

TEST_CASE("oracle age readout on clean renders") {
  SUBCASE("age 40") {
    const auto est = oracle_age_readout(synthesize_face({3, 40.0, 64}));
    REQUIRE(est.has_value());
    CHECK(*est >= 39.0);
    CHECK(*est <= 41.0);
  }
  SUBCASE("every integer and half age across many identities") {
    double worst = 0.0;
    for (std::uint64_t id = 100; id < 130; ++id) {
      for (double age = 15.0; age <= 70.0; age += 0.5) {
        const auto est = oracle_age_readout(synthesize_face({id, age, 64}));
        REQUIRE(est.has_value());
        worst = std::max(worst, std::abs(*est - age));
      }
    }
    CHECK(worst <= 1.0);
  }
  SUBCASE("all-zero image is unreadable") {
    CHECK_FALSE(oracle_age_readout(torch::zeros({3, 64, 64})).has_value());
    CHECK_FALSE(oracle_age_readout(-torch::ones({3, 64, 64})).has_value());
  }
}

TEST_CASE("oracle age readout under uniform noise") {
  std::mt19937_64 rng(99);
  torch::manual_seed(99);
  std::uniform_int_distribution<std::uint64_t> ids(0, 1u << 30);
  int inside = 0;
  for (int i = 0; i < 100; ++i) {
    const auto clean = synthesize_face({ids(rng), 40.0, 64});
    const auto noisy = (clean + (torch::rand_like(clean) * 0.1 - 0.05)).clamp(-1.0, 1.0);
    const auto est = oracle_age_readout(noisy);
    if (est && *est >= 37.0 && *est <= 43.0) ++inside;
  }
  CHECK(inside == 100);
}

TEST_CASE("oracle identity distance") {
  SUBCASE("identical images") {
    const auto a = synthesize_face({8, 30.0, 64});
    CHECK(oracle_identity_distance(a, a) == 0.0);
  }
  SUBCASE("same identity at two ages") {
    for (std::uint64_t id = 0; id < 30; ++id) {
      CHECK(oracle_identity_distance(synthesize_face({id, 20.0, 64}), synthesize_face({id, 60.0, 64})) <= 0.02);
    }
  }
  SUBCASE("different identities, 1000 random pairs") {
    std::mt19937_64 rng(17);
    std::uniform_real_distribution<double> age(15.0, 70.0);
    constexpr int kIdentities = 120;
    std::vector<torch::Tensor> faces;
    for (int i = 0; i < kIdentities; ++i) faces.push_back(synthesize_face({static_cast<std::uint64_t>(1000 + i), age(rng), 64}));
    std::uniform_int_distribution<int> pick(0, kIdentities - 1);
    int far = 0;
    for (int n = 0; n < 1000; ++n) {
      int a = pick(rng), b = pick(rng);
      while (b == a) b = pick(rng);
      if (oracle_identity_distance(faces[static_cast<std::size_t>(a)], faces[static_cast<std::size_t>(b)]) > 0.1) ++far;
    }
    CHECK(far >= 950);
  }
  SUBCASE("undetectable markers give the sentinel") {
    const auto a = synthesize_face({8, 30.0, 64});
    CHECK(oracle_identity_distance(a, torch::zeros({3, 64, 64})) == kUndetectableIdentityDistance);
    CHECK(oracle_identity_distance(torch::zeros({3, 64, 64}), torch::zeros({3, 64, 64})) ==
          kUndetectableIdentityDistance);
  }
  SUBCASE("shape mismatch") {
    CHECK_THROWS_AS(oracle_identity_distance(torch::zeros({3, 64, 64}), torch::zeros({3, 32, 32})), ContractError);
  }
}

TEST_CASE("build_synthetic_dataset") {
  const auto profile = SizeProfile::desk();
  SUBCASE("one image") {
    const auto dir = testing::scratch_dir("ds1");
    const auto ds = build_synthetic_dataset(dir, 1, 1, profile, 0);
    CHECK(ds.entries.size() == 1);
    CHECK(load_manifest(ds.manifest).size() == 1);
  }
  SUBCASE("10 x 5 with distinct marker signatures and a held-out identity") {
    const auto dir = testing::scratch_dir("ds50");
    const auto ds = build_synthetic_dataset(dir, 10, 5, profile, 3);
    const auto entries = load_manifest(ds.manifest);
    CHECK(entries.size() == 50);
    CHECK((entries == ds.entries));
    std::set<std::int64_t> identities;
    std::set<std::vector<double>> signatures;
    for (const auto& e : entries) {
      CHECK(e.age >= 15);
      CHECK(e.age <= 70);
      const auto id = synthetic_identity_index(e);
      REQUIRE(id.has_value());
      identities.insert(*id);
      CHECK((e.split == Split::kTest) == (*id == 9));
      CHECK(fs::exists(resolve_entry(ds.manifest, e)));
    }
    for (auto seed : ds.identity_seeds) {
      std::vector<double> sig;
      for (const auto& s : identity_markers(seed).spots) sig.insert(sig.end(), {s.row, s.col, s.hue});
      signatures.insert(sig);
    }
    CHECK(identities.size() == 10);
    CHECK(signatures.size() == 10);
    CHECK(filter_split(entries, Split::kTest).size() == 5);
  }
  SUBCASE("regeneration is byte-identical") {
    const auto a = testing::scratch_dir("dsa");
    const auto b = testing::scratch_dir("dsb");
    build_synthetic_dataset(a, 4, 3, profile, 11);
    build_synthetic_dataset(b, 4, 3, profile, 11);
    CHECK(testing::hash_tree(a) == testing::hash_tree(b));
    const auto c = testing::scratch_dir("dsc");
    build_synthetic_dataset(c, 4, 3, profile, 12);
    CHECK(testing::hash_tree(a) != testing::hash_tree(c));
  }
  SUBCASE("invalid counts") {
    const auto dir = testing::scratch_dir("dsbad");
    CHECK_THROWS_AS(build_synthetic_dataset(dir, 0, 1, profile, 0), ConfigError);
    CHECK_THROWS_AS(build_synthetic_dataset(dir, 1, 0, profile, 0), ConfigError);
  }
}
