#include <catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "styleshift/dataset.hpp"

using namespace styleshift;

TEST_CASE("toy corpus is deterministic and labeled") {
  auto a = toy_corpus<float>(8, 16, 11);
  auto b = toy_corpus<float>(8, 16, 11);
  REQUIRE(a.size() == 8);
  for (std::size_t i = 0; i < a.size(); ++i) {
    REQUIRE(bit_equal(a[i].first, b[i].first));
    REQUIRE(a[i].second.skin_class == b[i].second.skin_class);
    REQUIRE(a[i].first.min() >= -1.f);
    REQUIRE(a[i].first.max() <= 1.f);
  }
  // Different seeds give different faces.
  auto c = toy_corpus<float>(1, 16, 12);
  REQUIRE_FALSE(bit_equal(a[0].first, c[0].first));
}

TEST_CASE("corpus written to disk verifies and reloads") {
  auto dir = std::filesystem::temp_directory_path() / "styleshift_test_corpus";
  std::filesystem::remove_all(dir);
  auto manifest = generate_toy_corpus<float>(dir, 5, 16, 3);
  REQUIRE(manifest.size() == 5);
  manifest.verify();

  auto loaded = DatasetManifest::load(manifest.file());
  REQUIRE(loaded.size() == 5);
  REQUIRE(loaded.entries()[0].label == "real");
  REQUIRE(loaded.entries()[2].seed == manifest.entries()[2].seed);
  loaded.verify();

  // Tampering with a file breaks verification.
  {
    std::ofstream f(manifest.image_path(1), std::ios::binary | std::ios::trunc);
    f << "corrupt";
  }
  REQUIRE_THROWS_AS(loaded.verify(), PersistenceError);
  std::filesystem::remove(manifest.image_path(0));
  REQUIRE_THROWS_AS(loaded.verify(), PersistenceError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("manifest disjointness detects shared images") {
  auto dir = std::filesystem::temp_directory_path() / "styleshift_test_disjoint";
  std::filesystem::remove_all(dir);
  auto m1 = generate_toy_corpus<float>(dir / "a", 4, 16, 5);
  auto m2 = generate_toy_corpus<float>(dir / "b", 4, 16, 6);
  auto m3 = generate_toy_corpus<float>(dir / "c", 4, 16, 5);  // same seed as m1
  REQUIRE(m1.disjoint_from(m2));
  REQUIRE_FALSE(m1.disjoint_from(m3));
  std::filesystem::remove_all(dir);
}

TEST_CASE("malformed manifests are input errors") {
  auto dir = std::filesystem::temp_directory_path() / "styleshift_test_badmanifest";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  std::ofstream(dir / "m.jsonl") << "{ not json\n";
  REQUIRE_THROWS_AS(DatasetManifest::load(dir / "m.jsonl"), InputError);
  REQUIRE_THROWS_AS(DatasetManifest::load(dir / "absent.jsonl"), InputError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("domain transforms change images deterministically") {
  auto faces = toy_corpus<float>(1, 16, 21);
  const auto& img = faces[0].first;
  for (auto t : {DomainTransform::ColorCast, DomainTransform::Blur, DomainTransform::Quantize,
                 DomainTransform::ChannelSwap}) {
    auto a = apply_domain_transform(img, t, 1.0);
    auto b = apply_domain_transform(img, t, 1.0);
    REQUIRE(bit_equal(a, b));
    REQUIRE_FALSE(bit_equal(a, img));
    REQUIRE(a.min() >= -1.f);
    REQUIRE(a.max() <= 1.f);
  }
}

TEST_CASE("colorcast fixture shifts channel means warm") {
  auto faces = toy_corpus<float>(4, 16, 23);
  double dr = 0, db = 0;
  for (const auto& [img, attrs] : faces) {
    auto cast = FixtureDomain::named("colorcast").apply(img);
    const int HW = 16 * 16;
    double r0 = 0, r1 = 0, b0 = 0, b1 = 0;
    for (int i = 0; i < HW; ++i) {
      r0 += img[i];
      r1 += cast[i];
      b0 += img[2 * HW + i];
      b1 += cast[2 * HW + i];
    }
    dr += (r1 - r0) / HW;
    db += (b1 - b0) / HW;
  }
  REQUIRE(dr > 0.0);  // red lifted
  REQUIRE(db < 0.0);  // blue crushed
}

TEST_CASE("unknown fixture names are rejected") {
  REQUIRE_THROWS_AS(FixtureDomain::named("sepia"), InputError);
}
