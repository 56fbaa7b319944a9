/*
 * Copyright (c) 2026, The rsfme Authors.  All rights reserved.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include <doctest.h>

#include <cmath>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

#include "oracles.hpp"
#include "rsfme/data.hpp"
#include "temp_dir.hpp"

using namespace rsfme;

namespace {

Image random_image(Index h, Index w, Rng& rng) {
  Image im(h, w);
  std::uniform_int_distribution<int> d(0, 255);
  for (auto& p : im.pixels) p = static_cast<std::uint8_t>(d(rng));
  return im;
}

std::string file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Writes a class tree with `per_class[i]` images for class name i.
void write_tree(const fs::path& root, const std::vector<std::pair<std::string, int>>& per_class, Rng& rng) {
  for (const auto& [name, n] : per_class) {
    fs::create_directories(root / name);
    for (int k = 0; k < n; ++k) {
      write_image(root / name / ("img" + std::to_string(k) + ".png"), random_image(6, 5, rng), ImageFormat::kPng);
    }
  }
}

std::vector<double> channel(const Image& im, Index c) {
  std::vector<double> v;
  for (Index y = 0; y < im.height; ++y)
    for (Index x = 0; x < im.width; ++x) v.push_back(im.at(y, x, c));
  return v;
}

}  // namespace

TEST_CASE("image io round trips") {
  TempDir tmp;
  Rng rng(1);
  Image im = random_image(7, 9, rng);
  write_image(tmp.path() / "a.png", im, ImageFormat::kPng);
  CHECK(read_image(tmp.path() / "a.png") == im);
  write_image(tmp.path() / "a.ppm", im, ImageFormat::kRaw);
  CHECK(read_image(tmp.path() / "a.ppm") == im);
  Image smooth(16, 16, 128);
  write_image(tmp.path() / "a.jpg", smooth, ImageFormat::kJpg);
  Image back = read_image(tmp.path() / "a.jpg");
  REQUIRE(back.height == 16);
  for (std::size_t i = 0; i < back.pixels.size(); ++i) CHECK(std::abs(back.pixels[i] - 128) <= 2);
  CHECK(parse_image_format("JPEG") == ImageFormat::kJpg);
  CHECK(parse_image_format("raw") == ImageFormat::kRaw);
  CHECK_THROWS_AS(parse_image_format("gif"), UsageError);
  std::ofstream(tmp.path() / "bad.png") << "not an image";
  CHECK_THROWS_AS(read_image(tmp.path() / "bad.png"), DataError);
  std::ofstream(tmp.path() / "short.ppm") << "P6\n4 4\n255\nabc";
  CHECK_THROWS_AS(read_image(tmp.path() / "short.ppm"), DataError);
}

TEST_CASE("load_dataset") {
  Rng rng(2);
  SUBCASE("five class directories give c = 5 with sorted labels") {
    TempDir tmp;
    write_tree(tmp.path(), {{"Normal", 2}, {"Measles", 2}, {"Chickenpox", 2}, {"Monkeypox", 2}, {"Cowpox", 2}}, rng);
    Dataset d = load_dataset(tmp.path());
    CHECK(d.classes == std::vector<std::string>{"Chickenpox", "Cowpox", "Measles", "Monkeypox", "Normal"});
    CHECK(d.samples.size() == 10);
    for (const auto& s : d.samples) CHECK(d.classes[static_cast<std::size_t>(s.label)] == s.source.parent_path().filename());
  }
  SUBCASE("10-image fixture and resize on load") {
    TempDir tmp;
    write_tree(tmp.path(), {{"a", 3}, {"b", 7}}, rng);
    Dataset d = load_dataset(tmp.path(), Index{4});
    CHECK(d.samples.size() == 10);
    CHECK(d.class_counts() == std::vector<Index>{3, 7});
    for (const auto& s : d.samples) CHECK((s.image.height == 4 && s.image.width == 4));
  }
  SUBCASE("corrupt files are skipped and counted") {
    TempDir tmp;
    write_tree(tmp.path(), {{"a", 2}, {"b", 2}}, rng);
    std::ofstream(tmp.path() / "b" / "zz.jpg") << "garbage";
    std::ostringstream warnings;
    Dataset d = load_dataset(tmp.path(), std::nullopt, &warnings);
    CHECK(d.samples.size() == 4);
    CHECK(d.skipped == 1);
    CHECK(warnings.str().find("zz.jpg") != std::string::npos);
  }
  SUBCASE("errors") {
    TempDir tmp;
    CHECK_THROWS_AS(load_dataset(tmp.path()), DataError);
    CHECK_THROWS_AS(load_dataset(tmp.path() / "missing"), DataError);
    fs::create_directories(tmp.path() / "empty");
    CHECK_THROWS_AS(load_dataset(tmp.path()), DataError);
  }
  SUBCASE("augmented files share their source group") {
    CHECK(source_group("Mpox", "Mpox/x12_aug7.jpg") == "Mpox/x12");
    CHECK(source_group("Mpox", "Mpox/x12.jpg") == "Mpox/x12");
    CHECK(source_group("Mpox", "Mpox/x12_augment.jpg") == "Mpox/x12_augment");
  }
}

TEST_CASE("resize") {
  Rng rng(3);
  Image im = random_image(224, 224, rng);
  CHECK(resize(im, 224, 224) == im);
  Image flat(448, 448, 77);
  Image small = resize(flat, 224, 224);
  for (auto p : small.pixels) CHECK(p == 77);
  CHECK_THROWS_AS(resize(Image(), 4, 4), ShapeError);

  Image checker(2, 2);
  for (Index y = 0; y < 2; ++y)
    for (Index x = 0; x < 2; ++x)
      for (Index c = 0; c < 3; ++c) checker.at(y, x, c) = (x + y) % 2 ? 255 : 0;
  Image up = resize(checker, 4, 4);
  const auto src = channel(checker, 0);
  for (Index y = 0; y < 4; ++y)
    for (Index x = 0; x < 4; ++x) {
      const double expect = oracle::bilinear(src, 2, 2, (y + 0.5) * 0.5 - 0.5, (x + 0.5) * 0.5 - 0.5);
      CHECK(std::abs(up.at(y, x, 0) - expect) <= 0.5);
    }
}

TEST_CASE("augment_one") {
  Rng rng(4);
  LabeledSample s;
  s.image = random_image(8, 8, rng);
  s.label = 3;
  SUBCASE("identity parameters are a no-op") {
    LabeledSample out = augment_one(s, AugmentParams{});
    CHECK(out.image == s.image);
    CHECK(out.label == 3);
    CHECK(out.augmented);
  }
  SUBCASE("x reflection twice is the identity") {
    AugmentParams p;
    p.reflect_x = -1;
    Image once = augment_image(s.image, p);
    CHECK(once != s.image);
    CHECK(once.at(2, 0, 1) == s.image.at(2, 7, 1));
    CHECK(augment_image(once, p) == s.image);
  }
  SUBCASE("rotation by 30 degrees matches the inverse-mapping oracle") {
    AugmentParams p;
    p.rotation = 30.0;
    Image out = augment_image(s.image, p);
    const double t = 30.0 * std::numbers::pi / 180.0, c = 3.5;
    for (Index ch = 0; ch < 3; ++ch) {
      const auto src = channel(s.image, ch);
      for (Index y = 0; y < 8; ++y)
        for (Index x = 0; x < 8; ++x) {
          // Undo a rotation by t about the centre.
          const double dx = x - c, dy = y - c;
          const double sx = c + std::cos(t) * dx + std::sin(t) * dy;
          const double sy = c - std::sin(t) * dx + std::cos(t) * dy;
          CHECK(std::abs(out.at(y, x, ch) - oracle::bilinear(src, 8, 8, sy, sx)) <= 1.0);
        }
    }
  }
  SUBCASE("geometry preserved for random parameters") {
    Image wide = random_image(5, 11, rng);
    for (int k = 0; k < 20; ++k) {
      Image out = augment_image(wide, AugmentParams::sample(rng));
      CHECK((out.height == 5 && out.width == 11));
    }
  }
  SUBCASE("out-of-range parameters are rejected") {
    AugmentParams p;
    p.rotation = 31;
    CHECK_THROWS_AS(augment_image(s.image, p), UsageError);
    p = {};
    p.shear = -1;
    CHECK_THROWS_AS(augment_image(s.image, p), UsageError);
    p = {};
    p.scale = 1.6;
    CHECK_THROWS_AS(augment_image(s.image, p), UsageError);
    p = {};
    p.reflect_y = 0;
    CHECK_THROWS_AS(augment_image(s.image, p), UsageError);
  }
}

TEST_CASE("sampled parameters stay in range over 10^4 draws") {
  Rng rng(5);
  bool saw_negative_rotation = false, saw_mirror = false;
  for (int i = 0; i < 10000; ++i) {
    AugmentParams p = AugmentParams::sample(rng);
    CHECK_NOTHROW(p.validate());
    CHECK(std::abs(p.rotation) <= 30.0);
    CHECK((p.shear >= 0.0 && p.shear <= 30.0));
    CHECK((p.scale >= 1.0 && p.scale <= 1.5));
    CHECK((std::abs(p.translate_x) <= 5.0 && std::abs(p.translate_y) <= 5.0));
    saw_negative_rotation |= p.rotation < 0;
    saw_mirror |= p.reflect_x < 0;
  }
  CHECK(saw_negative_rotation);
  CHECK(saw_mirror);
}

TEST_CASE("augment_dataset") {
  Rng rng(6);
  TempDir tmp;
  write_tree(tmp.path() / "src", {{"a", 4}, {"b", 6}}, rng);
  Dataset d = load_dataset(tmp.path() / "src");
  SUBCASE("one round on 10 samples gives 10 new samples") {
    AugmentOptions opt;
    opt.rounds = 1;
    opt.seed = 9;
    opt.out = tmp.path() / "out";
    auto aug = augment_dataset(d, opt);
    CHECK(aug.size() == 10);
    CHECK(fs::exists(tmp.path() / "out" / "b" / "img5_aug1.jpg"));
    for (std::size_t i = 0; i < aug.size(); ++i) {
      CHECK(aug[i].label == d.samples[i].label);
      CHECK(aug[i].group == d.samples[i].group);
    }
  }
  SUBCASE("twenty rounds grow the set twenty-fold") {
    AugmentOptions opt;
    opt.rounds = 20;
    CHECK(augment_dataset(d, opt).size() == 200);
  }
  SUBCASE("same seed gives bitwise-identical files") {
    for (const char* dir : {"r1", "r2"}) {
      AugmentOptions opt;
      opt.rounds = 2;
      opt.seed = 42;
      opt.out = tmp.path() / dir;
      opt.format = ImageFormat::kPng;
      augment_dataset(d, opt);
    }
    int compared = 0;
    for (const auto& e : fs::recursive_directory_iterator(tmp.path() / "r1")) {
      if (!e.is_regular_file()) continue;
      const fs::path twin = tmp.path() / "r2" / fs::relative(e.path(), tmp.path() / "r1");
      CHECK(file_bytes(e.path()) == file_bytes(twin));
      ++compared;
    }
    CHECK(compared == 20);
    // Reloading the output tree keeps augmented copies in their source group.
    Dataset reloaded = load_dataset(tmp.path() / "r1");
    for (const auto& s : reloaded.samples) CHECK(s.augmented);
    std::set<std::string> groups;
    for (const auto& s : reloaded.samples) groups.insert(s.group);
    CHECK(groups.size() == 10);
  }
  SUBCASE("different seeds or rounds differ") {
    CHECK(augment_seed(1, 0, 1) != augment_seed(2, 0, 1));
    CHECK(augment_seed(1, 0, 1) != augment_seed(1, 0, 2));
    CHECK(augment_seed(1, 0, 1) != augment_seed(1, 1, 1));
  }
  SUBCASE("errors") {
    AugmentOptions opt;
    opt.rounds = 0;
    CHECK_THROWS_AS(augment_dataset(d, opt), UsageError);
    opt.rounds = 21;
    CHECK_THROWS_AS(augment_dataset(d, opt), UsageError);
    opt.rounds = 1;
    std::ofstream(tmp.path() / "blocker") << "x";
    opt.out = tmp.path() / "blocker";
    CHECK_THROWS_AS(augment_dataset(d, opt), DataError);
  }
}

TEST_CASE("holdout_split") {
  SUBCASE("five-class disease counts split as 5348 / 1337 / 1669") {
    const Index counts[] = {1050, 924, 770, 4014, 1596};
    std::vector<int> labels;
    std::vector<std::string> groups;
    for (int c = 0; c < 5; ++c)
      for (Index k = 0; k < counts[c]; ++k) {
        labels.push_back(c);
        groups.push_back(std::to_string(c) + "/" + std::to_string(k));
      }
    CHECK(labels.size() == 8354);
    DatasetSplit s = holdout_split(labels, groups, 5, 0.2, 0.2, 1);
    CHECK(s.test.size() == 1669);
    CHECK(s.train.size() + s.validation.size() == 6685);
    CHECK(s.train.size() == 5348);
    CHECK(s.validation.size() == 1337);
    for (int c = 0; c < 5; ++c) {
      const double share = static_cast<double>(s.per_class[c][2]) - 0.2 * static_cast<double>(counts[c]);
      CHECK(std::abs(share) <= 1.0);
    }
  }
  SUBCASE("zero fractions put everything in train") {
    std::vector<int> labels{0, 0, 1, 1, 1};
    std::vector<std::string> groups{"a", "b", "c", "d", "e"};
    DatasetSplit s = holdout_split(labels, groups, 2, 0.0, 0.0, 3);
    CHECK(s.train.size() == 5);
    CHECK(s.validation.empty());
    CHECK(s.test.empty());
  }
  SUBCASE("100-sample fixture: disjoint, covering, stratified, deterministic") {
    std::vector<int> labels;
    std::vector<std::string> groups;
    for (int i = 0; i < 100; ++i) {
      labels.push_back(i % 3 == 0 ? 0 : (i % 3 == 1 ? 1 : 2));
      groups.push_back("g" + std::to_string(i));
    }
    for (std::uint64_t seed : {1u, 2u, 3u}) {
      DatasetSplit s = holdout_split(labels, groups, 3, 0.2, 0.2, seed);
      std::multiset<Index> all;
      for (const auto* v : {&s.train, &s.validation, &s.test}) all.insert(v->begin(), v->end());
      CHECK(all.size() == 100);
      CHECK(std::set<Index>(all.begin(), all.end()).size() == 100);
      std::array<Index, 3> class_n{34, 33, 33};
      for (int c = 0; c < 3; ++c) {
        CHECK(std::abs(static_cast<double>(s.per_class[c][2]) - 0.2 * class_n[c]) <= 1.0);
      }
      DatasetSplit again = holdout_split(labels, groups, 3, 0.2, 0.2, seed);
      CHECK(again.test == s.test);
      CHECK(again.validation == s.validation);
    }
    CHECK(holdout_split(labels, groups, 3, 0.2, 0.2, 1).test != holdout_split(labels, groups, 3, 0.2, 0.2, 2).test);
  }
  SUBCASE("augmented derivatives follow their source") {
    std::vector<int> labels;
    std::vector<std::string> groups;
    for (int src = 0; src < 40; ++src)
      for (int copy = 0; copy < 5; ++copy) {
        labels.push_back(src % 2);
        groups.push_back("src" + std::to_string(src));
      }
    DatasetSplit s = holdout_split(labels, groups, 2, 0.2, 0.2, 7);
    std::set<std::string> test_groups;
    for (Index i : s.test) test_groups.insert(groups[static_cast<std::size_t>(i)]);
    CHECK(!test_groups.empty());
    for (const auto* v : {&s.train, &s.validation})
      for (Index i : *v) CHECK(test_groups.count(groups[static_cast<std::size_t>(i)]) == 0);
    CHECK(s.test.size() == 40);
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(holdout_split({0, 1, 1}, {"a", "b", "c"}, 2, 0.2, 0.2, 1), DataError);
    CHECK_THROWS_AS(holdout_split({0, 0}, {"a", "b"}, 1, 1.0, 0.2, 1), UsageError);
    CHECK_THROWS_AS(holdout_split({0, 0, 1, 1}, {"a", "a", "a", "b"}, 2, 0.2, 0.2, 1), DataError);
  }
}

TEST_CASE("synthetic dataset and tensor conversion") {
  Dataset d = synthetic_dataset(3, 4, 8, 1);
  CHECK(d.samples.size() == 12);
  CHECK(d.class_counts() == std::vector<Index>{4, 4, 4});
  std::vector<const Image*> batch{&d.samples[0].image, &d.samples[5].image};
  Tensor<float> t = images_to_tensor<float>(batch);
  CHECK(t.shape() == Shape{2, 3, 8, 8});
  CHECK(t(1, 2, 3, 4) == doctest::Approx(d.samples[5].image.at(3, 4, 2) / 255.0));
  Image other(4, 4);
  batch.push_back(&other);
  CHECK_THROWS_AS(images_to_tensor<float>(batch), ShapeError);
  CHECK(synthetic_dataset(3, 4, 8, 1).samples[7].image == d.samples[7].image);
}
