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

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "rsfme/layers.hpp"

namespace rsfme {

namespace fs = std::filesystem;

/// 8-bit RGB image stored row-major as H x W x 3.
struct Image {
  Index height = 0;
  Index width = 0;
  std::vector<std::uint8_t> pixels;

  Image() = default;
  Image(Index h, Index w, std::uint8_t fill = 0);

  std::uint8_t& at(Index y, Index x, Index c) { return pixels[static_cast<std::size_t>((y * width + x) * 3 + c)]; }
  std::uint8_t at(Index y, Index x, Index c) const {
    return pixels[static_cast<std::size_t>((y * width + x) * 3 + c)];
  }
  bool empty() const { return height == 0 || width == 0; }
  bool operator==(const Image&) const = default;
};

enum class ImageFormat { kJpg, kPng, kRaw };

/// "jpg", "jpeg", "png" or "raw"/"ppm".
ImageFormat parse_image_format(const std::string& name);
std::string image_extension(ImageFormat f);

/// Decodes PNG, JPEG or binary PPM (chosen by content for PPM, by OpenCV
/// otherwise). Throws DataError when the file cannot be decoded.
Image read_image(const fs::path& path);
void write_image(const fs::path& path, const Image& image, ImageFormat format);

/// Bilinear resize with half-pixel centres and edge clamping. Same-size
/// input is returned unchanged.
Image resize(const Image& image, Index height, Index width);

struct LabeledSample {
  Image image;
  int label = 0;
  fs::path source;
  bool augmented = false;
  /// Identifier of the original image this sample derives from; used to keep
  /// an original and its augmented copies in one partition.
  std::string group;
};

struct Dataset {
  std::vector<std::string> classes;
  std::vector<LabeledSample> samples;
  Index skipped = 0;  // undecodable files

  std::vector<Index> class_counts() const;
};

/// Group key of a file: class name plus the stem with any "_aug<k>" suffix removed.
std::string source_group(const std::string& class_name, const fs::path& file);

/// Reads root/<class>/<image>. Classes are sorted by name. With `size` set,
/// every image is resized to size x size on load. Corrupt files are skipped
/// and counted (a line is written to `warnings` for each one).
Dataset load_dataset(const fs::path& root, std::optional<Index> size = std::nullopt,
                     std::ostream* warnings = nullptr);

/// Geometric augmentation parameters. Angles are in degrees.
struct AugmentParams {
  double rotation = 0.0;     // [-30, 30]
  double shear = 0.0;        // [0, 30], x axis
  double scale = 1.0;        // [1, 1.5]
  double translate_x = 0.0;  // [-5, 5] pixels
  double translate_y = 0.0;
  int reflect_x = 1;  // -1 mirrors columns
  int reflect_y = 1;  // -1 mirrors rows

  /// Throws UsageError when a value is outside its range.
  void validate() const;
  /// Uniform draw of every parameter from its range.
  static AugmentParams sample(Rng& rng);
};

/// Applies reflection, scale, rotation, shear and translation about the image
/// centre via inverse mapping with bilinear sampling and edge replication.
Image augment_image(const Image& image, const AugmentParams& params);
LabeledSample augment_one(const LabeledSample& sample, const AugmentParams& params);

/// Seed for (global seed, sample index, round), independent of scheduling.
std::uint64_t augment_seed(std::uint64_t seed, Index sample, Index round);

struct AugmentOptions {
  Index rounds = 20;  // 1..20
  Index batch = 16;
  std::uint64_t seed = 0;
  fs::path out;  // empty: nothing written
  ImageFormat format = ImageFormat::kJpg;
};

/// Produces rounds x |samples| augmented copies. When `out` is set each copy
/// is written to out/<class>/<stem>_aug<round>.<ext>.
std::vector<LabeledSample> augment_dataset(const Dataset& data, const AugmentOptions& options);

struct DatasetSplit {
  std::vector<Index> train, validation, test;
  /// [class][0 = train, 1 = validation, 2 = test]
  std::vector<std::array<Index, 3>> per_class;
};

/// Stratified, source-grouped split. The test set takes floor(test_fraction
/// * n_c) samples per class; validation takes floor(val_fraction * remaining)
/// overall, apportioned across classes by largest remainder.
DatasetSplit holdout_split(const std::vector<int>& labels, const std::vector<std::string>& groups,
                           Index classes, double test_fraction, double val_fraction, std::uint64_t seed);
DatasetSplit holdout_split(const Dataset& data, double test_fraction, double val_fraction, std::uint64_t seed);

/// Class-distinguishable random images for smoke runs and tests.
Dataset synthetic_dataset(Index classes, Index per_class, Index size, std::uint64_t seed);

/// Stacks images into [B, 3, H, W] with values scaled to [0, 1].
template <typename Scalar>
Tensor<Scalar> images_to_tensor(const std::vector<const Image*>& images);

}  // namespace rsfme
