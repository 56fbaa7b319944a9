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

#include "rsfme/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <regex>
#include <sstream>

#include <Eigen/LU>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

namespace rsfme {

namespace {

std::uint8_t to_u8(double v) { return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L)); }

// Bilinear sample of channel c at (y, x) with coordinates clamped to the image.
double sample_clamped(const Image& im, double y, double x, Index c) {
  y = std::clamp(y, 0.0, static_cast<double>(im.height - 1));
  x = std::clamp(x, 0.0, static_cast<double>(im.width - 1));
  const Index y0 = static_cast<Index>(std::floor(y)), x0 = static_cast<Index>(std::floor(x));
  const Index y1 = std::min(y0 + 1, im.height - 1), x1 = std::min(x0 + 1, im.width - 1);
  const double fy = y - static_cast<double>(y0), fx = x - static_cast<double>(x0);
  return (1 - fy) * ((1 - fx) * im.at(y0, x0, c) + fx * im.at(y0, x1, c)) +
         fy * ((1 - fx) * im.at(y1, x0, c) + fx * im.at(y1, x1, c));
}

Image read_ppm(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::string magic;
  Index w = 0, h = 0, maxval = 0;
  in >> magic >> w >> h >> maxval;
  if (!in || magic != "P6" || w < 1 || h < 1 || maxval != 255) {
    throw DataError("malformed PPM header in " + path.string());
  }
  in.get();
  Image im(h, w);
  in.read(reinterpret_cast<char*>(im.pixels.data()), static_cast<std::streamsize>(im.pixels.size()));
  if (in.gcount() != static_cast<std::streamsize>(im.pixels.size())) {
    throw DataError("truncated PPM data in " + path.string());
  }
  return im;
}

void write_ppm(const fs::path& path, const Image& im) {
  std::ofstream out(path, std::ios::binary);
  out << "P6\n" << im.width << " " << im.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(im.pixels.data()), static_cast<std::streamsize>(im.pixels.size()));
  if (!out) throw DataError("cannot write " + path.string());
}

bool is_ppm(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  char m[2] = {0, 0};
  in.read(m, 2);
  return in.gcount() == 2 && m[0] == 'P' && m[1] == '6';
}

}  // namespace

Image::Image(Index h, Index w, std::uint8_t fill)
    : height(h), width(w), pixels(static_cast<std::size_t>(h * w * 3), fill) {
  if (h < 0 || w < 0) throw ShapeError("image extents must be non-negative");
}

ImageFormat parse_image_format(const std::string& name) {
  std::string n = name;
  std::transform(n.begin(), n.end(), n.begin(), [](unsigned char c) { return std::tolower(c); });
  if (!n.empty() && n[0] == '.') n.erase(0, 1);
  if (n == "jpg" || n == "jpeg") return ImageFormat::kJpg;
  if (n == "png") return ImageFormat::kPng;
  if (n == "raw" || n == "ppm") return ImageFormat::kRaw;
  throw UsageError("unknown image format '" + name + "' (expected jpg, png or raw)");
}

std::string image_extension(ImageFormat f) {
  switch (f) {
    case ImageFormat::kJpg: return ".jpg";
    case ImageFormat::kPng: return ".png";
    case ImageFormat::kRaw: return ".ppm";
  }
  return "";
}

Image read_image(const fs::path& path) {
  if (!fs::is_regular_file(path)) throw DataError("no such image: " + path.string());
  if (is_ppm(path)) return read_ppm(path);
  cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (bgr.empty() || bgr.type() != CV_8UC3) throw DataError("cannot decode image " + path.string());
  Image im(bgr.rows, bgr.cols);
  for (Index y = 0; y < im.height; ++y) {
    const auto* row = bgr.ptr<cv::Vec3b>(static_cast<int>(y));
    for (Index x = 0; x < im.width; ++x)
      for (Index c = 0; c < 3; ++c) im.at(y, x, c) = row[x][static_cast<int>(2 - c)];
  }
  return im;
}

void write_image(const fs::path& path, const Image& im, ImageFormat format) {
  if (im.empty()) throw DataError("refusing to write an empty image to " + path.string());
  if (format == ImageFormat::kRaw) {
    write_ppm(path, im);
    return;
  }
  cv::Mat bgr(static_cast<int>(im.height), static_cast<int>(im.width), CV_8UC3);
  for (Index y = 0; y < im.height; ++y) {
    auto* row = bgr.ptr<cv::Vec3b>(static_cast<int>(y));
    for (Index x = 0; x < im.width; ++x)
      for (Index c = 0; c < 3; ++c) row[x][static_cast<int>(2 - c)] = im.at(y, x, c);
  }
  std::vector<int> flags;
  if (format == ImageFormat::kJpg) flags = {cv::IMWRITE_JPEG_QUALITY, 95};
  bool ok = false;
  try {
    ok = cv::imwrite(path.string(), bgr, flags);
  } catch (const cv::Exception& e) {
    throw DataError("cannot write " + path.string() + ": " + e.what());
  }
  if (!ok) throw DataError("cannot write " + path.string());
}

Image resize(const Image& im, Index height, Index width) {
  if (im.empty()) throw ShapeError("resize: zero-sized source image");
  if (height < 1 || width < 1) throw ShapeError("resize: zero-sized target");
  if (im.height == height && im.width == width) return im;
  Image out(height, width);
  const double sy = static_cast<double>(im.height) / static_cast<double>(height);
  const double sx = static_cast<double>(im.width) / static_cast<double>(width);
  for (Index y = 0; y < height; ++y) {
    const double src_y = (static_cast<double>(y) + 0.5) * sy - 0.5;
    for (Index x = 0; x < width; ++x) {
      const double src_x = (static_cast<double>(x) + 0.5) * sx - 0.5;
      for (Index c = 0; c < 3; ++c) out.at(y, x, c) = to_u8(sample_clamped(im, src_y, src_x, c));
    }
  }
  return out;
}

std::vector<Index> Dataset::class_counts() const {
  std::vector<Index> counts(classes.size(), 0);
  for (const auto& s : samples) ++counts[static_cast<std::size_t>(s.label)];
  return counts;
}

std::string source_group(const std::string& class_name, const fs::path& file) {
  static const std::regex aug_suffix("_aug[0-9]+$");
  return class_name + "/" + std::regex_replace(file.stem().string(), aug_suffix, "");
}

Dataset load_dataset(const fs::path& root, std::optional<Index> size, std::ostream* warnings) {
  if (!fs::is_directory(root)) throw DataError("dataset root " + root.string() + " is not a directory");
  Dataset data;
  std::vector<fs::path> class_dirs;
  for (const auto& e : fs::directory_iterator(root)) {
    if (e.is_directory() && e.path().filename().string().front() != '.') class_dirs.push_back(e.path());
  }
  std::sort(class_dirs.begin(), class_dirs.end());
  if (class_dirs.empty()) throw DataError("no class directories found under " + root.string());
  for (std::size_t label = 0; label < class_dirs.size(); ++label) {
    const std::string name = class_dirs[label].filename().string();
    data.classes.push_back(name);
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(class_dirs[label])) {
      if (e.is_regular_file() && e.path().filename().string().front() != '.') files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) throw DataError("class directory " + class_dirs[label].string() + " is empty");
    for (const auto& f : files) {
      LabeledSample s;
      try {
        s.image = read_image(f);
      } catch (const DataError& e) {
        ++data.skipped;
        if (warnings) *warnings << "warning: skipping " << f.string() << ": " << e.what() << "\n";
        continue;
      }
      if (size) s.image = resize(s.image, *size, *size);
      s.label = static_cast<int>(label);
      s.source = f;
      s.group = source_group(name, f);
      s.augmented = s.group != name + "/" + f.stem().string();
      data.samples.push_back(std::move(s));
    }
  }
  return data;
}

void AugmentParams::validate() const {
  auto check = [](bool ok, const std::string& what) {
    if (!ok) throw UsageError("augmentation parameter out of range: " + what);
  };
  check(std::abs(rotation) <= 30.0, "rotation " + std::to_string(rotation));
  check(shear >= 0.0 && shear <= 30.0, "shear " + std::to_string(shear));
  check(scale >= 1.0 && scale <= 1.5, "scale " + std::to_string(scale));
  check(std::abs(translate_x) <= 5.0 && std::abs(translate_y) <= 5.0, "translation");
  check((reflect_x == 1 || reflect_x == -1) && (reflect_y == 1 || reflect_y == -1), "reflection");
}

AugmentParams AugmentParams::sample(Rng& rng) {
  auto uniform = [&rng](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  auto sign = [&rng]() { return std::bernoulli_distribution(0.5)(rng) ? -1 : 1; };
  AugmentParams p;
  p.rotation = uniform(-30.0, 30.0);
  p.shear = uniform(0.0, 30.0);
  p.scale = uniform(1.0, 1.5);
  p.translate_x = uniform(-5.0, 5.0);
  p.translate_y = uniform(-5.0, 5.0);
  p.reflect_x = sign();
  p.reflect_y = sign();
  return p;
}

Image augment_image(const Image& im, const AugmentParams& p) {
  p.validate();
  if (im.empty()) throw ShapeError("augment: empty image");
  using M2 = Eigen::Matrix2d;
  const double theta = p.rotation * std::numbers::pi / 180.0;
  M2 reflect, scale, rotate, shear;
  reflect << p.reflect_x, 0, 0, p.reflect_y;
  scale << p.scale, 0, 0, p.scale;
  rotate << std::cos(theta), -std::sin(theta), std::sin(theta), std::cos(theta);
  shear << 1, std::tan(p.shear * std::numbers::pi / 180.0), 0, 1;
  const M2 inverse = (shear * rotate * scale * reflect).inverse();
  const Eigen::Vector2d centre((static_cast<double>(im.width) - 1) / 2, (static_cast<double>(im.height) - 1) / 2);
  const Eigen::Vector2d shift(p.translate_x, p.translate_y);
  Image out(im.height, im.width);
  for (Index y = 0; y < im.height; ++y) {
    for (Index x = 0; x < im.width; ++x) {
      const Eigen::Vector2d dst(static_cast<double>(x), static_cast<double>(y));
      const Eigen::Vector2d src = inverse * (dst - centre - shift) + centre;
      for (Index c = 0; c < 3; ++c) out.at(y, x, c) = to_u8(sample_clamped(im, src.y(), src.x(), c));
    }
  }
  return out;
}

LabeledSample augment_one(const LabeledSample& sample, const AugmentParams& params) {
  LabeledSample out = sample;
  out.image = augment_image(sample.image, params);
  out.augmented = true;
  return out;
}

std::uint64_t augment_seed(std::uint64_t seed, Index sample, Index round) {
  return derive_seed(seed, static_cast<std::uint64_t>(sample), static_cast<std::uint64_t>(round));
}

std::vector<LabeledSample> augment_dataset(const Dataset& data, const AugmentOptions& opt) {
  if (opt.rounds < 1 || opt.rounds > 20) throw UsageError("rounds must lie in [1, 20]");
  if (opt.batch < 1) throw UsageError("augmentation batch must be positive");
  if (!opt.out.empty()) {
    std::error_code ec;
    for (const auto& name : data.classes) {
      fs::create_directories(opt.out / name, ec);
      if (ec) throw DataError("cannot create output folder " + (opt.out / name).string() + ": " + ec.message());
    }
  }
  const Index n = static_cast<Index>(data.samples.size());
  std::vector<LabeledSample> out;
  out.reserve(static_cast<std::size_t>(n * opt.rounds));
  for (Index round = 1; round <= opt.rounds; ++round) {
    for (Index start = 0; start < n; start += opt.batch) {
      for (Index i = start; i < std::min(start + opt.batch, n); ++i) {
        const LabeledSample& src = data.samples[static_cast<std::size_t>(i)];
        Rng rng(augment_seed(opt.seed, i, round));
        LabeledSample aug = augment_one(src, AugmentParams::sample(rng));
        if (!opt.out.empty()) {
          const std::string stem = src.source.empty() ? "sample" + std::to_string(i) : src.source.stem().string();
          aug.source = opt.out / data.classes[static_cast<std::size_t>(src.label)] /
                       (stem + "_aug" + std::to_string(round) + image_extension(opt.format));
          write_image(aug.source, aug.image, opt.format);
        }
        out.push_back(std::move(aug));
      }
    }
  }
  return out;
}

DatasetSplit holdout_split(const std::vector<int>& labels, const std::vector<std::string>& groups, Index classes,
                           double test_fraction, double val_fraction, std::uint64_t seed) {
  if (labels.size() != groups.size()) throw ShapeError("holdout_split: one group per label required");
  if (!(test_fraction >= 0 && test_fraction < 1) || !(val_fraction >= 0 && val_fraction < 1)) {
    throw UsageError("split fractions must lie in [0, 1)");
  }
  // Per class: groups in first-appearance order, each with its sample indices.
  std::vector<std::vector<std::vector<Index>>> by_class(static_cast<std::size_t>(classes));
  std::map<std::string, std::pair<int, std::size_t>> where;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int l = labels[i];
    if (l < 0 || l >= classes) throw ShapeError("holdout_split: label out of range");
    auto it = where.find(groups[i]);
    if (it == where.end()) {
      by_class[static_cast<std::size_t>(l)].push_back({});
      it = where.emplace(groups[i], std::pair{l, by_class[static_cast<std::size_t>(l)].size() - 1}).first;
    } else if (it->second.first != l) {
      throw DataError("source group '" + groups[i] + "' spans two classes");
    }
    by_class[static_cast<std::size_t>(l)][it->second.second].push_back(static_cast<Index>(i));
  }
  std::vector<Index> counts(static_cast<std::size_t>(classes), 0);
  for (int l : labels) ++counts[static_cast<std::size_t>(l)];
  for (Index c = 0; c < classes; ++c) {
    if (counts[static_cast<std::size_t>(c)] < 2) {
      throw DataError("class " + std::to_string(c) + " has " + std::to_string(counts[static_cast<std::size_t>(c)]) +
                      " samples; at least 2 are needed to stratify");
    }
  }

  Rng rng(seed);
  for (auto& g : by_class) std::shuffle(g.begin(), g.end(), rng);

  DatasetSplit split;
  split.per_class.assign(static_cast<std::size_t>(classes), {0, 0, 0});
  std::vector<std::vector<bool>> used(static_cast<std::size_t>(classes));
  // Moves whole groups into `dst` while they fit under `target` samples.
  auto take = [&](Index c, Index target, std::vector<Index>& dst, int slot) {
    auto& gs = by_class[static_cast<std::size_t>(c)];
    auto& u = used[static_cast<std::size_t>(c)];
    u.resize(gs.size(), false);
    Index taken = 0;
    for (std::size_t g = 0; g < gs.size() && taken < target; ++g) {
      if (u[g] || taken + static_cast<Index>(gs[g].size()) > target) continue;
      u[g] = true;
      taken += static_cast<Index>(gs[g].size());
      dst.insert(dst.end(), gs[g].begin(), gs[g].end());
    }
    split.per_class[static_cast<std::size_t>(c)][static_cast<std::size_t>(slot)] = taken;
  };
  constexpr double kGuard = 1e-9;
  std::vector<Index> remaining(static_cast<std::size_t>(classes));
  Index remaining_total = 0;
  for (Index c = 0; c < classes; ++c) {
    const Index n = counts[static_cast<std::size_t>(c)];
    take(c, static_cast<Index>(std::floor(test_fraction * static_cast<double>(n) + kGuard)), split.test, 2);
    remaining[static_cast<std::size_t>(c)] = n - split.per_class[static_cast<std::size_t>(c)][2];
    remaining_total += remaining[static_cast<std::size_t>(c)];
  }
  // Largest-remainder apportionment of the global validation count.
  const Index val_total = static_cast<Index>(std::floor(val_fraction * static_cast<double>(remaining_total) + kGuard));
  std::vector<Index> quota(static_cast<std::size_t>(classes));
  std::vector<std::pair<long long, Index>> fractions;  // remainder in units of 1e-9
  Index assigned = 0;
  for (Index c = 0; c < classes; ++c) {
    const double exact = val_fraction * static_cast<double>(remaining[static_cast<std::size_t>(c)]);
    quota[static_cast<std::size_t>(c)] = static_cast<Index>(std::floor(exact + kGuard));
    assigned += quota[static_cast<std::size_t>(c)];
    fractions.emplace_back(std::llround((exact - static_cast<double>(quota[static_cast<std::size_t>(c)])) * 1e9), c);
  }
  std::stable_sort(fractions.begin(), fractions.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t k = 0; k < fractions.size() && assigned < val_total; ++k, ++assigned) {
    ++quota[static_cast<std::size_t>(fractions[k].second)];
  }
  for (Index c = 0; c < classes; ++c) take(c, quota[static_cast<std::size_t>(c)], split.validation, 1);
  for (Index c = 0; c < classes; ++c) {
    auto& gs = by_class[static_cast<std::size_t>(c)];
    auto& u = used[static_cast<std::size_t>(c)];
    for (std::size_t g = 0; g < gs.size(); ++g) {
      if (u[g]) continue;
      split.train.insert(split.train.end(), gs[g].begin(), gs[g].end());
      split.per_class[static_cast<std::size_t>(c)][0] += static_cast<Index>(gs[g].size());
    }
  }
  for (auto* v : {&split.train, &split.validation, &split.test}) std::sort(v->begin(), v->end());
  return split;
}

DatasetSplit holdout_split(const Dataset& data, double test_fraction, double val_fraction, std::uint64_t seed) {
  std::vector<int> labels;
  std::vector<std::string> groups;
  for (std::size_t i = 0; i < data.samples.size(); ++i) {
    labels.push_back(data.samples[i].label);
    groups.push_back(data.samples[i].group.empty() ? "#" + std::to_string(i) : data.samples[i].group);
  }
  return holdout_split(labels, groups, static_cast<Index>(data.classes.size()), test_fraction, val_fraction, seed);
}

Dataset synthetic_dataset(Index classes, Index per_class, Index size, std::uint64_t seed) {
  if (classes < 1 || per_class < 1 || size < 1) throw UsageError("synthetic dataset sizes must be positive");
  Dataset data;
  Rng rng(seed);
  std::uniform_real_distribution<double> noise(-20.0, 20.0);
  for (Index c = 0; c < classes; ++c) {
    data.classes.push_back("class" + std::to_string(c));
    // Each class gets its own base colour and stripe orientation.
    const double angle = std::numbers::pi * static_cast<double>(c) / static_cast<double>(classes);
    const double base[3] = {60.0 + 140.0 * static_cast<double>(c % 2), 60.0 + 140.0 * static_cast<double>((c / 2) % 2),
                            60.0 + 140.0 * static_cast<double>((c / 4) % 2)};
    for (Index k = 0; k < per_class; ++k) {
      LabeledSample s;
      s.image = Image(size, size);
      for (Index y = 0; y < size; ++y)
        for (Index x = 0; x < size; ++x) {
          const double wave = 40.0 * std::sin(2 * std::numbers::pi *
                                               (std::cos(angle) * static_cast<double>(x) +
                                                std::sin(angle) * static_cast<double>(y)) / 8.0);
          for (Index ch = 0; ch < 3; ++ch) s.image.at(y, x, ch) = to_u8(base[ch] + wave + noise(rng));
        }
      s.label = static_cast<int>(c);
      s.group = data.classes.back() + "/" + std::to_string(k);
      s.source = fs::path(data.classes.back()) / (std::to_string(k) + ".ppm");
      data.samples.push_back(std::move(s));
    }
  }
  return data;
}

template <typename S>
Tensor<S> images_to_tensor(const std::vector<const Image*>& images) {
  if (images.empty()) throw ShapeError("images_to_tensor: empty batch");
  const Index h = images.front()->height, w = images.front()->width;
  const Index b = static_cast<Index>(images.size());
  Tensor<S> out({b, 3, h, w});
  for (Index n = 0; n < b; ++n) {
    const Image& im = *images[static_cast<std::size_t>(n)];
    if (im.height != h || im.width != w) throw ShapeError("images_to_tensor: mixed image sizes");
    for (Index c = 0; c < 3; ++c)
      for (Index y = 0; y < h; ++y)
        for (Index x = 0; x < w; ++x) out(n, c, y, x) = static_cast<S>(im.at(y, x, c)) / S(255);
  }
  return out;
}

template Tensor<float> images_to_tensor<float>(const std::vector<const Image*>&);
template Tensor<double> images_to_tensor<double>(const std::vector<const Image*>&);

}  // namespace rsfme
