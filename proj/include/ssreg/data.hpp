#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ssreg/common.hpp"
#include "ssreg/params.hpp"

namespace ssreg {

using Image = ArrayXX<float>;

struct Sample {
  std::string id;
  Image image;
  std::optional<double> label;

  bool is_labeled() const { return label.has_value(); }
};

// Split sizes for one experiment; splits are disjoint by id for every seed.
struct SplitSpec {
  int train_labeled = 64;
  int unlabeled = 512;
  int validation = 64;
  int test = 128;
  std::uint64_t seed = 1;

  int total() const { return train_labeled + unlabeled + validation + test; }
};

struct Dataset {
  std::vector<Sample> train_labeled;
  std::vector<Sample> unlabeled;
  std::vector<Sample> validation;
  std::vector<Sample> test;
};

struct AugmentConfig {
  double max_rotation_deg = 10.0;
  double max_translation = 0.1;  // fraction of width/height
  double scale_min = 0.9;
  double scale_max = 1.1;
  double brightness = 0.1;
  double contrast_min = 0.9;
  double contrast_max = 1.1;
  double flip_prob = 0.5;
};

struct SynthOptions {
  int size = 32;
  bool texture_noise = true;
  bool clutter = true;
  double noise_sigma = 0.05;
};

// Ground geometry of one synthetic sample, for tests and calibration.
struct SynthMeta {
  double label = 0.0;
  double center_x = 0.0, center_y = 0.0;
  double r_inner = 0.0, r_outer = 0.0;
  double ring_value = 0.0;  // plateau intensity, affine in the label
  double edge_width = 0.0;
};

// Intensity <-> label affine map used by the generator.
double ring_value_for_label(double y);
double label_for_ring_value(double v);

// Annulus stand-in images: the ring's plateau intensity and thickness are
// functions of the label; texture noise and background clutter make the
// label unrecoverable from any single pixel. Deterministic per (seed, index).
std::vector<Sample> generate_synthetic(int n, std::uint64_t seed,
                                       const SynthOptions& opts = {},
                                       std::vector<SynthMeta>* meta = nullptr,
                                       int first_index = 0);

// Mask of plateau pixels (coverage exactly 1) for one sample's geometry.
ArrayXX<bool> interior_mask(const SynthMeta& m, int size);

Dataset make_splits(const SplitSpec& spec, const SynthOptions& opts = {});

// Inverse-mapped affine warp with bilinear resampling and edge clamp.
// theta in radians; tx/ty in pixels; flip is horizontal, applied first.
Image affine_warp(const Image& image, double theta, double tx, double ty, double scale,
                  bool flip);

Image augment(const Image& image, const AugmentConfig& cfg, Rng& rng);
std::pair<Image, Image> two_views(const Sample& sample, const AugmentConfig& cfg, Rng& rng);

// Manifest CSV (id,image_path,label; empty label = unlabeled) with images as
// 16-bit PGM (P5) files next to it. Round-trip is bit-exact because generated
// images are quantized to the 16-bit grid.
void write_manifest(const std::vector<Sample>& samples, const std::filesystem::path& csv_path);
std::vector<Sample> load_manifest(const std::filesystem::path& csv_path);

void write_pgm(const Image& image, const std::filesystem::path& path);
Image load_pgm(const std::filesystem::path& path);

}  // namespace ssreg
