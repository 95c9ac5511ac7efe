#include "ssreg/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

namespace ssreg {

namespace {

double smoothstep01(double t) {
  t = std::clamp(t, 0.0, 1.0);
  return t * t * (3.0 - 2.0 * t);
}

// quantize to the 16-bit PGM grid; keeps disk round-trips bit-exact
float quantize16(double v) {
  const long u = std::lround(std::clamp(v, 0.0, 1.0) * 65535.0);
  return static_cast<float>(static_cast<double>(u) / 65535.0);
}

std::string sample_id(int index) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "s%06d", index);
  return buf;
}

constexpr double kBackground = 0.10;  // mean background level; jittered per image
// partial hole depth; a fully dark hole is too sharp for the resampling
// tolerance augment() promises
constexpr double kHoleFloor = 0.55;

}  // namespace

double ring_value_for_label(double y) { return 0.17 + 0.22 * y; }
double label_for_ring_value(double v) { return (v - 0.17) / 0.22; }

std::vector<Sample> generate_synthetic(int n, std::uint64_t seed, const SynthOptions& opts,
                                       std::vector<SynthMeta>* meta, int first_index) {
  if (n < 1) throw ConfigError("generate_synthetic: n must be >= 1");
  const int size = opts.size;
  const double s = size / 32.0;

  std::vector<Sample> out;
  out.reserve(n);
  if (meta) meta->clear();

  for (int idx = 0; idx < n; ++idx) {
    const std::string id = sample_id(first_index + idx);
    Rng rng(derive_seed(seed, "sample:" + id));

    // label, snapped so the plateau intensity sits exactly on the 16-bit grid
    const double y_raw = rng.uniform(0.2, 1.4);
    const float v_q = quantize16(ring_value_for_label(y_raw));
    const double v = static_cast<double>(v_q);
    const double y = label_for_ring_value(v);

    SynthMeta m;
    m.label = y;
    m.ring_value = v;
    m.center_x = (size - 1) / 2.0 + rng.uniform(-1.5, 1.5) * s;
    m.center_y = (size - 1) / 2.0 + rng.uniform(-1.5, 1.5) * s;
    // radius, thickness and background level are wide label-independent
    // nuisances: annulus area and total image brightness then carry almost no
    // label information, so the plateau intensity has to be read out locally
    m.r_outer = 8.0 * s + rng.uniform(-1.5, 1.5) * s;
    const double thickness = rng.uniform(3.0, 6.0) * s;
    const double bg = kBackground + rng.uniform(-0.07, 0.07);
    m.edge_width = 3.0 * s;
    // keep the rise fully inside the hole; a cusp at the ring centre would
    // break the resampling tolerance of augment()
    m.r_inner = std::max(m.r_outer - thickness, m.edge_width + 0.5 * s);
    const double w_out = 4.0 * s;  // gentler outer fall, highest-contrast edge
    const double w = m.edge_width;

    ArrayXX<double> img = ArrayXX<double>::Constant(size, size, bg);

    for (int r = 0; r < size; ++r) {
      for (int c = 0; c < size; ++c) {
        const double rr = std::hypot(c - m.center_x, r - m.center_y);
        const double rise = smoothstep01((rr - (m.r_inner - w)) / w);
        const double fall = 1.0 - smoothstep01((rr - m.r_outer) / w_out);
        img(r, c) += (v - bg) * (kHoleFloor + (1.0 - kHoleFloor) * rise) * fall;
      }
    }

    if (opts.clutter) {
      const int n_discs = rng.uniform_int(3, 6);
      for (int k = 0; k < n_discs; ++k) {
        for (int attempt = 0; attempt < 20; ++attempt) {
          const double px = rng.uniform(5.0 * s, size - 1 - 5.0 * s);
          const double py = rng.uniform(5.0 * s, size - 1 - 5.0 * s);
          const double rad = rng.uniform(3.5, 5.0) * s;
          const double amp = rng.uniform(0.05, 0.10);
          const double dc = std::hypot(px - m.center_x, py - m.center_y);
          // keep the bump centre off the plateau; tails may brush the ring,
          // which leaves a little irreducible noise in the intensity cue
          const bool inside_hole = dc + rad < m.r_inner - w;
          const bool outside_ring = dc > m.r_outer;
          if (!inside_hole && !outside_ring) continue;
          // smooth radial bump: zero slope at the centre, zero beyond rad
          for (int r = 0; r < size; ++r)
            for (int c = 0; c < size; ++c) {
              const double d = std::hypot(c - px, r - py);
              img(r, c) += amp * (1.0 - smoothstep01(d / rad));
            }
          break;
        }
      }
    }

    if (opts.texture_noise && opts.noise_sigma > 0.0) {
      // value noise: coarse grid, bilinear upsample, tapered to zero at the
      // borders so clamped resampling in augment() stays consistent
      const int cell = std::max(2, static_cast<int>(std::lround(5.0 * s)));
      const int gw = size / cell + 2;
      ArrayXX<double> grid(gw, gw);
      const double a = opts.noise_sigma * std::sqrt(3.0);
      for (int r = 0; r < gw; ++r)
        for (int c = 0; c < gw; ++c) grid(r, c) = rng.uniform(-a, a);
      for (int r = 0; r < size; ++r) {
        for (int c = 0; c < size; ++c) {
          const double gx = static_cast<double>(c) / cell;
          const double gy = static_cast<double>(r) / cell;
          const int x0 = static_cast<int>(gx), y0 = static_cast<int>(gy);
          // smoothstep fade keeps the noise C1 across cell boundaries
          const double fx = smoothstep01(gx - x0), fy = smoothstep01(gy - y0);
          const double nval = grid(y0, x0) * (1 - fx) * (1 - fy) +
                              grid(y0, x0 + 1) * fx * (1 - fy) +
                              grid(y0 + 1, x0) * (1 - fx) * fy +
                              grid(y0 + 1, x0 + 1) * fx * fy;
          const double border = std::min({c, r, size - 1 - c, size - 1 - r}) / s;
          img(r, c) += nval * smoothstep01((border - 2.0) / 4.0);
        }
      }
    }

    Sample sample;
    sample.id = id;
    sample.label = y;
    sample.image = Image(size, size);
    for (int r = 0; r < size; ++r)
      for (int c = 0; c < size; ++c) sample.image(r, c) = quantize16(img(r, c));
    out.push_back(std::move(sample));
    if (meta) meta->push_back(m);
  }
  return out;
}

ArrayXX<bool> interior_mask(const SynthMeta& m, int size) {
  ArrayXX<bool> mask(size, size);
  for (int r = 0; r < size; ++r)
    for (int c = 0; c < size; ++c) {
      const double rr = std::hypot(c - m.center_x, r - m.center_y);
      mask(r, c) = rr >= m.r_inner && rr <= m.r_outer;
    }
  return mask;
}

Dataset make_splits(const SplitSpec& spec, const SynthOptions& opts) {
  if (spec.train_labeled < 1 || spec.validation < 2 || spec.test < 2 || spec.unlabeled < 0)
    throw ConfigError("make_splits: invalid split counts");
  std::vector<Sample> all =
      generate_synthetic(spec.total(), derive_seed(spec.seed, "data"), opts);
  Dataset ds;
  auto it = all.begin();
  ds.train_labeled.assign(it, it + spec.train_labeled);
  it += spec.train_labeled;
  ds.unlabeled.assign(it, it + spec.unlabeled);
  it += spec.unlabeled;
  ds.validation.assign(it, it + spec.validation);
  it += spec.validation;
  ds.test.assign(it, it + spec.test);
  for (auto& s : ds.unlabeled) s.label.reset();
  return ds;
}

Image affine_warp(const Image& image, double theta, double tx, double ty, double scale,
                  bool flip) {
  const int h = static_cast<int>(image.rows());
  const int w = static_cast<int>(image.cols());
  if (h < 2 || w < 2) throw ConfigError("affine_warp: image too small");
  scale = std::max(scale, 0.05);  // guard against degenerate config

  const double cx = (w - 1) / 2.0;
  const double cy = (h - 1) / 2.0;
  const double cos_t = std::cos(theta), sin_t = std::sin(theta);

  auto sample_clamped = [&](double x, double y) -> double {
    const int x0 = std::clamp(static_cast<int>(std::floor(x)), 0, w - 1);
    const int y0 = std::clamp(static_cast<int>(std::floor(y)), 0, h - 1);
    const int x1 = std::min(x0 + 1, w - 1);
    const int y1 = std::min(y0 + 1, h - 1);
    const double fx = std::clamp(x - x0, 0.0, 1.0);
    const double fy = std::clamp(y - y0, 0.0, 1.0);
    return image(y0, x0) * (1 - fx) * (1 - fy) + image(y0, x1) * fx * (1 - fy) +
           image(y1, x0) * (1 - fx) * fy + image(y1, x1) * fx * fy;
  };

  Image out(h, w);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      const double xo = flip ? (w - 1) - c : c;
      const double dx = xo - cx - tx;
      const double dy = r - cy - ty;
      const double xs = (cos_t * dx + sin_t * dy) / scale + cx;
      const double ys = (-sin_t * dx + cos_t * dy) / scale + cy;
      out(r, c) = static_cast<float>(sample_clamped(xs, ys));
    }
  }
  return out;
}

Image augment(const Image& image, const AugmentConfig& cfg, Rng& rng) {
  const int h = static_cast<int>(image.rows());
  const int w = static_cast<int>(image.cols());

  // fixed draw order so streams are reproducible regardless of ranges
  const double theta = rng.uniform(-cfg.max_rotation_deg, cfg.max_rotation_deg) * M_PI / 180.0;
  const double tx = rng.uniform(-cfg.max_translation, cfg.max_translation) * w;
  const double ty = rng.uniform(-cfg.max_translation, cfg.max_translation) * h;
  const double scale = rng.uniform(cfg.scale_min, cfg.scale_max);
  const bool flip = rng.bernoulli(cfg.flip_prob);
  const double bright = rng.uniform(-cfg.brightness, cfg.brightness);
  const double contrast = rng.uniform(cfg.contrast_min, cfg.contrast_max);

  Image warped = affine_warp(image, theta, tx, ty, scale, flip);
  const double offset = 0.5 * (1.0 - contrast) + bright;
  Image out(warped.rows(), warped.cols());
  for (Eigen::Index r = 0; r < out.rows(); ++r)
    for (Eigen::Index c = 0; c < out.cols(); ++c)
      out(r, c) = static_cast<float>(
          std::clamp(static_cast<double>(warped(r, c)) * contrast + offset, 0.0, 1.0));
  return out;
}

std::pair<Image, Image> two_views(const Sample& sample, const AugmentConfig& cfg, Rng& rng) {
  Image v1 = augment(sample.image, cfg, rng);
  Image v2 = augment(sample.image, cfg, rng);
  return {std::move(v1), std::move(v2)};
}

void write_pgm(const Image& image, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("write_pgm: cannot open " + path.string());
  f << "P5\n" << image.cols() << " " << image.rows() << "\n65535\n";
  for (Eigen::Index r = 0; r < image.rows(); ++r)
    for (Eigen::Index c = 0; c < image.cols(); ++c) {
      const long u = std::lround(std::clamp(static_cast<double>(image(r, c)), 0.0, 1.0) * 65535.0);
      const unsigned char hi = static_cast<unsigned char>((u >> 8) & 0xff);
      const unsigned char lo = static_cast<unsigned char>(u & 0xff);
      f.put(static_cast<char>(hi));
      f.put(static_cast<char>(lo));
    }
  if (!f) throw DataError("write_pgm: write failed for " + path.string());
}

Image load_pgm(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("load_pgm: cannot open " + path.string());
  std::string magic;
  int w = 0, h = 0, maxval = 0;
  f >> magic >> w >> h >> maxval;
  if (magic != "P5" || w < 1 || h < 1 || maxval != 65535)
    throw DataError("load_pgm: unsupported PGM (want P5 / maxval 65535): " + path.string());
  f.get();  // single whitespace after maxval
  Image img(h, w);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      const int hi = f.get(), lo = f.get();
      if (hi < 0 || lo < 0) throw DataError("load_pgm: truncated file " + path.string());
      img(r, c) = static_cast<float>(static_cast<double>((hi << 8) | lo) / 65535.0);
    }
  return img;
}

void write_manifest(const std::vector<Sample>& samples, const std::filesystem::path& csv_path) {
  const auto dir = csv_path.parent_path();
  const auto image_dir = dir / "images";
  std::filesystem::create_directories(image_dir);
  std::ofstream f(csv_path);
  if (!f) throw DataError("write_manifest: cannot open " + csv_path.string());
  f << "id,image_path,label\n";
  for (const auto& s : samples) {
    const std::string rel = "images/" + s.id + ".pgm";
    write_pgm(s.image, dir / rel);
    f << s.id << "," << rel << ",";
    if (s.label) {
      char buf[40];
      std::snprintf(buf, sizeof(buf), "%.17g", *s.label);
      f << buf;
    }
    f << "\n";
  }
}

std::vector<Sample> load_manifest(const std::filesystem::path& csv_path) {
  std::ifstream f(csv_path);
  if (!f) throw DataError("load_manifest: cannot open " + csv_path.string());
  const auto dir = csv_path.parent_path();

  std::string line;
  if (!std::getline(f, line) || line.rfind("id,image_path,label", 0) != 0)
    throw DataError("load_manifest: missing header in " + csv_path.string());

  std::vector<Sample> out;
  std::vector<std::string> missing;
  int line_no = 1;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto p1 = line.find(',');
    const auto p2 = line.find(',', p1 == std::string::npos ? p1 : p1 + 1);
    if (p1 == std::string::npos || p2 == std::string::npos)
      throw DataError("load_manifest: malformed row at line " + std::to_string(line_no));
    Sample s;
    s.id = line.substr(0, p1);
    const std::string rel = line.substr(p1 + 1, p2 - p1 - 1);
    const std::string label_str = line.substr(p2 + 1);
    if (s.id.empty() || rel.empty())
      throw DataError("load_manifest: malformed row at line " + std::to_string(line_no));
    if (!label_str.empty()) {
      std::size_t pos = 0;
      double y = 0;
      try {
        y = std::stod(label_str, &pos);
      } catch (const std::exception&) {
        throw DataError("load_manifest: bad label at line " + std::to_string(line_no));
      }
      if (pos != label_str.size())
        throw DataError("load_manifest: bad label at line " + std::to_string(line_no));
      if (y < 0.0 || y > 3.0)
        std::cerr << "warning: implausible label " << y << " for id " << s.id << "\n";
      s.label = y;
    }
    const auto img_path = dir / rel;
    if (!std::filesystem::exists(img_path)) {
      missing.push_back(s.id);
      continue;
    }
    s.image = load_pgm(img_path);
    out.push_back(std::move(s));
  }
  if (!missing.empty()) {
    std::string msg = "load_manifest: missing image files for ids:";
    for (const auto& id : missing) msg += " " + id;
    throw DataError(msg);
  }
  return out;
}

}  // namespace ssreg
