#include "ncf/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>

#include "ncf/image_io.hpp"
#include "ncf/rng.hpp"

namespace ncf {

namespace {

Vec3 hsv_to_rgb(double h, double s, double v) {
  h = std::fmod(std::fmod(h, 360.0) + 360.0, 360.0) / 60.0;
  const int sector = static_cast<int>(std::floor(h)) % 6;
  const double f = h - std::floor(h);
  const double p = v * (1 - s);
  const double q = v * (1 - s * f);
  const double t = v * (1 - s * (1 - f));
  switch (sector) {
    case 0: return {v, t, p};
    case 1: return {q, v, p};
    case 2: return {p, v, t};
    case 3: return {p, q, v};
    case 4: return {t, p, v};
    default: return {v, p, q};
  }
}

Vec3 clamp01(const Vec3& c) { return c.cwiseMax(0.0).cwiseMin(1.0); }

bool inside_shape(ShapeKind shape, double dx, double dy, double radius) {
  switch (shape) {
    case ShapeKind::Circle: return dx * dx + dy * dy <= radius * radius;
    case ShapeKind::Square: return std::abs(dx) <= radius * 0.85 && std::abs(dy) <= radius * 0.85;
    case ShapeKind::Triangle: {
      // Upward equilateral triangle with circumradius `radius`.
      const double bottom = radius * 0.5;
      const double half_width = (dy + radius) / std::sqrt(3.0);
      return dy <= bottom && dy >= -radius && std::abs(dx) <= half_width;
    }
  }
  return false;
}

SyntheticSample make_sample(int label, int index, const SyntheticConfig& config) {
  Rng rng(derive_seed(config.seed, {static_cast<std::uint64_t>(label), static_cast<std::uint64_t>(index)}));
  const int n = config.size;
  SyntheticSample s;
  char id[32];
  std::snprintf(id, sizeof(id), "c%02d_%05d", label, index);
  s.id = id;
  s.label = label;
  s.image = RgbImage(n, n);
  s.mask = SegmentationMask(n, n, kBackgroundClass);

  // Background: muted base color, linear gradient, two sinusoids and noise.
  const Vec3 base = hsv_to_rgb(uniform(rng, 0, 360), uniform(rng, 0.05, 0.35), uniform(rng, 0.35, 0.85));
  const double grad_angle = uniform(rng, 0, 2 * std::numbers::pi);
  const double grad_amp = uniform(rng, 0.0, 0.15);
  const double f1 = uniform(rng, 0.05, 0.3);
  const double f2 = uniform(rng, 0.05, 0.3);
  const double ph1 = uniform(rng, 0, 2 * std::numbers::pi);
  const double ph2 = uniform(rng, 0, 2 * std::numbers::pi);
  const double tex_amp = uniform(rng, 0.02, 0.08);

  const ShapeKind shape = class_shape(label);
  const double hue = class_hue(label, config.classes) + uniform(rng, -12.0, 12.0);
  const Vec3 object = hsv_to_rgb(hue, uniform(rng, 0.55, 0.95), uniform(rng, 0.5, 0.95));
  const double radius = uniform(rng, 0.2, 0.33) * n;
  const double margin = radius + 2.0;
  const double cx = uniform(rng, margin, n - margin);
  const double cy = uniform(rng, margin, n - margin);
  const double shade = uniform(rng, -0.1, 0.1);

  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) {
      const double u = static_cast<double>(x) / n - 0.5;
      const double v = static_cast<double>(y) / n - 0.5;
      const double noise = 0.02 * standard_normal(rng);
      if (inside_shape(shape, x + 0.5 - cx, y + 0.5 - cy, radius)) {
        const double light = shade * ((y + 0.5 - cy) / radius);
        s.image.at(x, y) = clamp01(object * (1.0 + light) + Vec3::Constant(noise));
        s.mask.at(x, y) = object_mask_id(shape);
      } else {
        const double g = grad_amp * (std::cos(grad_angle) * u + std::sin(grad_angle) * v);
        const double t = tex_amp * (std::sin(f1 * x + ph1) + std::sin(f2 * y + ph2)) * 0.5;
        s.image.at(x, y) = clamp01(base + Vec3::Constant(g + t + noise));
      }
    }
  }
  s.image = io::quantize8(s.image);
  return s;
}

}  // namespace

ShapeKind class_shape(int label) noexcept { return static_cast<ShapeKind>(label % 3); }

double class_hue(int label, int classes) noexcept { return 360.0 * label / classes; }

std::vector<SyntheticSample> make_synthetic(const SyntheticConfig& config) {
  if (config.classes < 3 || config.classes > 10) {
    throw Error(ErrorCode::InvalidArgument, "synthetic class count must lie in [3, 10]");
  }
  if (config.per_class < 1) throw Error(ErrorCode::InvalidArgument, "per-class count must be positive");
  if (config.size < 16) throw Error(ErrorCode::InvalidArgument, "synthetic images must be at least 16 pixels wide");
  std::vector<SyntheticSample> out;
  out.reserve(static_cast<std::size_t>(config.classes) * config.per_class);
  for (int label = 0; label < config.classes; ++label) {
    for (int i = 0; i < config.per_class; ++i) out.push_back(make_sample(label, i, config));
  }
  return out;
}

void write_dataset(const std::filesystem::path& dir, std::span<const SyntheticSample> samples) {
  std::filesystem::create_directories(dir / "images");
  std::filesystem::create_directories(dir / "masks");
  std::ofstream csv(dir / "labels.csv", std::ios::trunc);
  if (!csv) throw Error(ErrorCode::Io, "cannot write " + (dir / "labels.csv").string());
  csv << "id,label\n";
  for (const auto& s : samples) {
    io::write_png(dir / "images" / (s.id + ".png"), s.image);
    io::write_pgm(dir / "masks" / (s.id + ".pgm"), s.mask);
    csv << s.id << ',' << s.label << '\n';
  }
}

std::vector<LabelEntry> read_labels(const std::filesystem::path& csv) {
  std::ifstream in(csv);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + csv.string());
  std::vector<LabelEntry> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || (line_no == 1 && line.rfind("id,", 0) == 0)) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) {
      throw Error(ErrorCode::Format, csv.string() + ":" + std::to_string(line_no) + ": expected id,label");
    }
    LabelEntry e;
    e.id = line.substr(0, comma);
    try {
      std::size_t used = 0;
      e.label = std::stoi(line.substr(comma + 1), &used);
      if (used != line.size() - comma - 1) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw Error(ErrorCode::Format, csv.string() + ":" + std::to_string(line_no) + ": bad label");
    }
    rows.push_back(std::move(e));
  }
  std::sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  return rows;
}

std::vector<SyntheticSample> read_dataset(const std::filesystem::path& dir) {
  std::vector<SyntheticSample> out;
  for (const auto& row : read_labels(dir / "labels.csv")) {
    SyntheticSample s;
    s.id = row.id;
    s.label = row.label;
    s.image = io::read_image(dir / "images" / (row.id + ".png"));
    s.mask = io::read_mask(dir / "masks" / (row.id + ".pgm"));
    if (!s.mask.matches(s.image)) {
      throw Error(ErrorCode::ShapeMismatch, (dir / "masks" / (row.id + ".pgm")).string() +
                                                " does not match the dimensions of its image");
    }
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace ncf
