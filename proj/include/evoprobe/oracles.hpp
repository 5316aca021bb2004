#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "evoprobe/core.hpp"

namespace evoprobe {

/// Dimension, optional grid shape and optional bounds shared by the
/// synthetic oracles.
struct InputGeometry {
  std::size_t dimension = 0;
  std::optional<GridShape> shape;
  std::optional<Bounds> bounds;

  static InputGeometry flat(std::size_t n) { return {n, std::nullopt, std::nullopt}; }
  static InputGeometry image(GridShape s, Bounds b = {}) { return {s.size(), s, b}; }
};

class SyntheticOracle : public Oracle {
 public:
  explicit SyntheticOracle(InputGeometry geometry);

  std::size_t dimension() const override { return geometry_.dimension; }
  std::optional<GridShape> shape() const override { return geometry_.shape; }
  std::optional<Bounds> bounds() const override { return geometry_.bounds; }
  const InputGeometry& geometry() const noexcept { return geometry_; }

 private:
  InputGeometry geometry_;
};

/// Label 1 iff w.x >= b.
class HalfspaceOracle final : public SyntheticOracle {
 public:
  HalfspaceOracle(std::vector<double> w, double b, std::optional<InputGeometry> geometry = std::nullopt);

  const std::vector<double>& normal() const noexcept { return w_; }
  double offset() const noexcept { return b_; }
  std::string name() const override { return "halfspace"; }

 protected:
  Evaluation evaluate(std::span<const double> x) const override;

 private:
  std::vector<double> w_;
  double b_;
};

/// Label 1 iff ||x - c|| <= r.
class SphereOracle final : public SyntheticOracle {
 public:
  SphereOracle(std::vector<double> center, double radius,
               std::optional<InputGeometry> geometry = std::nullopt);

  const std::vector<double>& center() const noexcept { return center_; }
  double radius() const noexcept { return radius_; }
  std::string name() const override { return "sphere"; }

 protected:
  Evaluation evaluate(std::span<const double> x) const override;

 private:
  std::vector<double> center_;
  double radius_;
};

/// Label 1 iff sum(((x_i - c_i) / a_i)^2) <= 1.
class EllipsoidOracle final : public SyntheticOracle {
 public:
  EllipsoidOracle(std::vector<double> center, std::vector<double> semi_axes,
                  std::optional<InputGeometry> geometry = std::nullopt);

  const std::vector<double>& center() const noexcept { return center_; }
  const std::vector<double>& semi_axes() const noexcept { return axes_; }
  std::string name() const override { return "ellipsoid"; }

 protected:
  Evaluation evaluate(std::span<const double> x) const override;

 private:
  std::vector<double> center_;
  std::vector<double> axes_;
};

/// Dense d x n embedding, row-major.
struct Embedding {
  std::size_t rows = 0;  // d
  std::size_t cols = 0;  // n
  std::vector<double> data;

  /// Entries i.i.d. Normal(0, 1/n) from a seeded generator.
  static Embedding random(std::size_t rows, std::size_t cols, std::uint64_t seed);
  std::vector<double> apply(std::span<const double> x) const;
};

double cosine_similarity(std::span<const double> a, std::span<const double> b);

/// Verification-style oracle: label 1 iff cos(E x, E x_ref) >= threshold.
class CosineVerifyOracle final : public SyntheticOracle {
 public:
  CosineVerifyOracle(Embedding embedding, std::vector<double> reference, double threshold,
                     std::optional<InputGeometry> geometry = std::nullopt);

  std::string name() const override { return "cosine_verify"; }
  double similarity(std::span<const double> x) const;
  double threshold() const noexcept { return threshold_; }

 protected:
  Evaluation evaluate(std::span<const double> x) const override;

 private:
  Embedding embedding_;
  std::vector<double> reference_embedding_;
  double threshold_;
};

/// Identification-style oracle: label j = argmax_j cos(E x, g_j), ties to
/// the lowest index.
class CentroidIdOracle final : public SyntheticOracle {
 public:
  CentroidIdOracle(Embedding embedding, std::vector<std::vector<double>> gallery,
                   std::optional<InputGeometry> geometry = std::nullopt);

  std::uint32_t num_labels() const override { return static_cast<std::uint32_t>(gallery_.size()); }
  std::string name() const override { return "centroid_id"; }
  const Embedding& embedding() const noexcept { return embedding_; }
  const std::vector<std::vector<double>>& gallery() const noexcept { return gallery_; }

 protected:
  Evaluation evaluate(std::span<const double> x) const override;

 private:
  Embedding embedding_;
  std::vector<std::vector<double>> gallery_;
};

/// Always answers the same label. With a matching criterion the objective
/// reduces to pure distance.
class ConstantOracle final : public SyntheticOracle {
 public:
  ConstantOracle(std::size_t dimension, Label label, std::uint32_t num_labels = 2);

  std::uint32_t num_labels() const override { return num_labels_; }
  std::string name() const override { return "constant"; }

 protected:
  Evaluation evaluate(std::span<const double>) const override { return {label_, true}; }

 private:
  Label label_;
  std::uint32_t num_labels_;
};

/// Distance from a centered point to the ellipsoid surface with the given
/// semi-axes (bisection on the KKT multiplier).
double ellipsoid_surface_distance(std::span<const double> centered, std::span<const double> semi_axes,
                                  double tolerance = 1e-12);

/// Exact minimal L2 distance from x to the adversarial region, for oracles
/// with closed-form geometry (halfspace, sphere, ellipsoid). 0 if x is
/// already adversarial. nullopt for other oracle types or criteria that do
/// not map onto a binary region.
std::optional<double> analytic_min_distortion(const Oracle& oracle, const Point& x,
                                              const AdversarialCriterion& criterion);

// ---------------------------------------------------------------------------
// Point files
// ---------------------------------------------------------------------------

enum class PointFormat { Csv, Binary };

class MalformedPointFile : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

PointFormat parse_point_format(const std::string& name);
/// Guesses from extension: ".csv" is CSV, anything else binary.
PointFormat point_format_for(const std::filesystem::path& path);

Point load_point(const std::filesystem::path& path, PointFormat format,
                 std::optional<GridShape> shape = std::nullopt, std::optional<Bounds> bounds = std::nullopt);
void save_point(const std::filesystem::path& path, const Point& point, PointFormat format);

std::vector<double> parse_point_csv(const std::string& text);
std::string encode_point_csv(std::span<const double> values);
std::vector<double> decode_point_binary(const std::string& bytes);
std::string encode_point_binary(std::span<const double> values);

}  // namespace evoprobe
