#include "evoprobe/oracles.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

namespace evoprobe {

namespace {

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

InputGeometry resolve_geometry(std::optional<InputGeometry> geometry, std::size_t n) {
  if (!geometry) return InputGeometry::flat(n);
  if (geometry->dimension != n) throw DimensionMismatch(n, geometry->dimension);
  return *geometry;
}

}  // namespace

SyntheticOracle::SyntheticOracle(InputGeometry geometry) : geometry_(std::move(geometry)) {
  if (geometry_.dimension == 0) throw std::invalid_argument("oracle dimension must be positive");
  if (geometry_.shape && geometry_.shape->size() != geometry_.dimension) {
    throw DimensionMismatch(geometry_.dimension, geometry_.shape->size());
  }
}

// --- halfspace -------------------------------------------------------------

HalfspaceOracle::HalfspaceOracle(std::vector<double> w, double b, std::optional<InputGeometry> geometry)
    : SyntheticOracle(resolve_geometry(geometry, w.size())), w_(std::move(w)), b_(b) {
  if (!(norm(w_) > 0.0)) throw std::invalid_argument("halfspace normal must be nonzero");
  if (!std::isfinite(b_)) throw std::invalid_argument("halfspace offset must be finite");
}

Evaluation HalfspaceOracle::evaluate(std::span<const double> x) const {
  return {Label{dot(w_, x) >= b_ ? 1u : 0u}};
}

// --- sphere ----------------------------------------------------------------

SphereOracle::SphereOracle(std::vector<double> center, double radius, std::optional<InputGeometry> geometry)
    : SyntheticOracle(resolve_geometry(geometry, center.size())), center_(std::move(center)), radius_(radius) {
  if (!(radius_ > 0.0)) throw std::invalid_argument("sphere radius must be positive");
}

Evaluation SphereOracle::evaluate(std::span<const double> x) const {
  return {Label{l2_distance(x, center_) <= radius_ ? 1u : 0u}};
}

// --- ellipsoid -------------------------------------------------------------

EllipsoidOracle::EllipsoidOracle(std::vector<double> center, std::vector<double> semi_axes,
                                 std::optional<InputGeometry> geometry)
    : SyntheticOracle(resolve_geometry(geometry, center.size())),
      center_(std::move(center)),
      axes_(std::move(semi_axes)) {
  if (axes_.size() != center_.size()) throw DimensionMismatch(center_.size(), axes_.size());
  for (double a : axes_) {
    if (!(a > 0.0) || !std::isfinite(a)) throw std::invalid_argument("ellipsoid semi-axes must be positive");
  }
}

Evaluation EllipsoidOracle::evaluate(std::span<const double> x) const {
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double u = (x[i] - center_[i]) / axes_[i];
    s += u * u;
  }
  return {Label{s <= 1.0 ? 1u : 0u}};
}

// --- embeddings ------------------------------------------------------------

Embedding Embedding::random(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  if (rows == 0 || cols == 0) throw std::invalid_argument("embedding dimensions must be positive");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(cols)));
  Embedding e{rows, cols, std::vector<double>(rows * cols)};
  for (double& v : e.data) v = normal(rng);
  return e;
}

std::vector<double> Embedding::apply(std::span<const double> x) const {
  if (x.size() != cols) throw DimensionMismatch(cols, x.size());
  std::vector<double> out(rows, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    out[r] = dot(std::span<const double>(data).subspan(r * cols, cols), x);
  }
  return out;
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  const double na = norm(a);
  const double nb = norm(b);
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot(a, b) / (na * nb);
}

CosineVerifyOracle::CosineVerifyOracle(Embedding embedding, std::vector<double> reference, double threshold,
                                       std::optional<InputGeometry> geometry)
    : SyntheticOracle(resolve_geometry(geometry, embedding.cols)),
      embedding_(std::move(embedding)),
      threshold_(threshold) {
  if (reference.size() != embedding_.cols) throw DimensionMismatch(embedding_.cols, reference.size());
  if (!(threshold_ > -1.0 && threshold_ < 1.0)) throw std::invalid_argument("cosine threshold must be in (-1, 1)");
  for (double v : embedding_.data) {
    if (!std::isfinite(v)) throw std::invalid_argument("embedding entries must be finite");
  }
  reference_embedding_ = embedding_.apply(reference);
  if (norm(reference_embedding_) == 0.0) throw std::invalid_argument("reference embedding is zero");
}

double CosineVerifyOracle::similarity(std::span<const double> x) const {
  return cosine_similarity(embedding_.apply(x), reference_embedding_);
}

Evaluation CosineVerifyOracle::evaluate(std::span<const double> x) const {
  return {Label{similarity(x) >= threshold_ ? 1u : 0u}};
}

CentroidIdOracle::CentroidIdOracle(Embedding embedding, std::vector<std::vector<double>> gallery,
                                   std::optional<InputGeometry> geometry)
    : SyntheticOracle(resolve_geometry(geometry, embedding.cols)),
      embedding_(std::move(embedding)),
      gallery_(std::move(gallery)) {
  if (gallery_.size() < 2) throw std::invalid_argument("centroid gallery needs at least two identities");
  for (const auto& g : gallery_) {
    if (g.size() != embedding_.rows) throw DimensionMismatch(embedding_.rows, g.size());
    if (norm(g) == 0.0) throw std::invalid_argument("gallery centroid is zero");
  }
}

Evaluation CentroidIdOracle::evaluate(std::span<const double> x) const {
  const std::vector<double> e = embedding_.apply(x);
  std::uint32_t best = 0;
  double best_sim = cosine_similarity(e, gallery_[0]);
  for (std::uint32_t j = 1; j < gallery_.size(); ++j) {
    const double s = cosine_similarity(e, gallery_[j]);
    if (s > best_sim) {
      best_sim = s;
      best = j;
    }
  }
  return {Label{best}};
}

ConstantOracle::ConstantOracle(std::size_t dimension, Label label, std::uint32_t num_labels)
    : SyntheticOracle(InputGeometry::flat(dimension)), label_(label), num_labels_(num_labels) {
  if (label_.value >= num_labels_) throw std::invalid_argument("constant label outside label set");
}

// --- analytic ground truth -------------------------------------------------

double ellipsoid_surface_distance(std::span<const double> x, std::span<const double> a, double tolerance) {
  if (x.size() != a.size()) throw DimensionMismatch(a.size(), x.size());
  const std::size_t n = x.size();
  double amin2 = std::numeric_limits<double>::infinity();
  for (double ai : a) amin2 = std::min(amin2, ai * ai);

  // Nearest surface point: y_i = x_i a_i^2 / (a_i^2 + t), with t the root of
  // F(t) = sum (a_i x_i / (a_i^2 + t))^2 - 1 on (-amin^2, inf).
  auto surface_point = [&](double t) {
    std::vector<double> y(n);
    for (std::size_t i = 0; i < n; ++i) y[i] = x[i] * a[i] * a[i] / (a[i] * a[i] + t);
    return y;
  };
  auto F = [&](double t) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double u = a[i] * x[i] / (a[i] * a[i] + t);
      s += u * u;
    }
    return s - 1.0;
  };

  // Degenerate case: x has no component along any smallest axis, so F stays
  // bounded as t -> -amin^2 and the optimum may sit on that axis.
  bool degenerate = true;
  for (std::size_t i = 0; i < n; ++i) {
    if (a[i] * a[i] == amin2 && x[i] != 0.0) degenerate = false;
  }
  if (degenerate) {
    std::vector<double> y(n, 0.0);
    double s = 0.0;
    std::size_t first_min = n;
    for (std::size_t i = 0; i < n; ++i) {
      const double ai2 = a[i] * a[i];
      if (ai2 == amin2) {
        if (first_min == n) first_min = i;
        continue;
      }
      y[i] = x[i] * ai2 / (ai2 - amin2);
      s += (y[i] / a[i]) * (y[i] / a[i]);
    }
    if (s <= 1.0) {
      y[first_min] = a[first_min] * std::sqrt(1.0 - s);
      return l2_distance(x, y);
    }
  }

  double lo = -amin2;
  double hi = 0.0;
  if (F(0.0) > 0.0) {
    lo = 0.0;
    hi = 1.0;
    while (F(hi) > 0.0) hi *= 2.0;
  }
  for (int iter = 0; iter < 2000; ++iter) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;
    if (F(mid) > 0.0) lo = mid;
    else hi = mid;
    if (hi - lo <= tolerance * std::max(1.0, std::abs(hi))) break;
  }
  return l2_distance(x, surface_point(0.5 * (lo + hi)));
}

std::optional<double> analytic_min_distortion(const Oracle& oracle, const Point& x,
                                              const AdversarialCriterion& criterion) {
  if (x.size() != oracle.dimension()) throw DimensionMismatch(oracle.dimension(), x.size());
  if (oracle.num_labels() != 2) return std::nullopt;
  const bool inside_adversarial = is_adversarial(criterion, Label{1});
  const bool outside_adversarial = is_adversarial(criterion, Label{0});
  if (inside_adversarial && outside_adversarial) return 0.0;
  if (!inside_adversarial && !outside_adversarial) return std::nullopt;

  // signed: > 0 means x lies in the label-1 region's complement by that much
  // (distance to reach label 1), < 0 means inside by that much.
  if (const auto* h = dynamic_cast<const HalfspaceOracle*>(&oracle)) {
    const double gap = (h->offset() - dot(h->normal(), x.values())) / norm(h->normal());
    return inside_adversarial ? std::max(0.0, gap) : std::max(0.0, -gap);
  }
  if (const auto* s = dynamic_cast<const SphereOracle*>(&oracle)) {
    const double gap = l2_distance(x.values(), s->center()) - s->radius();
    return inside_adversarial ? std::max(0.0, gap) : std::max(0.0, -gap);
  }
  if (const auto* e = dynamic_cast<const EllipsoidOracle*>(&oracle)) {
    std::vector<double> centered(x.size());
    double level = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      centered[i] = x[i] - e->center()[i];
      const double u = centered[i] / e->semi_axes()[i];
      level += u * u;
    }
    const bool inside = level <= 1.0;
    if (inside == inside_adversarial) return 0.0;
    return ellipsoid_surface_distance(centered, e->semi_axes());
  }
  return std::nullopt;
}

// --- point files -----------------------------------------------------------

namespace {
constexpr char kMagic[4] = {'E', 'V', 'P', 'T'};
constexpr std::size_t kHeaderSize = 16;
}  // namespace

PointFormat parse_point_format(const std::string& name) {
  if (name == "csv") return PointFormat::Csv;
  if (name == "binary" || name == "bin" || name == "evpt") return PointFormat::Binary;
  throw std::invalid_argument("unknown point format '" + name + "'");
}

PointFormat point_format_for(const std::filesystem::path& path) {
  return path.extension() == ".csv" ? PointFormat::Csv : PointFormat::Binary;
}

std::vector<double> parse_point_csv(const std::string& text) {
  std::string_view body(text);
  while (!body.empty() && (body.back() == '\n' || body.back() == '\r' || body.back() == ' ')) {
    body.remove_suffix(1);
  }
  if (body.find('\n') != std::string_view::npos) {
    throw MalformedPointFile("point CSV must contain a single row");
  }
  std::vector<double> values;
  if (body.empty()) throw MalformedPointFile("point CSV is empty");
  std::size_t pos = 0;
  while (pos <= body.size()) {
    std::size_t end = body.find(',', pos);
    if (end == std::string_view::npos) end = body.size();
    std::string_view cell = body.substr(pos, end - pos);
    while (!cell.empty() && cell.front() == ' ') cell.remove_prefix(1);
    while (!cell.empty() && cell.back() == ' ') cell.remove_suffix(1);
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
    if (cell.empty() || ec != std::errc() || ptr != cell.data() + cell.size()) {
      throw MalformedPointFile("point CSV: cannot parse cell '" + std::string(cell) + "'");
    }
    values.push_back(v);
    pos = end + 1;
  }
  return values;
}

std::string encode_point_csv(std::span<const double> values) {
  std::string out;
  char buf[64];
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out.push_back(',');
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), values[i]);
    out.append(buf, ptr);
  }
  out.push_back('\n');
  return out;
}

std::string encode_point_binary(std::span<const double> values) {
  if (values.size() > std::numeric_limits<std::uint32_t>::max()) {
    throw std::length_error("point too large for binary format");
  }
  std::string out(kHeaderSize + 8 * values.size(), '\0');
  std::copy(std::begin(kMagic), std::end(kMagic), out.begin());
  const auto n = static_cast<std::uint32_t>(values.size());
  for (int b = 0; b < 4; ++b) out[4 + b] = static_cast<char>((n >> (8 * b)) & 0xff);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const auto bits = std::bit_cast<std::uint64_t>(values[i]);
    for (int b = 0; b < 8; ++b) out[kHeaderSize + 8 * i + b] = static_cast<char>((bits >> (8 * b)) & 0xff);
  }
  return out;
}

std::vector<double> decode_point_binary(const std::string& bytes) {
  if (bytes.size() < kHeaderSize) throw MalformedPointFile("binary point: truncated header");
  if (!std::equal(std::begin(kMagic), std::end(kMagic), bytes.begin())) {
    throw MalformedPointFile("binary point: bad magic");
  }
  std::uint32_t n = 0;
  for (int b = 0; b < 4; ++b) n |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[4 + b])) << (8 * b);
  if (bytes.size() != kHeaderSize + 8 * static_cast<std::size_t>(n)) {
    throw MalformedPointFile("binary point: expected " + std::to_string(n) + " values, file size " +
                             std::to_string(bytes.size()));
  }
  std::vector<double> values(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) {
      bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[kHeaderSize + 8 * i + b])) << (8 * b);
    }
    values[i] = std::bit_cast<double>(bits);
  }
  return values;
}

Point load_point(const std::filesystem::path& path, PointFormat format, std::optional<GridShape> shape,
                 std::optional<Bounds> bounds) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open point file " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  std::vector<double> values =
      format == PointFormat::Csv ? parse_point_csv(buf.str()) : decode_point_binary(buf.str());
  if (shape && shape->size() != values.size()) {
    throw MalformedPointFile("point file " + path.string() + " has " + std::to_string(values.size()) +
                             " values, shape requires " + std::to_string(shape->size()));
  }
  return Point(std::move(values), shape, bounds);
}

void save_point(const std::filesystem::path& path, const Point& point, PointFormat format) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write point file " + path.string());
  const std::string bytes =
      format == PointFormat::Csv ? encode_point_csv(point.values()) : encode_point_binary(point.values());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace evoprobe
