#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "evoprobe/baselines.hpp"
#include "evoprobe/core.hpp"
#include "evoprobe/evo_attack.hpp"
#include "evoprobe/oracles.hpp"
#include "evoprobe/remote.hpp"

namespace evoprobe {

inline constexpr int kSchemaVersion = 1;

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Method { Evolutionary, Boundary, UnbiasedEs };

std::string to_string(Method m);
Method parse_method(const std::string& s);

/// Recipe for a vector of the oracle's dimension.
///   inline:  values
///   file:    path (.csv or binary point file)
///   fill:    every entry = value
///   uniform: U(low, high), seeded
///   normal:  N(0, scale^2), seeded
///   smooth:  N(0, scale^2) on `grid`, upscaled bilinearly to the input shape
///   basis:   scale * e_index
///   blocks:  the first `count` entries = value, the rest = rest
struct VectorSource {
  std::string kind = "fill";
  std::vector<double> values;
  std::string path;
  double value = 0.0;
  double rest = 0.0;
  double low = 0.0;
  double high = 1.0;
  double scale = 1.0;
  std::uint64_t seed = 0;
  std::optional<GridShape> grid;
  std::size_t index = 0;
  std::size_t count = 0;

  std::vector<double> materialize(std::size_t n, const std::optional<GridShape>& shape) const;
};

void to_json(nlohmann::json& j, const VectorSource& v);
void from_json(const nlohmann::json& j, VectorSource& v);

/// Oracle description. `params` by type:
///   halfspace      normal (source), offset | margin
///                  (margin m: b = w.x - m ||w|| for the original x)
///   sphere         center (source), radius
///   ellipsoid      center, semi_axes (sources)
///   cosine-verify  embedding_rows, embedding_seed, reference (source), threshold
///   centroid-id    embedding_rows, embedding_seed, gallery (list of sources)
///   constant       label, num_labels
///   remote         RemoteOracleConfig keys
struct OracleSpec {
  std::string type = "halfspace";
  std::string name;  // label used in summaries; defaults to type
  std::optional<std::size_t> dimension;
  std::optional<GridShape> shape;
  std::optional<Bounds> bounds;
  nlohmann::json params = nlohmann::json::object();

  std::size_t input_dimension() const;
  std::string label() const { return name.empty() ? type : name; }
  InputGeometry geometry() const;
};

void to_json(nlohmann::json& j, const OracleSpec& o);
void from_json(const nlohmann::json& j, OracleSpec& o);

std::unique_ptr<Oracle> build_oracle(const OracleSpec& spec, const Point& original);

struct InitSpec {
  std::string mode = "random-uniform";  // or "given"
  std::uint64_t max_attempts = 100;
  Bounds box{0.0, 1.0};
  std::optional<VectorSource> point;
};

struct ExperimentConfig {
  int schema_version = kSchemaVersion;
  std::string name = "experiment";
  OracleSpec oracle;
  /// dodge-binary, impersonate-binary, dodge-multiclass, impersonate-multiclass
  std::string criterion = "dodge-binary";
  std::optional<std::uint32_t> true_label;
  std::optional<std::uint32_t> target_label;
  VectorSource original;
  InitSpec init;
  std::vector<Method> methods{Method::Evolutionary};
  EvoHyperParams evo;  // budget is ignored; runs use max(budgets)
  BoundaryParams boundary;
  std::vector<std::uint64_t> budgets{1000};
  std::vector<std::uint64_t> seeds{0};
  std::vector<GridShape> m_sweep;
  std::filesystem::path output_dir = "runs";
  unsigned workers = 1;

  std::uint64_t max_budget() const { return budgets.empty() ? 0 : budgets.back(); }
  AdversarialCriterion parsed_criterion() const;
  Point original_point() const;
  InitMode init_mode(const Point& original) const;
  EvoHyperParams evo_params() const;

  /// Every problem found, without running anything.
  std::vector<std::string> problems() const;
  void validate() const;
};

void to_json(nlohmann::json& j, const ExperimentConfig& c);
void from_json(const nlohmann::json& j, ExperimentConfig& c);

ExperimentConfig load_config(const std::filesystem::path& path);
void save_config(const std::filesystem::path& path, const ExperimentConfig& config);

/// Sets the value at a JSON pointer ("/evo/c_cov") or dotted path
/// ("evo.c_cov"). The value is parsed as JSON when possible, else taken as a
/// string.
void apply_override(nlohmann::json& doc, const std::string& path, const std::string& value);

std::string to_string(const GridShape& s);  // "8x8x3"
GridShape parse_grid_shape(const std::string& s);

}  // namespace evoprobe
