#include "evoprobe/config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace evoprobe {

using nlohmann::json;

namespace {

void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  for (const auto& [key, _] : j.items()) {
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; })) {
      throw ConfigError("unknown key '" + key + "' in " + where);
    }
  }
}

json shape_json(const std::optional<GridShape>& s) {
  if (!s) return nullptr;
  return json::array({s->height, s->width, s->channels});
}

GridShape shape_from(const json& j) {
  if (!j.is_array() || j.size() != 3) throw ConfigError("shape must be [height, width, channels]");
  GridShape s{j[0].get<std::size_t>(), j[1].get<std::size_t>(), j[2].get<std::size_t>()};
  if (s.size() == 0) throw ConfigError("shape must have positive extents");
  return s;
}

std::optional<GridShape> optional_shape(const json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return shape_from(j.at(key));
}

json bounds_json(const Bounds& b) { return json::array({b.lower, b.upper}); }

Bounds bounds_from(const json& j) {
  if (!j.is_array() || j.size() != 2) throw ConfigError("bounds must be [lower, upper]");
  const Bounds b{j[0].get<double>(), j[1].get<double>()};
  if (!(b.lower < b.upper)) throw ConfigError("bounds must satisfy lower < upper");
  return b;
}

template <typename T>
json optional_json(const std::optional<T>& v) {
  return v ? json(*v) : json(nullptr);
}

template <typename T>
std::optional<T> optional_from(const json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<T>();
}

json evo_json(const EvoHyperParams& p) {
  return json{{"search_shape", shape_json(p.search_shape)},
              {"k", optional_json(p.k)},
              {"c_c", p.c_c},
              {"c_cov", p.c_cov},
              {"sigma_factor", p.sigma_factor},
              {"mu_init", p.mu_init},
              {"success_window", p.success_window},
              {"clamp_to_bounds", p.clamp_to_bounds},
              {"cma_enabled", p.cma_enabled},
              {"scs_enabled", p.scs_enabled},
              {"scs_weighting", to_string(p.scs_weighting)},
              {"adapt_mu", p.adapt_mu}};
}

EvoHyperParams evo_from(const json& j) {
  check_keys(j,
             {"search_shape", "k", "c_c", "c_cov", "sigma_factor", "mu_init", "success_window", "clamp_to_bounds",
              "cma_enabled", "scs_enabled", "scs_weighting", "adapt_mu"},
             "evo");
  EvoHyperParams p;
  p.search_shape = optional_shape(j, "search_shape");
  p.k = optional_from<std::size_t>(j, "k");
  p.c_c = j.value("c_c", p.c_c);
  p.c_cov = j.value("c_cov", p.c_cov);
  p.sigma_factor = j.value("sigma_factor", p.sigma_factor);
  p.mu_init = j.value("mu_init", p.mu_init);
  p.success_window = j.value("success_window", p.success_window);
  p.clamp_to_bounds = j.value("clamp_to_bounds", p.clamp_to_bounds);
  p.cma_enabled = j.value("cma_enabled", p.cma_enabled);
  p.scs_enabled = j.value("scs_enabled", p.scs_enabled);
  p.scs_weighting = parse_scs_weighting(j.value("scs_weighting", to_string(p.scs_weighting)));
  p.adapt_mu = j.value("adapt_mu", p.adapt_mu);
  return p;
}

json boundary_json(const BoundaryParams& p) {
  return json{{"orth_step", p.orth_step},
              {"toward_step", p.toward_step},
              {"adapt_window", p.adapt_window},
              {"orth_target", p.orth_target},
              {"toward_target", p.toward_target},
              {"orth_adapt_factor", p.orth_adapt_factor},
              {"max_orth_step", p.max_orth_step},
              {"max_toward_step", p.max_toward_step},
              {"clamp_to_bounds", p.clamp_to_bounds}};
}

BoundaryParams boundary_from(const json& j) {
  check_keys(j,
             {"orth_step", "toward_step", "adapt_window", "orth_target", "toward_target", "orth_adapt_factor",
              "max_orth_step", "max_toward_step", "clamp_to_bounds"},
             "boundary");
  BoundaryParams p;
  p.orth_step = j.value("orth_step", p.orth_step);
  p.toward_step = j.value("toward_step", p.toward_step);
  p.adapt_window = j.value("adapt_window", p.adapt_window);
  p.orth_target = j.value("orth_target", p.orth_target);
  p.toward_target = j.value("toward_target", p.toward_target);
  p.orth_adapt_factor = j.value("orth_adapt_factor", p.orth_adapt_factor);
  p.max_orth_step = j.value("max_orth_step", p.max_orth_step);
  p.max_toward_step = j.value("max_toward_step", p.max_toward_step);
  p.clamp_to_bounds = j.value("clamp_to_bounds", p.clamp_to_bounds);
  return p;
}

VectorSource source_at(const json& params, const char* key) {
  if (!params.contains(key)) throw ConfigError(std::string("missing oracle parameter '") + key + "'");
  return params.at(key).get<VectorSource>();
}

double number_at(const json& params, const char* key) {
  if (!params.contains(key) || !params.at(key).is_number()) {
    throw ConfigError(std::string("oracle parameter '") + key + "' must be a number");
  }
  return params.at(key).get<double>();
}

}  // namespace

std::string to_string(Method m) {
  switch (m) {
    case Method::Evolutionary: return "evolutionary";
    case Method::Boundary: return "boundary";
    case Method::UnbiasedEs: return "unbiased-es";
  }
  return "?";
}

Method parse_method(const std::string& s) {
  if (s == "evolutionary") return Method::Evolutionary;
  if (s == "boundary") return Method::Boundary;
  if (s == "unbiased-es") return Method::UnbiasedEs;
  throw ConfigError("unknown method '" + s + "' (expected evolutionary, boundary or unbiased-es)");
}

std::string to_string(const GridShape& s) {
  return std::to_string(s.height) + "x" + std::to_string(s.width) + "x" + std::to_string(s.channels);
}

GridShape parse_grid_shape(const std::string& s) {
  GridShape g;
  char x1 = 0, x2 = 0;
  std::istringstream in(s);
  if (!(in >> g.height >> x1 >> g.width >> x2 >> g.channels) || x1 != 'x' || x2 != 'x' || !in.eof() ||
      g.size() == 0) {
    throw ConfigError("grid shape '" + s + "' is not of the form HxWxC");
  }
  return g;
}

// ---------------------------------------------------------------------------

std::vector<double> VectorSource::materialize(std::size_t n, const std::optional<GridShape>& shape) const {
  std::vector<double> out;
  if (kind == "inline") {
    out = values;
  } else if (kind == "file") {
    out = load_point(path, point_format_for(path)).vector();
  } else if (kind == "fill") {
    out.assign(n, value);
  } else if (kind == "uniform") {
    if (!(low < high)) throw ConfigError("uniform source needs low < high");
    Rng rng(seed);
    std::uniform_real_distribution<double> u(low, high);
    out.resize(n);
    for (double& v : out) v = u(rng);
  } else if (kind == "normal") {
    Rng rng(seed);
    std::normal_distribution<double> d(0.0, scale);
    out.resize(n);
    for (double& v : out) v = d(rng);
  } else if (kind == "smooth") {
    if (!shape) throw ConfigError("smooth source needs an oracle shape");
    if (!grid) throw ConfigError("smooth source needs a grid");
    Rng rng(seed);
    std::normal_distribution<double> d(0.0, scale);
    std::vector<double> coarse(grid->size());
    for (double& v : coarse) v = d(rng);
    out = upscale_bilinear(coarse, *grid, *shape);
  } else if (kind == "basis") {
    if (index >= n) throw ConfigError("basis index out of range");
    out.assign(n, 0.0);
    out[index] = scale;
  } else if (kind == "blocks") {
    if (count > n) throw ConfigError("blocks count exceeds the dimension");
    out.assign(n, rest);
    std::fill(out.begin(), out.begin() + static_cast<std::ptrdiff_t>(count), value);
  } else {
    throw ConfigError("unknown vector source '" + kind + "'");
  }
  if (out.size() != n) {
    throw ConfigError(kind + " source has " + std::to_string(out.size()) + " values, expected " + std::to_string(n));
  }
  return out;
}

void to_json(json& j, const VectorSource& v) {
  j = json{{"kind", v.kind}};
  if (v.kind == "inline") j["values"] = v.values;
  else if (v.kind == "file") j["path"] = v.path;
  else if (v.kind == "fill") j["value"] = v.value;
  else if (v.kind == "uniform") j.update({{"low", v.low}, {"high", v.high}, {"seed", v.seed}});
  else if (v.kind == "normal") j.update({{"scale", v.scale}, {"seed", v.seed}});
  else if (v.kind == "smooth") j.update({{"scale", v.scale}, {"seed", v.seed}, {"grid", shape_json(v.grid)}});
  else if (v.kind == "basis") j.update({{"index", v.index}, {"scale", v.scale}});
  else if (v.kind == "blocks") j.update({{"count", v.count}, {"value", v.value}, {"rest", v.rest}});
}

void from_json(const json& j, VectorSource& v) {
  if (j.is_array()) {
    v = VectorSource{};
    v.kind = "inline";
    v.values = j.get<std::vector<double>>();
    return;
  }
  check_keys(j, {"kind", "values", "path", "value", "rest", "low", "high", "scale", "seed", "grid", "index", "count"},
             "vector source");
  VectorSource d;
  v.kind = j.value("kind", d.kind);
  v.values = j.value("values", d.values);
  v.path = j.value("path", d.path);
  v.value = j.value("value", d.value);
  v.rest = j.value("rest", d.rest);
  v.low = j.value("low", d.low);
  v.high = j.value("high", d.high);
  v.scale = j.value("scale", d.scale);
  v.seed = j.value("seed", d.seed);
  v.grid = optional_shape(j, "grid");
  v.index = j.value("index", d.index);
  v.count = j.value("count", d.count);
}

// ---------------------------------------------------------------------------

std::size_t OracleSpec::input_dimension() const {
  if (shape) return shape->size();
  if (dimension) return *dimension;
  throw ConfigError("oracle needs a dimension or a shape");
}

InputGeometry OracleSpec::geometry() const { return {input_dimension(), shape, bounds}; }

void to_json(json& j, const OracleSpec& o) {
  j = json{{"type", o.type},
           {"name", o.name},
           {"dimension", optional_json(o.dimension)},
           {"shape", shape_json(o.shape)},
           {"bounds", o.bounds ? bounds_json(*o.bounds) : json(nullptr)},
           {"params", o.params}};
}

void from_json(const json& j, OracleSpec& o) {
  check_keys(j, {"type", "name", "dimension", "shape", "bounds", "params"}, "oracle");
  o.type = j.value("type", std::string("halfspace"));
  o.name = j.value("name", std::string());
  o.dimension = optional_from<std::size_t>(j, "dimension");
  o.shape = optional_shape(j, "shape");
  o.bounds.reset();
  if (j.contains("bounds") && !j.at("bounds").is_null()) o.bounds = bounds_from(j.at("bounds"));
  o.params = j.value("params", json::object());
  if (o.type == "remote") {
    // normalize through the typed config so defaults appear explicitly
    o.params = json(o.params.get<RemoteOracleConfig>());
  }
}

std::unique_ptr<Oracle> build_oracle(const OracleSpec& spec, const Point& original) {
  const InputGeometry geom = spec.geometry();
  const std::size_t n = geom.dimension;
  const json& p = spec.params;
  if (spec.dimension && spec.shape && *spec.dimension != spec.shape->size()) {
    throw ConfigError("oracle dimension disagrees with its shape");
  }
  auto vec = [&](const char* key) { return source_at(p, key).materialize(n, geom.shape); };

  if (spec.type == "halfspace") {
    check_keys(p, {"normal", "offset", "margin"}, "halfspace params");
    std::vector<double> w = vec("normal");
    const bool has_offset = p.contains("offset"), has_margin = p.contains("margin");
    if (has_offset == has_margin) throw ConfigError("halfspace needs exactly one of offset or margin");
    double b;
    if (has_offset) {
      b = number_at(p, "offset");
    } else {
      if (original.size() != n) throw DimensionMismatch(n, original.size());
      double wx = 0.0, ww = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        wx += w[i] * original[i];
        ww += w[i] * w[i];
      }
      b = wx - number_at(p, "margin") * std::sqrt(ww);
    }
    return std::make_unique<HalfspaceOracle>(std::move(w), b, geom);
  }
  if (spec.type == "sphere") {
    check_keys(p, {"center", "radius"}, "sphere params");
    return std::make_unique<SphereOracle>(vec("center"), number_at(p, "radius"), geom);
  }
  if (spec.type == "ellipsoid") {
    check_keys(p, {"center", "semi_axes"}, "ellipsoid params");
    return std::make_unique<EllipsoidOracle>(vec("center"), vec("semi_axes"), geom);
  }
  if (spec.type == "cosine-verify") {
    check_keys(p, {"embedding_rows", "embedding_seed", "reference", "threshold"}, "cosine-verify params");
    Embedding e = Embedding::random(p.at("embedding_rows").get<std::size_t>(), n,
                                    p.value("embedding_seed", std::uint64_t{0}));
    return std::make_unique<CosineVerifyOracle>(std::move(e), vec("reference"), number_at(p, "threshold"), geom);
  }
  if (spec.type == "centroid-id") {
    check_keys(p, {"embedding_rows", "embedding_seed", "gallery"}, "centroid-id params");
    Embedding e = Embedding::random(p.at("embedding_rows").get<std::size_t>(), n,
                                    p.value("embedding_seed", std::uint64_t{0}));
    std::vector<std::vector<double>> gallery;
    for (const auto& g : p.at("gallery")) {
      // gallery entries live in input space; store their embeddings
      gallery.push_back(e.apply(g.get<VectorSource>().materialize(n, geom.shape)));
    }
    return std::make_unique<CentroidIdOracle>(std::move(e), std::move(gallery), geom);
  }
  if (spec.type == "constant") {
    check_keys(p, {"label", "num_labels"}, "constant params");
    return std::make_unique<ConstantOracle>(n, Label{p.value("label", 1u)}, p.value("num_labels", 2u));
  }
  if (spec.type == "remote") {
    RemoteOracleConfig rc = p.get<RemoteOracleConfig>();
    rc.apply_env_override();
    return std::make_unique<RemoteOracle>(std::move(rc), geom, spec.label());
  }
  throw ConfigError("unknown oracle type '" + spec.type + "'");
}

// ---------------------------------------------------------------------------

AdversarialCriterion ExperimentConfig::parsed_criterion() const {
  if (criterion == "dodge-binary") return DodgeBinary{};
  if (criterion == "impersonate-binary") return ImpersonateBinary{};
  if (criterion == "dodge-multiclass") {
    if (!true_label) throw ConfigError("dodge-multiclass needs true_label");
    return DodgeMulticlass{Label{*true_label}};
  }
  if (criterion == "impersonate-multiclass") {
    if (!target_label) throw ConfigError("impersonate-multiclass needs target_label");
    return ImpersonateMulticlass{Label{*target_label}};
  }
  throw ConfigError("unknown criterion '" + criterion + "'");
}

Point ExperimentConfig::original_point() const {
  return Point(original.materialize(oracle.input_dimension(), oracle.shape), oracle.shape, oracle.bounds);
}

InitMode ExperimentConfig::init_mode(const Point& original_pt) const {
  if (init.mode == "random-uniform") return RandomUniform{init.max_attempts, init.box};
  if (init.mode == "given") {
    if (!init.point) throw ConfigError("init mode 'given' needs a point");
    return GivenPoint{point_like(original_pt, init.point->materialize(original_pt.size(), oracle.shape))};
  }
  throw ConfigError("unknown init mode '" + init.mode + "'");
}

EvoHyperParams ExperimentConfig::evo_params() const {
  EvoHyperParams p = evo;
  p.budget = max_budget();
  return p;
}

std::vector<std::string> ExperimentConfig::problems() const {
  std::vector<std::string> out;
  auto attempt = [&](const std::string& what, auto&& fn) {
    try {
      fn();
    } catch (const std::exception& e) {
      out.push_back(what + ": " + e.what());
    }
  };
  if (schema_version != kSchemaVersion) {
    out.push_back("schema_version " + std::to_string(schema_version) + " is not supported (expected " +
                  std::to_string(kSchemaVersion) + ")");
  }
  if (budgets.empty()) out.push_back("budgets is empty");
  for (std::size_t i = 0; i < budgets.size(); ++i) {
    if (budgets[i] == 0) out.push_back("budgets must be positive");
    if (i > 0 && budgets[i] <= budgets[i - 1]) out.push_back("budgets must be strictly increasing");
  }
  if (seeds.empty()) out.push_back("seeds is empty");
  if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size()) out.push_back("seeds repeat");
  if (methods.empty()) out.push_back("methods is empty");
  if (std::set<Method>(methods.begin(), methods.end()).size() != methods.size()) out.push_back("methods repeat");
  if (workers == 0) out.push_back("workers must be at least 1");
  bool criterion_ok = false;
  attempt("criterion", [&] {
    parsed_criterion();
    criterion_ok = true;
  });
  for (const auto& issue : boundary.problems()) out.push_back("boundary: " + issue);

  std::optional<Point> x;
  attempt("original", [&] { x = original_point(); });
  if (!x) return out;
  attempt("init", [&] { init_mode(*x); });
  if (init.mode == "random-uniform" && init.max_attempts == 0) out.push_back("init: max_attempts must be positive");

  std::unique_ptr<Oracle> built;
  attempt("oracle", [&] { built = build_oracle(oracle, *x); });
  if (!built) return out;
  if (!budgets.empty()) {
    for (const auto& issue : evo_params().problems(*built)) out.push_back("evo: " + issue);
  }
  for (const GridShape& s : m_sweep) {
    EvoHyperParams p = evo_params();
    p.search_shape = s;
    p.k.reset();
    for (const auto& issue : p.problems(*built)) out.push_back("m_sweep " + to_string(s) + ": " + issue);
  }
  if (criterion_ok) attempt("criterion", [&] {
    const auto crit = parsed_criterion();
    const std::uint32_t labels = built->num_labels();
    if (const auto* d = std::get_if<DodgeMulticlass>(&crit); d && d->true_label.value >= labels) {
      throw ConfigError("true_label out of range");
    }
    if (const auto* t = std::get_if<ImpersonateMulticlass>(&crit); t && t->target_label.value >= labels) {
      throw ConfigError("target_label out of range");
    }
  });
  return out;
}

void ExperimentConfig::validate() const {
  const auto issues = problems();
  if (issues.empty()) return;
  std::ostringstream msg;
  msg << "invalid experiment configuration:";
  for (const auto& p : issues) msg << "\n  - " << p;
  throw ConfigError(msg.str());
}

void to_json(json& j, const ExperimentConfig& c) {
  json init{{"mode", c.init.mode}, {"max_attempts", c.init.max_attempts}, {"box", bounds_json(c.init.box)}};
  init["point"] = c.init.point ? json(*c.init.point) : json(nullptr);
  json methods = json::array();
  for (Method m : c.methods) methods.push_back(to_string(m));
  json sweep = json::array();
  for (const auto& s : c.m_sweep) sweep.push_back(shape_json(s));
  j = json{{"schema_version", c.schema_version},
           {"name", c.name},
           {"oracle", c.oracle},
           {"criterion", c.criterion},
           {"true_label", optional_json(c.true_label)},
           {"target_label", optional_json(c.target_label)},
           {"original", c.original},
           {"init", init},
           {"methods", methods},
           {"evo", evo_json(c.evo)},
           {"boundary", boundary_json(c.boundary)},
           {"budgets", c.budgets},
           {"seeds", c.seeds},
           {"m_sweep", sweep},
           {"output_dir", c.output_dir.string()},
           {"workers", c.workers}};
}

void from_json(const json& j, ExperimentConfig& c) {
  check_keys(j,
             {"schema_version", "name", "oracle", "criterion", "true_label", "target_label", "original", "init",
              "methods", "evo", "boundary", "budgets", "seeds", "m_sweep", "output_dir", "workers"},
             "config");
  if (!j.contains("schema_version")) throw ConfigError("config lacks schema_version");
  ExperimentConfig d;
  c.schema_version = j.at("schema_version").get<int>();
  c.name = j.value("name", d.name);
  c.oracle = j.value("oracle", d.oracle);
  c.criterion = j.value("criterion", d.criterion);
  c.true_label = optional_from<std::uint32_t>(j, "true_label");
  c.target_label = optional_from<std::uint32_t>(j, "target_label");
  c.original = j.value("original", d.original);

  c.init = InitSpec{};
  if (j.contains("init")) {
    const json& i = j.at("init");
    check_keys(i, {"mode", "max_attempts", "box", "point"}, "init");
    c.init.mode = i.value("mode", c.init.mode);
    c.init.max_attempts = i.value("max_attempts", c.init.max_attempts);
    if (i.contains("box")) c.init.box = bounds_from(i.at("box"));
    if (i.contains("point") && !i.at("point").is_null()) c.init.point = i.at("point").get<VectorSource>();
  }

  c.methods.clear();
  if (j.contains("methods")) {
    for (const auto& m : j.at("methods")) c.methods.push_back(parse_method(m.get<std::string>()));
  } else {
    c.methods = d.methods;
  }
  c.evo = j.contains("evo") ? evo_from(j.at("evo")) : d.evo;
  c.boundary = j.contains("boundary") ? boundary_from(j.at("boundary")) : d.boundary;
  c.budgets = j.value("budgets", d.budgets);
  c.seeds = j.value("seeds", d.seeds);
  c.m_sweep.clear();
  if (j.contains("m_sweep")) {
    for (const auto& s : j.at("m_sweep")) c.m_sweep.push_back(s.is_string() ? parse_grid_shape(s) : shape_from(s));
  }
  c.output_dir = j.value("output_dir", d.output_dir.string());
  c.workers = j.value("workers", d.workers);
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  try {
    return doc.get<ExperimentConfig>();
  } catch (const json::exception& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
}

void save_config(const std::filesystem::path& path, const ExperimentConfig& config) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << json(config).dump(2) << '\n';
}

void apply_override(json& doc, const std::string& path, const std::string& value) {
  std::string pointer = path;
  if (pointer.empty() || pointer[0] != '/') {
    pointer = "/" + pointer;
    std::replace(pointer.begin(), pointer.end(), '.', '/');
  }
  json parsed = json::parse(value, nullptr, /*allow_exceptions=*/false);
  if (parsed.is_discarded()) parsed = value;
  try {
    doc[json::json_pointer(pointer)] = parsed;
  } catch (const json::exception& e) {
    throw ConfigError("cannot override '" + path + "': " + e.what());
  }
}

}  // namespace evoprobe
