#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "varexp/denoise.hpp"
#include "varexp/dyadic.hpp"
#include "varexp/error.hpp"
#include "varexp/estimates.hpp"
#include "varexp/exponent.hpp"
#include "varexp/grid.hpp"
#include "varexp/io.hpp"
#include "varexp/operator.hpp"
#include "varexp/parallel.hpp"
#include "varexp/record.hpp"
#include "varexp/solver.hpp"

namespace varexp::cli {

inline constexpr const char* kVersion = "0.1.0";

enum ExitCode : int { kSuccess = 0, kConfigError = 1, kNotConverged = 2 };

struct RunOptions {
  std::filesystem::path config;
  std::filesystem::path out = ".";
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
};

inline const std::set<std::string>& allowed_keys() {
  static const std::set<std::string> keys{
      "grid.dim", "grid.origin", "grid.extent", "grid.cells",
      "exponent.kind", "exponent.value", "exponent.file", "exponent.base", "exponent.amplitude",
      "exponent.width", "exponent.center", "exponent.p_infinity",
      "instance.kind", "instance.frequency", "instance.amplitude", "instance.width", "instance.g_file",
      "instance.boundary_file",
      "solver.tolerance", "solver.max_iterations", "solver.gamma_schedule", "solver.gamma_floor",
      "solver.stage_tolerance", "solver.variant",
      "estimates.root_center", "estimates.root_side", "estimates.q", "estimates.s", "estimates.m",
      "estimates.kappa", "estimates.epsilons", "estimates.lambda_count", "estimates.lambda_span",
      "estimates.m0", "estimates.m1", "estimates.mu_max", "estimates.mu_steps", "estimates.cap",
      "estimates.structure_samples", "estimates.max_level",
      "sweep.kind", "sweep.values",
      "denoise.input", "denoise.output", "denoise.format", "denoise.strength", "denoise.p_min", "denoise.p_max",
      "denoise.iterations", "denoise.edge_k", "denoise.smoothing", "denoise.gamma", "denoise.synthetic_width",
      "denoise.synthetic_height", "denoise.synthetic_low", "denoise.synthetic_high", "denoise.synthetic_noise",
      "run.seed", "run.threads"};
  return keys;
}

// ---------------------------------------------------------------------------
// output helpers

inline std::string fmt(double v) { return format_double(v); }

inline std::string box_string(const Box& b) {
  std::string s;
  for (int d = 0; d < b.dim; ++d) s += (d ? " " : "") + fmt(b.lo[d]) + ":" + fmt(b.hi[d]);
  return s;
}

inline std::string resolution_string(const IVec& r, int dim) {
  std::string s;
  for (int d = 0; d < dim; ++d) s += (d ? "x" : "") + std::to_string(r[d]);
  return s;
}

/// CSV with a fixed header; every number uses 17 significant digits.
class CsvWriter {
 public:
  CsvWriter(const std::filesystem::path& path, std::vector<std::string> columns)
      : os_(path, std::ios::binary), columns_(std::move(columns)) {
    if (!os_) throw Error("cannot write " + path.string());
    row(columns_);
  }

  void row(const std::vector<std::string>& cells) {
    require(cells.size() == columns_.size(), "CSV row has wrong number of columns");
    for (std::size_t i = 0; i < cells.size(); ++i) os_ << (i ? "," : "") << cells[i];
    os_ << '\n';
  }

 private:
  std::ofstream os_;
  std::vector<std::string> columns_;
};

/// Structured-text report: a provenance header followed by [sections] of
/// key: value lines.
class Report {
 public:
  void section(const std::string& name) { body_ << "\n[" << name << "]\n"; }
  void put(const std::string& key, const std::string& value) { body_ << key << ": " << value << '\n'; }
  void put(const std::string& key, double value) { put(key, fmt(value)); }
  void csv(const std::string& file, const std::vector<std::string>& columns) {
    std::string s;
    for (std::size_t i = 0; i < columns.size(); ++i) s += (i ? "," : "") + columns[i];
    csv_ << "csv " << file << ": " << s << '\n';
  }

  void record(const EstimateRecord& r) {
    section("record " + r.name);
    put("cube", box_string(r.cube));
    put("resolution", resolution_string(r.resolution, r.cube.dim));
    put("lhs", r.lhs);
    for (const auto& [k, v] : r.rhs_components) put("rhs." + k, v);
    put("rhs_total", r.rhs_total());
    put("empirical_constant", r.empirical_constant);
    std::string flags;
    for (const auto& f : r.flags) flags += (flags.empty() ? "" : " ") + f;
    put("flags", flags.empty() ? "none" : flags);
    for (const auto& [k, v] : r.extras) put("extra." + k, v);
  }

  void write(const std::filesystem::path& path, const std::string& header) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error("cannot write " + path.string());
    os << header << csv_.str() << body_.str();
  }

 private:
  std::ostringstream csv_;
  std::ostringstream body_;
};

// ---------------------------------------------------------------------------
// configuration to problem

struct Context {
  Config cfg;
  std::filesystem::path config_path;
  std::filesystem::path out;
  std::uint64_t seed = 1;
  int threads = 1;
  bool converged = true;  ///< cleared by any non-converged solve
};

inline std::filesystem::path input_path(const Context& ctx, const std::string& key) {
  std::filesystem::path p = ctx.cfg.get(key, "");
  if (p.empty()) throw Error(key + " is required");
  if (p.is_relative()) p = ctx.config_path.parent_path() / p;
  if (!std::filesystem::exists(p)) throw Error(key + ": file " + p.string() + " does not exist");
  return p;
}

inline std::vector<double> sized_list(const Config& cfg, const std::string& key, int dim, double fallback) {
  std::vector<double> v = cfg.numbers(key, {fallback});
  if (v.size() == 1) v.assign(dim, v[0]);
  if (static_cast<int>(v.size()) != dim) throw Error(key + " must have 1 or " + std::to_string(dim) + " entries");
  return v;
}

inline Grid build_grid(const Config& cfg, std::optional<int> cells_override = std::nullopt) {
  const long long dim = cfg.integer("grid.dim", 2);
  if (dim < 1 || dim > kMaxDim) throw Error("grid.dim must be 1, 2 or 3");
  const int n = static_cast<int>(dim);
  const auto origin = sized_list(cfg, "grid.origin", n, 0.0);
  const auto extent = sized_list(cfg, "grid.extent", n, 1.0);
  const auto cells_d = sized_list(cfg, "grid.cells", n, 32.0);
  std::vector<int> cells;
  for (double c : cells_d) {
    const double cv = cells_override ? *cells_override : c;
    if (cv < 2.0 || cv != std::floor(cv)) throw Error("grid.cells must be integers >= 2");
    cells.push_back(static_cast<int>(cv));
  }
  for (double e : extent)
    if (!(e > 0.0)) throw Error("grid.extent must be positive");
  return make_grid(n, origin, extent, cells);
}

inline ExponentField build_exponent(const Context& ctx, const Grid& grid,
                                    std::optional<double> amplitude_override = std::nullopt) {
  const Config& cfg = ctx.cfg;
  std::optional<double> p_inf;
  if (cfg.has("exponent.p_infinity")) p_inf = cfg.number("exponent.p_infinity", 2.0);
  const std::string kind = cfg.get("exponent.kind", "constant");
  ExponentField p;
  if (kind == "constant") {
    const double v = cfg.number("exponent.value", 2.0);
    p = ExponentField(constant_exponent(grid, v).field(), p_inf ? p_inf : std::optional<double>(v));
  } else if (kind == "bump") {
    const double base = cfg.number("exponent.base", 2.0);
    const double amp = amplitude_override.value_or(cfg.number("exponent.amplitude", 0.1));
    const double width = cfg.number("exponent.width", 0.2);
    if (!(width > 0.0)) throw Error("exponent.width must be positive");
    const Vec c0 = grid.domain().center();
    const auto c = sized_list(cfg, "exponent.center", grid.dim(), 0.0);
    Vec center{};
    for (int d = 0; d < grid.dim(); ++d) center[d] = cfg.has("exponent.center") ? c[d] : c0[d];
    p = exponent_from(
        grid, [&](const Vec& x) { return base + amp * std::exp(-0.5 * std::pow(distance(x, center) / width, 2)); },
        p_inf);
  } else if (kind == "table") {
    const FieldFile f = load_vxf(input_path(ctx, "exponent.file"));
    if (!f.on_nodes || f.components != 1) throw Error("exponent.file must hold a scalar nodal field");
    const ExponentField table(nodal_field(f), p_inf);
    p = f.grid == grid ? table : exponent_from(grid, [&](const Vec& x) { return table.value_at(x); }, p_inf);
  } else {
    throw Error("exponent.kind must be constant, bump or table");
  }
  if (!(p.p_minus() > 1.0)) throw Error("exponent: p_minus must exceed 1");
  return p;
}

inline Instance build_instance(const Context& ctx, const Grid& grid, const ExponentField& p) {
  const Config& cfg = ctx.cfg;
  const std::string kind = cfg.get("instance.kind", "matched");
  const InstanceShape shape{cfg.number("instance.frequency", 1.0), cfg.number("instance.amplitude", 1.0),
                            cfg.number("instance.width", 0.15)};
  if (kind == "matched") return manufactured_instance(InstanceKind::matched, grid, p, shape);
  if (kind == "linear") return manufactured_instance(InstanceKind::linear, grid, p, shape);
  if (kind == "bump") return manufactured_instance(InstanceKind::bump, grid, p, shape);
  Instance inst;
  inst.G = CellField(grid, grid.dim());
  inst.boundary = GridFunction(grid, 1);
  if (kind == "zero") return inst;
  if (kind != "file") throw Error("instance.kind must be matched, linear, bump, zero or file");
  if (cfg.has("instance.g_file")) {
    const FieldFile f = load_vxf(input_path(ctx, "instance.g_file"));
    if (f.on_nodes || f.components != grid.dim() || !(f.grid == grid))
      throw Error("instance.g_file must be a cell field with dim components on the configured grid");
    inst.G = cell_field(f);
  }
  if (cfg.has("instance.boundary_file")) {
    const FieldFile f = load_vxf(input_path(ctx, "instance.boundary_file"));
    if (!f.on_nodes || f.components != 1 || !(f.grid == grid))
      throw Error("instance.boundary_file must be a scalar nodal field on the configured grid");
    inst.boundary = nodal_field(f);
  }
  return inst;
}

inline FluxVariant parse_variant(const std::string& s) {
  if (s == "power") return FluxVariant::power;
  if (s == "shifted") return FluxVariant::shifted;
  if (s == "squared") return FluxVariant::squared;
  throw Error("solver.variant must be power, shifted or squared");
}

inline SolveOptions build_solver(const Config& cfg) {
  SolveOptions o;
  o.tolerance = cfg.number("solver.tolerance", o.tolerance);
  o.max_iterations = static_cast<int>(cfg.integer("solver.max_iterations", o.max_iterations));
  o.gamma_schedule = cfg.numbers("solver.gamma_schedule", o.gamma_schedule);
  o.gamma_floor = cfg.number("solver.gamma_floor", o.gamma_floor);
  o.stage_tolerance = cfg.number("solver.stage_tolerance", o.stage_tolerance);
  o.variant = parse_variant(cfg.get("solver.variant", "squared"));
  validate(o);
  return o;
}

struct EstimateSettings {
  Box root;
  double q = 2.0;
  double s = 1.0;
  double m = 0.0;
  double kappa = 0.0;
  double m0 = 0.0;
  std::optional<double> m1;
  double mu_max = 2.0;
  int mu_steps = 4;
  double cap = 1e3;
  std::vector<double> epsilons{1e3, 300.0, 100.0, 30.0};
  int lambda_count = 24;
  double lambda_span = 100.0;
  std::size_t structure_samples = 20000;
  int max_level = -1;
};

inline EstimateSettings build_estimates(const Config& cfg, const Grid& grid, const ExponentField& p,
                                        std::optional<double> side_override = std::nullopt) {
  EstimateSettings e;
  const int n = grid.dim();
  double shortest = grid.extent()[0];
  for (int d = 1; d < n; ++d) shortest = std::min(shortest, grid.extent()[d]);
  const Vec c0 = grid.domain().center();
  const auto c = sized_list(cfg, "estimates.root_center", n, 0.0);
  Vec center{};
  for (int d = 0; d < n; ++d) center[d] = cfg.has("estimates.root_center") ? c[d] : c0[d];
  const double side = side_override.value_or(cfg.number("estimates.root_side", 0.5 * shortest));
  if (!(side > 0.0)) throw Error("estimates.root_side must be positive");
  e.root = Box::cube(n, center, side);
  e.q = cfg.number("estimates.q", e.q);
  if (e.q < 1.0) throw Error("estimates.q must be >= 1");
  const double s_cap = n == 1 ? p.p_minus() : std::min(p.p_minus(), n / (n - 1.0));
  e.s = cfg.number("estimates.s", 1.0 + 0.5 * (s_cap - 1.0));
  if (!(e.s >= 1.0)) throw Error("estimates.s must be >= 1");
  e.m = cfg.number("estimates.m", 0.0);
  if (e.m < 0.0) throw Error("estimates.m must be >= 0");
  e.kappa = cfg.number("estimates.kappa", 0.0);
  if (e.kappa < 0.0) throw Error("estimates.kappa must be >= 0");
  e.m0 = cfg.number("estimates.m0", 0.0);
  if (e.m0 != 0.0 && e.m0 < 1.0) throw Error("estimates.m0 must be 0 (scan) or >= 1");
  if (cfg.has("estimates.m1")) e.m1 = cfg.number("estimates.m1", 1.0);
  e.mu_max = cfg.number("estimates.mu_max", e.mu_max);
  e.mu_steps = static_cast<int>(cfg.integer("estimates.mu_steps", e.mu_steps));
  if (!(e.mu_max > 1.0) || e.mu_steps < 1) throw Error("estimates.mu_max must exceed 1 and mu_steps be >= 1");
  e.cap = cfg.number("estimates.cap", e.cap);
  e.epsilons = cfg.numbers("estimates.epsilons", e.epsilons);
  for (double eps : e.epsilons)
    if (!(eps > 0.0)) throw Error("estimates.epsilons must be positive");
  e.lambda_count = static_cast<int>(cfg.integer("estimates.lambda_count", e.lambda_count));
  e.lambda_span = cfg.number("estimates.lambda_span", e.lambda_span);
  if (e.lambda_count < 2 || !(e.lambda_span > 1.0))
    throw Error("estimates.lambda_count must be >= 2 and lambda_span > 1");
  const long long samples = cfg.integer("estimates.structure_samples", 20000);
  if (samples < 1000) throw Error("estimates.structure_samples must be >= 1000");
  e.structure_samples = static_cast<std::size_t>(samples);
  e.max_level = static_cast<int>(cfg.integer("estimates.max_level", -1));
  if (e.max_level < 0) e.max_level = default_max_level(grid, e.root);
  return e;
}

struct Problem {
  Grid grid;
  ExponentField p;
  Instance instance;
  SolveOptions solver;
};

inline Problem build_problem(const Context& ctx, std::optional<int> cells = std::nullopt,
                             std::optional<double> amplitude = std::nullopt) {
  Problem pr;
  pr.grid = build_grid(ctx.cfg, cells);
  pr.p = build_exponent(ctx, pr.grid, amplitude);
  pr.instance = build_instance(ctx, pr.grid, pr.p);
  pr.solver = build_solver(ctx.cfg);
  return pr;
}

inline SolverResult solve(Context& ctx, const Problem& pr) {
  SolverResult r = solve_pxlaplace(pr.instance.G, pr.p, pr.instance.boundary, pr.grid, pr.solver);
  ctx.converged = ctx.converged && r.converged;
  return r;
}

inline double sup_error(const GridFunction& u, const std::optional<GridFunction>& exact) {
  if (!exact) return std::numeric_limits<double>::quiet_NaN();
  double e = 0.0;
  for (std::size_t i = 0; i < u.values.size(); ++i) e = std::max(e, std::abs(u.values[i] - exact->values[i]));
  return e;
}

/// kappa = 2^(n+1) c4 unless configured.
inline double resolve_kappa(const Context& ctx, const Problem& pr, const EstimateSettings& e, double* c4 = nullptr) {
  const StructureFit fit = structure_fit(pr.p, {0.0, pr.solver.variant}, e.structure_samples, ctx.seed);
  if (c4) *c4 = fit.c4;
  return e.kappa > 0.0 ? e.kappa : std::ldexp(1.0, pr.grid.dim() + 1) * fit.c4;
}

/// m0 from the Gehring scan unless configured.
inline double resolve_m0(const Problem& pr, const GridFunction& u, const EstimateSettings& e) {
  if (e.m0 > 0.0) return e.m0;
  return gehring_scan(u, pr.instance.G, pr.p, e.root, e.mu_max, e.mu_steps, e.cap, e.m1, e.m).m0;
}

/// mean_root F <= c mean_2root F with F = |Du|^p holds with c = |2 root| / |root|.
inline EstimateRecord trivial_record(const GridFunction& u, const ExponentField& p, const Box& root) {
  const CellField F = energy_density(u, p);
  EstimateRecord r = make_record("trivial_constant", root, u.grid);
  r.lhs = mean(F, root);
  r.rhs_components = {{"energy", mean(F, root.scaled(2.0))}};
  r.extras = {{"bound", overlap_volume(u.grid, root.scaled(2.0)) / overlap_volume(u.grid, root)}};
  r.flags.push_back("trivial");
  r.finalize();
  return r;
}

inline std::vector<EstimateRecord> estimate_chain(const Context& ctx, const Problem& pr, const GridFunction& u,
                                                  const EstimateSettings& e) {
  const CellField& G = pr.instance.G;
  std::vector<EstimateRecord> out;
  out.push_back(caccioppoli_check(u, G, pr.p, e.root));
  out.push_back(reverse_holder_check(u, G, pr.p, e.root, e.s, e.m));
  const double kappa = resolve_kappa(ctx, pr, e);
  const double m0 = resolve_m0(pr, u, e);
  HigherIntegrabilityOptions ho;
  ho.m = e.m;
  ho.max_level = e.max_level;
  out.push_back(higher_integrability_check(u, G, pr.p, e.q, e.root, kappa, e.epsilons.front(), m0, ho));
  if (e.q == 1.0) out.push_back(trivial_record(u, pr.p, e.root));
  return out;
}

// ---------------------------------------------------------------------------
// commands

inline void report_solver(Report& rep, const SolverResult& r) {
  rep.section("solver");
  rep.put("converged", r.converged ? "true" : "false");
  rep.put("iterations", std::to_string(r.iterations));
  rep.put("residual", r.residual);
  rep.put("gamma_final", r.gamma_final);
  rep.put("fallback_steps", std::to_string(r.fallback_steps));
  rep.put("energy", r.energy_history.empty() ? 0.0 : r.energy_history.back());
}

inline void cmd_solve(Context& ctx, Report& rep) {
  const Problem pr = build_problem(ctx);
  const SolverResult r = solve(ctx, pr);
  save_vxf(ctx.out / "u.vxf", to_file(r.u));
  save_vxf(ctx.out / "p.vxf", to_file(pr.p.field()));
  save_vxf(ctx.out / "G.vxf", to_file(pr.instance.G));
  const std::vector<std::string> cols{"step", "stage", "gamma", "energy", "residual"};
  rep.csv("solve.csv", cols);
  CsvWriter csv(ctx.out / "solve.csv", cols);
  const auto schedule = effective_schedule(pr.solver, pr.p.p_minus());
  std::size_t stage = 0;
  for (std::size_t i = 0; i < r.energy_history.size(); ++i) {
    while (stage + 1 < r.stage_starts.size() && static_cast<std::size_t>(r.stage_starts[stage + 1]) <= i) ++stage;
    csv.row({std::to_string(i), std::to_string(stage), fmt(schedule[std::min(stage, schedule.size() - 1)]),
             fmt(r.energy_history[i]), fmt(r.residual_history[i])});
  }
  report_solver(rep, r);
  rep.put("sup_error", sup_error(r.u, pr.instance.u_star));
  rep.section("outputs");
  rep.put("u", "u.vxf");
  rep.put("p", "p.vxf");
  rep.put("G", "G.vxf");
}

inline std::vector<std::string> record_row(const EstimateRecord& r) {
  std::string flags, comps;
  for (const auto& f : r.flags) flags += (flags.empty() ? "" : " ") + f;
  for (const auto& [k, v] : r.rhs_components) comps += (comps.empty() ? "" : " ") + k + "=" + fmt(v);
  for (const auto& [k, v] : r.extras) comps += (comps.empty() ? "" : " ") + k + "=" + fmt(v);
  return {r.name, box_string(r.cube), resolution_string(r.resolution, r.cube.dim), fmt(r.lhs), fmt(r.rhs_total()),
          fmt(r.empirical_constant), flags, comps};
}

inline void cmd_verify(Context& ctx, Report& rep) {
  const Problem pr = build_problem(ctx);
  const EstimateSettings e = build_estimates(ctx.cfg, pr.grid, pr.p);
  const SolverResult r = solve(ctx, pr);
  report_solver(rep, r);
  const std::vector<std::string> cols{"record", "cube", "resolution", "lhs", "rhs", "constant", "flags", "details"};
  rep.csv("verify.csv", cols);
  CsvWriter csv(ctx.out / "verify.csv", cols);
  for (const auto& rec : estimate_chain(ctx, pr, r.u, e)) {
    csv.row(record_row(rec));
    rep.record(rec);
  }
}

inline void cmd_gehring(Context& ctx, Report& rep) {
  const Problem pr = build_problem(ctx);
  const EstimateSettings e = build_estimates(ctx.cfg, pr.grid, pr.p);
  const SolverResult r = solve(ctx, pr);
  report_solver(rep, r);
  const GehringResult gr = gehring_scan(r.u, pr.instance.G, pr.p, e.root, e.mu_max, e.mu_steps, e.cap, e.m1, e.m,
                                        e.max_level);
  const std::vector<std::string> cols{"mu", "lhs", "rhs", "constant", "cube"};
  rep.csv("gehring.csv", cols);
  CsvWriter csv(ctx.out / "gehring.csv", cols);
  for (const auto& row : gr.ratio_table)
    csv.row({fmt(row.mu), fmt(row.lhs), fmt(row.rhs), fmt(row.constant), box_string(row.cube)});
  rep.section("gehring");
  rep.put("root", box_string(e.root));
  rep.put("cap", gr.cap);
  rep.put("m0", gr.m0);
  rep.put("m1", gr.m1);
  rep.put("sigma", gr.sigma);
}

inline void cmd_goodlambda(Context& ctx, Report& rep) {
  const Problem pr = build_problem(ctx);
  const EstimateSettings e = build_estimates(ctx.cfg, pr.grid, pr.p);
  const SolverResult r = solve(ctx, pr);
  report_solver(rep, r);
  double c4 = 0.0;
  const double kappa = resolve_kappa(ctx, pr, e, &c4);
  const double m0 = resolve_m0(pr, r.u, e);
  const CellField F = energy_density(r.u, pr.p);
  const CellField Gh = data_density(pr.instance.G, pr.p, e.m == 0.0 ? 2.0 * pr.grid.dim() : e.m);
  const double lambda0 = covering_threshold(F, e.root);
  if (!(lambda0 > 0.0)) throw Error("energy density vanishes on the doubled root; no lambda sweep possible");
  const auto lambdas = geometric_sweep(lambda0, e.lambda_span * lambda0, e.lambda_count);
  const GoodLambdaTable t = good_lambda_measure(F, Gh, e.root, kappa, e.epsilons, lambdas, m0, e.max_level);

  const std::vector<std::string> cols{"epsilon", "lambda", "measure_U", "measure_O", "ratio"};
  rep.csv("goodlambda.csv", cols);
  CsvWriter csv(ctx.out / "goodlambda.csv", cols);
  for (const auto& row : t.rows)
    csv.row({fmt(row.epsilon), fmt(row.lambda), fmt(row.measure_U), fmt(row.measure_O), fmt(row.ratio)});
  const std::vector<std::string> ccols{"epsilon", "lambda", "level", "index", "cube", "fraction"};
  rep.csv("goodlambda_cubes.csv", ccols);
  CsvWriter cubes(ctx.out / "goodlambda_cubes.csv", ccols);
  for (const auto& row : t.per_cube)
    cubes.row({fmt(row.epsilon), fmt(row.lambda), std::to_string(row.cube.level),
               std::to_string(cube_linear(row.cube)), box_string(row.cube.box()), fmt(row.fraction)});
  rep.section("goodlambda");
  rep.put("root", box_string(e.root));
  rep.put("lambda0", lambda0);
  rep.put("c4", c4);
  rep.put("kappa", kappa);
  rep.put("m0", m0);
  for (double eps : e.epsilons) rep.put("delta(" + fmt(eps) + ")", t.delta(eps));
}

inline void cmd_sweep(Context& ctx, Report& rep) {
  const std::string kind = ctx.cfg.get("sweep.kind", "");
  if (kind != "refinement" && kind != "size" && kind != "amplitude")
    throw Error("sweep.kind must be refinement, size or amplitude");
  if (!ctx.cfg.has("sweep.values")) throw Error("sweep.values is required");
  const std::vector<double> values = ctx.cfg.numbers("sweep.values", {});
  const std::vector<std::string> cols{"kind",          "value",         "cells",         "root_side",
                                      "amplitude",     "c_log",         "sup_error",     "residual",
                                      "converged",     "iterations",    "caccioppoli",   "reverse_holder",
                                      "higher_integrability", "delta"};
  rep.csv("sweep.csv", cols);
  CsvWriter csv(ctx.out / "sweep.csv", cols);
  std::optional<Problem> shared;
  std::optional<SolverResult> shared_solution;
  for (double v : values) {
    std::optional<int> cells;
    std::optional<double> amplitude, side;
    if (kind == "refinement") {
      if (v < 2.0 || v != std::floor(v)) throw Error("sweep.values must be integers >= 2 for refinement");
      cells = static_cast<int>(v);
    } else if (kind == "amplitude") {
      if (ctx.cfg.get("exponent.kind", "constant") != "bump")
        throw Error("amplitude sweep requires exponent.kind = bump");
      amplitude = v;
    } else {
      side = v;
    }
    if (kind != "size" || !shared) {
      shared = build_problem(ctx, cells, amplitude);
      shared_solution = solve(ctx, *shared);
    }
    const Problem& pr = *shared;
    const SolverResult& r = *shared_solution;
    const EstimateSettings e = build_estimates(ctx.cfg, pr.grid, pr.p, side);
    const auto chain = estimate_chain(ctx, pr, r.u, e);
    PairBudget budget;
    budget.seed = ctx.seed;
    const double c_log = log_holder_constant(pr.p, budget).c_log;
    double delta = std::numeric_limits<double>::quiet_NaN();
    if (kind == "amplitude") {
      const CellField F = energy_density(r.u, pr.p);
      const CellField Gh = data_density(pr.instance.G, pr.p, e.m == 0.0 ? 2.0 * pr.grid.dim() : e.m);
      const double lambda0 = covering_threshold(F, e.root);
      if (!(lambda0 > 0.0)) throw Error("energy density vanishes on the doubled root; no lambda sweep possible");
      const auto lambdas = geometric_sweep(lambda0, e.lambda_span * lambda0, e.lambda_count);
      const std::vector<double> eps{e.epsilons.front()};
      delta = good_lambda_measure(F, Gh, e.root, resolve_kappa(ctx, pr, e), eps, lambdas, resolve_m0(pr, r.u, e),
                                  e.max_level)
                  .delta(eps.front());
    }
    csv.row({kind, fmt(v), resolution_string(pr.grid.cells_per_axis(), pr.grid.dim()), fmt(e.root.length()),
             fmt(amplitude.value_or(ctx.cfg.number("exponent.amplitude", 0.0))), fmt(c_log),
             fmt(sup_error(r.u, pr.instance.u_star)), fmt(r.residual), r.converged ? "1" : "0",
             std::to_string(r.iterations), fmt(chain[0].empirical_constant), fmt(chain[1].empirical_constant),
             fmt(chain[2].empirical_constant), fmt(delta)});
    for (const auto& rec : chain) rep.record(rec);
  }
  rep.section("sweep");
  rep.put("kind", kind);
  rep.put("points", std::to_string(values.size()));
}

inline Image exponent_image(const ExponentField& p, double lo, double hi) {
  GridFunction scaled = p.field();
  for (double& v : scaled.values) v = hi > lo ? (v - lo) / (hi - lo) : 1.0;
  return field_to_image(scaled);
}

inline void cmd_denoise(Context& ctx, Report& rep) {
  const Config& cfg = ctx.cfg;
  DenoiseOptions o;
  o.strength = cfg.number("denoise.strength", o.strength);
  o.p_min = cfg.number("denoise.p_min", o.p_min);
  o.p_max = cfg.number("denoise.p_max", o.p_max);
  o.iterations = static_cast<int>(cfg.integer("denoise.iterations", o.iterations));
  o.edge_k = cfg.number("denoise.edge_k", o.edge_k);
  o.smoothing = cfg.number("denoise.smoothing", o.smoothing);
  o.gamma = cfg.number("denoise.gamma", o.gamma);
  if (!(o.p_min > 1.0)) throw Error("denoise.p_min must exceed 1");
  const std::string format = cfg.get("denoise.format", "P5");
  if (format != "P2" && format != "P5") throw Error("denoise.format must be P2 or P5");
  const bool binary = format == "P5";

  Image input;
  std::string source;
  if (cfg.has("denoise.input")) {
    const auto path = input_path(ctx, "denoise.input");
    input = load_pgm(path);
    source = path.string();
  } else {
    const int w = static_cast<int>(cfg.integer("denoise.synthetic_width", 64));
    const int h = static_cast<int>(cfg.integer("denoise.synthetic_height", 64));
    input = step_edge_image(w, h, w / 2, cfg.number("denoise.synthetic_low", 64.0),
                            cfg.number("denoise.synthetic_high", 192.0), cfg.number("denoise.synthetic_noise", 20.0),
                            ctx.seed);
    source = "synthetic step edge";
    save_pgm(ctx.out / "input.pgm", input, binary);
  }
  const DenoiseResult res = denoise(input, o);
  ctx.converged = ctx.converged && res.converged;
  const std::string output = cfg.get("denoise.output", "denoised.pgm");
  save_pgm(ctx.out / output, res.image, binary);
  save_vxf(ctx.out / "p.vxf", to_file(res.p.field()));
  save_pgm(ctx.out / "p.pgm", exponent_image(res.p, o.p_min, o.p_max), binary);

  double change = 0.0;
  for (std::size_t i = 0; i < input.pixels.size(); ++i)
    change += std::abs(double(res.image.pixels[i]) - double(input.pixels[i]));
  change /= static_cast<double>(input.pixels.size());
  const std::vector<std::string> cols{"width", "height", "p_min_observed", "p_max_observed", "mean_abs_change",
                                      "newton_iterations", "converged"};
  rep.csv("denoise.csv", cols);
  CsvWriter csv(ctx.out / "denoise.csv", cols);
  csv.row({std::to_string(input.width), std::to_string(input.height), fmt(res.p.p_minus()), fmt(res.p.p_plus()),
           fmt(change), std::to_string(res.newton_iterations), res.converged ? "1" : "0"});
  rep.section("denoise");
  rep.put("input", source);
  rep.put("output", output);
  rep.put("strength", o.strength);
  rep.put("iterations", std::to_string(o.iterations));
  rep.put("converged", res.converged ? "true" : "false");
  if (!cfg.has("denoise.input")) {
    const int w = input.width;
    const StepEdgeMetrics before = step_edge_metrics(input, w / 2, 4);
    const StepEdgeMetrics after = step_edge_metrics(res.image, w / 2, 4);
    rep.put("edge_column_after", after.edge_column);
    rep.put("max_edge_shift_after", after.max_edge_shift);
    rep.put("flat_variance_before", before.flat_variance);
    rep.put("flat_variance_after", after.flat_variance);
  }
}

// ---------------------------------------------------------------------------
// entry point

inline std::string timestamp_utc() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

inline std::string read_text(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  if (!is) throw Error("cannot read config " + p.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

/// Runs one command; returns 0 on success, 2 when a solve did not converge
/// and 1 on configuration or input errors.
inline int run(const std::string& command, const RunOptions& opts, std::ostream& log) {
  static const std::set<std::string> commands{"solve", "verify", "gehring", "goodlambda", "sweep", "denoise"};
  try {
    if (!commands.count(command)) throw Error("unknown command '" + command + "'");
    Context ctx;
    const std::string text = read_text(opts.config);
    std::istringstream is(text);
    ctx.cfg = Config::parse(is);
    ctx.cfg.check_keys(allowed_keys());
    ctx.config_path = opts.config;
    ctx.out = opts.out;
    const long long seed = ctx.cfg.integer("run.seed", 1);
    if (seed < 0) throw Error("run.seed must be >= 0");
    ctx.seed = opts.seed.value_or(static_cast<std::uint64_t>(seed));
    ctx.threads = opts.threads.value_or(static_cast<int>(ctx.cfg.integer("run.threads", 1)));
    if (ctx.threads < 1) throw Error("threads must be >= 1");
    set_threads(ctx.threads);
    std::filesystem::create_directories(ctx.out);

    Report rep;
    if (command == "solve") cmd_solve(ctx, rep);
    if (command == "verify") cmd_verify(ctx, rep);
    if (command == "gehring") cmd_gehring(ctx, rep);
    if (command == "goodlambda") cmd_goodlambda(ctx, rep);
    if (command == "sweep") cmd_sweep(ctx, rep);
    if (command == "denoise") cmd_denoise(ctx, rep);

    std::ostringstream header;
    header << "varexp report\nversion: " << kVersion << "\ncommand: " << command
           << "\nconfig: " << opts.config.string() << "\nconfig_fnv1a: " << std::hex << std::setw(16)
           << std::setfill('0') << fnv1a(text) << std::dec << "\nseed: " << ctx.seed << "\nthreads: " << ctx.threads
           << "\ntimestamp: " << timestamp_utc() << "\nstatus: " << (ctx.converged ? "ok" : "not_converged") << '\n';
    rep.write(ctx.out / "report.txt", header.str());
    if (!ctx.converged) {
      log << "varexp: solver did not converge (see report.txt)\n";
      return kNotConverged;
    }
    return kSuccess;
  } catch (const std::exception& e) {
    log << "varexp: error: " << e.what() << '\n';
    return kConfigError;
  }
}

}  // namespace varexp::cli
