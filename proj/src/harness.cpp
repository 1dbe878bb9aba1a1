#include "chemolab/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <random>
#include <set>
#include <sstream>
#include <thread>

#include "chemolab/elliptic.hpp"

namespace chemo::harness {

namespace {

// --- reading ---------------------------------------------------------------

std::string join(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }

/// Object section with a closed set of keys.
class Section {
 public:
  Section(const json& j, std::string path, std::initializer_list<const char*> keys) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError("must be an object", path_);
    std::set<std::string> allowed(keys.begin(), keys.end());
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!allowed.count(it.key())) throw ConfigError("unknown field", join(path_, it.key()));
  }

  bool has(const char* key) const { return j_.contains(key) && !j_.at(key).is_null(); }
  const json& at(const char* key) const {
    if (!has(key)) throw ConfigError("required field is missing", join(path_, key));
    return j_.at(key);
  }
  std::string path(const char* key) const { return join(path_, key); }

  double num(const char* key, std::optional<double> def = std::nullopt) const {
    if (!has(key)) {
      if (def) return *def;
      throw ConfigError("required field is missing", path(key));
    }
    const json& v = j_.at(key);
    if (!v.is_number()) throw ConfigError("must be a number", path(key));
    const double x = v.get<double>();
    if (!std::isfinite(x)) throw ConfigError("must be finite", path(key));
    return x;
  }
  std::optional<double> opt_num(const char* key) const {
    if (!has(key)) return std::nullopt;
    return num(key);
  }
  long integer(const char* key, std::optional<long> def = std::nullopt) const {
    if (!has(key)) {
      if (def) return *def;
      throw ConfigError("required field is missing", path(key));
    }
    const json& v = j_.at(key);
    if (!v.is_number_integer()) throw ConfigError("must be an integer", path(key));
    return v.get<long>();
  }
  std::string str(const char* key, std::optional<std::string> def = std::nullopt) const {
    if (!has(key)) {
      if (def) return *def;
      throw ConfigError("required field is missing", path(key));
    }
    const json& v = j_.at(key);
    if (!v.is_string()) throw ConfigError("must be a string", path(key));
    return v.get<std::string>();
  }
  std::vector<double> numbers(const char* key, std::vector<double> def = {}) const {
    if (!has(key)) return def;
    const json& v = j_.at(key);
    if (!v.is_array()) throw ConfigError("must be an array of numbers", path(key));
    std::vector<double> out;
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (!v[i].is_number()) throw ConfigError("must be a number", path(key) + "[" + std::to_string(i) + "]");
      out.push_back(v[i].get<double>());
    }
    return out;
  }

 private:
  const json& j_;
  std::string path_;
};

const json& empty_object() {
  static const json e = json::object();
  return e;
}

const json& section_json(const json& doc, const char* key) {
  return doc.contains(key) && !doc.at(key).is_null() ? doc.at(key) : empty_object();
}

model::FourierTime parse_time(const json& j, const std::string& path) {
  Section s(j, path, {"offset", "period", "cos", "sin"});
  model::FourierTime ft;
  ft.offset = s.num("offset", 1.0);
  ft.period = s.num("period", 1.0);
  ft.cos_amp = s.numbers("cos");
  ft.sin_amp = s.numbers("sin");
  return ft;
}

model::SpacePart parse_space(const json& j, const std::string& path) {
  Section s(j, path, {"offset", "polynomials", "cosines"});
  model::SpacePart sp;
  sp.offset = s.num("offset", 1.0);
  if (s.has("polynomials")) {
    const json& arr = s.at("polynomials");
    if (!arr.is_array()) throw ConfigError("must be an array", s.path("polynomials"));
    for (std::size_t i = 0; i < arr.size(); ++i) {
      Section p(arr[i], s.path("polynomials") + "[" + std::to_string(i) + "]", {"axis", "coeffs"});
      sp.polynomials.push_back({static_cast<int>(p.integer("axis", 0)), p.numbers("coeffs")});
    }
  }
  if (s.has("cosines")) {
    const json& arr = s.at("cosines");
    if (!arr.is_array()) throw ConfigError("must be an array", s.path("cosines"));
    for (std::size_t i = 0; i < arr.size(); ++i) {
      Section c(arr[i], s.path("cosines") + "[" + std::to_string(i) + "]", {"axis", "mode", "amp"});
      sp.cosines.push_back({static_cast<int>(c.integer("axis", 0)), static_cast<int>(c.integer("mode", 1)),
                            c.num("amp")});
    }
  }
  return sp;
}

std::string read_text(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw ConfigError("cannot read " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string iso_now() {
  const std::time_t now = std::time(nullptr);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
  return buf;
}

std::string dump(const json& j) { return j.dump(2) + "\n"; }

json opt_json(const std::optional<double>& x) { return x ? json(*x) : json(nullptr); }

}  // namespace

// --- public helpers ----------------------------------------------------------

const char* to_string(Experiment e) {
  switch (e) {
    case Experiment::thresholds: return "thresholds";
    case Experiment::simulate: return "simulate";
    case Experiment::periodic: return "periodic";
    case Experiment::steady: return "steady";
    case Experiment::entire: return "entire";
    case Experiment::sweep: return "sweep";
  }
  return "unknown";
}

Experiment parse_experiment(const std::string& name, const std::string& path) {
  for (auto e : {Experiment::thresholds, Experiment::simulate, Experiment::periodic, Experiment::steady,
                 Experiment::entire, Experiment::sweep})
    if (name == to_string(e)) return e;
  throw ConfigError("unknown experiment '" + name + "'", path);
}

std::string fmt(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

void write_atomic(const fs::path& path, const std::string& text) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp.string());
    out << text;
    out.flush();
    if (!out) throw Error("write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

void set_path(json& doc, const std::string& path, const json& value) {
  json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const std::size_t dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (key.empty()) throw ConfigError("empty path component", path);
    if (!node->is_object()) throw ConfigError("path crosses a non-object value", path);
    if (dot == std::string::npos) {
      (*node)[key] = value;
      return;
    }
    node = &(*node)[key];
    if (node->is_null()) *node = json::object();
    start = dot + 1;
  }
}

model::CoeffExpr parse_coeff(const json& j, const std::string& path) {
  if (j.is_number()) return model::ConstantExpr{j.get<double>()};
  if (!j.is_object() || j.size() != 1)
    throw ConfigError("expected a number or an object with one of constant, separable, tabulated", path);
  const std::string kind = j.begin().key();
  const json& body = j.begin().value();
  const std::string sub = path + "." + kind;
  if (kind == "constant") {
    if (!body.is_number()) throw ConfigError("must be a number", sub);
    return model::ConstantExpr{body.get<double>()};
  }
  if (kind == "separable") {
    Section s(body, sub, {"time", "space"});
    model::SeparableExpr e;
    e.time = parse_time(section_json(body, "time"), s.path("time"));
    e.space = parse_space(section_json(body, "space"), s.path("space"));
    return e;
  }
  if (kind == "tabulated") {
    Section s(body, sub, {"times", "values", "interp", "period"});
    model::TabulatedExpr t;
    t.times = s.numbers("times");
    const json& vals = s.at("values");
    if (!vals.is_array()) throw ConfigError("must be an array of rows", s.path("values"));
    for (std::size_t k = 0; k < vals.size(); ++k) {
      std::vector<double> row;
      if (!vals[k].is_array()) throw ConfigError("must be an array", s.path("values") + "[" + std::to_string(k) + "]");
      for (const auto& x : vals[k]) {
        if (!x.is_number()) throw ConfigError("must be numbers", s.path("values") + "[" + std::to_string(k) + "]");
        row.push_back(x.get<double>());
      }
      t.values.push_back(std::move(row));
    }
    const std::string interp = s.str("interp", "linear");
    if (interp == "linear") {
      t.interp = model::Interp::linear;
    } else if (interp == "previous") {
      t.interp = model::Interp::previous;
    } else {
      throw ConfigError("must be linear or previous", s.path("interp"));
    }
    t.period = s.opt_num("period");
    return t;
  }
  throw ConfigError("unknown coefficient kind '" + kind + "'", path);
}

RunConfig parse_config(const json& doc) {
  if (!doc.is_object()) throw ConfigError("configuration must be a JSON object");
  Section top(doc, "",
              {"schema_version", "experiment", "domain", "coefficients", "step", "initial", "time", "monitor",
               "C_star", "M2_star", "seed", "delta0", "periodic", "steady", "entire", "sweep", "output"});
  RunConfig cfg;
  cfg.raw = doc;

  const long version = top.integer("schema_version");
  if (version != kSchemaVersion)
    throw ConfigError("unsupported version " + std::to_string(version) + " (expected " +
                          std::to_string(kSchemaVersion) + ")",
                      "schema_version");
  if (top.has("experiment")) cfg.experiment = parse_experiment(top.str("experiment"), "experiment");

  // domain
  {
    Section s(top.at("domain"), "domain", {"dim", "lengths", "cells"});
    const long dim = s.integer("dim", 1);
    if (dim != 1 && dim != 2) throw ConfigError("must be 1 or 2", "domain.dim");
    const auto lengths = s.numbers("lengths", std::vector<double>(dim, 1.0));
    if (static_cast<long>(lengths.size()) != dim) throw ConfigError("needs one entry per axis", "domain.lengths");
    const json& cj = s.at("cells");
    std::vector<long> cells;
    if (!cj.is_array()) throw ConfigError("must be an array of integers", "domain.cells");
    for (const auto& c : cj) {
      if (!c.is_number_integer()) throw ConfigError("must be an array of integers", "domain.cells");
      cells.push_back(c.get<long>());
    }
    if (static_cast<long>(cells.size()) != dim) throw ConfigError("needs one entry per axis", "domain.cells");
    for (long c : cells)
      if (c < 4 || c > 1 << 20) throw ConfigError("every cell count must be >= 4", "domain.cells");
    for (double l : lengths)
      if (!(l > 0.0)) throw ConfigError("every length must be > 0", "domain.lengths");
    cfg.domain = dim == 1 ? model::Domain::interval(lengths[0], static_cast<int>(cells[0]))
                          : model::Domain::rectangle(lengths[0], lengths[1], static_cast<int>(cells[0]),
                                                     static_cast<int>(cells[1]));
  }

  // time (needed for the coefficient audit window)
  {
    Section s(section_json(doc, "time"), "time", {"start", "end"});
    cfg.t_start = s.num("start", 0.0);
    cfg.t_end = s.num("end", 10.0);
    if (!(cfg.t_end >= cfg.t_start)) throw ConfigError("must be >= time.start", "time.end");
  }

  // entire (schedule feeds the audit window)
  {
    Section s(section_json(doc, "entire"), "entire", {"window", "n_schedule", "tol"});
    cfg.entire_window = s.num("window", 5.0);
    if (!(cfg.entire_window >= 0.0)) throw ConfigError("must be >= 0", "entire.window");
    if (s.has("n_schedule")) {
      cfg.entire_schedule.clear();
      for (double x : s.numbers("n_schedule")) {
        if (x != std::floor(x) || x < 1) throw ConfigError("entries must be positive integers", "entire.n_schedule");
        cfg.entire_schedule.push_back(static_cast<int>(x));
      }
      if (cfg.entire_schedule.empty()) throw ConfigError("must not be empty", "entire.n_schedule");
      for (std::size_t i = 1; i < cfg.entire_schedule.size(); ++i)
        if (cfg.entire_schedule[i] <= cfg.entire_schedule[i - 1])
          throw ConfigError("must be strictly increasing", "entire.n_schedule");
    }
    cfg.entire_tol = s.num("tol", 1e-8);
    if (!(cfg.entire_tol > 0.0)) throw ConfigError("must be > 0", "entire.tol");
  }

  // coefficients
  {
    const json& cj = top.at("coefficients");
    Section s(cj, "coefficients",
              {"chi", "mu", "nu", "a", "b", "a_bounds", "b_bounds", "period", "holder_exponent", "holder_constant"});
    const double chi = s.num("chi");
    const double mu = s.num("mu", 1.0);
    const double nu = s.num("nu", 1.0);
    if (!(chi >= 0.0)) throw ConfigError("must be >= 0", "coefficients.chi");
    if (!(mu > 0.0)) throw ConfigError("must be > 0", "coefficients.mu");
    if (!(nu > 0.0)) throw ConfigError("must be > 0", "coefficients.nu");
    const model::CoeffExpr a = parse_coeff(s.at("a"), "coefficients.a");
    const model::CoeffExpr b = parse_coeff(s.at("b"), "coefficients.b");
    auto bounds = [&](const model::CoeffExpr& e, const char* key) {
      if (s.has(key)) {
        const auto v = s.numbers(key);
        if (v.size() != 2) throw ConfigError("must be [inf, sup]", s.path(key));
        if (!(v[0] > 0.0 && v[0] <= v[1])) throw ConfigError("need 0 < inf <= sup", s.path(key));
        return model::Bounds{v[0], v[1]};
      }
      if (const auto* c = std::get_if<model::ConstantExpr>(&e)) return model::Bounds{c->value, c->value};
      throw ConfigError("required for non-constant coefficients", s.path(key));
    };
    const model::Bounds ab = bounds(a, "a_bounds");
    const model::Bounds bb = bounds(b, "b_bounds");
    const std::optional<double> period = s.opt_num("period");
    if (period && !(*period > 0.0)) throw ConfigError("must be > 0", "coefficients.period");
    if (s.has("holder_exponent")) {
      const double g = s.num("holder_exponent");
      if (!(g > 0.0 && g <= 1.0)) throw ConfigError("must lie in (0, 1]", "coefficients.holder_exponent");
    }
    if (s.has("holder_constant") && !(s.num("holder_constant") >= 0.0))
      throw ConfigError("must be >= 0", "coefficients.holder_constant");
    try {
      model::validate(a, cfg.domain);
    } catch (const ConfigError& e) {
      throw ConfigError(e.what(), "coefficients.a");
    }
    try {
      model::validate(b, cfg.domain);
    } catch (const ConfigError& e) {
      throw ConfigError(e.what(), "coefficients.b");
    }
    cfg.coeffs = model::Coefficients(chi, mu, nu, a, b, ab, bb, period);

    // Dense audit of the declared bounds over the window the run can touch.
    double t0 = std::min(cfg.t_start, -static_cast<double>(cfg.entire_schedule.back()));
    double t1 = std::max(cfg.t_end, 0.0);
    if (period) {
      t0 = 0.0;
      t1 = *period;
    }
    for (const auto& [expr, bd, key] : {std::tuple{a, ab, "a_bounds"}, std::tuple{b, bb, "b_bounds"}}) {
      if (model::is_time_independent(expr)) {
        const auto rep = model::coeff_audit(expr, bd.inf, bd.sup, 0.0, 1.0, 1000, cfg.domain);
        if (!rep.pass)
          throw ConfigError("declared bounds do not contain the observed range [" + fmt(rep.observed_min) + ", " +
                                fmt(rep.observed_max) + "]",
                            std::string("coefficients.") + key);
      } else {
        const auto rep = model::coeff_audit(expr, bd.inf, bd.sup, t0, t1, 1000, cfg.domain);
        if (!rep.pass)
          throw ConfigError("declared bounds do not contain the observed range [" + fmt(rep.observed_min) + ", " +
                                fmt(rep.observed_max) + "]",
                            std::string("coefficients.") + key);
      }
    }
  }

  // step
  {
    Section s(section_json(doc, "step"), "step",
              {"dt_init", "dt_min", "dt_max", "cfl_safety", "positivity_floor", "fixed_dt"});
    stepper::StepControl c;
    c.dt_init = s.num("dt_init", c.dt_init);
    c.dt_min = s.num("dt_min", c.dt_min);
    c.dt_max = s.num("dt_max", c.dt_max);
    c.cfl_safety = s.num("cfl_safety", c.cfl_safety);
    c.positivity_floor = s.num("positivity_floor", c.positivity_floor);
    c.fixed_dt = s.opt_num("fixed_dt");
    c.validate();
    cfg.step = c;
  }

  // seed
  {
    if (top.has("seed")) {
      const json& v = doc.at("seed");
      if (!v.is_number_integer() || (!v.is_number_unsigned() && v.get<std::int64_t>() < 0))
        throw ConfigError("must be a non-negative integer", "seed");
      cfg.seed = v.get<std::uint64_t>();
    }
  }

  // initial
  {
    const json& ij = section_json(doc, "initial");
    Section s(ij, "initial", {"kind", "value", "mean", "sigma", "seed", "expression", "file"});
    const std::string kind = s.str("kind", "constant");
    InitialSpec& in = cfg.initial;
    if (kind == "constant") {
      in.kind = InitialSpec::Kind::constant;
      in.value = s.num("value", cfg.coeffs.a_sup() / cfg.coeffs.b_inf());
      if (!(in.value > 0.0)) throw ConfigError("must be > 0", "initial.value");
    } else if (kind == "lognormal") {
      in.kind = InitialSpec::Kind::lognormal;
      in.mean = s.num("mean", 1.0);
      in.sigma = s.num("sigma", 0.3);
      if (!(in.mean > 0.0)) throw ConfigError("must be > 0", "initial.mean");
      if (!(in.sigma >= 0.0)) throw ConfigError("must be >= 0", "initial.sigma");
      if (s.has("seed")) {
        const json& v = ij.at("seed");
        if (!v.is_number_integer() || (!v.is_number_unsigned() && v.get<std::int64_t>() < 0))
          throw ConfigError("must be a non-negative integer", "initial.seed");
        in.seed = ij.at("seed").get<std::uint64_t>();
      }
    } else if (kind == "expression") {
      in.kind = InitialSpec::Kind::expression;
      in.expression = parse_space(s.at("expression"), "initial.expression");
    } else if (kind == "file") {
      in.kind = InitialSpec::Kind::file;
      in.file = s.str("file");
    } else {
      throw ConfigError("must be constant, lognormal, expression or file", "initial.kind");
    }
  }

  // monitor
  {
    Section s(section_json(doc, "monitor"), "monitor", {"q", "theta", "tail_fraction", "row_spacing"});
    cfg.monitor.q = s.opt_num("q");
    if (cfg.monitor.q && !(*cfg.monitor.q > 1.0)) throw ConfigError("must be > 1", "monitor.q");
    cfg.monitor.theta = s.num("theta", 0.5);
    if (!(cfg.monitor.theta > 0.0 && cfg.monitor.theta < 1.0)) throw ConfigError("must lie in (0, 1)", "monitor.theta");
    cfg.monitor.tail_fraction = s.num("tail_fraction", 0.2);
    if (!(cfg.monitor.tail_fraction > 0.0 && cfg.monitor.tail_fraction < 1.0))
      throw ConfigError("must lie in (0, 1)", "monitor.tail_fraction");
    cfg.monitor.row_spacing = s.integer("row_spacing", 10);
    if (cfg.monitor.row_spacing < 1) throw ConfigError("must be >= 1", "monitor.row_spacing");
  }

  cfg.c_star = top.num("C_star", 1.0);
  if (!(cfg.c_star > 0.0)) throw ConfigError("must be > 0", "C_star");
  cfg.m2_star = top.opt_num("M2_star");
  if (cfg.m2_star && !(*cfg.m2_star > 0.0)) throw ConfigError("must be > 0", "M2_star");

  {
    Section s(section_json(doc, "delta0"), "delta0", {"max_columns", "value"});
    const long mc = s.integer("max_columns", 4096);
    if (mc < 4) throw ConfigError("must be >= 4", "delta0.max_columns");
    cfg.delta0_max_columns = static_cast<std::size_t>(mc);
    cfg.delta0_value = s.opt_num("value");
    if (cfg.delta0_value && !(*cfg.delta0_value > 0.0)) throw ConfigError("must be > 0", "delta0.value");
  }
  {
    Section s(section_json(doc, "periodic"), "periodic", {"damping", "tol", "max_iter"});
    cfg.periodic.damping = s.num("damping", 1.0);
    if (!(cfg.periodic.damping > 0.0 && cfg.periodic.damping <= 1.0))
      throw ConfigError("must lie in (0, 1]", "periodic.damping");
    cfg.periodic.tol = s.num("tol", 1e-8);
    if (!(cfg.periodic.tol >= 0.0)) throw ConfigError("must be >= 0", "periodic.tol");
    cfg.periodic.max_iter = static_cast<int>(s.integer("max_iter", 200));
    if (cfg.periodic.max_iter < 1) throw ConfigError("must be >= 1", "periodic.max_iter");
  }
  {
    Section s(section_json(doc, "steady"), "steady", {"tol", "t_cap", "chunk"});
    cfg.steady.tol = s.num("tol", 1e-10);
    cfg.steady.t_cap = s.num("t_cap", 1000.0);
    cfg.steady.chunk = s.num("chunk", 1.0);
    if (!(cfg.steady.tol > 0.0)) throw ConfigError("must be > 0", "steady.tol");
    if (!(cfg.steady.t_cap > 0.0)) throw ConfigError("must be > 0", "steady.t_cap");
    if (!(cfg.steady.chunk > 0.0)) throw ConfigError("must be > 0", "steady.chunk");
  }
  if (top.has("sweep")) {
    const json& sj = doc.at("sweep");
    Section s(sj, "sweep", {"axes", "cap", "experiment"});
    SweepSpec sw;
    sw.cap = static_cast<std::size_t>(s.integer("cap", 10000));
    sw.inner = parse_experiment(s.str("experiment", "simulate"), "sweep.experiment");
    if (sw.inner != Experiment::simulate && sw.inner != Experiment::thresholds)
      throw ConfigError("must be simulate or thresholds", "sweep.experiment");
    const json& axes = s.at("axes");
    if (!axes.is_object() || axes.empty()) throw ConfigError("must be a non-empty object", "sweep.axes");
    std::size_t total = 1;
    for (auto it = axes.begin(); it != axes.end(); ++it) {
      const std::string p = "sweep.axes." + it.key();
      if (!it.value().is_array() || it.value().empty()) throw ConfigError("must be a non-empty array", p);
      if (it.key().rfind("sweep", 0) == 0 || it.key().rfind("schema_version", 0) == 0)
        throw ConfigError("cannot sweep this field", p);
      std::vector<json> values(it.value().begin(), it.value().end());
      total *= values.size();
      if (total > sw.cap) throw ConfigError("grid has more points than sweep.cap", "sweep.axes");
      sw.axes.emplace_back(it.key(), std::move(values));
    }
    cfg.sweep = std::move(sw);
  }
  {
    Section s(section_json(doc, "output"), "output", {"dir"});
    cfg.out_dir = s.str("dir", "out");
  }

  // Resolved echo with every default explicit.
  json r;
  r["schema_version"] = kSchemaVersion;
  r["experiment"] = cfg.experiment ? json(to_string(*cfg.experiment)) : json(nullptr);
  {
    json d;
    d["dim"] = cfg.domain.dim();
    d["lengths"] = json::array();
    d["cells"] = json::array();
    for (int a = 0; a < cfg.domain.dim(); ++a) {
      d["lengths"].push_back(cfg.domain.length(a));
      d["cells"].push_back(cfg.domain.cells(a));
    }
    r["domain"] = d;
  }
  {
    const json& cj = doc.at("coefficients");
    json c;
    c["chi"] = cfg.coeffs.chi();
    c["mu"] = cfg.coeffs.mu();
    c["nu"] = cfg.coeffs.nu();
    c["a"] = cj.at("a");
    c["b"] = cj.at("b");
    c["a_bounds"] = {cfg.coeffs.a_inf(), cfg.coeffs.a_sup()};
    c["b_bounds"] = {cfg.coeffs.b_inf(), cfg.coeffs.b_sup()};
    c["period"] = cfg.coeffs.period() ? json(*cfg.coeffs.period()) : json(nullptr);
    c["holder_exponent"] = cj.contains("holder_exponent") ? cj.at("holder_exponent") : json(nullptr);
    c["holder_constant"] = cj.contains("holder_constant") ? cj.at("holder_constant") : json(nullptr);
    r["coefficients"] = c;
  }
  r["step"] = {{"dt_init", cfg.step.dt_init},
               {"dt_min", cfg.step.dt_min},
               {"dt_max", cfg.step.dt_max},
               {"cfl_safety", cfg.step.cfl_safety},
               {"positivity_floor", cfg.step.positivity_floor},
               {"fixed_dt", cfg.step.fixed_dt ? json(*cfg.step.fixed_dt) : json(nullptr)}};
  {
    json i;
    switch (cfg.initial.kind) {
      case InitialSpec::Kind::constant:
        i["kind"] = "constant";
        i["value"] = cfg.initial.value;
        break;
      case InitialSpec::Kind::lognormal:
        i["kind"] = "lognormal";
        i["mean"] = cfg.initial.mean;
        i["sigma"] = cfg.initial.sigma;
        i["seed"] = cfg.initial.seed ? *cfg.initial.seed : cfg.seed;
        break;
      case InitialSpec::Kind::expression:
        i["kind"] = "expression";
        i["expression"] = doc.at("initial").at("expression");
        break;
      case InitialSpec::Kind::file:
        i["kind"] = "file";
        i["file"] = cfg.initial.file;
        break;
    }
    r["initial"] = i;
  }
  r["time"] = {{"start", cfg.t_start}, {"end", cfg.t_end}};
  r["monitor"] = {{"q", cfg.monitor.q ? json(*cfg.monitor.q) : json(nullptr)},
                  {"theta", cfg.monitor.theta},
                  {"tail_fraction", cfg.monitor.tail_fraction},
                  {"row_spacing", cfg.monitor.row_spacing}};
  r["C_star"] = cfg.c_star;
  r["M2_star"] = cfg.m2_star ? json(*cfg.m2_star) : json(nullptr);
  r["seed"] = cfg.seed;
  r["delta0"] = {{"max_columns", cfg.delta0_max_columns}, {"value", opt_json(cfg.delta0_value)}};
  r["periodic"] = {{"damping", cfg.periodic.damping}, {"tol", cfg.periodic.tol}, {"max_iter", cfg.periodic.max_iter}};
  r["steady"] = {{"tol", cfg.steady.tol}, {"t_cap", cfg.steady.t_cap}, {"chunk", cfg.steady.chunk}};
  r["entire"] = {{"window", cfg.entire_window}, {"n_schedule", cfg.entire_schedule}, {"tol", cfg.entire_tol}};
  if (cfg.sweep) {
    json axes = json::object();
    for (const auto& [k, v] : cfg.sweep->axes) axes[k] = v;
    r["sweep"] = {{"axes", axes}, {"cap", cfg.sweep->cap}, {"experiment", to_string(cfg.sweep->inner)}};
  } else {
    r["sweep"] = nullptr;
  }
  r["output"] = {{"dir", cfg.out_dir}};
  cfg.resolved = std::move(r);
  return cfg;
}

RunConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open configuration file " + path.string(), "--config");
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("invalid JSON: ") + e.what(), "--config");
  }
  return parse_config(doc);
}

model::ScalarField initial_field(const RunConfig& cfg) {
  const model::Domain& d = cfg.domain;
  const InitialSpec& in = cfg.initial;
  switch (in.kind) {
    case InitialSpec::Kind::constant: return model::ScalarField(d, in.value);
    case InitialSpec::Kind::lognormal: {
      std::mt19937_64 rng(in.seed ? *in.seed : cfg.seed);
      std::normal_distribution<double> z(0.0, 1.0);
      std::vector<double> v(d.size());
      for (double& x : v) x = in.mean * std::exp(in.sigma * z(rng));
      return model::ScalarField(d, std::move(v));
    }
    case InitialSpec::Kind::expression: {
      model::SeparableExpr e;
      e.time = model::FourierTime{};
      e.space = in.expression;
      try {
        model::validate(e, d);
      } catch (const ConfigError& err) {
        throw ConfigError(err.what(), "initial.expression");
      }
      return model::eval_coeff(e, 0.0, d);
    }
    case InitialSpec::Kind::file: {
      std::ifstream f(in.file);
      if (!f) throw ConfigError("cannot open " + in.file, "initial.file");
      std::vector<double> v;
      std::string tok;
      while (f >> tok) {
        std::stringstream ss(tok);
        std::string part;
        while (std::getline(ss, part, ',')) {
          if (part.empty()) continue;
          try {
            v.push_back(std::stod(part));
          } catch (const std::exception&) {
            throw ConfigError("not a number: " + part, "initial.file");
          }
        }
      }
      if (v.size() != d.size())
        throw ConfigError("expected " + std::to_string(d.size()) + " values, found " + std::to_string(v.size()),
                          "initial.file");
      try {
        return model::ScalarField(d, std::move(v));
      } catch (const ConfigError& e) {
        throw ConfigError(e.what(), "initial.file");
      }
    }
  }
  throw ConfigError("unreachable initial kind", "initial.kind");
}

// --- run ---------------------------------------------------------------------

namespace {

void write_field_csv(const fs::path& path, const model::ScalarField& u, const std::string& name) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  const model::Domain& d = u.domain();
  out << (d.dim() == 1 ? "cell,x," : "cell,x,y,") << name << '\n';
  for (int j = 0; j < d.ny(); ++j)
    for (int i = 0; i < d.nx(); ++i) {
      const std::size_t k = d.index(i, j);
      out << k << ',' << fmt(d.center(0, i)) << ',';
      if (d.dim() == 2) out << fmt(d.center(1, j)) << ',';
      out << fmt(u[k]) << '\n';
    }
}

void write_checkpoints_csv(const fs::path& path, const std::vector<model::State>& states) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (states.empty()) {
    out << "t,cell,u\n";
    return;
  }
  const model::Domain& d = states.front().u.domain();
  out << (d.dim() == 1 ? "t,cell,x,u\n" : "t,cell,x,y,u\n");
  for (const auto& st : states)
    for (int j = 0; j < d.ny(); ++j)
      for (int i = 0; i < d.nx(); ++i) {
        const std::size_t k = d.index(i, j);
        out << fmt(st.t) << ',' << k << ',' << fmt(d.center(0, i)) << ',';
        if (d.dim() == 2) out << fmt(d.center(1, j)) << ',';
        out << fmt(st.u[k]) << '\n';
      }
}

json violations_json(const std::vector<analysis::RowViolation>& v) {
  json j;
  j["ok"] = v.empty();
  j["violations"] = v.size();
  if (!v.empty()) j["first"] = {{"t", v.front().t}, {"lhs", v.front().lhs}, {"rhs", v.front().rhs}};
  return j;
}

struct Ctx {
  const RunConfig& cfg;
  const fs::path& out;
  analysis::ThresholdReport report;
  model::ScalarField u0;
};

std::optional<analysis::RectangleSpec> configured_rectangle(const analysis::ThresholdReport& r) {
  if (r.M1_star && r.M2_star) return analysis::rectangle(r);
  return std::nullopt;
}

RunOutcome run_simulate(Ctx& c) {
  const RunConfig& cfg = c.cfg;
  const double q = cfg.monitor.q.value_or(c.report.q);
  auto rect = configured_rectangle(c.report);
  if (rect) rect->q = q;
  analysis::DiagnosticsRecorder rec(q, cfg.monitor.theta, rect, cfg.monitor.row_spacing);
  const auto traj = stepper::evolve(c.u0, cfg.t_start, cfg.t_end, cfg.coeffs, cfg.step, {rec.observer()});
  rec.finish();
  analysis::DiagnosticsSeries series = rec.series();

  analysis::ThresholdReport report = c.report;
  const bool truncated = traj.status != stepper::Status::completed;
  if (!report.M2_star && !series.rows.empty()) {
    report.M2_star = analysis::estimate_m2_star({series}, cfg.monitor.tail_fraction);
    report.M2_star_source = "estimated";
  }
  if (report.M1_star && report.M2_star) {
    analysis::RectangleSpec r = analysis::rectangle(report);
    r.q = q;
    analysis::mark_membership(series, r);
  }

  {
    std::ofstream out(c.out / "diagnostics.csv", std::ios::binary | std::ios::trunc);
    series.write_csv(out);
  }
  write_checkpoints_csv(c.out / "checkpoints.csv", traj.states);

  const auto holder = analysis::check_holder_rows(series);
  const auto kernel = analysis::check_kernel_rows(series, report.delta0);
  const auto mass = analysis::check_mass_comparison(series, cfg.coeffs);
  bool verdict_ok = holder.empty() && kernel.empty() && mass.empty();

  json checks;
  checks["holder_rows"] = violations_json(holder);
  checks["kernel_rows"] = violations_json(kernel);
  checks["mass_comparison"] = violations_json(mass);
  const bool bounds_apply = report.cond_1_5.ok && report.gamma > 0.0;
  const analysis::PersistenceFloor floor = analysis::persistence_floor(series, cfg.monitor.tail_fraction, truncated);
  if (bounds_apply && !series.rows.empty()) {
    const auto env = analysis::envelope_neg_p(series, report, cfg.t_start, cfg.monitor.tail_fraction);
    checks["envelope"] = {{"applicable", true},
                          {"ok", env.ok()},
                          {"tau", env.tau},
                          {"anchor", env.anchor},
                          {"M1", env.M1},
                          {"M1_tilde", env.M1_tilde},
                          {"tail_sup", env.tail_sup},
                          {"exponential_violations", env.exponential.size()},
                          {"max_form_violations", env.max_form.size()}};
    const bool floor_ok = floor.min_mass >= *report.mass_floor * 0.95;
    checks["mass_floor"] = {{"applicable", true},
                            {"ok", floor_ok},
                            {"floor", *report.mass_floor},
                            {"tail_min_mass", floor.min_mass}};
    verdict_ok = verdict_ok && env.ok() && floor_ok;
  } else {
    checks["envelope"] = {{"applicable", false}};
    checks["mass_floor"] = {{"applicable", false}};
  }
  checks["tau0_1_2"] = report.gamma > 0.0 ? opt_json(analysis::check_1_2(series, report, cfg.t_start)) : json(nullptr);

  double tail_max_u = 0.0;
  if (!series.rows.empty()) {
    const double t0 = series.rows.front().t, t1 = series.rows.back().t;
    const double start = t1 - cfg.monitor.tail_fraction * (t1 - t0);
    for (const auto& r : series.rows)
      if (r.t >= start) tail_max_u = std::max(tail_max_u, r.max_u);
  }

  RunOutcome o;
  o.result["status"] = stepper::to_string(traj.status);
  o.result["detail"] = traj.detail;
  o.result["steps"] = traj.steps;
  o.result["t_final"] = traj.final().t;
  o.result["positivized"] = traj.positivized;
  o.result["rows"] = series.rows.size();
  o.result["q"] = q;
  o.result["report"] = analysis::to_json(report);
  o.result["checks"] = checks;
  o.result["persistence"] = {{"min_u", floor.min_u},
                             {"min_v", floor.min_v},
                             {"min_mass", floor.min_mass},
                             {"truncated", floor.truncated}};
  o.result["tail_max_u"] = tail_max_u;
  o.exit_code = truncated ? kRuntimeFailure : verdict_ok ? kOk : kVerdictFailure;
  return o;
}

json fixed_point_json(const entire::FixedPointResult& r) {
  json j;
  j["converged"] = r.converged;
  j["residual"] = r.residual;
  j["iterations"] = r.iterations;
  j["rectangle_member"] = r.rectangle_member;
  j["residual_history"] = r.residual_history;
  j["periodicity_error"] = opt_json(r.periodicity_error);
  j["periodicity_verified"] = r.periodicity_verified;
  j["detail"] = r.detail;
  j["min_u"] = r.u_star.min();
  j["max_u"] = r.u_star.max();
  j["mass"] = model::integrate(r.u_star);
  return j;
}

RunOutcome run_periodic(Ctx& c) {
  if (!c.cfg.coeffs.period()) throw ConfigError("periodic experiments need a period", "coefficients.period");
  entire::PeriodicOptions opts = c.cfg.periodic;
  opts.rectangle = configured_rectangle(c.report);
  const auto res = entire::fixed_point_periodic(c.cfg.coeffs, c.u0, c.cfg.step, opts);
  write_field_csv(c.out / "u_star.csv", res.u_star, "u");
  RunOutcome o;
  o.result["status"] = res.converged && res.periodicity_verified ? "converged" : "not_converged";
  o.result["period"] = *c.cfg.coeffs.period();
  o.result["fixed_dt"] = *entire::period_grid(c.cfg.step, *c.cfg.coeffs.period()).fixed_dt;
  o.result["fixed_point"] = fixed_point_json(res);
  if (!opts.rectangle) o.result["fixed_point"]["rectangle_member"] = nullptr;
  o.exit_code = res.converged && res.periodicity_verified ? kOk : kVerdictFailure;
  return o;
}

RunOutcome run_steady(Ctx& c) {
  if (!c.cfg.coeffs.time_independent())
    throw ConfigError("steady experiments need time-independent coefficients", "coefficients");
  entire::SteadyOptions opts = c.cfg.steady;
  opts.rectangle = configured_rectangle(c.report);
  const auto res = entire::steady_state(c.cfg.coeffs, c.u0, c.cfg.step, opts);
  write_field_csv(c.out / "u_star.csv", res.u_star, "u");
  RunOutcome o;
  o.result["status"] = res.converged ? "converged" : "not_converged";
  o.result["fixed_point"] = fixed_point_json(res);
  if (!opts.rectangle) o.result["fixed_point"]["rectangle_member"] = nullptr;
  o.exit_code = res.converged ? kOk : kVerdictFailure;
  return o;
}

RunOutcome run_entire(Ctx& c) {
  const auto res = entire::pullback_entire(c.cfg.coeffs, c.u0, c.cfg.entire_window, c.cfg.entire_schedule,
                                           c.cfg.entire_tol, c.cfg.step);
  write_field_csv(c.out / "profile.csv", res.profile, "u");
  write_checkpoints_csv(c.out / "checkpoints.csv", res.window);
  RunOutcome o;
  o.result["status"] = res.converged ? "converged" : "not_converged";
  o.result["n_values"] = res.n_values;
  o.result["differences"] = res.differences;
  o.result["window_checkpoints"] = res.window.size();
  o.result["detail"] = res.detail;
  const auto rect = configured_rectangle(c.report);
  o.result["rectangle_member"] = rect ? json(rect->member(res.profile)) : json(nullptr);
  o.exit_code = res.converged ? kOk : kVerdictFailure;
  return o;
}

}  // namespace

RunOutcome run(const RunConfig& cfg, Experiment experiment, const fs::path& out, unsigned parallelism) {
  if (experiment == Experiment::sweep) return sweep(cfg, out, parallelism);
  const auto wall0 = std::chrono::steady_clock::now();
  fs::create_directories(out);
  std::error_code ec;
  fs::remove(out / "result.json", ec);

  const model::ScalarField u0 = initial_field(cfg);
  elliptic::Delta0Options dopt;
  dopt.max_columns = cfg.delta0_max_columns;
  dopt.threads = std::max(1u, parallelism);
  elliptic::Delta0Result d0{0.0, false, 0, 0, 0};
  if (cfg.delta0_value) {
    d0.value = *cfg.delta0_value;
  } else {
    d0 = elliptic::delta0_h(cfg.domain, cfg.coeffs.mu(), cfg.coeffs.nu(), dopt);
  }
  analysis::ReportOptions ropt;
  ropt.c_star = cfg.c_star;
  ropt.M2_star = cfg.m2_star;
  const analysis::ThresholdReport report =
      analysis::threshold_report(cfg.coeffs, cfg.domain, d0.value, d0.certified, ropt);

  json manifest;
  manifest["version"] = kVersion;
  manifest["schema_version"] = kSchemaVersion;
  manifest["experiment"] = to_string(experiment);
  manifest["started_at"] = iso_now();
  manifest["config"] = cfg.resolved;
  manifest["report"] = analysis::to_json(report);
  manifest["delta0_source"] = cfg.delta0_value ? "configured" : "computed";
  manifest["delta0_columns"] = d0.columns;
  manifest["delta0_refined"] = nullptr;
  if (!cfg.delta0_value) {
    // Grid-refinement sensitivity: the same constant with twice the cells per axis.
    const model::Domain& d = cfg.domain;
    const model::Domain fine = d.dim() == 1 ? model::Domain::interval(d.length(0), 2 * d.nx())
                                            : model::Domain::rectangle(d.length(0), d.length(1), 2 * d.nx(), 2 * d.ny());
    elliptic::Delta0Options fopt = dopt;
    fopt.max_columns = std::min<std::size_t>(dopt.max_columns, 1024);
    const auto f = elliptic::delta0_h(fine, cfg.coeffs.mu(), cfg.coeffs.nu(), fopt);
    manifest["delta0_refined"] = {{"cells", fine.size()},
                                  {"value", f.value},
                                  {"certified", f.certified},
                                  {"relative_change", (f.value - d0.value) / d0.value}};
  }
  manifest["initial_positivized"] = u0.min() <= 0.0;
  manifest["holder_pair_cap"] = cfg.domain.dim() == 2 ? json(analysis::kHolderCap) : json(nullptr);
  write_atomic(out / "manifest.json", dump(manifest));

  Ctx ctx{cfg, out, report, u0};
  RunOutcome o;
  try {
    switch (experiment) {
      case Experiment::thresholds:
        o.result["status"] = report.cond_1_5.ok ? "pass" : "fail";
        o.result["report"] = analysis::to_json(report);
        o.exit_code = report.cond_1_5.ok ? kOk : kVerdictFailure;
        break;
      case Experiment::simulate: o = run_simulate(ctx); break;
      case Experiment::periodic: o = run_periodic(ctx); break;
      case Experiment::steady: o = run_steady(ctx); break;
      case Experiment::entire: o = run_entire(ctx); break;
      case Experiment::sweep: break;
    }
  } catch (const ConfigError& e) {
    o.result = json::object();
    o.result["status"] = "config_error";
    o.result["error"] = e.what();
    o.exit_code = kConfigError;
  } catch (const Error& e) {
    o.result = json::object();
    o.result["status"] = "error";
    o.result["error"] = e.what();
    o.exit_code = kRuntimeFailure;
  }
  json result;
  result["experiment"] = to_string(experiment);
  result["exit_code"] = o.exit_code;
  for (auto it = o.result.begin(); it != o.result.end(); ++it) result[it.key()] = it.value();
  result["wall_seconds"] =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - wall0).count();
  write_atomic(out / "result.json", dump(result));
  o.result = std::move(result);
  return o;
}

// --- sweep -------------------------------------------------------------------

namespace {

std::string value_text(const json& v) {
  if (v.is_number()) return fmt(v.get<double>());
  if (v.is_string()) return v.get<std::string>();
  return v.dump();
}

struct PointSummary {
  std::vector<std::string> axis_values;
  std::string cond_ok, cond_margin, floor_u, floor_v, tail_max_u, status;
};

PointSummary run_point(const RunConfig& base, const SweepSpec& sw, std::size_t index, const fs::path& dir) {
  PointSummary ps;
  json doc = base.raw;
  std::size_t rem = index;
  std::vector<std::size_t> pos(sw.axes.size());
  for (std::size_t a = sw.axes.size(); a-- > 0;) {
    pos[a] = rem % sw.axes[a].second.size();
    rem /= sw.axes[a].second.size();
  }
  for (std::size_t a = 0; a < sw.axes.size(); ++a) ps.axis_values.push_back(value_text(sw.axes[a].second[pos[a]]));

  try {
    for (std::size_t a = 0; a < sw.axes.size(); ++a) set_path(doc, sw.axes[a].first, sw.axes[a].second[pos[a]]);
    doc.erase("sweep");
    doc["experiment"] = to_string(sw.inner);
    doc["seed"] = base.seed + index;
    if (doc.contains("initial") && doc["initial"].is_object() && doc["initial"].contains("seed") &&
        doc["initial"]["seed"].is_number_integer())
      doc["initial"]["seed"] = doc["initial"]["seed"].get<std::uint64_t>() + index;
    const RunConfig cfg = parse_config(doc);
    const RunOutcome o = run(cfg, sw.inner, dir, 1);
    const json& r = o.result;
    if (r.contains("report")) {
      ps.cond_ok = r["report"]["cond_1_5"]["ok"].get<bool>() ? "pass" : "fail";
      ps.cond_margin = fmt(r["report"]["cond_1_5"]["margin"].get<double>());
    }
    if (r.contains("persistence")) {
      ps.floor_u = fmt(r["persistence"]["min_u"].get<double>());
      ps.floor_v = fmt(r["persistence"]["min_v"].get<double>());
    }
    if (r.contains("tail_max_u")) ps.tail_max_u = fmt(r["tail_max_u"].get<double>());
    ps.status = r.value("status", "unknown");
  } catch (const ConfigError& e) {
    ps.status = "config_error";
  } catch (const Error& e) {
    ps.status = "error";
  }
  return ps;
}

}  // namespace

RunOutcome sweep(const RunConfig& cfg, const fs::path& out, unsigned parallelism) {
  if (!cfg.sweep) throw ConfigError("sweep experiments need a sweep section", "sweep");
  const auto wall0 = std::chrono::steady_clock::now();
  const SweepSpec& sw = *cfg.sweep;
  std::size_t total = 1;
  for (const auto& ax : sw.axes) total *= ax.second.size();
  if (total > sw.cap) throw ConfigError("grid has more points than sweep.cap", "sweep.axes");

  fs::create_directories(out);
  std::error_code ec;
  fs::remove(out / "result.json", ec);
  json manifest;
  manifest["version"] = kVersion;
  manifest["schema_version"] = kSchemaVersion;
  manifest["experiment"] = "sweep";
  manifest["started_at"] = iso_now();
  manifest["config"] = cfg.resolved;
  manifest["points"] = total;
  write_atomic(out / "manifest.json", dump(manifest));

  std::vector<PointSummary> rows(total);
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (std::size_t i = next++; i < total; i = next++) {
      char name[32];
      std::snprintf(name, sizeof name, "point_%05zu", i);
      rows[i] = run_point(cfg, sw, i, out / name);
    }
  };
  const unsigned threads = std::max(1u, std::min<unsigned>(parallelism, static_cast<unsigned>(total)));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker);
  }

  {
    std::ofstream s(out / "summary.csv", std::ios::binary | std::ios::trunc);
    s << "index";
    for (const auto& ax : sw.axes) s << ',' << csv_field(ax.first);
    s << ",cond_1_5,cond_1_5_margin,floor_min_u,floor_min_v,tail_max_u,status\n";
    for (std::size_t i = 0; i < total; ++i) {
      const auto& r = rows[i];
      s << i;
      for (const auto& v : r.axis_values) s << ',' << csv_field(v);
      s << ',' << r.cond_ok << ',' << r.cond_margin << ',' << r.floor_u << ',' << r.floor_v << ',' << r.tail_max_u
        << ',' << csv_field(r.status) << '\n';
    }
  }

  std::size_t failures = 0;
  for (const auto& r : rows)
    if (r.status == "error" || r.status == "config_error") ++failures;
  RunOutcome o;
  o.result["experiment"] = "sweep";
  o.result["exit_code"] = kOk;
  o.result["points"] = total;
  o.result["failed_points"] = failures;
  o.result["wall_seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - wall0).count();
  write_atomic(out / "result.json", dump(o.result));
  return o;
}

// --- plot data ---------------------------------------------------------------

namespace {

std::vector<std::vector<std::string>> read_csv(const fs::path& path) {
  const std::string text = read_text(path);
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool quoted = false, any = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char ch = text[i];
    if (quoted) {
      if (ch == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field += ch;
      }
      continue;
    }
    if (ch == '"') {
      quoted = true;
      any = true;
    } else if (ch == ',') {
      row.push_back(std::move(field));
      field.clear();
      any = true;
    } else if (ch == '\n' || ch == '\r') {
      if (ch == '\r' && i + 1 < text.size() && text[i + 1] == '\n') ++i;
      if (any || !field.empty()) {
        row.push_back(std::move(field));
        rows.push_back(std::move(row));
      }
      row.clear();
      field.clear();
      any = false;
    } else {
      field += ch;
      any = true;
    }
  }
  if (any || !field.empty()) {
    row.push_back(std::move(field));
    rows.push_back(std::move(row));
  }
  return rows;
}

std::size_t column(const std::vector<std::string>& header, const std::string& name, const fs::path& file) {
  const auto it = std::find(header.begin(), header.end(), name);
  if (it == header.end()) throw ConfigError("column '" + name + "' missing in " + file.string(), "--out");
  return static_cast<std::size_t>(it - header.begin());
}

}  // namespace

fs::path emit_plotdata(const fs::path& ledger, const std::string& kind) {
  if (kind != "envelope" && kind != "persistence" && kind != "region")
    throw ConfigError("unknown plot kind '" + kind + "' (expected envelope, persistence or region)", "kind");
  const fs::path target = ledger / ("plot_" + kind + ".csv");

  if (kind == "region") {
    const fs::path src = ledger / "summary.csv";
    if (!fs::exists(src)) throw ConfigError("no summary.csv in " + ledger.string() + " (not a sweep ledger)", "--out");
    const auto rows = read_csv(src);
    if (rows.empty()) throw ConfigError("empty summary.csv", "--out");
    const auto& h = rows.front();
    const std::size_t c_ok = column(h, "cond_1_5", src), c_u = column(h, "floor_min_u", src),
                      c_v = column(h, "floor_min_v", src);
    std::vector<std::size_t> keep;
    for (std::size_t i = 0; i < c_ok; ++i) keep.push_back(i);
    keep.insert(keep.end(), {c_ok, c_u, c_v});
    std::ostringstream out;
    for (const auto& r : rows) {
      for (std::size_t k = 0; k < keep.size(); ++k) {
        if (k) out << ',';
        out << csv_field(keep[k] < r.size() ? r[keep[k]] : "");
      }
      out << '\n';
    }
    write_atomic(target, out.str());
    return target;
  }

  const fs::path diag = ledger / "diagnostics.csv";
  const fs::path man = ledger / "manifest.json";
  if (!fs::exists(diag) || !fs::exists(man))
    throw ConfigError("ledger " + ledger.string() + " lacks diagnostics.csv or manifest.json", "--out");
  json manifest;
  try {
    manifest = json::parse(read_text(man));
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("manifest.json is not valid JSON: ") + e.what(), "--out");
  }
  const json& report = manifest.at("report");
  const auto rows = read_csv(diag);
  if (rows.size() < 2) throw ConfigError("diagnostics.csv has no rows", "--out");
  const auto& h = rows.front();
  std::ostringstream out;
  if (kind == "envelope") {
    if (report.at("M1").is_null()) throw ConfigError("report has no M1 (a_inf <= a_chi_mu)", "--out");
    const double gamma = report.at("gamma").get<double>(), m1 = report.at("M1").get<double>();
    const std::size_t ct = column(h, "t", diag), cn = column(h, "neg_p_moment", diag);
    const double tau = std::stod(rows[1][ct]), anchor = std::stod(rows[1][cn]);
    out << "t,observed,bound\n";
    for (std::size_t i = 1; i < rows.size(); ++i) {
      const double t = std::stod(rows[i][ct]);
      out << rows[i][ct] << ',' << rows[i][cn] << ',' << fmt(std::exp(-gamma * (t - tau)) * anchor + m1) << '\n';
    }
  } else {
    const std::size_t ct = column(h, "t", diag), cu = column(h, "min_u", diag), cv = column(h, "min_v", diag);
    const std::string floor = report.at("mass_floor").is_null() ? "" : fmt(report.at("mass_floor").get<double>());
    out << "t,min_u,min_v,mass_floor\n";
    for (std::size_t i = 1; i < rows.size(); ++i)
      out << rows[i][ct] << ',' << rows[i][cu] << ',' << rows[i][cv] << ',' << floor << '\n';
  }
  write_atomic(target, out.str());
  return target;
}

}  // namespace chemo::harness
