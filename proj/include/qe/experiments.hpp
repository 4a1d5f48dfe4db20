#pragma once

// Config-driven experiment runner. A config names one experiment, its
// parameters, an output directory and a data format; validation builds the
// full plan without touching the file system, and a run writes one data file
// per sweep point, a summary and a manifest of SHA-256 hashes.

#include <atomic>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <mutex>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>
#include <openssl/evp.h>

#include "qe/anosov.hpp"
#include "qe/core.hpp"
#include "qe/covering.hpp"
#include "qe/hyperbolic.hpp"
#include "qe/quantize.hpp"
#include "qe/quantum_stats.hpp"
#include "qe/symbols.hpp"

#ifndef QE_VERSION
#define QE_VERSION "0.1.0"
#endif

namespace qe {

using json = nlohmann::json;

[[noreturn]] inline void config_error(const std::string& what) { fail(Errc::config, what); }

// ---------------------------------------------------------------------------
// Tables: every data file is a table, written as CSV or as JSON with the
// point metadata alongside.

struct Table {
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;

  void add(std::vector<double> row) { rows.push_back(std::move(row)); }

  std::string csv() const {
    std::ostringstream os;
    os << std::setprecision(17);
    for (std::size_t c = 0; c < columns.size(); ++c) os << (c ? "," : "") << columns[c];
    os << '\n';
    for (const auto& r : rows) {
      for (std::size_t c = 0; c < r.size(); ++c) os << (c ? "," : "") << r[c];
      os << '\n';
    }
    return os.str();
  }

  json to_json() const { return {{"columns", columns}, {"rows", rows}}; }
};

inline std::string sha256_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  require(static_cast<bool>(is), Errc::io, "cannot read " + path.string());
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  char buf[1 << 16];
  while (is) {
    is.read(buf, sizeof buf);
    if (is.gcount() > 0) EVP_DigestUpdate(ctx, buf, static_cast<std::size_t>(is.gcount()));
  }
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, md, &len);
  EVP_MD_CTX_free(ctx);
  std::ostringstream os;
  for (unsigned i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
  return os.str();
}

/// Writes files atomically (temporary name, then rename) into the output
/// directory and remembers them for the manifest.
class ArtifactWriter {
 public:
  ArtifactWriter(std::filesystem::path dir, std::string format) : dir_(std::move(dir)), format_(std::move(format)) {}

  const std::string& format() const { return format_; }
  const std::filesystem::path& dir() const { return dir_; }

  void write_text(const std::string& name, const std::string& content) {
    const auto final_path = dir_ / name;
    const auto tmp = dir_ / (name + ".tmp");
    {
      std::ofstream os(tmp, std::ios::binary);
      require(static_cast<bool>(os), Errc::io, "cannot open " + tmp.string());
      os << content;
      require(static_cast<bool>(os), Errc::io, "write failed for " + tmp.string());
    }
    std::filesystem::rename(tmp, final_path);
    std::lock_guard lock(mu_);
    files_.push_back(name);
  }

  /// Data file `stem`.csv or `stem`.json.
  std::string write_table(const std::string& stem, const Table& t, const json& meta = json::object()) {
    const std::string name = stem + "." + format_;
    if (format_ == "csv") {
      write_text(name, t.csv());
    } else {
      json j = meta;
      j["columns"] = t.columns;
      j["rows"] = t.rows;
      write_text(name, j.dump(2) + "\n");
    }
    return name;
  }

  std::vector<std::string> files() const {
    std::lock_guard lock(mu_);
    auto f = files_;
    std::sort(f.begin(), f.end());
    return f;
  }

 private:
  std::filesystem::path dir_;
  std::string format_;
  mutable std::mutex mu_;
  std::vector<std::string> files_;
};

// ---------------------------------------------------------------------------
// Typed parameter access with precise config errors.

class Params {
 public:
  Params(json j, std::string experiment, std::set<std::string> allowed)
      : j_(std::move(j)), experiment_(std::move(experiment)) {
    if (!j_.is_object()) config_error("'parameters' must be an object");
    for (const auto& [k, v] : j_.items())
      if (!allowed.count(k)) config_error("unknown parameter '" + k + "' for experiment " + experiment_);
  }

  bool has(const std::string& k) const { return j_.contains(k) && !j_[k].is_null(); }

  double number(const std::string& k, std::optional<double> fallback = std::nullopt) const {
    if (!has(k)) {
      if (!fallback) config_error("missing parameter '" + k + "' for experiment " + experiment_);
      return *fallback;
    }
    if (!j_[k].is_number()) config_error("parameter '" + k + "' must be a number");
    return j_[k].get<double>();
  }

  long long integer(const std::string& k, std::optional<long long> fallback = std::nullopt) const {
    if (!has(k)) {
      if (!fallback) config_error("missing parameter '" + k + "' for experiment " + experiment_);
      return *fallback;
    }
    if (!j_[k].is_number_integer()) config_error("parameter '" + k + "' must be an integer");
    return j_[k].get<long long>();
  }

  std::string text(const std::string& k, std::optional<std::string> fallback = std::nullopt) const {
    if (!has(k)) {
      if (!fallback) config_error("missing parameter '" + k + "' for experiment " + experiment_);
      return *fallback;
    }
    if (!j_[k].is_string()) config_error("parameter '" + k + "' must be a string");
    return j_[k].get<std::string>();
  }

  /// Scalar or list of numbers.
  std::vector<double> numbers(const std::string& k, std::optional<std::vector<double>> fallback = std::nullopt) const {
    if (!has(k)) {
      if (!fallback) config_error("missing parameter '" + k + "' for experiment " + experiment_);
      return *fallback;
    }
    const json& v = j_[k];
    std::vector<double> out;
    if (v.is_number()) return {v.get<double>()};
    if (!v.is_array() || v.empty()) config_error("parameter '" + k + "' must be a number or a nonempty list");
    for (const auto& e : v) {
      if (!e.is_number()) config_error("parameter '" + k + "' must contain numbers");
      out.push_back(e.get<double>());
    }
    return out;
  }

  std::vector<int> integers(const std::string& k, std::optional<std::vector<int>> fallback = std::nullopt) const {
    if (!has(k)) {
      if (!fallback) config_error("missing parameter '" + k + "' for experiment " + experiment_);
      return *fallback;
    }
    const json& v = j_[k];
    if (v.is_number_integer()) return {v.get<int>()};
    if (!v.is_array() || v.empty()) config_error("parameter '" + k + "' must be an integer or a nonempty list");
    std::vector<int> out;
    for (const auto& e : v) {
      if (!e.is_number_integer()) config_error("parameter '" + k + "' must contain integers");
      out.push_back(e.get<int>());
    }
    return out;
  }

  const json& raw(const std::string& k) const { return j_.at(k); }

 private:
  json j_;
  std::string experiment_;
};

/// A symbol given as a spec string ("loc:...", "micro:...", "cos:k1=..,k2=..",
/// "exp:k1=..,k2=..") or as {"bandwidth", "entries"} JSON; resolved per N.
class SymbolSource {
 public:
  SymbolSource() = default;

  static SymbolSource parse(const json& v, const std::string& key) {
    SymbolSource s;
    s.key_ = key;
    try {
      if (v.is_object()) {
        s.fixed_ = symbol_from_json(v);
        return s;
      }
      if (!v.is_string()) config_error("parameter '" + key + "' must be a string or a symbol object");
      const std::string text = v.get<std::string>();
      if (text.rfind("cos:", 0) == 0 || text.rfind("exp:", 0) == 0) {
        int k1 = 0, k2 = 0;
        std::stringstream ss(text.substr(4));
        std::string item;
        while (std::getline(ss, item, ',')) {
          const auto eq = item.find('=');
          if (eq == std::string::npos) config_error("parameter '" + key + "': expected key=value in '" + item + "'");
          const std::string k = item.substr(0, eq);
          const int val = std::stoi(item.substr(eq + 1));
          if (k == "k1")
            k1 = val;
          else if (k == "k2")
            k2 = val;
          else
            config_error("parameter '" + key + "': unknown mode key '" + k + "'");
        }
        if (text[0] == 'c')
          s.fixed_ = TorusSymbol::mode(k1, k2, 0.5) + TorusSymbol::mode(-k1, -k2, 0.5);
        else
          s.fixed_ = TorusSymbol::mode(k1, k2);
        return s;
      }
      s.spec_ = parse_symbol_spec(text);
      s.spec_->resolve(16);
    } catch (const Error& e) {
      if (e.code() == Errc::config) throw;
      config_error("parameter '" + key + "': " + e.what());
    } catch (const std::exception& e) {
      config_error("parameter '" + key + "': " + e.what());
    }
    return s;
  }

  TorusSymbol at(int dim) const {
    if (fixed_) return *fixed_;
    const auto spec = spec_->resolve(dim);
    return make_delta_symbol(spec, spec_->bandwidth.value_or(min_bandwidth(spec.scale)));
  }

  /// Config-time check of the symbol at dimension N.
  void check(int dim, int factor, const std::string& what) const {
    int k = 0;
    try {
      k = at(dim).effective_bandwidth();
    } catch (const std::exception& e) {
      config_error("parameter '" + key_ + "' at N=" + std::to_string(dim) + ": " + e.what());
    }
    if (factor * k >= dim)
      config_error("parameter '" + key_ + "' at N=" + std::to_string(dim) + ": bandwidth " + std::to_string(k) +
                   " violates " + what);
  }

 private:
  std::string key_;
  std::optional<TorusSymbol> fixed_;
  std::optional<SymbolArgument> spec_;
};

// ---------------------------------------------------------------------------
// Plans.

struct PointOutcome {
  std::string label;
  bool ok = false;
  std::string error;
  json summary;  ///< per-point summary values
};

struct SweepPoint {
  std::string label;
  std::function<json(ArtifactWriter&)> run;
};

struct Plan {
  std::string experiment;
  json config;  ///< normalized config echo
  std::filesystem::path output;
  std::string format;
  int workers = 1;
  std::vector<SweepPoint> points;
  /// Writes the summary data file; returns summary values for the manifest.
  std::function<json(const std::vector<PointOutcome>&, ArtifactWriter&)> summarize;
};

namespace detail {

inline IntMatrix2 map_matrix(const Params& p) {
  if (!p.has("matrix")) return default_cat_matrix;
  const json& m = p.raw("matrix");
  if (!m.is_array() || m.size() != 2 || !m[0].is_array() || !m[1].is_array() || m[0].size() != 2 || m[1].size() != 2)
    config_error("parameter 'matrix' must be [[a,b],[c,d]]");
  IntMatrix2 a{};
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) {
      if (!m[i][j].is_number_integer()) config_error("parameter 'matrix' must hold integers");
      a[i][j] = m[i][j].get<long long>();
    }
  return a;
}

inline AnosovMap make_map(const Params& p) {
  const double eps = p.number("epsilon", 0.0);
  if (!(eps >= 0.0)) config_error("parameter 'epsilon' must be >= 0");
  try {
    return AnosovMap(map_matrix(p), eps);
  } catch (const Error& e) {
    config_error(std::string("parameter 'matrix': ") + e.what());
  }
}

inline std::vector<int> dims(const Params& p, const AnosovMap* map, int min_dim = 4) {
  auto ns = p.integers("N");
  for (int n : ns) {
    if (n < min_dim) config_error("parameter 'N': " + std::to_string(n) + " is below " + std::to_string(min_dim));
    if (n > 8192) config_error("parameter 'N': " + std::to_string(n) + " exceeds 8192");
    if (map && !map->quantizable() && n % 2 != 0)
      config_error("parameter 'N': odd N=" + std::to_string(n) + " is not quantizable for this matrix");
  }
  return ns;
}

inline std::uint64_t seed_of(const Params& p, const std::string& experiment) {
  if (!p.has("seed")) config_error("experiment " + experiment + " is stochastic: parameter 'seed' is required");
  const long long s = p.integer("seed");
  if (s < 0) config_error("parameter 'seed' must be nonnegative");
  return static_cast<std::uint64_t>(s);
}

/// alpha in [0, 1/2) keeps delta = (log N)^-alpha rho-admissible for some rho < 1;
/// without an explicit beta_tilde, the default beta needs alpha < 1/3.
inline std::pair<double, double> alpha_beta(const Params& p) {
  const double alpha = p.number("alpha");
  if (!(alpha >= 0.0 && alpha < 0.5))
    config_error("parameter 'alpha'=" + std::to_string(alpha) + " violates 0 <= alpha < 1/2 (rho-admissible scale)");
  if (p.has("beta_tilde")) {
    const double bt = p.number("beta_tilde");
    if (!(bt > 0.0)) config_error("parameter 'beta_tilde' must be positive");
    return {alpha, bt};
  }
  if (alpha >= 1.0 / 3.0)
    config_error("parameter 'alpha'=" + std::to_string(alpha) +
                 " leaves no beta with alpha < beta < 1 - 2 alpha; give 'beta_tilde' explicitly");
  return {alpha, default_beta_tilde(alpha)};
}

inline std::string fmt(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

inline const FuchsianGroup& bolza_group() {
  static const FuchsianGroup g = FuchsianGroup::bolza();
  return g;
}

inline json ok_rows(const std::vector<PointOutcome>& outcomes) {
  json rows = json::array();
  for (const auto& o : outcomes)
    if (o.ok) rows.push_back(o.summary);
  return rows;
}

// --- egorov ---------------------------------------------------------------

inline void plan_egorov(Plan& plan, const Params& p) {
  const AnosovMap map = make_map(p);
  const auto ns = dims(p, &map);
  const long long t_max = p.integer("t_max", 20);
  if (t_max < 0 || t_max > 200) config_error("parameter 't_max' must lie in [0, 200]");
  const auto sym = SymbolSource::parse(p.has("symbol") ? p.raw("symbol") : json("cos:k1=1,k2=0"), "symbol");
  for (int n : ns) sym.check(n, 2, "2K < N");
  for (int n : ns)
    plan.points.push_back({"N" + std::to_string(n), [=](ArtifactWriter& w) {
                             const TorusSymbol a = sym.at(n);
                             const Matrix u = propagator(map, n).matrix;
                             Table t{{"t", "defect", "truncation_residual", "bandwidth"}, {}};
                             double max_defect = 0.0;
                             int reached = -1;
                             bool alias_limited = false;
                             for (int s = 0; s <= t_max; ++s) {
                               EgorovDefect d;
                               try {
                                 d = egorov_defect(a, map, u, s);
                               } catch (const Error& e) {
                                 if (e.code() != Errc::alias_limited && e.code() != Errc::bandwidth_overflow) throw;
                                 alias_limited = true;
                                 break;
                               }
                               t.add({double(s), d.defect, d.truncation_residual, double(d.bandwidth)});
                               max_defect = std::max(max_defect, d.defect);
                               reached = s;
                             }
                             const double te = ehrenfest_time(n, map.lyapunov());
                             json s{{"N", n}, {"max_defect", max_defect}, {"t_reached", reached},
                                    {"alias_limited", alias_limited}, {"ehrenfest_time", te}};
                             const int lo = std::max(1, static_cast<int>(std::lround(0.5 * te)));
                             const int hi = static_cast<int>(std::lround(2.0 * te));
                             if (hi <= reached) {
                               s["t_half_te"] = lo;
                               s["t_two_te"] = hi;
                               s["breakdown_ratio"] = t.rows[hi][1] / std::max(t.rows[lo][1], 1e-300);
                             }
                             w.write_table("egorov_N" + std::to_string(n), t, s);
                             return s;
                           }});
  plan.summarize = [](const std::vector<PointOutcome>& out, ArtifactWriter& w) {
    Table t{{"N", "max_defect", "t_reached", "ehrenfest_time"}, {}};
    double worst = 0.0;
    for (const auto& o : out)
      if (o.ok) {
        t.add({o.summary["N"].get<double>(), o.summary["max_defect"].get<double>(),
               o.summary["t_reached"].get<double>(), o.summary["ehrenfest_time"].get<double>()});
        worst = std::max(worst, o.summary["max_defect"].get<double>());
      }
    json s{{"max_defect", worst}, {"points", ok_rows(out)}};
    w.write_table("summary", t, s);
    return s;
  };
}

// --- variance-sweep ------------------------------------------------------------

inline void plan_variance(Plan& plan, const Params& p) {
  const AnosovMap map = make_map(p);
  const auto ns = dims(p, &map);
  const auto [alpha, beta_tilde] = alpha_beta(p);
  const auto sym = SymbolSource::parse(p.has("symbol") ? p.raw("symbol") : json("cos:k1=2,k2=0"), "symbol");
  for (int n : ns) sym.check(n, 2, "2K < N");
  for (int n : ns)
    plan.points.push_back({"N" + std::to_string(n), [=](ArtifactWriter& w) {
                             const auto eig = eigensolve(propagator(map, n).matrix);
                             const auto r = variance(sym.at(n), eig, alpha, beta_tilde);
                             Table t{{"j", "phase", "deviation", "in_gamma"}, {}};
                             std::vector<char> in(n, 0);
                             for (int j : r.gamma_set) in[j] = 1;
                             for (int j = 0; j < n; ++j) t.add({double(j), eig.phases[j], r.deviations[j], double(in[j])});
                             json s = r.to_json(false);
                             s.erase("lambda_set");
                             s["v2_log_n"] = r.v2 * std::log(double(n));
                             s["eigen_residual"] = eig.residual;
                             w.write_table("variance_N" + std::to_string(n), t, s);
                             s["_report"] = r.to_json(true);
                             s["_report"]["gamma_set"] = r.gamma_set;
                             return s;
                           }});
  plan.summarize = [](const std::vector<PointOutcome>& out, ArtifactWriter& w) {
    Table t{{"N", "delta", "v1", "v2", "v2_log_n", "density_gamma"}, {}};
    std::vector<VarianceReport> reps;
    for (const auto& o : out)
      if (o.ok) {
        const json& s = o.summary;
        t.add({s["N"].get<double>(), s["delta"].get<double>(), s["v1"].get<double>(), s["v2"].get<double>(),
               s["v2_log_n"].get<double>(), s["density_gamma"].get<double>()});
        VarianceReport r;
        const json& full = s["_report"];
        r.dim = full["N"].get<int>();
        r.deviations = full["per_j_deviations"].get<std::vector<double>>();
        r.gamma_set = full["gamma_set"].get<std::vector<int>>();
        reps.push_back(std::move(r));
      }
    std::sort(t.rows.begin(), t.rows.end());
    bool decreasing = t.rows.size() >= 2;
    double lo = 1e300, hi = 0.0;
    for (std::size_t i = 0; i < t.rows.size(); ++i) {
      if (i > 0) decreasing = decreasing && t.rows[i][3] < t.rows[i - 1][3];
      lo = std::min(lo, t.rows[i][4]);
      hi = std::max(hi, t.rows[i][4]);
    }
    json s{{"v2_strictly_decreasing", decreasing}, {"v2_log_n_ratio", t.rows.empty() ? 0.0 : hi / lo}};
    try {
      s["density_one"] = density_one_extract(reps).to_json();
    } catch (const Error& e) {
      s["density_one"] = {{"error", std::string(e.what())}};
    }
    w.write_table("summary", t, s);
    return s;
  };
}

// --- mass-dist -------------------------------------------------------------

inline void plan_mass(Plan& plan, const Params& p) {
  const AnosovMap map = make_map(p);
  const auto ns = dims(p, &map);
  const double x0 = p.number("x0", 0.3);
  const auto band = p.numbers("band", std::vector<double>{0.5, 1.5});
  if (band.size() != 2 || !(band[0] < band[1])) config_error("parameter 'band' must be [lo, hi] with lo < hi");
  std::vector<double> radii;
  if (p.has("r")) {
    radii = p.numbers("r");
    if (radii.size() != 1 && radii.size() != ns.size()) config_error("parameter 'r' must have one value or one per N");
  }
  for (std::size_t i = 0; i < ns.size(); ++i) {
    const int n = ns[i];
    const double r = radii.empty() ? std::pow(std::log(double(n)), -1.0 / 3.0) : radii[radii.size() == 1 ? 0 : i];
    if (!(r >= 2.0 / n))
      config_error("parameter 'r'=" + fmt(r) + " at N=" + std::to_string(n) + " violates r >= 2/N");
    plan.points.push_back({"N" + std::to_string(n), [=](ArtifactWriter& w) {
                             const auto eig = eigensolve(propagator(map, n).matrix);
                             const auto m = small_scale_mass(eig, x0, r);
                             Table t{{"j", "mass", "ratio"}, {}};
                             for (int j = 0; j < n; ++j) t.add({double(j), m.masses[j], m.masses[j] / m.arc_length});
                             json s{{"N", n},
                                    {"x0", x0},
                                    {"r", r},
                                    {"arc_length", m.arc_length},
                                    {"band", band},
                                    {"fraction_within", m.fraction_within(band[0], band[1])}};
                             w.write_table("mass_N" + std::to_string(n), t, s);
                             return s;
                           }});
  }
  plan.summarize = [](const std::vector<PointOutcome>& out, ArtifactWriter& w) {
    Table t{{"N", "r", "arc_length", "fraction_within"}, {}};
    for (const auto& o : out)
      if (o.ok)
        t.add({o.summary["N"].get<double>(), o.summary["r"].get<double>(), o.summary["arc_length"].get<double>(),
               o.summary["fraction_within"].get<double>()});
    json s{{"points", ok_rows(out)}};
    w.write_table("summary", t, s);
    return s;
  };
}

// --- surface observables -------------------------------------------------------

inline SurfaceObservable::Spec surface_spec(const Params& p, double delta) {
  SurfaceObservable::Spec sp;
  sp.delta = delta;
  const std::string kind = p.text("kind", "loc");
  if (kind == "micro")
    sp.kind = Localization::microlocalized;
  else if (kind != "loc")
    config_error("parameter 'kind' must be 'loc' or 'micro'");
  if (!(delta > 0.0 && delta <= SurfaceObservable::scale_cap))
    config_error("parameter 'delta'=" + fmt(delta) + " violates 0 < delta <= 0.5 (injectivity cap)");
  return sp;
}

inline McOptions mc_options(const Params& p, const std::string& experiment, double default_dt) {
  McOptions opt;
  opt.seed = seed_of(p, experiment);
  const long long n = p.integer("samples", 10000);
  if (n < 100 || n > 10000000) config_error("parameter 'samples' must lie in [100, 10^7]");
  opt.samples = static_cast<std::size_t>(n);
  opt.dt = p.number("dt", default_dt);
  if (!(opt.dt > 0.0 && opt.dt <= 1.0)) config_error("parameter 'dt' must lie in (0, 1]");
  const long long b = p.integer("bootstrap", 200);
  if (b < 10 || b > 10000) config_error("parameter 'bootstrap' must lie in [10, 10^4]");
  opt.bootstrap = static_cast<int>(b);
  return opt;
}

inline std::optional<double> gamma_of(const Params& p) {
  if (!p.has("gamma")) return std::nullopt;
  const double g = p.number("gamma");
  if (!(g > 0.0 && g < 1.0)) config_error("parameter 'gamma' must lie in (0, 1)");
  return g;
}

// --- mixing ---------------------------------------------------------------

inline void plan_mixing(Plan& plan, const Params& p) {
  const McOptions opt = mc_options(p, "mixing", 0.1);
  const double tmax = p.number("tmax", 3.0);
  if (!(tmax > 0.0 && tmax <= 20.0)) config_error("parameter 'tmax' must lie in (0, 20]");
  const auto gamma = gamma_of(p);
  for (double delta : p.numbers("delta", std::vector<double>{0.5})) {
    const auto sp = surface_spec(p, delta);
    plan.points.push_back({"delta" + fmt(delta), [=](ArtifactWriter& w) {
                             const SurfaceObservable f(bolza_group(), sp);
                             const auto c = mixing_fit(f, f, bolza_group(), tmax, opt);
                             Table t{{"t", "C", "stderr"}, {}};
                             for (std::size_t k = 0; k < c.times.size(); ++k)
                               t.add({c.times[k], c.values[k], c.stderr_[k]});
                             json s = c.to_json();
                             s.erase("t");
                             s.erase("C");
                             s.erase("stderr");
                             s["delta"] = delta;
                             s["mean"] = f.mean();
                             if (gamma) s["holder_norm"] = surface_holder_norm(f, *gamma, sp.x0, 1.5 * delta);
                             w.write_table("mixing_delta" + fmt(delta), t, s);
                             return s;
                           }});
  }
  plan.summarize = [](const std::vector<PointOutcome>& out, ArtifactWriter& w) {
    Table t{{"delta", "amplitude", "rate", "r2", "signal_below_noise"}, {}};
    for (const auto& o : out)
      if (o.ok)
        t.add({o.summary["delta"].get<double>(), o.summary["amplitude"].get<double>(), o.summary["rate"].get<double>(),
               o.summary["r2"].get<double>(), o.summary["signal_below_noise"].get<bool>() ? 1.0 : 0.0});
    json s{{"points", ok_rows(out)}};
    w.write_table("summary", t, s);
    return s;
  };
}

// --- ergodicity-rate ----------------------------------------------------------

inline void plan_ergodicity(Plan& plan, const Params& p) {
  const std::string space = p.text("space", "bolza");
  if (space == "bolza") {
    const McOptions opt = mc_options(p, "ergodicity-rate", 0.05);
    const auto ts = p.numbers("Ts", std::vector<double>{2, 4, 8, 16, 32});
    if (ts.size() < 3) config_error("parameter 'Ts' needs at least three horizons");
    for (double t : ts)
      if (!(t > 0.0 && t <= 1000.0)) config_error("parameter 'Ts' must lie in (0, 1000]");
    const auto gamma = gamma_of(p);
    for (double delta : p.numbers("delta", std::vector<double>{0.5})) {
      const auto sp = surface_spec(p, delta);
      plan.points.push_back({"delta" + fmt(delta), [=](ArtifactWriter& w) {
                               const SurfaceObservable b(bolza_group(), sp);
                               const double m = b.mean();
                               auto f = [&](const UnitTangentFrame& fr) { return b(fr) - m; };
                               const auto r = ergodicity_rate_mc(f, bolza_group(), ts, opt);
                               Table t{{"T", "norm", "stderr"}, {}};
                               for (std::size_t k = 0; k < r.horizons.size(); ++k)
                                 t.add({r.horizons[k], r.norms[k], r.norm_stderr[k]});
                               json s{{"space", "bolza"}, {"delta", delta}, {"exponent", r.exponent},
                                      {"ci_low", r.ci_low}, {"ci_high", r.ci_high}, {"r2", r.r2}};
                               if (gamma) s["holder_norm"] = surface_holder_norm(b, *gamma, sp.x0, 1.5 * delta);
                               w.write_table("ergodicity_delta" + fmt(delta), t, s);
                               return s;
                             }});
    }
  } else if (space == "cat") {
    const AnosovMap map = make_map(p);
    if (!map.linear()) config_error("parameter 'epsilon': the exact cat-map rate needs epsilon = 0");
    const auto ts = p.integers("Ts", std::vector<int>{1, 4, 16, 64});
    if (ts.size() < 3) config_error("parameter 'Ts' needs at least three horizons");
    for (int t : ts)
      if (t < 1 || t > 100000) config_error("parameter 'Ts' must lie in [1, 10^5]");
    const auto sym = SymbolSource::parse(p.has("symbol") ? p.raw("symbol") : json("exp:k1=1,k2=0"), "symbol");
    plan.points.push_back({"cat", [=](ArtifactWriter& w) {
                             const auto r = ergodicity_rate(sym.at(1024), map, ts);
                             Table t{{"T", "norm"}, {}};
                             for (std::size_t k = 0; k < r.horizons.size(); ++k) t.add({double(r.horizons[k]), r.norms[k]});
                             json s{{"space", "cat"}, {"exponent", r.exponent}, {"r2", r.r2},
                                    {"exact_ergodic", r.exact_ergodic}};
                             w.write_table("ergodicity_cat", t, s);
                             return s;
                           }});
  } else {
    config_error("parameter 'space' must be 'bolza' or 'cat'");
  }
  plan.summarize = [](const std::vector<PointOutcome>& out, ArtifactWriter& w) {
    Table t{{"point", "exponent"}, {}};
    for (std::size_t i = 0; i < out.size(); ++i)
      if (out[i].ok) t.add({double(i), out[i].summary["exponent"].get<double>()});
    json s{{"points", ok_rows(out)}};
    w.write_table("summary", t, s);
    return s;
  };
}

// --- cover-sweep -------------------------------------------------------------

template <class Space>
json run_cover(const Space& space, double r, std::uint64_t seed, std::size_t grid, std::size_t balls,
               ArtifactWriter& w) {
  CoverOptions opt;
  opt.testgrid = grid;
  const auto rep = greedy_cover(space, r, seed, opt);
  json s = rep.to_json();
  s.erase("centers");
  try {
    s["certificate"] = verify_properties(rep, space, balls, seed + 1).to_json();
    s["certificate_failures"] = 0;
  } catch (const Error& e) {
    s["certificate_error"] = e.what();
    s["certificate_failures"] = 1;
  }
  Table t{{"x", "y"}, {}};
  for (const auto& c : rep.centers) t.add({c.real(), c.imag()});
  w.write_table("cover_r" + detail::fmt(r), t, s);
  if (s["certificate_failures"].get<int>() > 0) fail(Errc::certificate_failure, s["certificate_error"].get<std::string>());
  return s;
}

inline void plan_cover(Plan& plan, const Params& p) {
  const std::uint64_t seed = seed_of(p, "cover-sweep");
  const std::string space = p.text("space", "bolza");
  if (space != "bolza" && space != "flat-torus") config_error("parameter 'space' must be 'bolza' or 'flat-torus'");
  const double cap = space == "bolza" ? 0.5 : std::numeric_limits<double>::infinity();
  const long long grid = p.integer("testgrid", 10000);
  if (grid < 10000 || grid > 10000000) config_error("parameter 'testgrid' must lie in [10^4, 10^7]");
  const long long balls = p.integer("samples", 1000);
  if (balls < 1 || balls > 10000000) config_error("parameter 'samples' must lie in [1, 10^7]");
  for (double r : p.numbers("r", std::vector<double>{0.4, 0.2, 0.1})) {
    if (!(r > 0.0 && r <= cap)) config_error("parameter 'r'=" + fmt(r) + " violates 0 < r <= " + fmt(cap));
    plan.points.push_back({"r" + fmt(r), [=](ArtifactWriter& w) {
                             if (space == "bolza")
                               return run_cover(BolzaSpace(bolza_group()), r, seed, grid, balls, w);
                             return run_cover(FlatTorusSpace{}, r, seed, grid, balls, w);
                           }});
  }
  plan.summarize = [](const std::vector<PointOutcome>& out, ArtifactWriter& w) {
    Table t{{"r", "N", "c1_hat", "c2_hat"}, {}};
    double c1lo = 1e300, c1hi = 0, c2lo = 1e300, c2hi = 0;
    for (const auto& o : out)
      if (o.ok) {
        const json& s = o.summary;
        t.add({s["radius"].get<double>(), s["count"].get<double>(), s["c1_hat"].get<double>(),
               s["c2_hat"].get<double>()});
        c1lo = std::min(c1lo, s["c1_hat"].get<double>());
        c1hi = std::max(c1hi, s["c1_hat"].get<double>());
        c2lo = std::min(c2lo, s["c2_hat"].get<double>());
        c2hi = std::max(c2hi, s["c2_hat"].get<double>());
      }
    json s{{"c1_ratio", t.rows.empty() ? 0.0 : c1hi / c1lo}, {"c2_ratio", t.rows.empty() ? 0.0 : c2hi / c2lo}};
    w.write_table("summary", t, s);
    return s;
  };
}

// --- calculus-defects ---------------------------------------------------------

inline void plan_calculus(Plan& plan, const Params& p) {
  const auto ns = dims(p, nullptr, 2);
  const auto a = SymbolSource::parse(p.has("symbol_a") ? p.raw("symbol_a") : json("exp:k1=1,k2=0"), "symbol_a");
  const auto b = SymbolSource::parse(p.has("symbol_b") ? p.raw("symbol_b") : json("exp:k1=0,k2=1"), "symbol_b");
  for (int n : ns) {
    const int k = a.at(n).effective_bandwidth() + b.at(n).effective_bandwidth();
    if (2 * k >= n) config_error("parameter 'N'=" + std::to_string(n) + " violates 2 (K_a + K_b) < N");
  }
  for (int n : ns)
    plan.points.push_back({"N" + std::to_string(n), [=](ArtifactWriter& w) {
                             const auto d = calculus_defects(a.at(n), b.at(n), n);
                             Table t{{"N", "h", "adjoint", "product", "commutator", "product_second_order"}, {}};
                             t.add({double(n), planck_constant(n), d.adjoint, d.product, d.commutator,
                                    d.product_second_order});
                             json s{{"N", n},
                                    {"h", planck_constant(n)},
                                    {"adjoint", d.adjoint},
                                    {"product", d.product},
                                    {"commutator", d.commutator},
                                    {"product_second_order", d.product_second_order}};
                             w.write_table("calculus_N" + std::to_string(n), t, s);
                             return s;
                           }});
  plan.summarize = [](const std::vector<PointOutcome>& out, ArtifactWriter& w) {
    Table t{{"N", "h", "adjoint", "product", "commutator", "product_second_order"}, {}};
    std::vector<double> n, prod, comm, second;
    for (const auto& o : out)
      if (o.ok) {
        const json& s = o.summary;
        t.add({s["N"].get<double>(), s["h"].get<double>(), s["adjoint"].get<double>(), s["product"].get<double>(),
               s["commutator"].get<double>(), s["product_second_order"].get<double>()});
        n.push_back(s["N"].get<double>());
        prod.push_back(s["product"].get<double>());
        comm.push_back(s["commutator"].get<double>());
        second.push_back(s["product_second_order"].get<double>());
      }
    json s = json::object();
    if (n.size() >= 2) {
      auto slope = [&](const std::vector<double>& y) {
        for (double v : y)
          if (!(v > 0.0)) return json(nullptr);
        return json(fit_loglog(n, y).slope);
      };
      s["slope_product"] = slope(prod);
      s["slope_commutator"] = slope(comm);
      s["slope_product_second_order"] = slope(second);
    }
    w.write_table("summary", t, s);
    return s;
  };
}

// --- trace-check ---------------------------------------------------------------

inline void plan_trace(Plan& plan, const Params& p) {
  const auto ns = dims(p, nullptr, 2);
  std::optional<SymbolSource> sym;
  if (p.has("symbol")) sym = SymbolSource::parse(p.raw("symbol"), "symbol");
  if (sym)
    for (int n : ns) sym->check(n, 1, "K < N");
  const long long count = p.integer("symbols", 8);
  if (count < 1 || count > 1000) config_error("parameter 'symbols' must lie in [1, 1000]");
  for (int n : ns)
    plan.points.push_back({"N" + std::to_string(n), [=](ArtifactWriter& w) {
                             Table t{{"index", "bandwidth", "trace_re", "trace_im", "mean", "defect"}, {}};
                             double worst = 0.0;
                             auto check = [&](int index, const TorusSymbol& a) {
                               const auto tr = trace_average(quantize(a, n, AliasPolicy::allow), a);
                               t.add({double(index), double(a.effective_bandwidth()), tr.trace.real(),
                                      tr.trace.imag(), tr.mean, tr.defect});
                               worst = std::max(worst, tr.defect);
                             };
                             if (sym) {
                               check(0, sym->at(n));
                             } else {
                               // pseudo-random band-limited symbols with K spread over [0, N-1]
                               std::mt19937_64 rng(static_cast<std::uint64_t>(n));
                               std::normal_distribution<double> g;
                               for (int i = 0; i < count; ++i) {
                                 const int k = count == 1 ? n - 1 : static_cast<int>(i * (n - 1) / (count - 1));
                                 TorusSymbol a(k);
                                 const int step = std::max(1, (2 * k + 1) / 9);
                                 for (int k1 = -k; k1 <= k; k1 += step)
                                   for (int k2 = -k; k2 <= k; k2 += step) a.set({k1, k2}, {g(rng), g(rng)});
                                 a.set({k, -k}, {g(rng), g(rng)});
                                 a.set({0, 0}, {g(rng), g(rng)});
                                 check(i, a);
                               }
                             }
                             json s{{"N", n}, {"max_defect", worst}, {"symbols", t.rows.size()}};
                             w.write_table("trace_N" + std::to_string(n), t, s);
                             return s;
                           }});
  plan.summarize = [](const std::vector<PointOutcome>& out, ArtifactWriter& w) {
    Table t{{"N", "max_defect"}, {}};
    double worst = 0.0;
    for (const auto& o : out)
      if (o.ok) {
        t.add({o.summary["N"].get<double>(), o.summary["max_defect"].get<double>()});
        worst = std::max(worst, o.summary["max_defect"].get<double>());
      }
    json s{{"max_defect", worst}};
    w.write_table("summary", t, s);
    return s;
  };
}

}  // namespace detail

inline const std::vector<std::string>& experiment_names() {
  static const std::vector<std::string> names{"egorov",          "variance-sweep", "mass-dist",       "mixing",
                                              "ergodicity-rate", "cover-sweep",    "calculus-defects", "trace-check"};
  return names;
}

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
};

/// Validates a config and builds the run plan. Throws ConfigError.
inline Plan make_plan(json config, const Overrides& ov = {}) {
  if (!config.is_object()) config_error("config must be a JSON object");
  for (const auto& [k, v] : config.items())
    if (k != "experiment" && k != "parameters" && k != "output" && k != "format")
      config_error("unknown top-level key '" + k + "'");
  if (!config.contains("experiment") || !config["experiment"].is_string()) config_error("missing 'experiment'");
  const std::string exp = config["experiment"].get<std::string>();
  const auto& names = experiment_names();
  if (std::find(names.begin(), names.end(), exp) == names.end()) config_error("unknown experiment '" + exp + "'");
  if (!config.contains("parameters")) config["parameters"] = json::object();
  if (ov.seed) config["parameters"]["seed"] = *ov.seed;
  if (ov.out) config["output"] = *ov.out;
  if (!config.contains("output") || !config["output"].is_string() || config["output"].get<std::string>().empty())
    config_error("missing 'output' directory (set it in the config or pass --out)");
  const std::string format = config.value("format", std::string("csv"));
  if (format != "csv" && format != "json") config_error("'format' must be 'csv' or 'json'");
  config["format"] = format;

  static const std::map<std::string, std::set<std::string>> allowed{
      {"egorov", {"N", "epsilon", "matrix", "t_max", "symbol"}},
      {"variance-sweep", {"N", "epsilon", "matrix", "alpha", "beta_tilde", "symbol"}},
      {"mass-dist", {"N", "epsilon", "matrix", "r", "x0", "band"}},
      {"mixing", {"seed", "samples", "delta", "kind", "tmax", "dt", "bootstrap", "gamma"}},
      {"ergodicity-rate",
       {"space", "seed", "samples", "delta", "kind", "Ts", "dt", "bootstrap", "gamma", "symbol", "epsilon", "matrix"}},
      {"cover-sweep", {"space", "seed", "r", "samples", "testgrid"}},
      {"calculus-defects", {"N", "symbol_a", "symbol_b"}},
      {"trace-check", {"N", "symbol", "symbols"}},
  };
  auto keys = allowed.at(exp);
  keys.insert("workers");
  keys.insert("seed");  // accepted everywhere so --seed works uniformly
  const Params params(config["parameters"], exp, keys);

  Plan plan;
  plan.experiment = exp;
  plan.config = config;
  plan.output = config["output"].get<std::string>();
  plan.format = format;
  const long long workers = params.integer("workers", 1);
  if (workers < 1 || workers > 256) config_error("parameter 'workers' must lie in [1, 256]");
  plan.workers = static_cast<int>(workers);

  if (exp == "egorov") detail::plan_egorov(plan, params);
  else if (exp == "variance-sweep") detail::plan_variance(plan, params);
  else if (exp == "mass-dist") detail::plan_mass(plan, params);
  else if (exp == "mixing") detail::plan_mixing(plan, params);
  else if (exp == "ergodicity-rate") detail::plan_ergodicity(plan, params);
  else if (exp == "cover-sweep") detail::plan_cover(plan, params);
  else if (exp == "calculus-defects") detail::plan_calculus(plan, params);
  else detail::plan_trace(plan, params);
  return plan;
}

inline json load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) config_error("cannot read config " + path);
  try {
    return json::parse(is);
  } catch (const json::exception& e) {
    config_error("malformed config " + path + ": " + e.what());
  }
}

struct RunResult {
  int exit_code = 0;  ///< 0 all points ok, 2 some failed
  std::vector<PointOutcome> outcomes;
  json summary;
  std::filesystem::path manifest;
};

/// Executes a validated plan. Points run on `plan.workers` threads; data
/// files do not depend on the worker count.
inline RunResult run_plan(const Plan& plan) {
  const auto start = std::chrono::steady_clock::now();
  std::filesystem::create_directories(plan.output);
  ArtifactWriter writer(plan.output, plan.format);
  RunResult res;
  res.outcomes.resize(plan.points.size());
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i = next++; i < plan.points.size(); i = next++) {
      PointOutcome& o = res.outcomes[i];
      o.label = plan.points[i].label;
      try {
        o.summary = plan.points[i].run(writer);
        o.ok = true;
      } catch (const std::exception& e) {
        o.error = e.what();
      }
    }
  };
  const int nthreads = std::min<int>(plan.workers, static_cast<int>(plan.points.size()));
  if (nthreads <= 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < nthreads; ++t) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  json points = json::array();
  for (auto& o : res.outcomes) {
    json pj{{"label", o.label}, {"status", o.ok ? "ok" : "failed"}};
    if (!o.ok) pj["error"] = o.error;
    points.push_back(pj);
    if (!o.ok) res.exit_code = 2;
  }
  try {
    res.summary = plan.summarize(res.outcomes, writer);
  } catch (const std::exception& e) {
    res.summary = {{"error", std::string(e.what())}};
    res.exit_code = 2;
  }
  for (auto& o : res.outcomes)
    if (o.ok) o.summary.erase("_report");
  json files = json::array();
  for (const auto& f : writer.files()) {
    const auto path = plan.output / f;
    files.push_back({{"path", f}, {"sha256", sha256_file(path)}, {"bytes", std::filesystem::file_size(path)}});
  }
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  json manifest{{"experiment", plan.experiment},
                {"version", QE_VERSION},
                {"config", plan.config},
                {"wall_time_s", wall},
                {"points", points},
                {"summary", res.summary},
                {"files", files},
                {"exit_status", res.exit_code}};
  res.manifest = plan.output / "manifest.json";
  {
    std::ofstream os(plan.output / "manifest.json.tmp");
    os << manifest.dump(2) << '\n';
  }
  std::filesystem::rename(plan.output / "manifest.json.tmp", res.manifest);
  return res;
}

}  // namespace qe
