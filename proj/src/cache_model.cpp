#include "biscuit/cache_model.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

namespace biscuit {

std::string_view to_string(BeaconKind kind) {
  return kind == BeaconKind::Precise ? "precise" : "expected";
}

BeaconKind beacon_kind_from_string(std::string_view s) {
  if (s == "precise") return BeaconKind::Precise;
  if (s == "expected") return BeaconKind::Expected;
  throw ModelError("unknown beacon kind '" + std::string(s) + "'");
}

std::vector<double> features(std::span<const double> bounds) {
  std::vector<double> f;
  f.reserve(bounds.size() + 1);
  f.push_back(1.0);
  double product = 1.0;
  for (double b : bounds) {
    product *= b;
    f.push_back(product);
  }
  return f;
}

std::vector<double> fit(std::span<const TrainingSample> samples) {
  if (samples.empty()) throw ModelError("fit: no samples");
  return fit(samples, std::vector<bool>(samples.front().bounds.size() + 1, true));
}

std::vector<double> fit(std::span<const TrainingSample> samples, const std::vector<bool>& active) {
  if (samples.empty()) throw ModelError("fit: no samples");
  const std::size_t terms = samples.front().bounds.size() + 1;
  if (active.size() != terms) throw DimensionMismatch("fit: active mask has wrong length");
  const auto active_count = static_cast<std::size_t>(std::count(active.begin(), active.end(), true));
  if (samples.size() < active_count + 1) {
    throw ModelError("fit: need at least " + std::to_string(active_count + 1) + " samples, got " +
                     std::to_string(samples.size()));
  }

  std::vector<std::vector<double>> rows;
  rows.reserve(samples.size());
  for (const auto& s : samples) {
    if (s.bounds.size() + 1 != terms) throw DimensionMismatch("fit: samples differ in depth");
    rows.push_back(features(s.bounds));
  }

  std::vector<std::size_t> idx;
  for (std::size_t j = 0; j < terms; ++j) {
    if (active[j]) idx.push_back(j);
  }
  const auto n = static_cast<Eigen::Index>(rows.size());
  const auto p = static_cast<Eigen::Index>(idx.size());

  // Columns scaled to unit max keep the intercept and the product terms
  // comparable.
  std::vector<double> scale(terms, 0.0);
  for (const auto& r : rows) {
    for (std::size_t j = 0; j < terms; ++j) scale[j] = std::max(scale[j], std::abs(r[j]));
  }
  Eigen::MatrixXd x(n, p);
  Eigen::VectorXd y(n);
  for (Eigen::Index r = 0; r < n; ++r) {
    const auto& row = rows[static_cast<std::size_t>(r)];
    for (Eigen::Index a = 0; a < p; ++a) {
      const std::size_t j = idx[static_cast<std::size_t>(a)];
      x(r, a) = scale[j] > 0.0 ? row[j] / scale[j] : 0.0;
    }
    y(r) = samples[static_cast<std::size_t>(r)].observed_misses;
  }

  // Unpivoted QR keeps term order, so a vanishing diagonal entry of R marks
  // a term that is a combination of the ones before it.
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(x);
  const Eigen::MatrixXd& packed = qr.matrixQR();
  std::vector<std::size_t> collinear;
  for (Eigen::Index a = 0; a < p; ++a) {
    const double norm = x.col(a).norm();
    if (norm <= 0.0 || std::abs(packed(a, a)) <= kSingularityTolerance * norm) {
      collinear.push_back(idx[static_cast<std::size_t>(a)]);
    }
  }
  if (!collinear.empty()) {
    std::ostringstream msg;
    msg << "degenerate fit for '" << samples.front().loop_id << "': collinear terms {";
    for (std::size_t i = 0; i < collinear.size(); ++i) msg << (i ? ", " : "") << collinear[i];
    msg << "}; drop them or add training diversity";
    throw DegenerateFit(msg.str(), collinear);
  }
  const Eigen::VectorXd z = qr.solve(y);

  std::vector<double> coeffs(terms, 0.0);
  for (std::size_t a = 0; a < idx.size(); ++a) coeffs[idx[a]] = z(static_cast<Eigen::Index>(a)) / scale[idx[a]];
  return coeffs;
}

double variability_ratio(std::span<const double> runs) {
  if (runs.size() < 2) throw ModelError("k: need at least two runs per loop");
  double mean = std::accumulate(runs.begin(), runs.end(), 0.0) / static_cast<double>(runs.size());
  if (!(mean > 0.0)) throw UndefinedRatio("k: zero mean misses");
  double var = 0.0;
  for (double r : runs) var += (r - mean) * (r - mean);
  var /= static_cast<double>(runs.size());
  return std::sqrt(var) / mean;
}

double compute_k(const std::map<std::string, std::vector<double>>& per_loop_runs) {
  double k = 0.0;
  for (const auto& [loop, runs] : per_loop_runs) {
    try {
      k = std::max(k, variability_ratio(runs));
    } catch (const UndefinedRatio&) {
      throw UndefinedRatio("k: zero mean misses for loop '" + loop + "'");
    }
  }
  return k;
}

double predict(const MissModel& model, std::span<const double> bounds) {
  if (bounds.size() != model.depth()) {
    throw DimensionMismatch("predict '" + model.loop_id + "': expected " +
                            std::to_string(model.depth()) + " bounds, got " +
                            std::to_string(bounds.size()));
  }
  auto f = features(bounds);
  double cm = std::inner_product(f.begin(), f.end(), model.coeffs.begin(), 0.0);
  return std::max(0.0, cm);
}

double predict(const MissModel& model, std::span<const std::optional<double>> bounds) {
  if (bounds.size() != model.depth()) {
    throw DimensionMismatch("predict '" + model.loop_id + "': bound count mismatch");
  }
  std::vector<double> full(bounds.size());
  for (std::size_t i = 0; i < bounds.size(); ++i) {
    if (bounds[i]) {
      full[i] = *bounds[i];
    } else {
      if (model.expected_bounds.size() != model.depth()) {
        throw DimensionMismatch("predict '" + model.loop_id + "': no expected bound for level " +
                                std::to_string(i + 1));
      }
      full[i] = model.expected_bounds[i];
    }
  }
  return predict(model, full);
}

double predict_upper(const MissModel& model, std::span<const double> bounds) {
  return (1.0 + model.k) * predict(model, bounds);
}

double predict_upper(const MissModel& model, std::span<const std::optional<double>> bounds) {
  return (1.0 + model.k) * predict(model, bounds);
}

double band_error(double observed, double cm, double k) {
  if (observed <= 0.0) return 0.0;
  double lo = cm * (1.0 - k), hi = cm * (1.0 + k);
  if (observed > hi) return (observed - hi) / observed;
  if (observed < lo) return (lo - observed) / observed;
  return 0.0;
}

const MissModel* ModelSet::find(const std::string& loop_id) const {
  auto it = models.find(loop_id);
  return it == models.end() ? nullptr : &it->second;
}

namespace {
std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}
}  // namespace

std::string serialize(const ModelSet& set) {
  std::ostringstream out;
  out << "biscuit-models 1\n";
  out << "k " << fmt_double(set.k) << "\n";
  for (const auto& [id, m] : set.models) {
    out << "model " << id << " " << to_string(m.kind) << " k " << fmt_double(m.k) << " coeffs "
        << m.coeffs.size();
    for (double c : m.coeffs) out << " " << fmt_double(c);
    out << " expected " << m.expected_bounds.size();
    for (double e : m.expected_bounds) out << " " << fmt_double(e);
    out << "\n";
  }
  return out.str();
}

ModelSet parse_models(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line;
  int line_no = 0;
  auto fail = [&](const std::string& why) {
    throw ModelError("model file line " + std::to_string(line_no) + ": " + why);
  };
  ModelSet set;
  bool header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (!header) {
      int version = 0;
      if (tag != "biscuit-models" || !(ls >> version)) fail("missing 'biscuit-models' header");
      if (version != 1) fail("unsupported version " + std::to_string(version));
      header = true;
    } else if (tag == "k") {
      if (!(ls >> set.k)) fail("bad k");
    } else if (tag == "model") {
      MissModel m;
      std::string kind, word;
      std::size_t n = 0;
      if (!(ls >> m.loop_id >> kind >> word >> m.k) || word != "k") fail("bad model header");
      m.kind = beacon_kind_from_string(kind);
      if (!(ls >> word >> n) || word != "coeffs") fail("missing coeffs");
      m.coeffs.resize(n);
      for (auto& c : m.coeffs) {
        if (!(ls >> c)) fail("truncated coeffs");
      }
      if (!(ls >> word >> n) || word != "expected") fail("missing expected bounds");
      m.expected_bounds.resize(n);
      for (auto& e : m.expected_bounds) {
        if (!(ls >> e)) fail("truncated expected bounds");
      }
      set.models[m.loop_id] = std::move(m);
    } else {
      fail("unknown record '" + tag + "'");
    }
  }
  if (!header) throw ModelError("model file: empty");
  return set;
}

void write_models(const std::string& path, const ModelSet& set) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ModelError("cannot write " + path);
  out << serialize(set);
}

ModelSet read_models(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ModelError("cannot read " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_models(ss.str());
}

}  // namespace biscuit
