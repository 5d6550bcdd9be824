#pragma once

#include <fstream>
#include <sstream>

#include <json.hpp>

#include "stackem/stacking.hpp"

namespace stackem {

using json = nlohmann::json;

inline json to_json(const Vector& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

inline json to_json(const Matrix& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    rows.push_back(to_json(Vector(m.row(i).transpose())));
  return rows;
}

inline Vector vector_from_json(const json& a) {
  Vector v(a.size());
  for (size_t i = 0; i < a.size(); ++i) v[i] = a[i].get<double>();
  return v;
}

inline Matrix matrix_from_json(const json& rows) {
  if (rows.empty()) return Matrix(0, 0);
  Matrix m(rows.size(), rows[0].size());
  for (size_t i = 0; i < rows.size(); ++i)
    m.row(i) = vector_from_json(rows[i]).transpose();
  return m;
}

// Schema: {"format": "stackem-emulator", "version": 1, "xi0": .., "T": ..,
//          "alpha_hat": number|null, "levels": [{level, xi, cost_per_run,
//          nu, lengthscales, design, z, coeffs, jitter, norm_estimate,
//          sigma_norm}]}
inline json emulator_to_json(const MultiLevelEmulator& em) {
  json j;
  j["format"] = "stackem-emulator";
  j["version"] = 1;
  j["xi0"] = em.xi0;
  j["T"] = em.T;
  j["alpha_hat"] = em.alpha_hat ? json(*em.alpha_hat) : json(nullptr);
  json levels = json::array();
  for (const LevelState& lv : em.levels) {
    json e;
    e["level"] = lv.level;
    e["xi"] = lv.xi;
    e["cost_per_run"] = lv.cost_per_run;
    e["nu"] = lv.interp.spec.nu;
    e["lengthscales"] = to_json(lv.interp.spec.lengthscales);
    e["design"] = to_json(lv.interp.design);
    e["z"] = to_json(lv.interp.z);
    e["coeffs"] = to_json(lv.interp.coeffs);
    e["jitter"] = lv.interp.jitter_used();
    e["norm_estimate"] = lv.norm_estimate;
    e["sigma_norm"] = lv.sigma_norm;
    levels.push_back(std::move(e));
  }
  j["levels"] = std::move(levels);
  return j;
}

inline MultiLevelEmulator emulator_from_json(const json& j) {
  if (!j.contains("format") || j["format"] != "stackem-emulator")
    throw std::invalid_argument("emulator_from_json: unrecognized schema");
  MultiLevelEmulator em;
  em.xi0 = j.at("xi0").get<double>();
  em.T = j.at("T").get<int>();
  if (!j.at("alpha_hat").is_null())
    em.alpha_hat = j["alpha_hat"].get<double>();
  for (const json& e : j.at("levels")) {
    LevelState lv;
    lv.level = e.at("level").get<int>();
    lv.xi = e.at("xi").get<double>();
    lv.cost_per_run = e.at("cost_per_run").get<double>();
    KernelSpec spec(e.at("nu").get<double>(),
                    vector_from_json(e.at("lengthscales")));
    // Refactorize rather than trusting stored coefficients blindly; the
    // stored coeffs are kept for audit.
    lv.interp = fit(spec, matrix_from_json(e.at("design")),
                    vector_from_json(e.at("z")));
    lv.norm_estimate = e.at("norm_estimate").get<double>();
    lv.sigma_norm = e.at("sigma_norm").get<double>();
    em.levels.push_back(std::move(lv));
  }
  return em;
}

inline json stage_to_json(const StageReport& s) {
  json j;
  j["L"] = s.L;
  j["xi"] = s.xi;
  j["cost_per_run"] = s.cost;
  j["n"] = s.n;
  j["alpha_hat"] = s.alpha_hat ? json(*s.alpha_hat) : json(nullptr);
  j["simulation_bound"] =
      s.simulation_bound ? json(*s.simulation_bound) : json(nullptr);
  j["emulation_bound"] = s.emulation_bound;
  j["cumulative_cost"] = s.cumulative_cost;
  j["converged"] = s.converged;
  return j;
}

// Long-format stage summary CSV: one row per (stage, level).
inline std::string stages_to_csv(const std::vector<StageReport>& stages) {
  std::ostringstream os;
  os << "L,l,xi_l,C_l,n_l,alpha_hat,sim_bound,emu_bound,cum_cost,converged\n";
  char buf[64];
  auto num = [&](double v) {
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    return std::string(buf);
  };
  for (const StageReport& s : stages) {
    for (int l = 1; l <= s.L; ++l) {
      os << s.L << ',' << l << ',' << num(s.xi[l - 1]) << ','
         << num(s.cost[l - 1]) << ',' << s.n[l - 1] << ',';
      if (s.alpha_hat) os << num(*s.alpha_hat);
      os << ',';
      if (s.simulation_bound) os << num(*s.simulation_bound);
      os << ',' << num(s.emulation_bound) << ',' << num(s.cumulative_cost)
         << ',' << (s.converged ? 1 : 0) << '\n';
    }
  }
  return os.str();
}

inline void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << content;
}

}  // namespace stackem
