#include "rcm/env.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>

#include "json.hpp"
#include "rcm/rng.hpp"
#include "rcm/util.hpp"

namespace rcm::env {

using njson = nlohmann::ordered_json;

struct DynamicConductanceField::Core {
  EnvironmentModel model;
  std::int64_t L = 2;
  double T = kStaticPeriod;
  std::uint64_t seed = 0;
  std::vector<std::vector<double>> bnds;  // per edge; bnds[e][0] == 0
  std::vector<std::vector<double>> vals;  // per edge; same length as bnds[e]
  std::vector<double> edge_mass;          // per-period integral (static: the value)
  std::uint64_t digest = 0;

  void finish() {
    edge_mass.assign(bnds.size(), 0.0);
    for (std::size_t e = 0; e < bnds.size(); ++e) {
      if (T == kStaticPeriod) {
        edge_mass[e] = vals[e][0];
        continue;
      }
      double m = 0;
      for (std::size_t k = 0; k < bnds[e].size(); ++k) {
        const double hi = (k + 1 < bnds[e].size()) ? bnds[e][k + 1] : T;
        m += vals[e][k] * (hi - bnds[e][k]);
      }
      edge_mass[e] = m;
    }
    std::uint64_t h = mix2(static_cast<std::uint64_t>(L), seed);
    auto fold = [&h](double v) {
      std::uint64_t bits;
      static_assert(sizeof bits == sizeof v);
      std::memcpy(&bits, &v, sizeof bits);
      h = mix2(h, bits);
    };
    fold(T);
    for (std::size_t e = 0; e < bnds.size(); ++e) {
      for (double b : bnds[e]) fold(b);
      for (double v : vals[e]) fold(v);
    }
    digest = h;
  }
};

namespace {

std::invalid_argument param_error(const std::string& what) { return std::invalid_argument(what); }

double sample_marginal(const Marginal& m, CounterRng& rng) {
  switch (m.kind) {
    case MarginalKind::point:
      return m.value;
    case MarginalKind::uniform:
      return m.lo + (m.hi - m.lo) * rng.next_unit();
    case MarginalKind::two_point:
      return rng.next_unit() < m.p_kappa ? m.kappa : 1.0;
    case MarginalKind::pareto:
      return std::pow(rng.next_open(), -1.0 / m.alpha);
    case MarginalKind::inverse_pareto:
      return std::pow(rng.next_open(), 1.0 / m.alpha);
  }
  throw param_error("marginal: unknown kind");
}

const char* kind_name(ModelKind k) {
  switch (k) {
    case ModelKind::constant: return "constant";
    case ModelKind::static_iid: return "static-iid";
    case ModelKind::static_periodic: return "static-periodic";
    case ModelKind::markov_switching: return "markov-switching";
    case ModelKind::time_periodic: return "time-periodic";
  }
  return "?";
}

const char* marginal_name(MarginalKind k) {
  switch (k) {
    case MarginalKind::point: return "point";
    case MarginalKind::uniform: return "uniform";
    case MarginalKind::two_point: return "two-point";
    case MarginalKind::pareto: return "pareto";
    case MarginalKind::inverse_pareto: return "inverse-pareto";
  }
  return "?";
}

ModelKind kind_from_name(const std::string& s) {
  if (s == "constant") return ModelKind::constant;
  if (s == "static-iid") return ModelKind::static_iid;
  if (s == "static-periodic") return ModelKind::static_periodic;
  if (s == "markov-switching") return ModelKind::markov_switching;
  if (s == "time-periodic") return ModelKind::time_periodic;
  throw param_error("field: unknown model kind '" + s + "'");
}

MarginalKind marginal_from_name(const std::string& s) {
  if (s == "point") return MarginalKind::point;
  if (s == "uniform") return MarginalKind::uniform;
  if (s == "two-point") return MarginalKind::two_point;
  if (s == "pareto") return MarginalKind::pareto;
  if (s == "inverse-pareto") return MarginalKind::inverse_pareto;
  throw param_error("field: unknown marginal kind '" + s + "'");
}

void check_pattern(const std::vector<double>& p, std::int64_t L, const char* where) {
  if (p.empty()) throw param_error(std::string(where) + ": empty value pattern");
  for (double v : p)
    if (!(v > 0) || !std::isfinite(v))
      throw param_error(std::string(where) + ": weights must be positive finite");
  if (L % static_cast<std::int64_t>(p.size()) != 0)
    throw param_error(std::string(where) + ": pattern length must divide space_period");
}

}  // namespace

void validate(const Marginal& m) {
  switch (m.kind) {
    case MarginalKind::point:
      if (!(m.value > 0) || !std::isfinite(m.value)) throw param_error("marginal: point value must be > 0");
      return;
    case MarginalKind::uniform:
      if (!(m.lo > 0) || !(m.hi >= m.lo) || !std::isfinite(m.hi))
        throw param_error("marginal: uniform requires 0 < lo <= hi");
      return;
    case MarginalKind::two_point:
      if (!(m.kappa > 0) || !std::isfinite(m.kappa)) throw param_error("marginal: kappa must be > 0");
      if (!(m.p_kappa >= 0 && m.p_kappa <= 1)) throw param_error("marginal: p_kappa must be in [0,1]");
      return;
    case MarginalKind::pareto:
    case MarginalKind::inverse_pareto:
      if (!(m.alpha > 0) || !std::isfinite(m.alpha)) throw param_error("marginal: pareto exponent must be > 0");
      return;
  }
  throw param_error("marginal: unknown kind");
}

namespace {

// model-metadata checks shared by the builder and the loader
void validate_model(const EnvironmentModel& model, std::int64_t L) {
  switch (model.kind) {
    case ModelKind::constant:
      if (!(model.value > 0) || !std::isfinite(model.value))
        throw param_error("field: constant weight must be positive finite");
      return;
    case ModelKind::static_iid:
      validate(model.marginal);
      return;
    case ModelKind::static_periodic:
      check_pattern(model.pattern, L, "field: static-periodic");
      return;
    case ModelKind::markov_switching:
      validate(model.marginal);
      if (!(model.switch_rate > 0) || !std::isfinite(model.switch_rate))
        throw param_error("field: markov-switching needs switch_rate > 0");
      return;
    case ModelKind::time_periodic:
      if (model.slabs.empty()) throw param_error("field: time-periodic needs at least one slab");
      for (const auto& s : model.slabs) {
        if (!(s.duration > 0) || !std::isfinite(s.duration))
          throw param_error("field: slab durations must be positive finite");
        check_pattern(s.pattern, L, "field: time-periodic");
      }
      return;
  }
  throw param_error("field: unknown model kind");
}

}  // namespace

DynamicConductanceField build_environment(const EnvironmentModel& model, std::int64_t L,
                                          double time_period, std::uint64_t seed) {
  if (L < 2) throw param_error("field: space_period must be >= 2");
  if (L > (1 << 20)) throw param_error("field: space_period too large");
  validate_model(model, L);
  auto core = std::make_shared<DynamicConductanceField::Core>();
  core->model = model;
  core->L = L;
  core->seed = seed;
  core->bnds.assign(static_cast<std::size_t>(L), {0.0});
  core->vals.resize(static_cast<std::size_t>(L));

  switch (model.kind) {
    case ModelKind::constant: {
      for (auto& v : core->vals) v = {model.value};
      break;
    }
    case ModelKind::static_iid: {
      for (std::int64_t e = 0; e < L; ++e) {
        CounterRng rng(seed, static_cast<std::uint64_t>(e));
        core->vals[e] = {sample_marginal(model.marginal, rng)};
      }
      break;
    }
    case ModelKind::static_periodic: {
      for (std::int64_t e = 0; e < L; ++e)
        core->vals[e] = {model.pattern[e % static_cast<std::int64_t>(model.pattern.size())]};
      break;
    }
    case ModelKind::markov_switching: {
      if (!(time_period > 0) || !std::isfinite(time_period))
        throw param_error("field: markov-switching needs a finite positive time_period");
      if (time_period * model.switch_rate > 4e6)
        throw param_error("field: markov-switching change-point table too large");
      core->T = time_period;
      for (std::int64_t e = 0; e < L; ++e) {
        CounterRng rng(seed, static_cast<std::uint64_t>(e));
        core->vals[e] = {sample_marginal(model.marginal, rng)};
        double t = rng.next_exp() / model.switch_rate;
        while (t < time_period) {
          core->bnds[e].push_back(t);
          core->vals[e].push_back(sample_marginal(model.marginal, rng));
          t += rng.next_exp() / model.switch_rate;
        }
      }
      break;
    }
    case ModelKind::time_periodic: {
      double T = 0;
      for (const auto& s : model.slabs) T += s.duration;
      core->T = T;
      for (std::int64_t e = 0; e < L; ++e) {
        core->bnds[e].clear();
        double t = 0;
        for (const auto& s : model.slabs) {
          core->bnds[e].push_back(t);
          core->vals[e].push_back(s.pattern[e % static_cast<std::int64_t>(s.pattern.size())]);
          t += s.duration;
        }
      }
      break;
    }
  }
  core->finish();
  DynamicConductanceField f;
  f.core_ = std::move(core);
  return f;
}

double DynamicConductanceField::eval(double t, Edge e) const noexcept {
  const Core& c = *core_;
  const std::size_t idx = static_cast<std::size_t>(imod(e.left + x_off_, c.L));
  const auto& b = c.bnds[idx];
  if (b.size() == 1) return c.vals[idx][0];
  const double r = fmod_period(t + t_off_, c.T);
  const auto it = std::upper_bound(b.begin(), b.end(), r);
  return c.vals[idx][static_cast<std::size_t>(it - b.begin()) - 1];
}

double DynamicConductanceField::mu(double t, std::int64_t x) const noexcept {
  return eval(t, Edge{x - 1}) + eval(t, Edge{x});
}

double DynamicConductanceField::nu(double t, std::int64_t x) const noexcept {
  return 1.0 / eval(t, Edge{x - 1}) + 1.0 / eval(t, Edge{x});
}

DynamicConductanceField DynamicConductanceField::shift(double s, std::int64_t z) const {
  if (!std::isfinite(s)) throw std::invalid_argument("shift: time offset must be finite");
  DynamicConductanceField f(*this);
  f.t_off_ = t_off_ + s;
  f.x_off_ = x_off_ + z;
  return f;
}

std::int64_t DynamicConductanceField::space_period() const noexcept { return core_->L; }
double DynamicConductanceField::time_period() const noexcept { return core_->T; }
bool DynamicConductanceField::is_static() const noexcept { return core_->T == kStaticPeriod; }
std::uint64_t DynamicConductanceField::seed() const noexcept { return core_->seed; }

std::vector<double> DynamicConductanceField::time_partition() const {
  if (is_static()) return {0.0};
  std::vector<double> out;
  for (const auto& b : core_->bnds)
    for (double t : b) out.push_back(fmod_period(t - t_off_, core_->T));
  out.push_back(0.0);
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

double DynamicConductanceField::edge_period_mass(std::int64_t x) const noexcept {
  return core_->edge_mass[static_cast<std::size_t>(imod(x + x_off_, core_->L))];
}

std::uint64_t DynamicConductanceField::digest() const noexcept {
  std::uint64_t bits;
  std::memcpy(&bits, &t_off_, sizeof bits);
  return mix2(mix2(core_->digest, bits), static_cast<std::uint64_t>(x_off_));
}

DynamicConductanceField::EdgeCursor::EdgeCursor(const DynamicConductanceField& f,
                                                std::int64_t left_site) noexcept {
  const auto idx = static_cast<std::size_t>(imod(left_site + f.x_off_, f.core_->L));
  bnds_ = &f.core_->bnds[idx];
  vals_ = &f.core_->vals[idx];
}

void DynamicConductanceField::EdgeCursor::seek(double r) noexcept {
  k_ = static_cast<std::size_t>(std::upper_bound(bnds_->begin(), bnds_->end(), r) - bnds_->begin()) - 1;
}

double DynamicConductanceField::EdgeCursor::next_change() const noexcept {
  return k_ + 1 < bnds_->size() ? (*bnds_)[k_ + 1] : std::numeric_limits<double>::infinity();
}

void DynamicConductanceField::EdgeCursor::advance() noexcept {
  if (k_ + 1 < bnds_->size()) ++k_;
}

std::string DynamicConductanceField::serialize() const {
  const Core& c = *core_;
  njson j;
  j["format"] = "rcm-field-v1";
  njson m;
  m["kind"] = kind_name(c.model.kind);
  switch (c.model.kind) {
    case ModelKind::constant:
      m["value"] = c.model.value;
      break;
    case ModelKind::static_iid:
    case ModelKind::markov_switching: {
      njson mg;
      mg["kind"] = marginal_name(c.model.marginal.kind);
      switch (c.model.marginal.kind) {
        case MarginalKind::point: mg["value"] = c.model.marginal.value; break;
        case MarginalKind::uniform:
          mg["lo"] = c.model.marginal.lo;
          mg["hi"] = c.model.marginal.hi;
          break;
        case MarginalKind::two_point:
          mg["kappa"] = c.model.marginal.kappa;
          mg["p_kappa"] = c.model.marginal.p_kappa;
          break;
        case MarginalKind::pareto:
        case MarginalKind::inverse_pareto: mg["alpha"] = c.model.marginal.alpha; break;
      }
      m["marginal"] = std::move(mg);
      if (c.model.kind == ModelKind::markov_switching) m["switch_rate"] = c.model.switch_rate;
      break;
    }
    case ModelKind::static_periodic:
      m["pattern"] = c.model.pattern;
      break;
    case ModelKind::time_periodic: {
      njson arr = njson::array();
      for (const auto& s : c.model.slabs) {
        njson js;
        js["duration"] = s.duration;
        js["pattern"] = s.pattern;
        arr.push_back(std::move(js));
      }
      m["slabs"] = std::move(arr);
      break;
    }
  }
  j["model"] = std::move(m);
  j["space_period"] = c.L;
  if (is_static())
    j["time_period"] = "static";
  else
    j["time_period"] = c.T;
  j["seed"] = c.seed;
  j["time_offset"] = t_off_;
  j["space_offset"] = x_off_;
  njson edges = njson::array();
  for (std::size_t e = 0; e < c.bnds.size(); ++e) {
    njson je;
    je["t"] = c.bnds[e];
    je["w"] = c.vals[e];
    edges.push_back(std::move(je));
  }
  j["edges"] = std::move(edges);
  return j.dump(1);
}

DynamicConductanceField DynamicConductanceField::deserialize(const std::string& text) {
  njson j;
  try {
    j = njson::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw param_error(std::string("field: parse error: ") + e.what());
  }
  try {
    if (j.at("format").get<std::string>() != "rcm-field-v1")
      throw param_error("field: unsupported format tag");
    auto core = std::make_shared<DynamicConductanceField::Core>();
    const njson& m = j.at("model");
    core->model.kind = kind_from_name(m.at("kind").get<std::string>());
    if (m.contains("value")) core->model.value = m["value"].get<double>();
    if (m.contains("switch_rate")) core->model.switch_rate = m["switch_rate"].get<double>();
    if (m.contains("pattern")) core->model.pattern = m["pattern"].get<std::vector<double>>();
    if (m.contains("marginal")) {
      const njson& mg = m["marginal"];
      core->model.marginal.kind = marginal_from_name(mg.at("kind").get<std::string>());
      if (mg.contains("value")) core->model.marginal.value = mg["value"].get<double>();
      if (mg.contains("lo")) core->model.marginal.lo = mg["lo"].get<double>();
      if (mg.contains("hi")) core->model.marginal.hi = mg["hi"].get<double>();
      if (mg.contains("kappa")) core->model.marginal.kappa = mg["kappa"].get<double>();
      if (mg.contains("p_kappa")) core->model.marginal.p_kappa = mg["p_kappa"].get<double>();
      if (mg.contains("alpha")) core->model.marginal.alpha = mg["alpha"].get<double>();
    }
    if (m.contains("slabs")) {
      for (const auto& js : m["slabs"]) {
        EnvironmentModel::Slab s;
        s.duration = js.at("duration").get<double>();
        s.pattern = js.at("pattern").get<std::vector<double>>();
        core->model.slabs.push_back(std::move(s));
      }
    }
    core->L = j.at("space_period").get<std::int64_t>();
    if (core->L < 2) throw param_error("field: space_period must be >= 2");
    validate_model(core->model, core->L);
    if (j.at("time_period").is_string()) {
      if (j["time_period"].get<std::string>() != "static")
        throw param_error("field: bad time_period");
      core->T = kStaticPeriod;
    } else {
      core->T = j["time_period"].get<double>();
      if (!(core->T > 0) || !std::isfinite(core->T)) throw param_error("field: time_period must be > 0");
    }
    core->seed = j.at("seed").get<std::uint64_t>();
    const njson& edges = j.at("edges");
    if (static_cast<std::int64_t>(edges.size()) != core->L)
      throw param_error("field: edge table size does not match space_period");
    core->bnds.clear();
    core->vals.clear();
    for (const auto& je : edges) {
      auto b = je.at("t").get<std::vector<double>>();
      auto v = je.at("w").get<std::vector<double>>();
      if (b.empty() || b.size() != v.size() || b[0] != 0.0)
        throw param_error("field: malformed edge change table");
      if (core->T == kStaticPeriod && b.size() != 1)
        throw param_error("field: static field cannot carry change times");
      for (std::size_t k = 0; k < b.size(); ++k) {
        if (k + 1 < b.size() && !(b[k] < b[k + 1]))
          throw param_error("field: change times must be strictly increasing");
        if (!(b[k] >= 0) || b[k] >= core->T) throw param_error("field: change time out of period");
        if (!(v[k] > 0) || !std::isfinite(v[k]))
          throw param_error("field: weights must be positive finite");
      }
      core->bnds.push_back(std::move(b));
      core->vals.push_back(std::move(v));
    }
    core->finish();
    DynamicConductanceField f;
    f.core_ = std::move(core);
    f.t_off_ = j.value("time_offset", 0.0);
    f.x_off_ = j.value("space_offset", std::int64_t{0});
    return f;
  } catch (const nlohmann::json::exception& e) {
    throw param_error(std::string("field: malformed document: ") + e.what());
  }
}

}  // namespace rcm::env
