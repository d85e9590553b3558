#pragma once

#include <cstdint>
#include <fstream>
#include <optional>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "pfda/error.hpp"
#include "pfda/linalg.hpp"
#include "pfda/models/linear_gaussian.hpp"
#include "pfda/models/lorenz96.hpp"
#include "pfda/models/stochastic_volatility.hpp"

namespace pfda::experiment {

using json = nlohmann::json;

// Invalid or missing configuration. key() is the dotted path of the
// offending entry, e.g. "algorithm.particles".
class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string key, const std::string& what)
      : std::runtime_error("config error at '" + key + "': " + what), key_(std::move(key)) {}
  const std::string& key() const noexcept { return key_; }

 private:
  std::string key_;
};

inline std::string join_key(const std::string& prefix, const std::string& key) {
  return prefix.empty() ? key : prefix + "." + key;
}

inline json load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config", "cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config", std::string("invalid JSON: ") + e.what());
  }
}

// Typed access to one JSON object, reporting errors by dotted key.
class Section {
 public:
  Section(const json& obj, std::string path) : obj_(&obj), path_(std::move(path)) {
    if (!obj.is_object()) throw ConfigError(path_, "expected an object");
  }

  const std::string& path() const { return path_; }
  const json& raw() const { return *obj_; }
  bool has(const std::string& key) const { return obj_->contains(key) && !(*obj_)[key].is_null(); }

  Section section(const std::string& key) const {
    if (!has(key)) throw ConfigError(join_key(path_, key), "missing block");
    return Section((*obj_)[key], join_key(path_, key));
  }

  double number(const std::string& key) const {
    const json& v = at(key);
    if (!v.is_number()) throw ConfigError(join_key(path_, key), "expected a number");
    return v.get<double>();
  }
  double number(const std::string& key, double fallback) const {
    return has(key) ? number(key) : fallback;
  }

  std::uint64_t count(const std::string& key) const {
    const json& v = at(key);
    if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0)) {
      throw ConfigError(join_key(path_, key), "expected a non-negative integer");
    }
    return v.get<std::uint64_t>();
  }
  std::uint64_t count(const std::string& key, std::uint64_t fallback) const {
    return has(key) ? count(key) : fallback;
  }

  bool flag(const std::string& key, bool fallback) const {
    if (!has(key)) return fallback;
    const json& v = at(key);
    if (!v.is_boolean()) throw ConfigError(join_key(path_, key), "expected true or false");
    return v.get<bool>();
  }

  std::string text(const std::string& key) const {
    const json& v = at(key);
    if (!v.is_string()) throw ConfigError(join_key(path_, key), "expected a string");
    return v.get<std::string>();
  }
  std::string text(const std::string& key, const std::string& fallback) const {
    return has(key) ? text(key) : fallback;
  }

  std::vector<double> numbers(const std::string& key) const {
    const json& v = at(key);
    if (v.is_number()) return {v.get<double>()};
    if (!v.is_array()) throw ConfigError(join_key(path_, key), "expected a number or array of numbers");
    std::vector<double> out;
    for (const auto& e : v) {
      if (!e.is_number()) throw ConfigError(join_key(path_, key), "expected an array of numbers");
      out.push_back(e.get<double>());
    }
    return out;
  }

  std::vector<std::string> texts(const std::string& key) const {
    const json& v = at(key);
    if (v.is_string()) return {v.get<std::string>()};
    if (!v.is_array()) throw ConfigError(join_key(path_, key), "expected a string or array of strings");
    std::vector<std::string> out;
    for (const auto& e : v) {
      if (!e.is_string()) throw ConfigError(join_key(path_, key), "expected an array of strings");
      out.push_back(e.get<std::string>());
    }
    return out;
  }

  // A number is a 1x1 matrix, a flat array a column vector, an array of
  // arrays a row-major matrix.
  Matrix matrix(const std::string& key) const {
    const json& v = at(key);
    const std::string k = join_key(path_, key);
    if (v.is_number()) return Matrix::Constant(1, 1, v.get<double>());
    if (!v.is_array() || v.empty()) throw ConfigError(k, "expected a number or a non-empty array");
    if (v.front().is_number()) {
      const auto xs = numbers(key);
      return Eigen::Map<const Vector>(xs.data(), static_cast<Eigen::Index>(xs.size()));
    }
    const auto rows = static_cast<Eigen::Index>(v.size());
    if (!v.front().is_array() || v.front().empty()) throw ConfigError(k, "expected rows of numbers");
    const auto cols = static_cast<Eigen::Index>(v.front().size());
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
      const json& row = v[static_cast<std::size_t>(i)];
      if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols) {
        throw ConfigError(k, "rows must all have the same length");
      }
      for (Eigen::Index j = 0; j < cols; ++j) {
        const json& e = row[static_cast<std::size_t>(j)];
        if (!e.is_number()) throw ConfigError(k, "expected numbers");
        m(i, j) = e.get<double>();
      }
    }
    return m;
  }

  void expect_one_of(const std::string& key, const std::string& value,
                     std::initializer_list<const char*> allowed) const {
    for (const char* a : allowed) {
      if (value == a) return;
    }
    std::string list;
    for (const char* a : allowed) list += (list.empty() ? "" : ", ") + std::string(a);
    throw ConfigError(join_key(path_, key), "'" + value + "' is not one of: " + list);
  }

 private:
  const json& at(const std::string& key) const {
    if (!has(key)) throw ConfigError(join_key(path_, key), "missing");
    return (*obj_)[key];
  }

  const json* obj_;
  std::string path_;
};

using AnyModel = std::variant<LinearGaussianModel, StochasticVolatilityModel, Lorenz96Model>;

inline LinearGaussianParameters linear_gaussian_parameters(const Section& s) {
  LinearGaussianParameters p;
  p.transition = s.matrix("transition");
  const Eigen::Index d = p.transition.rows();
  p.state_noise = s.has("state_noise") ? s.matrix("state_noise") : Matrix::Identity(d, d);
  p.observation = s.has("observation") ? s.matrix("observation") : Matrix::Identity(d, d);
  // A flat observation array is a single row when the state is multivariate.
  if (s.has("observation") && p.observation.cols() == 1 && d > 1 && s.raw()["observation"].is_array() &&
      s.raw()["observation"].front().is_number()) {
    p.observation.transposeInPlace();
  }
  const Eigen::Index q = p.observation.rows();
  p.obs_noise = s.has("obs_noise") ? s.matrix("obs_noise") : Matrix::Identity(q, q);
  p.initial_mean = s.has("initial_mean") ? Vector(s.matrix("initial_mean")) : Vector::Zero(d);
  p.initial_cov = s.has("initial_cov") ? s.matrix("initial_cov") : Matrix::Identity(d, d);
  if (p.state_noise.size() == 1 && d > 1) p.state_noise = p.state_noise(0, 0) * Matrix::Identity(d, d);
  if (p.obs_noise.size() == 1 && q > 1) p.obs_noise = p.obs_noise(0, 0) * Matrix::Identity(q, q);
  if (p.initial_cov.size() == 1 && d > 1) p.initial_cov = p.initial_cov(0, 0) * Matrix::Identity(d, d);
  return p;
}

inline SvParameters sv_parameters(const Section& s) {
  SvParameters p;
  p.phi = s.number("phi", p.phi);
  p.sigma = s.number("sigma", p.sigma);
  p.beta = s.number("beta", p.beta);
  if (s.has("initial_variance")) p.initial_variance = s.number("initial_variance");
  return p;
}

inline Lorenz96Parameters lorenz96_parameters(const Section& s) {
  Lorenz96Parameters p;
  p.dimension = s.count("dimension", p.dimension);
  p.forcing = s.number("forcing", p.forcing);
  p.dt = s.number("dt", p.dt);
  if (s.has("step")) p.step = s.number("step");
  p.obs_sigma = s.number("obs_sigma", p.obs_sigma);
  p.obs_stride = s.count("obs_stride", p.obs_stride);
  p.initial_sd = s.number("initial_sd", p.initial_sd);
  return p;
}

inline const char* const kModelNames[] = {"linear_gaussian", "stochastic_volatility", "lorenz96"};

// Builds the model described by a config "model" block. Parameter values the
// model rejects surface as DomainError.
inline AnyModel build_model(const Section& s) {
  const std::string name = s.text("name");
  s.expect_one_of("name", name, {"linear_gaussian", "stochastic_volatility", "lorenz96"});
  if (name == "linear_gaussian") return LinearGaussianModel(linear_gaussian_parameters(s));
  if (name == "stochastic_volatility") return StochasticVolatilityModel(sv_parameters(s));
  return Lorenz96Model(lorenz96_parameters(s));
}

// Scalar parameters that may be estimated by MCMC, per model.
inline std::vector<std::string> estimable_parameters(const std::string& model_name) {
  if (model_name == "linear_gaussian") return {"transition", "state_noise", "observation", "obs_noise"};
  if (model_name == "stochastic_volatility") return {"phi", "sigma", "beta"};
  return {"forcing", "obs_sigma"};
}

// The model block with the named scalar entries replaced by theta.
inline json with_parameters(const json& model_block, const std::vector<std::string>& names,
                            const Vector& theta) {
  json patched = model_block;
  for (std::size_t k = 0; k < names.size(); ++k) patched[names[k]] = theta[static_cast<Eigen::Index>(k)];
  return patched;
}

}  // namespace pfda::experiment
