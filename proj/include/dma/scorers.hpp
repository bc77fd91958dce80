#pragma once

// Differentiable scorers: a linear model or a one-hidden-layer tanh MLP over
// a fixed-length feature vector, with exact hand-derived parameter gradients.
//
// Flat parameter layout
//   linear: [w_0 .. w_{n-1}, b]
//   mlp:    [W (H x n, row-major), b1 (H), v (H), b2]

#include <cmath>
#include <fstream>
#include <string>

#include <json.hpp>

#include "dma/common.hpp"
#include "dma/rng.hpp"

namespace dma {

enum class Arch { kLinear, kMlp };

inline constexpr int kModelSchemaVersion = 1;
inline constexpr std::size_t kDefaultHidden = 16;

inline std::string to_string(Arch a) { return a == Arch::kLinear ? "linear" : "mlp"; }

inline Arch arch_from_string(const std::string& s) {
  if (s == "linear") return Arch::kLinear;
  if (s == "mlp") return Arch::kMlp;
  fail("unknown scorer architecture '", s, "'");
}

class ScorerModel {
 public:
  ScorerModel() = default;

  ScorerModel(Arch arch, std::size_t input_dim, std::size_t hidden = kDefaultHidden)
      : arch_(arch), input_dim_(input_dim), hidden_(arch == Arch::kLinear ? 0 : hidden) {
    require(input_dim_ > 0, "scorer input dimension must be positive");
    require(arch_ == Arch::kLinear || hidden_ > 0, "mlp hidden width must be positive");
    params_.assign(param_count_for(arch_, input_dim_, hidden_), 0.0);
  }

  // Uniform(-0.1, 0.1) initialization.
  static ScorerModel random(Arch arch, std::size_t input_dim, Rng& rng, std::size_t hidden = kDefaultHidden) {
    ScorerModel m(arch, input_dim, hidden);
    for (double& p : m.params_) p = uniform(rng, -0.1, 0.1);
    return m;
  }

  static std::size_t param_count_for(Arch arch, std::size_t n, std::size_t h) {
    return arch == Arch::kLinear ? n + 1 : h * n + h + h + 1;
  }

  Arch arch() const { return arch_; }
  std::size_t input_dim() const { return input_dim_; }
  std::size_t hidden() const { return hidden_; }
  std::size_t param_count() const { return params_.size(); }
  std::span<const double> params() const { return params_; }
  std::span<double> params() { return params_; }

  void set_params(Vec p) {
    require(p.size() == params_.size(), "parameter count mismatch: ", p.size(), " vs ", params_.size());
    params_ = std::move(p);
  }

  double forward(std::span<const double> x) const {
    check_input(x);
    const std::size_t n = input_dim_;
    if (arch_ == Arch::kLinear) {
      double s = params_[n];
      for (std::size_t i = 0; i < n; ++i) s += params_[i] * x[i];
      return s;
    }
    const std::size_t h = hidden_;
    const double* W = params_.data();
    const double* b1 = W + h * n;
    const double* v = b1 + h;
    double out = v[h];  // b2
    for (std::size_t r = 0; r < h; ++r) {
      double a = b1[r];
      for (std::size_t i = 0; i < n; ++i) a += W[r * n + i] * x[i];
      out += v[r] * std::tanh(a);
    }
    return out;
  }

  // grad += upstream * d forward(x) / d params
  void accumulate_grad(std::span<const double> x, double upstream, std::span<double> grad) const {
    check_input(x);
    require(grad.size() == params_.size(), "gradient buffer has wrong length");
    if (upstream == 0.0) return;
    const std::size_t n = input_dim_;
    if (arch_ == Arch::kLinear) {
      for (std::size_t i = 0; i < n; ++i) grad[i] += upstream * x[i];
      grad[n] += upstream;
      return;
    }
    const std::size_t h = hidden_;
    const double* W = params_.data();
    const double* b1 = W + h * n;
    const double* v = b1 + h;
    double* gW = grad.data();
    double* gb1 = gW + h * n;
    double* gv = gb1 + h;
    for (std::size_t r = 0; r < h; ++r) {
      double a = b1[r];
      for (std::size_t i = 0; i < n; ++i) a += W[r * n + i] * x[i];
      const double t = std::tanh(a);
      gv[r] += upstream * t;
      const double da = upstream * v[r] * (1.0 - t * t);
      gb1[r] += da;
      for (std::size_t i = 0; i < n; ++i) gW[r * n + i] += da * x[i];
    }
    gv[h] += upstream;
  }

  Vec grad_params(std::span<const double> x, double upstream) const {
    Vec g(params_.size(), 0.0);
    accumulate_grad(x, upstream, g);
    return g;
  }

  nlohmann::json to_json() const {
    return {{"schema_version", kModelSchemaVersion},
            {"arch", to_string(arch_)},
            {"dims", {{"input", input_dim_}, {"hidden", hidden_}}},
            {"params", params_}};
  }

  static ScorerModel from_json(const nlohmann::json& j) {
    const int v = j.at("schema_version").get<int>();
    require(v == kModelSchemaVersion, "model schema version ", v, " unsupported (expected ",
            kModelSchemaVersion, ")");
    ScorerModel m(arch_from_string(j.at("arch").get<std::string>()), j.at("dims").at("input").get<std::size_t>(),
                  std::max<std::size_t>(1, j.at("dims").at("hidden").get<std::size_t>()));
    m.set_params(j.at("params").get<Vec>());
    require(all_finite(m.params_), "model parameters must be finite");
    return m;
  }

  void save(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) fail("cannot write model '", path, "'");
    os << to_json().dump(2) << '\n';
  }

  static ScorerModel load(const std::string& path) {
    std::ifstream is(path);
    if (!is) fail("cannot open model '", path, "'");
    return from_json(nlohmann::json::parse(is));
  }

  friend bool operator==(const ScorerModel&, const ScorerModel&) = default;

 private:
  void check_input(std::span<const double> x) const {
    require(x.size() == input_dim_, "scorer input dimension mismatch: got ", x.size(), ", expected ",
            input_dim_);
  }

  Arch arch_ = Arch::kLinear;
  std::size_t input_dim_ = 0;
  std::size_t hidden_ = 0;
  Vec params_;
};

// Scalar reward over list features. Same machinery, separate type so that
// list-level and item-level models cannot be swapped by accident.
struct RewardModel {
  ScorerModel scorer;

  double operator()(std::span<const double> list_feats) const { return scorer.forward(list_feats); }
};

}  // namespace dma
