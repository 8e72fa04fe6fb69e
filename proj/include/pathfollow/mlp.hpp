#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "pathfollow/common.hpp"

namespace pathfollow {

/// Fully connected network, tanh hidden layers, identity output.
struct MlpModel {
  static constexpr int kFormatVersion = 1;
  static std::vector<int> default_layers() { return {4, 8, 16, 2}; }

  std::vector<int> layers = default_layers();
  std::vector<Eigen::MatrixXd> weights;  // weights[i] is layers[i+1] x layers[i]
  std::vector<Eigen::VectorXd> biases;

  /// All-zero parameters with the given layer sizes.
  static MlpModel zeros(std::vector<int> sizes = default_layers()) {
    MlpModel m;
    m.layers = std::move(sizes);
    for (std::size_t i = 0; i + 1 < m.layers.size(); ++i) {
      m.weights.push_back(Eigen::MatrixXd::Zero(m.layers[i + 1], m.layers[i]));
      m.biases.push_back(Eigen::VectorXd::Zero(m.layers[i + 1]));
    }
    return m;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (std::size_t i = 0; i < weights.size(); ++i)
      n += static_cast<std::size_t>(weights[i].size() + biases[i].size());
    return n;
  }

  /// Throws if shapes disagree with `layers` or a parameter is not finite.
  void validate() const {
    if (layers.size() < 2) throw InvalidArgument("MlpModel: need at least two layers");
    if (weights.size() != layers.size() - 1 || biases.size() != layers.size() - 1)
      throw InvalidArgument("MlpModel: expected " + std::to_string(layers.size() - 1) +
                            " weight/bias pairs");
    for (std::size_t i = 0; i < weights.size(); ++i) {
      if (weights[i].rows() != layers[i + 1] || weights[i].cols() != layers[i])
        throw InvalidArgument("MlpModel: weight " + std::to_string(i) + " has shape " +
                              std::to_string(weights[i].rows()) + "x" + std::to_string(weights[i].cols()) +
                              ", expected " + std::to_string(layers[i + 1]) + "x" + std::to_string(layers[i]));
      if (biases[i].size() != layers[i + 1])
        throw InvalidArgument("MlpModel: bias " + std::to_string(i) + " has length " +
                              std::to_string(biases[i].size()) + ", expected " + std::to_string(layers[i + 1]));
      if (!weights[i].allFinite() || !biases[i].allFinite())
        throw InvalidArgument("MlpModel: non-finite parameter in layer " + std::to_string(i));
    }
  }

  /// Parameters flattened as W0 (column-major), b0, W1, b1, ...
  Eigen::VectorXd flatten() const {
    Eigen::VectorXd out(static_cast<Eigen::Index>(parameter_count()));
    Eigen::Index k = 0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
      out.segment(k, weights[i].size()) = weights[i].reshaped();
      k += weights[i].size();
      out.segment(k, biases[i].size()) = biases[i];
      k += biases[i].size();
    }
    return out;
  }

  void unflatten(const Eigen::VectorXd& flat) {
    if (flat.size() != static_cast<Eigen::Index>(parameter_count()))
      throw InvalidArgument("MlpModel::unflatten: wrong parameter count");
    Eigen::Index k = 0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
      weights[i].reshaped() = flat.segment(k, weights[i].size());
      k += weights[i].size();
      biases[i] = flat.segment(k, biases[i].size());
      k += biases[i].size();
    }
  }

  friend bool operator==(const MlpModel& a, const MlpModel& b) {
    if (a.layers != b.layers || a.weights.size() != b.weights.size()) return false;
    for (std::size_t i = 0; i < a.weights.size(); ++i)
      if (a.weights[i] != b.weights[i] || a.biases[i] != b.biases[i]) return false;
    return true;
  }
};

/// Glorot-uniform weights, zero biases; deterministic per seed.
inline MlpModel init_model(std::uint64_t seed, std::vector<int> sizes = MlpModel::default_layers()) {
  MlpModel m = MlpModel::zeros(std::move(sizes));
  Rng rng = Rng::stream(seed, "mlp-init");
  for (std::size_t i = 0; i < m.weights.size(); ++i) {
    const double limit = std::sqrt(6.0 / (m.layers[i] + m.layers[i + 1]));
    for (Eigen::Index c = 0; c < m.weights[i].cols(); ++c)
      for (Eigen::Index r = 0; r < m.weights[i].rows(); ++r) m.weights[i](r, c) = rng.uniform(-limit, limit);
  }
  return m;
}

/// Batched forward pass; columns of `inputs` are samples.
inline Eigen::MatrixXd forward_batch(const MlpModel& m, const Eigen::MatrixXd& inputs) {
  Eigen::MatrixXd a = inputs;
  const std::size_t last = m.weights.size() - 1;
  for (std::size_t i = 0; i < m.weights.size(); ++i) {
    Eigen::MatrixXd z = (m.weights[i] * a).colwise() + m.biases[i];
    a = i == last ? std::move(z) : Eigen::MatrixXd(z.array().tanh());
  }
  return a;
}

inline Eigen::VectorXd forward(const MlpModel& m, const Eigen::VectorXd& input) {
  if (input.size() != m.layers.front())
    throw InvalidArgument("forward: input has " + std::to_string(input.size()) + " entries, model expects " +
                          std::to_string(m.layers.front()));
  Eigen::VectorXd a = input;
  const std::size_t last = m.weights.size() - 1;
  for (std::size_t i = 0; i < m.weights.size(); ++i) {
    Eigen::VectorXd z = m.weights[i] * a + m.biases[i];
    a = i == last ? std::move(z) : Eigen::VectorXd(z.array().tanh());
  }
  return a;
}

/// Mean over samples and output channels of the squared error.
inline double mse(const MlpModel& m, const Eigen::MatrixXd& inputs, const Eigen::MatrixXd& targets) {
  if (inputs.cols() == 0) return 0.0;
  return (forward_batch(m, inputs) - targets).squaredNorm() / static_cast<double>(targets.size());
}

/// Gradient of the batch MSE with respect to all parameters (flattened
/// layout of MlpModel::flatten).
inline Eigen::VectorXd mse_gradient(const MlpModel& m, const Eigen::MatrixXd& inputs,
                                    const Eigen::MatrixXd& targets) {
  const std::size_t L = m.weights.size();
  std::vector<Eigen::MatrixXd> acts{inputs};
  for (std::size_t i = 0; i < L; ++i) {
    Eigen::MatrixXd z = (m.weights[i] * acts.back()).colwise() + m.biases[i];
    acts.push_back(i + 1 == L ? std::move(z) : Eigen::MatrixXd(z.array().tanh()));
  }
  std::vector<Eigen::MatrixXd> dW(L);
  std::vector<Eigen::VectorXd> db(L);
  Eigen::MatrixXd delta = 2.0 * (acts.back() - targets) / static_cast<double>(targets.size());
  for (std::size_t i = L; i-- > 0;) {
    dW[i] = delta * acts[i].transpose();
    db[i] = delta.rowwise().sum();
    if (i > 0) {
      delta = (m.weights[i].transpose() * delta).array() * (1.0 - acts[i].array().square());
    }
  }
  Eigen::VectorXd grad(static_cast<Eigen::Index>(m.parameter_count()));
  Eigen::Index k = 0;
  for (std::size_t i = 0; i < L; ++i) {
    grad.segment(k, dW[i].size()) = dW[i].reshaped();
    k += dW[i].size();
    grad.segment(k, db[i].size()) = db[i];
    k += db[i].size();
  }
  return grad;
}

/// Largest relative disagreement between backprop and central differences
/// (h = 1e-5) over every parameter, for the MSE on one sample.
inline double grad_check(const MlpModel& m, const Eigen::VectorXd& input, const Eigen::VectorXd& target,
                         double h = 1e-5) {
  const Eigen::MatrixXd x = input;
  const Eigen::MatrixXd t = target;
  const Eigen::VectorXd analytic = mse_gradient(m, x, t);
  MlpModel probe = m;
  const Eigen::VectorXd base = m.flatten();
  double worst = 0.0;
  for (Eigen::Index i = 0; i < base.size(); ++i) {
    Eigen::VectorXd p = base;
    p[i] = base[i] + h;
    probe.unflatten(p);
    const double up = mse(probe, x, t);
    p[i] = base[i] - h;
    probe.unflatten(p);
    const double down = mse(probe, x, t);
    const double numeric = (up - down) / (2.0 * h);
    const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-6});
    worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
  }
  return worst;
}

/// Product of per-layer spectral norms; tanh is 1-Lipschitz so this bounds
/// the Lipschitz constant of the whole network.
inline double lipschitz_bound(const MlpModel& m) {
  double L = 1.0;
  for (const auto& W : m.weights) {
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(W);
    L *= svd.singularValues().size() ? svd.singularValues()[0] : 0.0;
  }
  return L;
}

struct TrainOptions {
  double learning_rate = 1e-3;
  int epochs = 500;
  int batch_size = 64;
  std::uint64_t seed = 0;
  double val_split = 0.1;
};

struct TrainReport {
  int epochs = 0;
  double final_train_mse = 0.0;
  double final_val_mse = 0.0;
  std::vector<double> loss_history;  // training MSE after each epoch
  std::vector<double> val_history;
  std::vector<double> val_mae;       // per output channel, final model

  friend bool operator==(const TrainReport&, const TrainReport&) = default;
};

/// Columns of `inputs`/`targets` are samples.
struct TrainingSet {
  Eigen::MatrixXd inputs;
  Eigen::MatrixXd targets;
};

namespace detail {
inline std::vector<std::size_t> shuffled_indices(std::size_t n, Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[rng.below(i)]);
  return idx;
}

inline Eigen::MatrixXd gather(const Eigen::MatrixXd& m, const std::vector<std::size_t>& idx, std::size_t from,
                              std::size_t to) {
  Eigen::MatrixXd out(m.rows(), static_cast<Eigen::Index>(to - from));
  for (std::size_t j = from; j < to; ++j) out.col(static_cast<Eigen::Index>(j - from)) = m.col(static_cast<Eigen::Index>(idx[j]));
  return out;
}
}  // namespace detail

class TrainingDiverged : public Error {
 public:
  explicit TrainingDiverged(int epoch)
      : Error("diverged", "training diverged (non-finite loss) at epoch " + std::to_string(epoch)), epoch_(epoch) {}
  int epoch() const { return epoch_; }

 private:
  int epoch_;
};

/// Plain mini-batch gradient descent on the MSE. The validation part is
/// split off with a seeded shuffle before any parameter update.
inline std::pair<MlpModel, TrainReport> train(MlpModel model, const TrainingSet& data, const TrainOptions& opt) {
  model.validate();
  const auto n = static_cast<std::size_t>(data.inputs.cols());
  if (n < 100) throw InvalidArgument("train: need at least 100 samples, got " + std::to_string(n));
  if (data.targets.cols() != data.inputs.cols() || data.inputs.rows() != model.layers.front() ||
      data.targets.rows() != model.layers.back())
    throw InvalidArgument("train: dataset shape does not match the model");
  if (!(opt.val_split >= 0.0 && opt.val_split < 1.0)) throw InvalidArgument("train: val_split must be in [0, 1)");
  if (opt.batch_size < 1 || opt.epochs < 0) throw InvalidArgument("train: bad batch size or epoch count");

  Rng split_rng = Rng::stream(opt.seed, "train-split");
  const std::vector<std::size_t> order = detail::shuffled_indices(n, split_rng);
  const auto n_val = static_cast<std::size_t>(std::llround(opt.val_split * static_cast<double>(n)));
  const std::size_t n_train = n - n_val;
  const Eigen::MatrixXd x_val = detail::gather(data.inputs, order, n_train, n);
  const Eigen::MatrixXd t_val = detail::gather(data.targets, order, n_train, n);
  const Eigen::MatrixXd x_train = detail::gather(data.inputs, order, 0, n_train);
  const Eigen::MatrixXd t_train = detail::gather(data.targets, order, 0, n_train);

  TrainReport report;
  Eigen::VectorXd params = model.flatten();
  const auto batch = static_cast<std::size_t>(opt.batch_size);
  for (int epoch = 0; epoch < opt.epochs; ++epoch) {
    Rng rng = Rng::stream(opt.seed, "train-epoch", static_cast<std::uint64_t>(epoch));
    const std::vector<std::size_t> perm = detail::shuffled_indices(n_train, rng);
    for (std::size_t start = 0; start < n_train; start += batch) {
      const std::size_t stop = std::min(n_train, start + batch);
      std::vector<std::size_t> sel(perm.begin() + static_cast<std::ptrdiff_t>(start),
                                   perm.begin() + static_cast<std::ptrdiff_t>(stop));
      const Eigen::MatrixXd xb = detail::gather(x_train, sel, 0, sel.size());
      const Eigen::MatrixXd tb = detail::gather(t_train, sel, 0, sel.size());
      if (opt.learning_rate != 0.0) {
        params -= opt.learning_rate * mse_gradient(model, xb, tb);
        model.unflatten(params);
      }
    }
    const double train_loss = mse(model, x_train, t_train);
    if (!std::isfinite(train_loss)) throw TrainingDiverged(epoch);
    report.loss_history.push_back(train_loss);
    report.val_history.push_back(mse(model, x_val, t_val));
  }
  report.epochs = opt.epochs;
  report.final_train_mse = mse(model, x_train, t_train);
  report.final_val_mse = mse(model, x_val, t_val);
  if (!std::isfinite(report.final_train_mse)) throw TrainingDiverged(opt.epochs);
  if (n_val > 0) {
    const Eigen::MatrixXd err = (forward_batch(model, x_val) - t_val).cwiseAbs();
    for (Eigen::Index c = 0; c < err.rows(); ++c) report.val_mae.push_back(err.row(c).mean());
  }
  return {std::move(model), std::move(report)};
}

// ---------------------------------------------------------------------------
// JSON persistence.

inline nlohmann::json to_json(const MlpModel& m) {
  nlohmann::json j;
  j["format_version"] = MlpModel::kFormatVersion;
  j["layers"] = m.layers;
  j["activation"] = "tanh";
  j["weights"] = nlohmann::json::array();
  j["biases"] = nlohmann::json::array();
  for (std::size_t i = 0; i < m.weights.size(); ++i) {
    nlohmann::json rows = nlohmann::json::array();
    for (Eigen::Index r = 0; r < m.weights[i].rows(); ++r) {
      std::vector<double> row(m.weights[i].row(r).begin(), m.weights[i].row(r).end());
      rows.push_back(row);
    }
    j["weights"].push_back(rows);
    j["biases"].push_back(std::vector<double>(m.biases[i].begin(), m.biases[i].end()));
  }
  return j;
}

inline MlpModel model_from_json(const nlohmann::json& j) {
  try {
    if (!j.is_object()) throw ParseError("model: expected a JSON object");
    for (const char* key : {"format_version", "layers", "activation", "weights", "biases"})
      if (!j.contains(key)) throw ParseError(std::string("model: missing field '") + key + "'");
    const int version = j.at("format_version").get<int>();
    if (version != MlpModel::kFormatVersion)
      throw ParseError("model: format_version " + std::to_string(version) + " is not supported (expected " +
                       std::to_string(MlpModel::kFormatVersion) + ")");
    if (j.at("activation").get<std::string>() != "tanh")
      throw ParseError("model: activation '" + j.at("activation").get<std::string>() + "' is not supported");
    MlpModel m = MlpModel::zeros(j.at("layers").get<std::vector<int>>());
    const auto& W = j.at("weights");
    const auto& B = j.at("biases");
    if (W.size() != m.weights.size() || B.size() != m.biases.size())
      throw ParseError("model: expected " + std::to_string(m.weights.size()) + " weight and bias entries");
    for (std::size_t i = 0; i < m.weights.size(); ++i) {
      const auto rows = W[i].get<std::vector<std::vector<double>>>();
      const auto bias = B[i].get<std::vector<double>>();
      if (rows.size() != static_cast<std::size_t>(m.weights[i].rows()) ||
          bias.size() != static_cast<std::size_t>(m.biases[i].size()))
        throw ParseError("model: layer " + std::to_string(i) + " shape does not match 'layers'");
      for (std::size_t r = 0; r < rows.size(); ++r) {
        if (rows[r].size() != static_cast<std::size_t>(m.weights[i].cols()))
          throw ParseError("model: layer " + std::to_string(i) + " row " + std::to_string(r) + " has wrong length");
        for (std::size_t c = 0; c < rows[r].size(); ++c)
          m.weights[i](static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
      }
      for (std::size_t r = 0; r < bias.size(); ++r) m.biases[i][static_cast<Eigen::Index>(r)] = bias[r];
    }
    m.validate();
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("model: ") + e.what());
  } catch (const InvalidArgument& e) {
    throw ParseError(std::string("model: ") + e.what());
  }
}

inline nlohmann::json to_json(const TrainReport& r) {
  return {{"epochs", r.epochs},
          {"final_train_mse", r.final_train_mse},
          {"final_val_mse", r.final_val_mse},
          {"val_mae", r.val_mae},
          {"loss_history", r.loss_history},
          {"val_history", r.val_history}};
}

inline void save_model(const MlpModel& m, const std::string& file) {
  std::ofstream out(file);
  if (!out) throw IoError("cannot write model file '" + file + "'");
  out << to_json(m).dump(2) << '\n';
  if (!out) throw IoError("failed writing model file '" + file + "'");
}

inline MlpModel load_model(const std::string& file) {
  std::ifstream in(file);
  if (!in) throw IoError("cannot open model file '" + file + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(buf.str());
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError("model file '" + file + "': " + e.what());
  }
  return model_from_json(j);
}

}  // namespace pathfollow
