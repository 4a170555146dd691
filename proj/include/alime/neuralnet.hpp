#pragma once

// Dense feed-forward networks trained with Adam: the black-box classifier and
// the denoising autoencoder whose encoder defines the latent distance.

#include "alime/error.hpp"
#include "alime/rng.hpp"
#include "alime/types.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace alime {

enum class Activation { identity, relu, tanh, sigmoid };

inline std::string to_string(Activation a) {
  switch (a) {
    case Activation::identity: return "identity";
    case Activation::relu: return "relu";
    case Activation::tanh: return "tanh";
    case Activation::sigmoid: return "sigmoid";
  }
  return "identity";
}

inline Activation activation_from_string(const std::string& s) {
  if (s == "identity") return Activation::identity;
  if (s == "relu") return Activation::relu;
  if (s == "tanh") return Activation::tanh;
  if (s == "sigmoid") return Activation::sigmoid;
  throw Error(ErrorCode::parse_error, "unknown activation '" + s + "'");
}

inline double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

/// log(1 + exp(z)) without overflow.
inline double softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }

namespace detail {

inline void activate(Matrix& z, Activation a) {
  switch (a) {
    case Activation::identity: break;
    case Activation::relu: z = z.cwiseMax(0.0); break;
    case Activation::tanh: z = z.array().tanh().matrix(); break;
    case Activation::sigmoid: z = z.unaryExpr([](double v) { return sigmoid(v); }); break;
  }
}

// d(activation)/dz expressed through the pre-activation z and output a.
inline Matrix activation_derivative(const Matrix& z, const Matrix& a, Activation act) {
  switch (act) {
    case Activation::identity: return Matrix::Ones(z.rows(), z.cols());
    case Activation::relu: return (z.array() > 0.0).cast<double>().matrix();
    case Activation::tanh: return (1.0 - a.array().square()).matrix();
    case Activation::sigmoid: return (a.array() * (1.0 - a.array())).matrix();
  }
  return Matrix::Ones(z.rows(), z.cols());
}

inline std::vector<double> flatten(const Matrix& m) { return {m.data(), m.data() + m.size()}; }

}  // namespace detail

struct DenseLayer {
  Matrix weights;  // out x in
  Vector bias;     // out
  Activation activation = Activation::identity;

  std::size_t in() const { return static_cast<std::size_t>(weights.cols()); }
  std::size_t out() const { return static_cast<std::size_t>(weights.rows()); }
};

struct Gradients {
  std::vector<Matrix> weights;
  std::vector<Vector> bias;
};

enum class LossKind { binary_cross_entropy, mean_squared_error };

class Network {
 public:
  std::vector<DenseLayer> layers;

  Network() = default;

  /// Glorot-uniform weights, zero biases. dims = (input, hidden..., output);
  /// activations has dims.size() - 1 entries.
  Network(const std::vector<std::size_t>& dims, const std::vector<Activation>& activations, std::uint64_t seed) {
    require(dims.size() >= 2 && activations.size() == dims.size() - 1, ErrorCode::invalid_argument,
            "network needs one activation per layer");
    Rng rng(seed);
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
      require(dims[l] >= 1 && dims[l + 1] >= 1, ErrorCode::invalid_argument, "layer width must be >= 1");
      DenseLayer layer;
      const auto out = static_cast<Eigen::Index>(dims[l + 1]);
      const auto in = static_cast<Eigen::Index>(dims[l]);
      const double limit = std::sqrt(6.0 / static_cast<double>(dims[l] + dims[l + 1]));
      layer.weights.resize(out, in);
      for (Eigen::Index i = 0; i < layer.weights.size(); ++i) layer.weights.data()[i] = rng.uniform(-limit, limit);
      layer.bias = Vector::Zero(out);
      layer.activation = activations[l];
      layers.push_back(std::move(layer));
    }
  }

  std::size_t input_dim() const { return layers.empty() ? 0 : layers.front().in(); }
  std::size_t output_dim() const { return layers.empty() ? 0 : layers.back().out(); }

  std::vector<std::size_t> dims() const {
    std::vector<std::size_t> d;
    if (layers.empty()) return d;
    d.push_back(input_dim());
    for (const auto& l : layers) d.push_back(l.out());
    return d;
  }

  std::size_t parameter_count() const {
    std::size_t total = 0;
    for (const auto& l : layers) total += static_cast<std::size_t>(l.weights.size() + l.bias.size());
    return total;
  }

  bool parameters_finite() const {
    return std::all_of(layers.begin(), layers.end(),
                       [](const auto& l) { return l.weights.allFinite() && l.bias.allFinite(); });
  }

  Matrix forward(const Matrix& x) const {
    require(static_cast<std::size_t>(x.cols()) == input_dim(), ErrorCode::dimension_mismatch,
            "network expects " + std::to_string(input_dim()) + " inputs, got " + std::to_string(x.cols()));
    Matrix a = x;
    for (const auto& layer : layers) {
      // Coefficient-wise product: each output depends only on its own row, so
      // results do not change with batch composition.
      Matrix z = a.lazyProduct(layer.weights.transpose());
      z.rowwise() += layer.bias.transpose();
      detail::activate(z, layer.activation);
      a = std::move(z);
    }
    return a;
  }

  /// Mean loss over the batch; fills grad when non-null. Binary cross-entropy
  /// requires a sigmoid output layer and is evaluated from the logits.
  double loss(const Matrix& x, const Matrix& target, LossKind kind, Gradients* grad = nullptr) const {
    require(target.rows() == x.rows() && static_cast<std::size_t>(target.cols()) == output_dim(),
            ErrorCode::dimension_mismatch, "target shape does not match network output");
    const std::size_t depth = layers.size();
    std::vector<Matrix> pre(depth), post(depth + 1);
    post[0] = x;
    for (std::size_t l = 0; l < depth; ++l) {
      pre[l] = post[l] * layers[l].weights.transpose();
      pre[l].rowwise() += layers[l].bias.transpose();
      post[l + 1] = pre[l];
      detail::activate(post[l + 1], layers[l].activation);
    }
    const double count = static_cast<double>(target.size());
    const Matrix& out = post[depth];
    double value = 0.0;
    Matrix delta;
    if (kind == LossKind::binary_cross_entropy) {
      require(layers.back().activation == Activation::sigmoid, ErrorCode::invalid_argument,
              "binary cross-entropy needs a sigmoid output");
      const Matrix& logits = pre[depth - 1];
      for (Eigen::Index i = 0; i < logits.size(); ++i) {
        value += softplus(logits.data()[i]) - target.data()[i] * logits.data()[i];
      }
      value /= count;
      if (grad) delta = (out - target) / count;
    } else {
      const Matrix diff = out - target;
      value = diff.squaredNorm() / count;
      if (grad) {
        delta = (2.0 / count) * diff.cwiseProduct(
                                    detail::activation_derivative(pre[depth - 1], out, layers.back().activation));
      }
    }
    if (grad) {
      grad->weights.resize(depth);
      grad->bias.resize(depth);
      for (std::size_t l = depth; l-- > 0;) {
        grad->weights[l] = delta.transpose() * post[l];
        grad->bias[l] = delta.colwise().sum().transpose();
        if (l > 0) {
          delta = (delta * layers[l].weights)
                      .cwiseProduct(detail::activation_derivative(pre[l - 1], post[l], layers[l - 1].activation));
        }
      }
    }
    return value;
  }

  nlohmann::json to_json() const {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& l : layers) {
      j.push_back({{"in", l.in()},
                   {"out", l.out()},
                   {"activation", to_string(l.activation)},
                   {"weights", detail::flatten(l.weights)},
                   {"bias", std::vector<double>(l.bias.data(), l.bias.data() + l.bias.size())}});
    }
    return j;
  }

  static Network from_json(const nlohmann::json& j) {
    Network net;
    for (const auto& lj : j) {
      DenseLayer layer;
      const auto in = lj.at("in").get<Eigen::Index>();
      const auto out = lj.at("out").get<Eigen::Index>();
      const auto w = lj.at("weights").get<std::vector<double>>();
      const auto b = lj.at("bias").get<std::vector<double>>();
      require(static_cast<Eigen::Index>(w.size()) == in * out && static_cast<Eigen::Index>(b.size()) == out,
              ErrorCode::parse_error, "layer parameter count does not match its shape");
      layer.weights = Eigen::Map<const Matrix>(w.data(), out, in);
      layer.bias = Eigen::Map<const Vector>(b.data(), out);
      layer.activation = activation_from_string(lj.at("activation").get<std::string>());
      if (!net.layers.empty()) {
        require(net.layers.back().out() == layer.in(), ErrorCode::parse_error, "incompatible consecutive layers");
      }
      net.layers.push_back(std::move(layer));
    }
    return net;
  }
};

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct TrainConfig {
  std::size_t max_epochs = 150;
  std::size_t patience = 10;
  std::size_t batch_size = 32;
  AdamConfig adam;
  std::uint64_t seed = 0;

  void validate() const {
    require(max_epochs >= 1, ErrorCode::invalid_argument, "max_epochs must be >= 1");
    require(patience >= 1, ErrorCode::invalid_argument, "patience must be >= 1");
    require(batch_size >= 1, ErrorCode::invalid_argument, "batch_size must be >= 1");
    require(adam.learning_rate > 0.0, ErrorCode::invalid_argument, "learning rate must be positive");
  }

  nlohmann::json to_json() const {
    return {{"max_epochs", max_epochs},
            {"patience", patience},
            {"batch_size", batch_size},
            {"learning_rate", adam.learning_rate},
            {"beta1", adam.beta1},
            {"beta2", adam.beta2},
            {"epsilon", adam.epsilon},
            {"seed", seed}};
  }

  static TrainConfig from_json(const nlohmann::json& j) {
    TrainConfig c;
    c.max_epochs = j.value("max_epochs", c.max_epochs);
    c.patience = j.value("patience", c.patience);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.adam.learning_rate = j.value("learning_rate", c.adam.learning_rate);
    c.adam.beta1 = j.value("beta1", c.adam.beta1);
    c.adam.beta2 = j.value("beta2", c.adam.beta2);
    c.adam.epsilon = j.value("epsilon", c.adam.epsilon);
    c.seed = j.value("seed", c.seed);
    c.validate();
    return c;
  }
};

class Adam {
 public:
  Adam(const Network& net, AdamConfig config) : config_(config) {
    for (const auto& l : net.layers) {
      m_w_.push_back(Matrix::Zero(l.weights.rows(), l.weights.cols()));
      v_w_.push_back(Matrix::Zero(l.weights.rows(), l.weights.cols()));
      m_b_.push_back(Vector::Zero(l.bias.size()));
      v_b_.push_back(Vector::Zero(l.bias.size()));
    }
  }

  void step(Network& net, const Gradients& g) {
    ++t_;
    const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
      update(net.layers[l].weights, g.weights[l], m_w_[l], v_w_[l], c1, c2);
      update(net.layers[l].bias, g.bias[l], m_b_[l], v_b_[l], c1, c2);
    }
  }

 private:
  template <typename Param, typename Grad, typename Moment>
  void update(Param& p, const Grad& g, Moment& m, Moment& v, double c1, double c2) const {
    m = config_.beta1 * m + (1.0 - config_.beta1) * g;
    v = config_.beta2 * v + (1.0 - config_.beta2) * g.cwiseProduct(g);
    p.array() -= config_.learning_rate * (m.array() / c1) / ((v.array() / c2).sqrt() + config_.epsilon);
  }

  AdamConfig config_;
  std::vector<Matrix> m_w_, v_w_;
  std::vector<Vector> m_b_, v_b_;
  std::size_t t_ = 0;
};

struct TrainingHistory {
  std::vector<double> train_loss;  // mean mini-batch loss per epoch
  std::vector<double> val_loss;
  std::size_t best_epoch = 0;      // 0-based index into val_loss
  bool early_stopped = false;

  std::size_t epochs() const { return val_loss.size(); }

  nlohmann::json to_json() const {
    return {{"train_loss", train_loss},
            {"val_loss", val_loss},
            {"best_epoch", best_epoch},
            {"early_stopped", early_stopped}};
  }
};

/// Mini-batch Adam with early stopping on validation loss. On return `net`
/// holds the parameters of the best validation epoch. When input_noise_std is
/// positive each batch input is corrupted with N(0, noise^2) while the target
/// stays clean (denoising objective).
inline TrainingHistory train_network(Network& net, const Matrix& x, const Matrix& y, const Matrix& x_val,
                                     const Matrix& y_val, LossKind kind, const TrainConfig& config,
                                     double input_noise_std = 0.0) {
  config.validate();
  require(x.rows() > 0 && x_val.rows() > 0, ErrorCode::empty_matrix, "training and validation data must be non-empty");
  require(x.rows() == y.rows() && x_val.rows() == y_val.rows(), ErrorCode::dimension_mismatch,
          "inputs and targets have different row counts");
  Rng rng(derive_seed(config.seed, 0xA11CE));
  Adam adam(net, config.adam);
  TrainingHistory history;
  Network best = net;
  double best_val = std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;
  std::vector<std::size_t> order(static_cast<std::size_t>(x.rows()));
  std::iota(order.begin(), order.end(), std::size_t{0});
  Gradients grad;

  for (std::size_t epoch = 0; epoch < config.max_epochs; ++epoch) {
    rng.shuffle(std::span<std::size_t>(order));
    double epoch_loss = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      const auto b = static_cast<Eigen::Index>(end - start);
      Matrix xb(b, x.cols()), yb(b, y.cols());
      for (Eigen::Index i = 0; i < b; ++i) {
        const auto r = static_cast<Eigen::Index>(order[start + static_cast<std::size_t>(i)]);
        xb.row(i) = x.row(r);
        yb.row(i) = y.row(r);
      }
      if (input_noise_std > 0.0) {
        for (Eigen::Index i = 0; i < xb.size(); ++i) xb.data()[i] += input_noise_std * rng.normal();
      }
      epoch_loss += net.loss(xb, yb, kind, &grad);
      ++batches;
      adam.step(net, grad);
    }
    epoch_loss /= static_cast<double>(batches);
    const double val = net.loss(x_val, y_val, kind);
    if (!std::isfinite(epoch_loss) || !std::isfinite(val) || !net.parameters_finite()) {
      throw Error(ErrorCode::non_finite_loss, "training diverged at epoch " + std::to_string(epoch));
    }
    history.train_loss.push_back(epoch_loss);
    history.val_loss.push_back(val);
    if (val < best_val) {
      best_val = val;
      best = net;
      history.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= config.patience) {
      history.early_stopped = true;
      break;
    }
  }
  net = std::move(best);
  return history;
}

inline Matrix labels_as_column(const std::vector<int>& labels) {
  Matrix y(static_cast<Eigen::Index>(labels.size()), 1);
  for (std::size_t i = 0; i < labels.size(); ++i) y(static_cast<Eigen::Index>(i), 0) = labels[i];
  return y;
}

inline void check_labels(const std::vector<int>& labels) {
  for (int l : labels) require(l == 0 || l == 1, ErrorCode::non_binary_label, "label " + std::to_string(l));
}

/// Two-hidden-layer rectifier network with a sigmoid output: the black box.
struct MlpClassifier {
  Network network;
  TrainConfig config;
  TrainingHistory history;

  std::size_t input_dim() const { return network.input_dim(); }

  std::array<std::size_t, 2> hidden() const {
    const auto d = network.dims();
    return {d.at(1), d.at(2)};
  }

  static MlpClassifier untrained(std::size_t inputs, std::size_t h1, std::size_t h2, std::uint64_t seed) {
    MlpClassifier m;
    m.network = Network({inputs, h1, h2, 1}, {Activation::relu, Activation::relu, Activation::sigmoid}, seed);
    m.config.seed = seed;
    return m;
  }

  Vector predict_proba(const Matrix& x) const {
    require(x.allFinite(), ErrorCode::non_finite_input, "classifier input contains NaN or infinity");
    return network.forward(x).col(0);
  }

  double predict_proba(const RowVector& x) const {
    Matrix m = x;
    return predict_proba(m)[0];
  }

  double accuracy(const Matrix& x, const std::vector<int>& labels, double threshold = 0.5) const {
    const Vector p = predict_proba(x);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      correct += static_cast<int>(p[static_cast<Eigen::Index>(i)] >= threshold) == labels[i];
    }
    return labels.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(labels.size());
  }

  nlohmann::json to_json() const {
    return {{"type", "mlp_classifier"},
            {"dims", network.dims()},
            {"layers", network.to_json()},
            {"config", config.to_json()},
            {"seed", config.seed},
            {"history", history.to_json()}};
  }

  static MlpClassifier from_json(const nlohmann::json& j) {
    require(j.value("type", std::string()) == "mlp_classifier", ErrorCode::parse_error, "not an mlp_classifier document");
    MlpClassifier m;
    m.network = Network::from_json(j.at("layers"));
    m.config = TrainConfig::from_json(j.at("config"));
    if (j.contains("history")) {
      const auto& h = j.at("history");
      m.history.train_loss = h.at("train_loss").get<std::vector<double>>();
      m.history.val_loss = h.at("val_loss").get<std::vector<double>>();
      m.history.best_epoch = h.at("best_epoch").get<std::size_t>();
      m.history.early_stopped = h.at("early_stopped").get<bool>();
    }
    require(m.network.layers.size() == 3 && m.network.output_dim() == 1, ErrorCode::parse_error,
            "classifier must have two hidden layers and one output");
    return m;
  }
};

inline MlpClassifier mlp_train(const Matrix& x_train, const std::vector<int>& y_train, const Matrix& x_val,
                               const std::vector<int>& y_val, std::array<std::size_t, 2> hidden,
                               const TrainConfig& config) {
  check_labels(y_train);
  check_labels(y_val);
  require(static_cast<std::size_t>(x_train.rows()) == y_train.size() &&
              static_cast<std::size_t>(x_val.rows()) == y_val.size(),
          ErrorCode::dimension_mismatch, "feature rows and labels differ in length");
  require(x_val.cols() == x_train.cols(), ErrorCode::dimension_mismatch, "train/validation column mismatch");
  auto model = MlpClassifier::untrained(static_cast<std::size_t>(x_train.cols()), hidden[0], hidden[1], config.seed);
  model.config = config;
  model.history = train_network(model.network, x_train, labels_as_column(y_train), x_val, labels_as_column(y_val),
                                LossKind::binary_cross_entropy, config);
  return model;
}

/// Encoder K -> hidden -> latent, decoder latent -> hidden -> K. Hidden layers
/// use tanh, the latent code and the reconstruction are linear.
struct DenoisingAutoencoder {
  Network encoder;
  Network decoder;
  double noise_std = 0.1;
  TrainConfig config;
  TrainingHistory history;

  std::size_t input_dim() const { return encoder.input_dim(); }
  std::size_t latent_dim() const { return encoder.output_dim(); }

  static std::size_t default_hidden(std::size_t inputs) { return std::max<std::size_t>(4, (inputs + 1) / 2); }
  static std::size_t default_latent(std::size_t inputs) { return std::min<std::size_t>(8, inputs); }

  static DenoisingAutoencoder untrained(std::size_t inputs, std::size_t latent, double noise_std, std::uint64_t seed) {
    require(latent >= 1, ErrorCode::invalid_argument, "latent_dim must be >= 1");
    require(noise_std >= 0.0, ErrorCode::invalid_argument, "noise_std must be >= 0");
    const std::size_t hidden = default_hidden(inputs);
    Network joint({inputs, hidden, latent, hidden, inputs},
                  {Activation::tanh, Activation::identity, Activation::tanh, Activation::identity}, seed);
    DenoisingAutoencoder ae;
    ae.noise_std = noise_std;
    ae.config.seed = seed;
    ae.split_joint(std::move(joint));
    return ae;
  }

  Network joint() const {
    Network n = encoder;
    n.layers.insert(n.layers.end(), decoder.layers.begin(), decoder.layers.end());
    return n;
  }

  void split_joint(Network joint) {
    const std::size_t half = joint.layers.size() / 2;
    encoder.layers.assign(joint.layers.begin(), joint.layers.begin() + static_cast<std::ptrdiff_t>(half));
    decoder.layers.assign(joint.layers.begin() + static_cast<std::ptrdiff_t>(half), joint.layers.end());
  }

  /// No noise is injected at inference.
  Matrix encode(const Matrix& x) const { return encoder.forward(x); }

  RowVector encode(const RowVector& x) const {
    Matrix m = x;
    return encoder.forward(m).row(0);
  }

  Matrix reconstruct(const Matrix& x) const { return decoder.forward(encoder.forward(x)); }

  double reconstruction_mse(const Matrix& x) const { return (reconstruct(x) - x).squaredNorm() / static_cast<double>(x.size()); }

  nlohmann::json to_json() const {
    return {{"type", "denoising_autoencoder"},
            {"latent_dim", latent_dim()},
            {"noise_std", noise_std},
            {"encoder", encoder.to_json()},
            {"decoder", decoder.to_json()},
            {"config", config.to_json()},
            {"seed", config.seed},
            {"history", history.to_json()}};
  }

  static DenoisingAutoencoder from_json(const nlohmann::json& j) {
    require(j.value("type", std::string()) == "denoising_autoencoder", ErrorCode::parse_error,
            "not a denoising_autoencoder document");
    DenoisingAutoencoder ae;
    ae.encoder = Network::from_json(j.at("encoder"));
    ae.decoder = Network::from_json(j.at("decoder"));
    ae.noise_std = j.at("noise_std").get<double>();
    ae.config = TrainConfig::from_json(j.at("config"));
    if (j.contains("history")) {
      const auto& h = j.at("history");
      ae.history.train_loss = h.at("train_loss").get<std::vector<double>>();
      ae.history.val_loss = h.at("val_loss").get<std::vector<double>>();
      ae.history.best_epoch = h.at("best_epoch").get<std::size_t>();
      ae.history.early_stopped = h.at("early_stopped").get<bool>();
    }
    require(ae.decoder.input_dim() == ae.encoder.output_dim() && ae.decoder.output_dim() == ae.encoder.input_dim(),
            ErrorCode::parse_error, "encoder and decoder shapes do not mirror");
    return ae;
  }
};

/// Trains on the clean matrix with noisy inputs; 10% of rows (seeded) are held
/// out for early stopping on clean reconstruction loss.
inline DenoisingAutoencoder ae_train(const Matrix& x, const TrainConfig& config, std::size_t latent_dim,
                                     double noise_std) {
  require(x.rows() >= 2, ErrorCode::empty_matrix, "autoencoder needs at least 2 rows");
  require(x.allFinite(), ErrorCode::non_finite_input, "autoencoder input contains NaN or infinity");
  std::vector<std::size_t> order(static_cast<std::size_t>(x.rows()));
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed(config.seed, 0xAE));
  rng.shuffle(std::span<std::size_t>(order));
  const std::size_t n_val = std::max<std::size_t>(1, order.size() / 10);
  const std::vector<std::size_t> val(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
  const std::vector<std::size_t> train(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
  const Matrix x_train = select_rows(x, train);
  const Matrix x_val = select_rows(x, val);

  auto ae = DenoisingAutoencoder::untrained(static_cast<std::size_t>(x.cols()), latent_dim, noise_std, config.seed);
  ae.config = config;
  Network joint = ae.joint();
  ae.history = train_network(joint, x_train, x_train, x_val, x_val, LossKind::mean_squared_error, config, noise_std);
  ae.split_joint(std::move(joint));
  return ae;
}

// ---------------------------------------------------------------------------
// Cross-validation and neuron-count grid search

/// Seeded permutation cut into `folds` contiguous blocks (sizes differ by <= 1).
inline std::vector<std::vector<std::size_t>> kfold_indices(std::size_t rows, std::size_t folds, std::uint64_t seed) {
  require(folds >= 2, ErrorCode::invalid_argument, "need at least 2 folds");
  std::vector<std::size_t> order(rows);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  rng.shuffle(std::span<std::size_t>(order));
  std::vector<std::vector<std::size_t>> out(folds);
  std::size_t pos = 0;
  for (std::size_t f = 0; f < folds; ++f) {
    const std::size_t size = rows / folds + (f < rows % folds ? 1 : 0);
    require(size >= 2, ErrorCode::fold_too_small,
            "fold " + std::to_string(f) + " would hold " + std::to_string(size) + " samples");
    out[f].assign(order.begin() + static_cast<std::ptrdiff_t>(pos),
                  order.begin() + static_cast<std::ptrdiff_t>(pos + size));
    pos += size;
  }
  return out;
}

struct FoldOutcome {
  double validation_accuracy = 0.0;
  double validation_loss = 0.0;
  double test_accuracy = 0.0;
  std::size_t epochs = 0;
};

struct FoldData {
  Matrix train_x, val_x, test_x;
  std::vector<int> train_y, val_y, test_y;
  std::uint64_t seed = 0;
};

/// Fold f is the held-out test block; the rest is split 90% / 10% into
/// training and validation data.
inline std::vector<FoldData> make_folds(const Matrix& x, const std::vector<int>& y, std::size_t folds,
                                        std::uint64_t seed) {
  require(static_cast<std::size_t>(x.rows()) == y.size(), ErrorCode::dimension_mismatch, "rows vs labels");
  const auto blocks = kfold_indices(y.size(), folds, derive_seed(seed, 0xF01D));
  std::vector<FoldData> out;
  for (std::size_t f = 0; f < folds; ++f) {
    std::vector<std::size_t> rest;
    for (std::size_t g = 0; g < folds; ++g) {
      if (g != f) rest.insert(rest.end(), blocks[g].begin(), blocks[g].end());
    }
    Rng rng(derive_seed(seed, f));
    rng.shuffle(std::span<std::size_t>(rest));
    const std::size_t n_val = std::max<std::size_t>(1, rest.size() / 10);
    const std::vector<std::size_t> val(rest.begin(), rest.begin() + static_cast<std::ptrdiff_t>(n_val));
    const std::vector<std::size_t> train(rest.begin() + static_cast<std::ptrdiff_t>(n_val), rest.end());
    FoldData d;
    d.train_x = select_rows(x, train);
    d.val_x = select_rows(x, val);
    d.test_x = select_rows(x, blocks[f]);
    d.train_y = select_items(y, train);
    d.val_y = select_items(y, val);
    d.test_y = select_items(y, blocks[f]);
    d.seed = derive_seed(seed, 1000 + f);
    out.push_back(std::move(d));
  }
  return out;
}

inline FoldOutcome evaluate_fold(const FoldData& fold, std::array<std::size_t, 2> hidden, TrainConfig config) {
  config.seed = fold.seed;
  const auto model = mlp_train(fold.train_x, fold.train_y, fold.val_x, fold.val_y, hidden, config);
  FoldOutcome o;
  o.validation_accuracy = model.accuracy(fold.val_x, fold.val_y);
  o.validation_loss = model.history.val_loss.at(model.history.best_epoch);
  o.test_accuracy = model.accuracy(fold.test_x, fold.test_y);
  o.epochs = model.history.epochs();
  return o;
}

struct CrossValidationResult {
  std::vector<double> fold_accuracies;
  double mean_accuracy = 0.0;
};

inline CrossValidationResult cross_validate(const Matrix& x, const std::vector<int>& y,
                                            std::array<std::size_t, 2> hidden, std::size_t folds,
                                            const TrainConfig& config) {
  CrossValidationResult r;
  for (const auto& fold : make_folds(x, y, folds, config.seed)) {
    r.fold_accuracies.push_back(evaluate_fold(fold, hidden, config).test_accuracy);
  }
  r.mean_accuracy = std::accumulate(r.fold_accuracies.begin(), r.fold_accuracies.end(), 0.0) /
                    static_cast<double>(r.fold_accuracies.size());
  return r;
}

/// How the per-fold winner is picked. `validation` uses the inner validation
/// split; `paper_protocol` picks by held-out test accuracy (optimistically
/// biased, kept for replication).
enum class SelectionProtocol { validation, paper_protocol };

struct GridCell {
  std::array<std::size_t, 2> hidden{};
  std::vector<FoldOutcome> folds;
};

struct GridSearchResult {
  std::array<std::size_t, 2> best_hidden{};
  std::size_t best_fold = 0;
  std::vector<std::array<std::size_t, 2>> chosen_per_fold;
  std::vector<double> fold_accuracies;  // test accuracy of each fold's chosen cell
  double mean_accuracy = 0.0;
  std::vector<GridCell> cells;
  SelectionProtocol protocol = SelectionProtocol::validation;

  nlohmann::json to_json() const {
    nlohmann::json table = nlohmann::json::array();
    for (const auto& c : cells) {
      nlohmann::json folds = nlohmann::json::array();
      double mean_test = 0.0;
      for (const auto& f : c.folds) {
        folds.push_back({{"validation_accuracy", f.validation_accuracy},
                         {"validation_loss", f.validation_loss},
                         {"test_accuracy", f.test_accuracy},
                         {"epochs", f.epochs}});
        mean_test += f.test_accuracy;
      }
      table.push_back({{"layer1", c.hidden[0]},
                       {"layer2", c.hidden[1]},
                       {"mean_test_accuracy", mean_test / static_cast<double>(c.folds.size())},
                       {"folds", folds}});
    }
    nlohmann::json chosen = nlohmann::json::array();
    for (const auto& h : chosen_per_fold) chosen.push_back({h[0], h[1]});
    return {{"best_layer1", best_hidden[0]},
            {"best_layer2", best_hidden[1]},
            {"best_fold", best_fold},
            {"chosen_per_fold", chosen},
            {"fold_accuracies", fold_accuracies},
            {"mean_accuracy", mean_accuracy},
            {"protocol", protocol == SelectionProtocol::validation ? "validation" : "paper-protocol"},
            {"grid", table}};
  }
};

inline std::vector<std::size_t> default_neuron_range() { return {5, 10, 15, 20, 25, 30, 35}; }

/// Every (h1, h2) pair from neuron_range x neuron_range is trained in every
/// fold. Each fold elects one pair; the fold with the best election score
/// supplies best_hidden and the mean of elected test accuracies is the
/// reported accuracy.
inline GridSearchResult grid_search_cv(const Matrix& x, const std::vector<int>& y,
                                       const std::vector<std::size_t>& neuron_range, std::size_t folds,
                                       const TrainConfig& config,
                                       SelectionProtocol protocol = SelectionProtocol::validation) {
  require(!neuron_range.empty(), ErrorCode::invalid_argument, "empty neuron range");
  const auto fold_data = make_folds(x, y, folds, config.seed);
  GridSearchResult result;
  result.protocol = protocol;
  for (std::size_t a : neuron_range) {
    for (std::size_t b : neuron_range) result.cells.push_back({{a, b}, {}});
  }
  for (auto& cell : result.cells) {
    for (const auto& fold : fold_data) cell.folds.push_back(evaluate_fold(fold, cell.hidden, config));
  }
  double best_score = -1.0;
  for (std::size_t f = 0; f < folds; ++f) {
    std::size_t chosen = 0;
    auto score = [&](std::size_t c) {
      const auto& o = result.cells[c].folds[f];
      return protocol == SelectionProtocol::paper_protocol ? o.test_accuracy : o.validation_accuracy;
    };
    for (std::size_t c = 1; c < result.cells.size(); ++c) {
      if (score(c) > score(chosen)) chosen = c;
    }
    result.chosen_per_fold.push_back(result.cells[chosen].hidden);
    result.fold_accuracies.push_back(result.cells[chosen].folds[f].test_accuracy);
    if (score(chosen) > best_score) {
      best_score = score(chosen);
      result.best_fold = f;
      result.best_hidden = result.cells[chosen].hidden;
    }
  }
  result.mean_accuracy = std::accumulate(result.fold_accuracies.begin(), result.fold_accuracies.end(), 0.0) /
                         static_cast<double>(folds);
  return result;
}

}  // namespace alime
