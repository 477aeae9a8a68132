#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "l2d/datagen.hpp"
#include "l2d/random.hpp"

namespace l2d::nn {

// ---------------------------------------------------------------------------
// Reverse-mode differentiation

/// Records operations on dense matrices and replays them backwards.
class Tape {
 public:
  using Var = int;

  Var leaf(Matrix value);
  const Matrix& value(Var v) const { return nodes_[v].value; }
  /// Valid after backward(); zero for nodes the loss does not depend on.
  const Matrix& grad(Var v) const { return nodes_[v].grad; }
  int size() const { return static_cast<int>(nodes_.size()); }

  /// With rowwise_exact, each output row is rounded independently of the
  /// other rows, so permuting rows of a permutes the result exactly.
  Var matmul(Var a, Var b, bool rowwise_exact = false);
  Var add(Var a, Var b);
  /// Adds a 1 x F row to every row of a.
  Var add_bias(Var a, Var bias);
  /// Applies S to every N-row block of a (B*N) x F matrix.
  Var shift(const Matrix& S, Var a);
  Var relu(Var a);
  Var tanh(Var a);
  /// Inverted dropout; the mask is drawn from rng.
  Var dropout(Var a, double p, Rng& rng);
  /// Mean squared error over entries where mask is true. Throws DataError
  /// when the mask is empty.
  Var masked_mse(Var pred, const Matrix& target, const BoolMatrix& mask);

  void backward(Var loss);

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    std::function<void()> back;
  };
  Var push(Matrix value, std::function<void()> back);
  std::vector<Node> nodes_;
};

// ---------------------------------------------------------------------------
// Models

enum class Family { fcnn, gnn };
enum class Activation { relu, tanh, identity };

const char* to_string(Family f) noexcept;
const char* to_string(Activation a) noexcept;
Family parse_family(const std::string& text);
Activation parse_activation(const std::string& text);

struct ModelConfig {
  Family family = Family::fcnn;
  /// Hidden widths (fcnn) or graph-layer feature widths (gnn).
  std::vector<int> widths{128, 128};
  Activation activation = Activation::relu;
  double dropout = 0.0;
  /// Polynomial order of the graph filter, per graph layer.
  int taps = 3;

  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

/// Normalized adjacency built from series admittance magnitudes.
Matrix build_shift_operator(const Grid& grid);

struct Model {
  ModelConfig config;
  int buses = 0;
  Matrix shift;  // gnn only
  std::vector<Matrix> params;
  /// Input standardization applied before the first layer (N x 5). The gnn
  /// shares one row across buses.
  Matrix input_mean;
  Matrix input_std;
  NormStats norm;  // target statistics for denormalization
  std::uint64_t seed = 0;

  /// Names of the parameter tensors, in params order.
  std::vector<std::string> param_names() const;
  long param_count() const;
};

/// Seeded uniform fan-in initialization.
Model make_model(const ModelConfig& config, const Grid& grid, std::uint64_t seed);

/// Batched network inputs, targets and masks in the layout of a model family.
struct Batch {
  Matrix inputs;
  Matrix targets;
  BoolMatrix mask;
};
Batch make_batch(const Model& model, const std::vector<const LabeledRow*>& rows);
Matrix pack_inputs(const Model& model, const std::vector<const InputVector*>& xs);

/// Builds the forward graph on `tape`. `param_vars` receives one leaf per
/// parameter tensor. `rng` is used by dropout when train is true.
Tape::Var build_forward(const Model& model, Tape& tape, const Matrix& inputs, bool train, Rng* rng,
                        std::vector<Tape::Var>& param_vars);

/// Network output for one input, N x 2, in normalized target space (eval mode).
Matrix forward(const Model& model, const InputVector& x);
/// Eval-mode outputs for many inputs.
std::vector<Matrix> forward_many(const Model& model, const std::vector<const InputVector*>& xs);
/// Prediction in physical units with the control mask applied.
ControlVector predict(const Model& model, const Grid& grid, const InputVector& x);

struct LossAndGrad {
  double loss = 0.0;
  std::vector<Matrix> grads;
};
LossAndGrad loss_and_gradient(const Model& model, const Batch& batch, bool train = false,
                              std::uint64_t dropout_seed = 0);
/// Masked loss of the model on the rows, eval mode, in normalized space.
double evaluate_loss(const Model& model, const std::vector<const LabeledRow*>& rows);

/// Fits input standardization to the training rows and copies the target
/// statistics from the dataset.
void fit_normalization(Model& model, const LabeledDataset& data);

// ---------------------------------------------------------------------------
// Training

struct TrainOptions {
  double learning_rate = 1e-3;
  double weight_decay = 1e-4;
  int batch_size = 64;
  int patience = 20;
  int max_epochs = 500;
  std::uint64_t seed = 0;

  bool operator==(const TrainOptions&) const = default;
};

struct TrainReport {
  std::vector<double> train_loss;  // eval-mode loss after each epoch, index 0 = before training
  std::vector<double> val_loss;
  int best_epoch = 0;
  int stop_epoch = 0;
  double best_val = 0.0;
  bool diverged = false;
  std::string note;
  TrainOptions options;
  ModelConfig config;

  bool operator==(const TrainReport&) const = default;
};

/// Adam with decoupled weight decay and early stopping on the validation
/// loss. The model ends at the best-validation snapshot.
TrainReport train(Model& model, const LabeledDataset& data, const TrainOptions& options);

struct HyperSpace {
  std::vector<std::vector<int>> widths;
  std::vector<Activation> activations;
  std::vector<double> dropout;
  std::vector<int> taps;
  std::vector<double> learning_rate;
  std::vector<double> weight_decay;
  std::vector<int> batch_size;

  static HyperSpace single(const ModelConfig& config, const TrainOptions& options);
};

struct Trial {
  ModelConfig config;
  TrainOptions options;
  double best_val = 0.0;
  int best_epoch = 0;
};

struct SearchResult {
  Trial best;
  std::vector<Trial> trials;
};

/// Seeded random search. Family, epoch budget and patience come from `base`.
SearchResult hyper_search(const Grid& grid, const LabeledDataset& data, const HyperSpace& space,
                          const ModelConfig& base_config, const TrainOptions& base_options,
                          int budget, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Checkpoints

nlohmann::json to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const TrainOptions& options);
TrainOptions train_options_from_json(const nlohmann::json& j);
nlohmann::json to_json(const TrainReport& report);
nlohmann::json to_json(const HyperSpace& space);
HyperSpace hyper_space_from_json(const nlohmann::json& j);

void save_checkpoint(const std::filesystem::path& path, const Model& model,
                     const nlohmann::json& manifest = nlohmann::json::object());
Model load_checkpoint(const std::filesystem::path& path);

}  // namespace l2d::nn
