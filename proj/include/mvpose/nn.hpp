#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mvpose/tensor.hpp"

namespace mvpose::diff {

enum class Activation { linear, leaky_relu, sigmoid };

// Fully connected layer, y = act(x W^T + b).
struct DenseLayer {
  Tensor weight;  // [out, in]
  Tensor bias;    // [out]
  Activation activation = Activation::linear;
  double slope = 0.01;

  static DenseLayer make(int in, int out, Activation activation,
                         std::mt19937_64& rng, double slope = 0.01);
  Tensor forward(const Tensor& input) const;
  int in_features() const { return weight.cols(); }
  int out_features() const { return weight.rows(); }
};

struct Mlp {
  std::vector<DenseLayer> layers;

  // LeakyReLU hidden layers, linear output.
  static Mlp make(int in, const std::vector<int>& hidden, int out,
                  std::mt19937_64& rng, double slope = 0.01);
  Tensor forward(const Tensor& input) const;
  std::vector<Tensor> parameters() const;
  std::vector<std::pair<std::string, Tensor>> named_parameters() const;
};

// Neighbor lists in CSR form. Every node must carry a self-loop before a
// graph-attention forward pass.
struct GraphAdjacency {
  int num_nodes = 0;
  std::vector<int> offsets;    // size num_nodes + 1
  std::vector<int> sources;    // neighbor j for each (i, j) slot
  std::vector<int> targets;    // i repeated per neighbor slot
  bool self_loops = false;

  static GraphAdjacency from_lists(const std::vector<std::vector<int>>& neighbors);
};

// One multi-head graph-attention layer with the original additive scoring:
// e_ij = leaky_relu(a_dst . W h_i + a_src . W h_j), softmax over neighbors.
struct GatLayer {
  std::vector<Tensor> weight;    // per head, [in, out_per_head]
  std::vector<Tensor> attn_dst;  // per head, [out_per_head, 1]
  std::vector<Tensor> attn_src;  // per head, [out_per_head, 1]
  bool concat_heads = true;      // false: average (output layer)
  Activation activation = Activation::leaky_relu;
  double act_slope = 0.01;
  double attn_slope = 0.2;

  static GatLayer make(int in, int out_per_head, int heads, bool concat,
                       Activation activation, std::mt19937_64& rng);
  Tensor forward(const Tensor& node_features, const GraphAdjacency& adj) const;
  int heads() const { return static_cast<int>(weight.size()); }
  int in_features() const { return weight.front().rows(); }
  int out_per_head() const { return weight.front().cols(); }
  int out_features() const {
    return concat_heads ? heads() * out_per_head() : out_per_head();
  }
};

// Stacked GAT: LeakyReLU + head concatenation on hidden layers, a single
// sigmoid head on the output layer. forward_logits skips the final sigmoid
// so losses can work on logits.
struct Gat {
  std::vector<GatLayer> layers;

  static Gat make(int in, const std::vector<int>& hidden,
                  const std::vector<int>& heads, int out, std::mt19937_64& rng);
  Tensor forward(const Tensor& node_features, const GraphAdjacency& adj) const;
  Tensor forward_logits(const Tensor& node_features, const GraphAdjacency& adj) const;
  std::vector<Tensor> parameters() const;
  std::vector<std::pair<std::string, Tensor>> named_parameters() const;
};

// One row of a training-curve CSV.
struct TrainCurvePoint {
  int epoch = 0;
  double loss = 0.0;
  double val_metric = 0.0;
};

// On-disk parameter bundle. The arch block is compared verbatim on load-into-
// model so a checkpoint can never silently drive a mismatched network.
struct Checkpoint {
  nlohmann::json arch;
  std::map<std::string, std::vector<double>> params;

  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);

  static Checkpoint capture(
      const nlohmann::json& arch,
      const std::vector<std::pair<std::string, Tensor>>& named);
  // Throws CheckpointMismatch on any arch or shape difference.
  void restore(const nlohmann::json& expected_arch,
               const std::vector<std::pair<std::string, Tensor>>& named) const;
};

}  // namespace mvpose::diff
