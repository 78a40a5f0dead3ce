#include "mvpose/nn.hpp"

#include <cmath>
#include <fstream>

namespace mvpose::diff {

namespace {

Tensor apply_activation(const Tensor& x, Activation activation, double slope) {
  switch (activation) {
    case Activation::linear:
      return x;
    case Activation::leaky_relu:
      return leaky_relu(x, slope);
    case Activation::sigmoid:
      return sigmoid(x);
  }
  throw Error("unknown activation");
}

}  // namespace

DenseLayer DenseLayer::make(int in, int out, Activation activation,
                            std::mt19937_64& rng, double slope) {
  DenseLayer layer;
  layer.weight = Tensor::zeros({out, in}, true);
  layer.bias = Tensor::zeros({out}, true);
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  layer.weight.fill_uniform(rng, bound);
  layer.bias.fill_uniform(rng, bound);
  layer.activation = activation;
  layer.slope = slope;
  return layer;
}

Tensor DenseLayer::forward(const Tensor& input) const {
  if (input.cols() != in_features()) {
    throw ShapeMismatch("dense forward: input width " +
                        std::to_string(input.cols()) + " != " +
                        std::to_string(in_features()));
  }
  return apply_activation(linear(input, weight, bias), activation, slope);
}

Mlp Mlp::make(int in, const std::vector<int>& hidden, int out,
              std::mt19937_64& rng, double slope) {
  Mlp mlp;
  int width = in;
  for (int h : hidden) {
    mlp.layers.push_back(
        DenseLayer::make(width, h, Activation::leaky_relu, rng, slope));
    width = h;
  }
  mlp.layers.push_back(DenseLayer::make(width, out, Activation::linear, rng, slope));
  return mlp;
}

Tensor Mlp::forward(const Tensor& input) const {
  Tensor x = input;
  for (const DenseLayer& layer : layers) {
    x = layer.forward(x);
  }
  return x;
}

std::vector<Tensor> Mlp::parameters() const {
  std::vector<Tensor> params;
  for (const DenseLayer& layer : layers) {
    params.push_back(layer.weight);
    params.push_back(layer.bias);
  }
  return params;
}

std::vector<std::pair<std::string, Tensor>> Mlp::named_parameters() const {
  std::vector<std::pair<std::string, Tensor>> named;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    named.emplace_back("mlp." + std::to_string(l) + ".weight", layers[l].weight);
    named.emplace_back("mlp." + std::to_string(l) + ".bias", layers[l].bias);
  }
  return named;
}

GraphAdjacency GraphAdjacency::from_lists(
    const std::vector<std::vector<int>>& neighbors) {
  GraphAdjacency adj;
  adj.num_nodes = static_cast<int>(neighbors.size());
  adj.offsets.reserve(neighbors.size() + 1);
  adj.offsets.push_back(0);
  adj.self_loops = true;
  for (int i = 0; i < adj.num_nodes; ++i) {
    bool self = false;
    for (int j : neighbors[i]) {
      if (j < 0 || j >= adj.num_nodes) {
        throw ShapeMismatch("adjacency: neighbor index out of range");
      }
      adj.sources.push_back(j);
      adj.targets.push_back(i);
      self = self || j == i;
    }
    adj.self_loops = adj.self_loops && self;
    adj.offsets.push_back(static_cast<int>(adj.sources.size()));
  }
  return adj;
}

GatLayer GatLayer::make(int in, int out_per_head, int heads, bool concat,
                        Activation activation, std::mt19937_64& rng) {
  GatLayer layer;
  layer.concat_heads = concat;
  layer.activation = activation;
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  const double attn_bound = 1.0 / std::sqrt(static_cast<double>(out_per_head));
  for (int h = 0; h < heads; ++h) {
    Tensor w = Tensor::zeros({in, out_per_head}, true);
    w.fill_uniform(rng, bound);
    Tensor a_dst = Tensor::zeros({out_per_head, 1}, true);
    Tensor a_src = Tensor::zeros({out_per_head, 1}, true);
    a_dst.fill_uniform(rng, attn_bound);
    a_src.fill_uniform(rng, attn_bound);
    layer.weight.push_back(std::move(w));
    layer.attn_dst.push_back(std::move(a_dst));
    layer.attn_src.push_back(std::move(a_src));
  }
  return layer;
}

Tensor GatLayer::forward(const Tensor& node_features,
                         const GraphAdjacency& adj) const {
  if (node_features.rows() != adj.num_nodes) {
    throw ShapeMismatch("gat forward: node count mismatch");
  }
  if (node_features.cols() != in_features()) {
    throw ShapeMismatch("gat forward: feature width " +
                        std::to_string(node_features.cols()) + " != " +
                        std::to_string(in_features()));
  }
  if (!adj.self_loops) {
    throw MissingSelfLoop("gat forward: every node needs a self-loop");
  }
  std::vector<Tensor> head_outputs;
  head_outputs.reserve(weight.size());
  for (std::size_t h = 0; h < weight.size(); ++h) {
    const Tensor projected = matmul(node_features, weight[h]);  // [N, out_h]
    const Tensor score_dst = matmul(projected, attn_dst[h]);    // [N, 1]
    const Tensor score_src = matmul(projected, attn_src[h]);    // [N, 1]
    const Tensor edge_scores =
        leaky_relu(add(row_gather(score_dst, adj.targets),
                       row_gather(score_src, adj.sources)),
                   attn_slope);
    const Tensor attention = segment_softmax(edge_scores, adj.offsets);
    const Tensor messages =
        scale_rows(row_gather(projected, adj.sources), attention);
    head_outputs.push_back(segment_sum_rows(messages, adj.offsets));
  }
  Tensor combined;
  if (concat_heads) {
    combined = head_outputs.size() == 1 ? head_outputs.front()
                                        : concat_cols(head_outputs);
  } else {
    combined = head_outputs.size() == 1
                   ? head_outputs.front()
                   : scale(add_n(head_outputs),
                           1.0 / static_cast<double>(head_outputs.size()));
  }
  return apply_activation(combined, activation, act_slope);
}

Gat Gat::make(int in, const std::vector<int>& hidden,
              const std::vector<int>& heads, int out, std::mt19937_64& rng) {
  if (hidden.size() != heads.size()) {
    throw ShapeMismatch("gat make: hidden and head lists differ in length");
  }
  Gat gat;
  int width = in;
  for (std::size_t l = 0; l < hidden.size(); ++l) {
    GatLayer layer = GatLayer::make(width, hidden[l], heads[l], true,
                                    Activation::leaky_relu, rng);
    width = layer.out_features();
    gat.layers.push_back(std::move(layer));
  }
  gat.layers.push_back(
      GatLayer::make(width, out, 1, false, Activation::linear, rng));
  return gat;
}

Tensor Gat::forward(const Tensor& node_features, const GraphAdjacency& adj) const {
  return sigmoid(forward_logits(node_features, adj));
}

Tensor Gat::forward_logits(const Tensor& node_features,
                           const GraphAdjacency& adj) const {
  Tensor x = node_features;
  for (const GatLayer& layer : layers) {
    x = layer.forward(x, adj);
  }
  return x;
}

std::vector<Tensor> Gat::parameters() const {
  std::vector<Tensor> params;
  for (const GatLayer& layer : layers) {
    for (std::size_t h = 0; h < layer.weight.size(); ++h) {
      params.push_back(layer.weight[h]);
      params.push_back(layer.attn_dst[h]);
      params.push_back(layer.attn_src[h]);
    }
  }
  return params;
}

std::vector<std::pair<std::string, Tensor>> Gat::named_parameters() const {
  std::vector<std::pair<std::string, Tensor>> named;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const GatLayer& layer = layers[l];
    for (std::size_t h = 0; h < layer.weight.size(); ++h) {
      const std::string prefix =
          "gat." + std::to_string(l) + ".head." + std::to_string(h) + ".";
      named.emplace_back(prefix + "weight", layer.weight[h]);
      named.emplace_back(prefix + "attn_dst", layer.attn_dst[h]);
      named.emplace_back(prefix + "attn_src", layer.attn_src[h]);
    }
  }
  return named;
}

void Checkpoint::save(const std::filesystem::path& path) const {
  nlohmann::json doc;
  doc["format_version"] = 1;
  doc["arch"] = arch;
  nlohmann::json params_node = nlohmann::json::object();
  for (const auto& [name, values] : params) {
    params_node[name] = values;
  }
  doc["params"] = std::move(params_node);
  std::ofstream out(path);
  if (!out) {
    throw Error("cannot write checkpoint " + path.string());
  }
  out << doc.dump() << "\n";
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw Error("cannot read checkpoint " + path.string());
  }
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& err) {
    throw SchemaError(0, "", std::string("checkpoint parse error: ") + err.what());
  }
  if (!doc.contains("format_version") || doc["format_version"].get<int>() != 1) {
    throw CheckpointMismatch("unsupported checkpoint format_version");
  }
  if (!doc.contains("arch") || !doc.contains("params") ||
      !doc["params"].is_object()) {
    throw SchemaError(0, "arch", "checkpoint missing arch or params");
  }
  Checkpoint ckpt;
  ckpt.arch = doc["arch"];
  for (const auto& [name, values] : doc["params"].items()) {
    if (!values.is_array()) {
      throw SchemaError(0, "params." + name, "expected a flat array");
    }
    ckpt.params[name] = values.get<std::vector<double>>();
  }
  return ckpt;
}

Checkpoint Checkpoint::capture(
    const nlohmann::json& arch,
    const std::vector<std::pair<std::string, Tensor>>& named) {
  Checkpoint ckpt;
  ckpt.arch = arch;
  for (const auto& [name, tensor] : named) {
    ckpt.params[name] = tensor.values();
  }
  return ckpt;
}

void Checkpoint::restore(
    const nlohmann::json& expected_arch,
    const std::vector<std::pair<std::string, Tensor>>& named) const {
  if (arch != expected_arch) {
    throw CheckpointMismatch("checkpoint arch differs from the constructed network: " +
                             arch.dump() + " vs " + expected_arch.dump());
  }
  if (params.size() != named.size()) {
    throw CheckpointMismatch("checkpoint parameter count differs");
  }
  for (const auto& [name, tensor] : named) {
    const auto it = params.find(name);
    if (it == params.end()) {
      throw CheckpointMismatch("checkpoint missing parameter '" + name + "'");
    }
    if (static_cast<long>(it->second.size()) != tensor.size()) {
      throw CheckpointMismatch("checkpoint parameter '" + name +
                               "' has the wrong size");
    }
    std::copy(it->second.begin(), it->second.end(),
              const_cast<Tensor&>(tensor).data());
  }
}

}  // namespace mvpose::diff
