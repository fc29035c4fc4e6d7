#pragma once

#include <algorithm>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "merlin/autodiff.hpp"
#include "merlin/corpus.hpp"
#include "merlin/io.hpp"
#include "merlin/matrix.hpp"
#include "merlin/nn.hpp"
#include "merlin/types.hpp"

namespace merlin::graph {

using ad::Param;
using ad::Tape;
using ad::Var;

// A contiguous price-sorted group of NFTs with the mean of their fused
// embeddings as node feature.
struct GroupNode {
  std::size_t id = 0;
  std::vector<std::string> members;  // in ascending average-price order
  std::vector<double> feature;
  ClassLabel label = ClassLabel::Low;
  double price_min = 0.0;
  double price_max = 0.0;
};

struct Edge {
  std::size_t u = 0, v = 0;  // u < v
  double weight = 0.0;
};

struct SimilarityGraph {
  std::vector<GroupNode> nodes;
  std::vector<Edge> edges;
  std::size_t k = 0;

  std::vector<std::vector<std::size_t>> adjacency() const {
    std::vector<std::vector<std::size_t>> adj(nodes.size());
    for (const Edge& e : edges) {
      adj[e.u].push_back(e.v);
      adj[e.v].push_back(e.u);
    }
    for (auto& nb : adj) std::sort(nb.begin(), nb.end());
    return adj;
  }
};

// ---------------------------------------------------------------------------
// Partition and kNN construction

// Sorts records ascending by average price (ties by id) and chunks them into
// groups of size l (last group may be smaller). Node label is the members'
// majority label, ties resolved by the median-price member.
inline std::vector<GroupNode> partition_by_price(
    const std::vector<const corpus::NftRecord*>& records,
    const std::map<std::string, ClassLabel>& labels,
    const std::map<std::string, Embedding>& fused, std::size_t l) {
  if (l == 0) throw ConfigError("partition_by_price: l must be positive");
  struct Entry {
    const corpus::NftRecord* rec;
    double avg;
  };
  std::vector<Entry> entries;
  entries.reserve(records.size());
  for (const corpus::NftRecord* r : records) entries.push_back({r, corpus::average_price(*r)});
  std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
    if (a.avg != b.avg) return a.avg < b.avg;
    return a.rec->id < b.rec->id;
  });

  std::vector<GroupNode> nodes;
  for (std::size_t start = 0; start < entries.size(); start += l) {
    std::size_t end = std::min(start + l, entries.size());
    GroupNode node;
    node.id = nodes.size();
    node.price_min = entries[start].avg;
    node.price_max = entries[end - 1].avg;

    std::size_t dim = 0;
    std::vector<std::size_t> class_count(kNumClasses, 0);
    for (std::size_t i = start; i < end; ++i) {
      const std::string& id = entries[i].rec->id;
      node.members.push_back(id);
      auto le = labels.find(id);
      if (le == labels.end()) throw DataError("partition_by_price: unlabeled record '" + id + "'");
      ++class_count[static_cast<std::size_t>(le->second)];
      auto fe = fused.find(id);
      if (fe == fused.end())
        throw DataError("partition_by_price: missing embedding for '" + id + "'");
      if (dim == 0) {
        dim = fe->second.dim();
        node.feature.assign(dim, 0.0);
      }
      if (fe->second.dim() != dim) throw DataError("partition_by_price: embedding dim mismatch");
      for (std::size_t j = 0; j < dim; ++j) node.feature[j] += fe->second.values[j];
    }
    double inv = 1.0 / static_cast<double>(end - start);
    for (double& x : node.feature) x *= inv;

    std::size_t best = 0;
    bool tie = false;
    for (std::size_t c = 1; c < class_count.size(); ++c) {
      if (class_count[c] > class_count[best]) {
        best = c;
        tie = false;
      } else if (class_count[c] == class_count[best]) {
        tie = true;
      }
    }
    if (tie) {
      // Majority tie: take the label of the median member in price order.
      const std::string& mid_id = node.members[(node.members.size() - 1) / 2];
      node.label = labels.at(mid_id);
    } else {
      node.label = static_cast<ClassLabel>(static_cast<int>(best));
    }
    nodes.push_back(std::move(node));
  }
  return nodes;
}

// Top-k cosine neighbors per node (ties by lower node id), symmetrized into
// an undirected edge set with the cosine weight.
inline SimilarityGraph build_knn_graph(std::vector<GroupNode> nodes, std::size_t k) {
  if (k == 0) throw ConfigError("build_knn_graph: k must be >= 1");
  if (k >= nodes.size())
    throw ConfigError("build_knn_graph: k=" + std::to_string(k) + " requires more than " +
                      std::to_string(nodes.size()) + " nodes");
  for (const GroupNode& n : nodes)
    if (norm2(n.feature) == 0.0)
      throw NumericError("build_knn_graph: node " + std::to_string(n.id) +
                         " has a zero feature vector");

  SimilarityGraph g;
  g.k = k;
  std::map<std::pair<std::size_t, std::size_t>, double> edge_weights;
  for (std::size_t u = 0; u < nodes.size(); ++u) {
    std::vector<std::pair<double, std::size_t>> sims;
    sims.reserve(nodes.size() - 1);
    for (std::size_t v = 0; v < nodes.size(); ++v) {
      if (v == u) continue;
      sims.emplace_back(cosine_similarity(nodes[u].feature, nodes[v].feature), v);
    }
    std::sort(sims.begin(), sims.end(), [](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first > b.first;
      return a.second < b.second;
    });
    for (std::size_t i = 0; i < k; ++i) {
      std::size_t v = sims[i].second;
      auto key = std::minmax(u, v);
      edge_weights[{key.first, key.second}] = sims[i].first;
    }
  }
  for (const auto& [uv, w] : edge_weights) g.edges.push_back({uv.first, uv.second, w});
  g.nodes = std::move(nodes);
  return g;
}

// ---------------------------------------------------------------------------
// GATv2

struct GatLayerConfig {
  std::size_t in_dim = 0;
  std::size_t out_dim = 0;  // per head
  std::size_t heads = 4;
  bool concat_heads = true;  // false: average heads
  bool relu_output = true;   // false: raw logits
  double leaky_slope = 0.2;
  double dropout = 0.5;  // on attention coefficients, training only
};

struct GatLayer {
  GatLayerConfig cfg;
  std::vector<Param> head_weight;  // in_dim x out_dim per head
  std::vector<Param> attn_src;     // out_dim x 1 per head
  std::vector<Param> attn_dst;     // out_dim x 1 per head

  GatLayer() = default;
  GatLayer(const std::string& prefix, const GatLayerConfig& c, std::uint64_t seed) : cfg(c) {
    for (std::size_t h = 0; h < c.heads; ++h) {
      std::string hp = prefix + ".head" + std::to_string(h);
      head_weight.push_back(nn::xavier_linear(hp + ".weight", c.in_dim, c.out_dim, seed));
      attn_src.push_back(nn::xavier_linear(hp + ".attn_src", c.out_dim, 1, seed));
      attn_dst.push_back(nn::xavier_linear(hp + ".attn_dst", c.out_dim, 1, seed));
    }
  }

  void collect(std::vector<Param*>& out) {
    for (auto& p : head_weight) out.push_back(&p);
    for (auto& p : attn_src) out.push_back(&p);
    for (auto& p : attn_dst) out.push_back(&p);
  }
};

// Flat edge arrays with self-loops, grouped by source node; targets sorted
// ascending within each group.
struct EdgeIndex {
  std::vector<std::size_t> src;
  std::vector<std::size_t> dst;

  static EdgeIndex with_self_loops(const SimilarityGraph& g) {
    EdgeIndex idx;
    auto adj = g.adjacency();
    for (std::size_t u = 0; u < g.nodes.size(); ++u) {
      std::vector<std::size_t> targets = adj[u];
      targets.push_back(u);
      std::sort(targets.begin(), targets.end());
      for (std::size_t v : targets) {
        idx.src.push_back(u);
        idx.dst.push_back(v);
      }
    }
    return idx;
  }
};

// One GATv2-scored attention layer. Per head: e_uv = a_src . lrelu(W x_u) +
// a_dst . lrelu(W x_v) (the split form of a . LeakyReLU(W x_u concat W x_v)),
// softmax over each node's neighborhood including the self-loop, aggregation
// of W x_v. Cosine edge weights do not enter the attention.
inline Var gatv2_layer(Tape& t, const EdgeIndex& edges, std::size_t n_nodes, Var x,
                       GatLayer& layer, bool training, Rng& rng) {
  std::vector<Var> head_out;
  for (std::size_t h = 0; h < layer.cfg.heads; ++h) {
    Var xw = t.matmul(x, t.leaf(layer.head_weight[h]));
    Var lrelu = t.leaky_relu(xw, layer.cfg.leaky_slope);
    Var score_src = t.matmul(lrelu, t.leaf(layer.attn_src[h]));  // n x 1
    Var score_dst = t.matmul(lrelu, t.leaf(layer.attn_dst[h]));  // n x 1
    Var e = t.add(t.gather_rows(score_src, edges.src), t.gather_rows(score_dst, edges.dst));
    Var alpha = t.segment_softmax(e, edges.src);
    if (training && layer.cfg.dropout > 0.0) alpha = t.dropout(alpha, layer.cfg.dropout, rng);
    Var messages = t.mul_colvec(t.gather_rows(xw, edges.dst), alpha);
    head_out.push_back(t.segment_sum(messages, edges.src, n_nodes));
  }
  Var combined;
  if (layer.cfg.concat_heads) {
    combined = head_out[0];
    for (std::size_t h = 1; h < head_out.size(); ++h)
      combined = t.concat_cols(combined, head_out[h]);
  } else {
    combined = head_out[0];
    for (std::size_t h = 1; h < head_out.size(); ++h) combined = t.add(combined, head_out[h]);
    combined = t.scale(combined, 1.0 / static_cast<double>(head_out.size()));
  }
  return layer.cfg.relu_output ? t.relu(combined) : combined;
}

// Two-layer network: hidden layer with concatenated heads and ReLU, output
// layer with averaged heads yielding class logits.
struct GatNetwork {
  GatLayer layer1;
  GatLayer layer2;

  GatNetwork() = default;
  GatNetwork(const std::string& prefix, std::size_t in_dim, std::size_t hidden_per_head,
             std::size_t heads, double dropout, std::uint64_t seed) {
    GatLayerConfig c1{in_dim, hidden_per_head, heads, true, true, 0.2, dropout};
    GatLayerConfig c2{hidden_per_head * heads, static_cast<std::size_t>(kNumClasses), heads,
                      false, false, 0.2, dropout};
    layer1 = GatLayer(prefix + ".layer1", c1, seed);
    layer2 = GatLayer(prefix + ".layer2", c2, seed);
  }

  void collect(std::vector<Param*>& out) {
    layer1.collect(out);
    layer2.collect(out);
  }

  struct Forward {
    Var hidden;      // n x (heads * hidden)
    Var log_probs;   // n x 3
  };

  Forward forward(Tape& t, const SimilarityGraph& g, Var x, bool training, Rng& rng) {
    EdgeIndex edges = EdgeIndex::with_self_loops(g);
    Forward f;
    f.hidden = gatv2_layer(t, edges, g.nodes.size(), x, layer1, training, rng);
    Var logits = gatv2_layer(t, edges, g.nodes.size(), f.hidden, layer2, training, rng);
    f.log_probs = t.log_softmax_rows(logits);
    return f;
  }
};

inline Matrix node_feature_matrix(const SimilarityGraph& g) {
  if (g.nodes.empty()) throw DataError("node_feature_matrix: empty graph");
  std::size_t dim = g.nodes[0].feature.size();
  Matrix x(g.nodes.size(), dim);
  for (std::size_t i = 0; i < g.nodes.size(); ++i) {
    if (g.nodes[i].feature.size() != dim)
      throw DataError("node_feature_matrix: inconsistent feature dims");
    for (std::size_t j = 0; j < dim; ++j) x(i, j) = g.nodes[i].feature[j];
  }
  return x;
}

struct GatPrediction {
  Matrix probabilities;  // n x 3
  Matrix hidden;         // n x (heads * hidden), the learned node features
};

inline GatPrediction gat_predict(GatNetwork& net, const SimilarityGraph& g) {
  Tape t;
  Rng rng(0);
  Var x = t.input(node_feature_matrix(g));
  auto f = net.forward(t, g, x, false, rng);
  GatPrediction out;
  out.hidden = t.value(f.hidden);
  const Matrix& lp = t.value(f.log_probs);
  out.probabilities = Matrix(lp.rows(), lp.cols());
  for (std::size_t i = 0; i < lp.rows(); ++i)
    for (std::size_t j = 0; j < lp.cols(); ++j) out.probabilities(i, j) = std::exp(lp(i, j));
  return out;
}

inline ClassLabel row_argmax(const Matrix& probs, std::size_t row) {
  std::size_t best = 0;
  for (std::size_t j = 1; j < probs.cols(); ++j)
    if (probs(row, j) > probs(row, best)) best = j;
  return static_cast<ClassLabel>(static_cast<int>(best));
}

// Every member NFT inherits its node's predicted class.
inline std::map<std::string, ClassLabel> predict_members(const SimilarityGraph& g,
                                                         const std::vector<ClassLabel>& node_preds) {
  if (node_preds.size() != g.nodes.size())
    throw DataError("predict_members: prediction count mismatch");
  std::map<std::string, ClassLabel> preds;
  for (std::size_t i = 0; i < g.nodes.size(); ++i)
    for (const std::string& id : g.nodes[i].members) preds[id] = node_preds[i];
  return preds;
}

// ---------------------------------------------------------------------------
// Query attachment (single-NFT inference)

// Links a singleton node holding the query embedding to its k most similar
// existing nodes. detach_query restores the original graph.
inline std::size_t attach_query(SimilarityGraph& g, const Embedding& query, std::size_t k) {
  if (k == 0 || k > g.nodes.size()) throw ConfigError("attach_query: bad k");
  if (norm2(query.values) == 0.0) throw NumericError("attach_query: zero query embedding");
  GroupNode node;
  node.id = g.nodes.size();
  node.members = {"<query>"};
  node.feature = query.values;
  std::vector<std::pair<double, std::size_t>> sims;
  for (std::size_t v = 0; v < g.nodes.size(); ++v)
    sims.emplace_back(cosine_similarity(query.values, g.nodes[v].feature), v);
  std::sort(sims.begin(), sims.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  std::size_t qid = node.id;
  g.nodes.push_back(std::move(node));
  for (std::size_t i = 0; i < k; ++i) g.edges.push_back({sims[i].second, qid, sims[i].first});
  return qid;
}

inline void detach_query(SimilarityGraph& g, std::size_t query_id) {
  if (query_id + 1 != g.nodes.size())
    throw DataError("detach_query: only the most recently attached query can be removed");
  std::erase_if(g.edges, [&](const Edge& e) { return e.u == query_id || e.v == query_id; });
  g.nodes.pop_back();
}

// ---------------------------------------------------------------------------
// JSON export

inline nlohmann::json graph_to_json(const SimilarityGraph& g) {
  nlohmann::json j;
  j["k"] = g.k;
  j["nodes"] = nlohmann::json::array();
  for (const GroupNode& n : g.nodes) {
    nlohmann::json jn;
    jn["id"] = n.id;
    jn["members"] = n.members;
    jn["label"] = label_name(n.label);
    jn["price_range"] = {n.price_min, n.price_max};
    jn["feature"] = n.feature;
    j["nodes"].push_back(jn);
  }
  j["edges"] = nlohmann::json::array();
  for (const Edge& e : g.edges) {
    nlohmann::json je;
    je["u"] = e.u;
    je["v"] = e.v;
    je["w"] = e.weight;
    j["edges"].push_back(je);
  }
  return j;
}

inline SimilarityGraph graph_from_json(const nlohmann::json& j) {
  SimilarityGraph g;
  g.k = j.at("k").get<std::size_t>();
  for (const auto& jn : j.at("nodes")) {
    GroupNode n;
    n.id = jn.at("id").get<std::size_t>();
    n.members = jn.at("members").get<std::vector<std::string>>();
    n.label = label_from_name(jn.at("label").get<std::string>());
    n.price_min = jn.at("price_range")[0].get<double>();
    n.price_max = jn.at("price_range")[1].get<double>();
    if (jn.contains("feature")) n.feature = jn.at("feature").get<std::vector<double>>();
    g.nodes.push_back(std::move(n));
  }
  for (const auto& je : j.at("edges"))
    g.edges.push_back({je.at("u").get<std::size_t>(), je.at("v").get<std::size_t>(),
                       je.at("w").get<double>()});
  return g;
}

}  // namespace merlin::graph
