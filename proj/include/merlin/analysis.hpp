#pragma once

#include <algorithm>
#include <cmath>
#include <deque>
#include <functional>
#include <map>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "merlin/errors.hpp"
#include "merlin/rng.hpp"
#include "merlin/stage2.hpp"

namespace merlin::analysis {

// ---------------------------------------------------------------------------
// Louvain community detection (weighted modularity, deterministic sweeps)

struct LouvainResult {
  std::vector<std::size_t> community;  // node -> community id, 0..count-1
  double modularity = 0.0;
  std::size_t community_count = 0;
};

namespace detail {

struct LevelGraph {
  std::size_t n = 0;
  std::vector<std::vector<std::pair<std::size_t, double>>> adj;  // no self entries
  std::vector<double> self_weight;  // self-loop weight, counted once
  double total_weight = 0.0;        // sum of edge weights incl. self-loops, each once

  std::vector<double> node_strength() const {
    std::vector<double> k(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      for (const auto& [j, w] : adj[i]) k[i] += w;
      k[i] += 2.0 * self_weight[i];
    }
    return k;
  }
};

inline LevelGraph level_from_graph(const graph::SimilarityGraph& g) {
  LevelGraph lg;
  lg.n = g.nodes.size();
  lg.adj.resize(lg.n);
  lg.self_weight.assign(lg.n, 0.0);
  for (const graph::Edge& e : g.edges) {
    lg.adj[e.u].emplace_back(e.v, e.weight);
    lg.adj[e.v].emplace_back(e.u, e.weight);
    lg.total_weight += e.weight;
  }
  return lg;
}

// Modularity of a partition: sum over communities of e_c/m - (d_c/2m)^2.
inline double partition_modularity(const LevelGraph& lg, const std::vector<std::size_t>& comm) {
  double m = lg.total_weight;
  if (m <= 0.0) throw NumericError("modularity: non-positive total edge weight");
  std::map<std::size_t, double> intra, degree;
  std::vector<double> k = lg.node_strength();
  for (std::size_t i = 0; i < lg.n; ++i) {
    degree[comm[i]] += k[i];
    intra[comm[i]] += lg.self_weight[i];
    for (const auto& [j, w] : lg.adj[i])
      if (comm[j] == comm[i] && i < j) intra[comm[i]] += w;
  }
  double q = 0.0;
  for (const auto& [c, e_c] : intra) q += e_c / m - (degree[c] / (2.0 * m)) * (degree[c] / (2.0 * m));
  for (const auto& [c, d_c] : degree)
    if (!intra.count(c)) q -= (d_c / (2.0 * m)) * (d_c / (2.0 * m));
  return q;
}

// One sweep phase: move nodes (ascending id) to the neighboring community
// with the highest modularity gain until no move gains more than 1e-9.
inline bool one_level(const LevelGraph& lg, std::vector<std::size_t>& comm) {
  constexpr double kMinGain = 1e-9;
  double m = lg.total_weight;
  std::vector<double> k = lg.node_strength();
  std::vector<double> sum_tot(lg.n, 0.0);
  for (std::size_t i = 0; i < lg.n; ++i) sum_tot[comm[i]] += k[i];

  bool any_move = false;
  bool improved = true;
  while (improved) {
    improved = false;
    for (std::size_t i = 0; i < lg.n; ++i) {
      std::size_t old_c = comm[i];
      std::map<std::size_t, double> links;  // community -> weight from i
      links[old_c] += 0.0;
      for (const auto& [j, w] : lg.adj[i]) links[comm[j]] += w;

      sum_tot[old_c] -= k[i];
      auto score = [&](std::size_t c) {
        double l = 0.0;
        if (auto it = links.find(c); it != links.end()) l = it->second;
        return l / m - sum_tot[c] * k[i] / (2.0 * m * m);
      };
      double base = score(old_c);
      // links is keyed ascending, so strict > keeps the lowest community
      // among exact gain ties.
      std::size_t best_c = old_c;
      double best_gain = kMinGain;
      for (const auto& [c, _] : links) {
        if (c == old_c) continue;
        double gain = score(c) - base;
        if (gain > best_gain) {
          best_gain = gain;
          best_c = c;
        }
      }
      sum_tot[best_c] += k[i];
      if (best_c != old_c) {
        comm[i] = best_c;
        improved = true;
        any_move = true;
      }
    }
  }
  return any_move;
}

inline std::vector<std::size_t> renumber(const std::vector<std::size_t>& comm) {
  std::map<std::size_t, std::size_t> remap;
  std::vector<std::size_t> out(comm.size());
  for (std::size_t i = 0; i < comm.size(); ++i) {
    auto [it, inserted] = remap.emplace(comm[i], remap.size());
    out[i] = it->second;
  }
  return out;
}

inline LevelGraph aggregate(const LevelGraph& lg, const std::vector<std::size_t>& comm,
                            std::size_t n_comm) {
  LevelGraph agg;
  agg.n = n_comm;
  agg.adj.resize(n_comm);
  agg.self_weight.assign(n_comm, 0.0);
  agg.total_weight = lg.total_weight;
  std::map<std::pair<std::size_t, std::size_t>, double> weights;
  for (std::size_t i = 0; i < lg.n; ++i) {
    agg.self_weight[comm[i]] += lg.self_weight[i];
    for (const auto& [j, w] : lg.adj[i]) {
      if (i > j) continue;
      if (comm[i] == comm[j])
        agg.self_weight[comm[i]] += w;
      else
        weights[std::minmax(comm[i], comm[j])] += w;
    }
  }
  for (const auto& [uv, w] : weights) {
    agg.adj[uv.first].emplace_back(uv.second, w);
    agg.adj[uv.second].emplace_back(uv.first, w);
  }
  return agg;
}

}  // namespace detail

inline LouvainResult louvain(const graph::SimilarityGraph& g) {
  if (g.edges.empty()) throw DataError("louvain: graph has no edges");
  detail::LevelGraph level = detail::level_from_graph(g);
  if (level.total_weight <= 0.0) throw NumericError("louvain: non-positive total edge weight");

  std::vector<std::size_t> node_to_comm(g.nodes.size());
  std::iota(node_to_comm.begin(), node_to_comm.end(), 0);

  std::vector<std::size_t> level_comm(level.n);
  std::iota(level_comm.begin(), level_comm.end(), 0);
  while (true) {
    bool moved = detail::one_level(level, level_comm);
    std::vector<std::size_t> compact = detail::renumber(level_comm);
    std::size_t n_comm = compact.empty() ? 0 : *std::max_element(compact.begin(), compact.end()) + 1;
    for (std::size_t i = 0; i < node_to_comm.size(); ++i)
      node_to_comm[i] = compact[node_to_comm[i]];
    if (!moved || n_comm == level.n) break;
    level = detail::aggregate(level, compact, n_comm);
    level_comm.assign(level.n, 0);
    std::iota(level_comm.begin(), level_comm.end(), 0);
  }

  LouvainResult r;
  r.community = detail::renumber(node_to_comm);
  r.community_count =
      r.community.empty() ? 0 : *std::max_element(r.community.begin(), r.community.end()) + 1;
  r.modularity = detail::partition_modularity(detail::level_from_graph(g), r.community);
  return r;
}

// Modularity of an arbitrary partition of g, for cross-checking.
inline double modularity_of(const graph::SimilarityGraph& g,
                            const std::vector<std::size_t>& community) {
  return detail::partition_modularity(detail::level_from_graph(g), community);
}

// ---------------------------------------------------------------------------
// Structural statistics (unweighted topology; modularity is weighted)

struct GraphStats {
  std::size_t node_count = 0;
  std::size_t edge_count = 0;
  double average_degree = 0.0;
  double density = 0.0;
  std::size_t diameter = 0;
  double average_path_length = 0.0;
  double average_clustering = 0.0;
  double modularity = 0.0;
  std::size_t community_count = 0;
  bool connected = true;
  bool degenerate = false;  // single node or no edges
};

inline GraphStats graph_stats(const graph::SimilarityGraph& g) {
  if (g.nodes.empty()) throw DataError("graph_stats: empty graph");
  GraphStats s;
  s.node_count = g.nodes.size();
  s.edge_count = g.edges.size();
  std::size_t n = s.node_count;

  auto adj = g.adjacency();
  s.average_degree = n > 0 ? 2.0 * static_cast<double>(s.edge_count) / static_cast<double>(n) : 0.0;
  s.density = n > 1 ? 2.0 * static_cast<double>(s.edge_count) /
                          (static_cast<double>(n) * static_cast<double>(n - 1))
                    : 0.0;

  if (n < 2 || g.edges.empty()) {
    s.degenerate = true;
    s.connected = n < 2;
    s.community_count = n;
    return s;
  }

  // Local clustering averaged over all nodes; degree < 2 contributes 0.
  std::vector<std::set<std::size_t>> nb(n);
  for (std::size_t u = 0; u < n; ++u) nb[u] = std::set<std::size_t>(adj[u].begin(), adj[u].end());
  double cc_sum = 0.0;
  for (std::size_t u = 0; u < n; ++u) {
    std::size_t deg = adj[u].size();
    if (deg < 2) continue;
    std::size_t links = 0;
    for (std::size_t a = 0; a < adj[u].size(); ++a)
      for (std::size_t b = a + 1; b < adj[u].size(); ++b)
        if (nb[adj[u][a]].count(adj[u][b])) ++links;
    cc_sum += 2.0 * static_cast<double>(links) /
              (static_cast<double>(deg) * static_cast<double>(deg - 1));
  }
  s.average_clustering = cc_sum / static_cast<double>(n);

  // Components; diameter and APL on the largest one (ties: first by id).
  std::vector<int> comp(n, -1);
  std::vector<std::vector<std::size_t>> components;
  for (std::size_t start = 0; start < n; ++start) {
    if (comp[start] >= 0) continue;
    std::vector<std::size_t> members;
    std::deque<std::size_t> queue{start};
    comp[start] = static_cast<int>(components.size());
    while (!queue.empty()) {
      std::size_t u = queue.front();
      queue.pop_front();
      members.push_back(u);
      for (std::size_t v : adj[u])
        if (comp[v] < 0) {
          comp[v] = comp[start];
          queue.push_back(v);
        }
    }
    components.push_back(std::move(members));
  }
  s.connected = components.size() == 1;
  const std::vector<std::size_t>* largest = &components[0];
  for (const auto& c : components)
    if (c.size() > largest->size()) largest = &c;

  std::size_t diameter = 0;
  std::size_t pair_count = 0;
  unsigned long long dist_sum = 0;
  for (std::size_t src : *largest) {
    std::vector<long> dist(n, -1);
    std::deque<std::size_t> queue{src};
    dist[src] = 0;
    while (!queue.empty()) {
      std::size_t u = queue.front();
      queue.pop_front();
      for (std::size_t v : adj[u])
        if (dist[v] < 0) {
          dist[v] = dist[u] + 1;
          queue.push_back(v);
        }
    }
    for (std::size_t dst : *largest) {
      if (dst == src) continue;
      diameter = std::max(diameter, static_cast<std::size_t>(dist[dst]));
      dist_sum += static_cast<unsigned long long>(dist[dst]);
      ++pair_count;
    }
  }
  s.diameter = diameter;
  s.average_path_length =
      pair_count > 0 ? static_cast<double>(dist_sum) / static_cast<double>(pair_count) : 0.0;

  LouvainResult lr = louvain(g);
  s.modularity = lr.modularity;
  s.community_count = lr.community_count;
  return s;
}

inline nlohmann::json stats_to_json(const GraphStats& s) {
  nlohmann::json j;
  j["nodes"] = s.node_count;
  j["edges"] = s.edge_count;
  j["average_degree"] = s.average_degree;
  j["density"] = s.density;
  j["diameter"] = s.diameter;
  j["average_path_length"] = s.average_path_length;
  j["clustering_coefficient"] = s.average_clustering;
  j["modularity"] = s.modularity;
  j["communities"] = s.community_count;
  j["connected"] = s.connected;
  j["degenerate"] = s.degenerate;
  return j;
}

// ---------------------------------------------------------------------------
// Perturbation-based local explanation (LIME-style)

struct Explanation {
  std::vector<std::string> feature_names;
  std::vector<double> weights;         // aligned with feature_names
  std::vector<std::size_t> ranking;    // indices by |weight| descending
  double intercept = 0.0;
  double fit_score = 0.0;              // weighted R^2 of the local model
  std::size_t n_samples = 0;
  std::uint64_t seed = 0;
};

namespace detail {

// Solve A x = b by Gaussian elimination with partial pivoting.
inline std::vector<double> solve_linear(std::vector<std::vector<double>> a,
                                        std::vector<double> b) {
  std::size_t n = b.size();
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t pivot = col;
    for (std::size_t r = col + 1; r < n; ++r)
      if (std::abs(a[r][col]) > std::abs(a[pivot][col])) pivot = r;
    std::swap(a[col], a[pivot]);
    std::swap(b[col], b[pivot]);
    double d = a[col][col];
    if (std::abs(d) < 1e-300) throw NumericError("lime: singular local system");
    for (std::size_t r = col + 1; r < n; ++r) {
      double f = a[r][col] / d;
      if (f == 0.0) continue;
      for (std::size_t c = col; c < n; ++c) a[r][c] -= f * a[col][c];
      b[r] -= f * b[col];
    }
  }
  std::vector<double> x(n);
  for (std::size_t r = n; r-- > 0;) {
    double s = b[r];
    for (std::size_t c = r + 1; c < n; ++c) s -= a[r][c] * x[c];
    x[r] = s / a[r][r];
  }
  return x;
}

}  // namespace detail

// Fits a weighted linear model of the target-class probability on binary
// inclusion masks. prob_fn receives a mask (1 = feature kept) and returns the
// model's probability for the class being explained.
inline Explanation lime_core(const std::function<double(const std::vector<int>&)>& prob_fn,
                             std::vector<std::string> feature_names, std::size_t n_samples,
                             std::uint64_t seed, double kernel_width = 0.0) {
  std::size_t F = feature_names.size();
  if (F < 2) throw DataError("lime: need at least 2 interpretable features");
  if (n_samples < 10) throw ConfigError("lime: need at least 10 samples");
  if (kernel_width <= 0.0) kernel_width = 0.75 * std::sqrt(static_cast<double>(F));

  Rng rng(seed, hash64("lime"));
  std::vector<std::vector<int>> masks(n_samples, std::vector<int>(F));
  std::vector<double> y(n_samples), kernel(n_samples);
  for (std::size_t i = 0; i < n_samples; ++i) {
    std::size_t ones = 0;
    for (std::size_t j = 0; j < F; ++j) {
      masks[i][j] = rng.next_bool(0.5) ? 1 : 0;
      ones += static_cast<std::size_t>(masks[i][j]);
    }
    y[i] = prob_fn(masks[i]);
    // Cosine distance between the mask and the all-ones vector.
    double cos = ones > 0 ? std::sqrt(static_cast<double>(ones) / static_cast<double>(F)) : 0.0;
    double d = 1.0 - cos;
    kernel[i] = std::exp(-(d * d) / (kernel_width * kernel_width));
  }

  // Weighted normal equations over [1, mask] with a tiny ridge for safety.
  std::size_t dim = F + 1;
  std::vector<std::vector<double>> ata(dim, std::vector<double>(dim, 0.0));
  std::vector<double> atb(dim, 0.0);
  for (std::size_t i = 0; i < n_samples; ++i) {
    std::vector<double> row(dim);
    row[0] = 1.0;
    for (std::size_t j = 0; j < F; ++j) row[j + 1] = static_cast<double>(masks[i][j]);
    for (std::size_t a = 0; a < dim; ++a) {
      if (row[a] == 0.0) continue;
      double wa = kernel[i] * row[a];
      for (std::size_t b = 0; b < dim; ++b) ata[a][b] += wa * row[b];
      atb[a] += wa * y[i];
    }
  }
  for (std::size_t a = 0; a < dim; ++a) ata[a][a] += 1e-9;
  std::vector<double> beta = detail::solve_linear(std::move(ata), std::move(atb));

  Explanation ex;
  ex.feature_names = std::move(feature_names);
  ex.intercept = beta[0];
  ex.weights.assign(beta.begin() + 1, beta.end());
  ex.n_samples = n_samples;
  ex.seed = seed;

  double ksum = 0.0, ymean = 0.0;
  for (std::size_t i = 0; i < n_samples; ++i) {
    ksum += kernel[i];
    ymean += kernel[i] * y[i];
  }
  ymean /= ksum;
  double ss_res = 0.0, ss_tot = 0.0;
  for (std::size_t i = 0; i < n_samples; ++i) {
    double pred = beta[0];
    for (std::size_t j = 0; j < F; ++j) pred += ex.weights[j] * masks[i][j];
    ss_res += kernel[i] * (y[i] - pred) * (y[i] - pred);
    ss_tot += kernel[i] * (y[i] - ymean) * (y[i] - ymean);
  }
  ex.fit_score = ss_tot > 0.0 ? 1.0 - ss_res / ss_tot : 1.0;

  ex.ranking.resize(F);
  std::iota(ex.ranking.begin(), ex.ranking.end(), 0);
  std::sort(ex.ranking.begin(), ex.ranking.end(), [&](std::size_t a, std::size_t b) {
    double wa = std::abs(ex.weights[a]), wb = std::abs(ex.weights[b]);
    if (wa != wb) return wa > wb;
    return a < b;
  });
  return ex;
}

// Sentinel handed to text predictors for masked words; cannot collide with
// tokenizer output, which is alphanumeric only.
inline const std::string kMaskedWord = "\x01";

// Text explanation over the instance's distinct words (first-occurrence
// order). Masked words are replaced by kMaskedWord, which the predictor
// should treat as [UNK].
inline Explanation lime_explain_text(
    const std::function<std::vector<double>(const std::vector<std::string>&)>& predictor,
    const std::vector<std::string>& words, ClassLabel target, std::size_t n_samples,
    std::uint64_t seed) {
  std::vector<std::string> distinct;
  std::map<std::string, std::size_t> index;
  for (const std::string& w : words)
    if (index.emplace(w, distinct.size()).second) distinct.push_back(w);

  auto prob_fn = [&](const std::vector<int>& mask) {
    std::vector<std::string> perturbed;
    perturbed.reserve(words.size());
    for (const std::string& w : words)
      perturbed.push_back(mask[index.at(w)] ? w : kMaskedWord);
    return predictor(perturbed)[static_cast<std::size_t>(target)];
  };
  return lime_core(prob_fn, distinct, n_samples, seed);
}

// Image explanation over patch-grid cells; masked patches become mid-gray.
inline Explanation lime_explain_image(
    const std::function<std::vector<double>(const corpus::Image&)>& predictor,
    const corpus::Image& image, std::size_t patch_size, ClassLabel target, std::size_t n_samples,
    std::uint64_t seed) {
  if (patch_size == 0 || image.height % patch_size != 0 || image.width % patch_size != 0)
    throw DataError("lime: image dimensions not divisible by patch size");
  std::size_t gh = image.height / patch_size, gw = image.width / patch_size;
  std::vector<std::string> names;
  names.reserve(gh * gw);
  for (std::size_t r = 0; r < gh; ++r)
    for (std::size_t c = 0; c < gw; ++c)
      names.push_back("patch_" + std::to_string(r) + "_" + std::to_string(c));

  auto prob_fn = [&](const std::vector<int>& mask) {
    corpus::Image perturbed = image;
    for (std::size_t cell = 0; cell < mask.size(); ++cell) {
      if (mask[cell]) continue;
      std::size_t pr = cell / gw, pc = cell % gw;
      for (std::size_t dy = 0; dy < patch_size; ++dy)
        for (std::size_t dx = 0; dx < patch_size; ++dx) {
          std::size_t off = ((pr * patch_size + dy) * image.width + pc * patch_size + dx) * 3;
          perturbed.pixels[off] = perturbed.pixels[off + 1] = perturbed.pixels[off + 2] = 128;
        }
    }
    return predictor(perturbed)[static_cast<std::size_t>(target)];
  };
  return lime_core(prob_fn, names, n_samples, seed);
}

inline nlohmann::json explanation_to_json(const Explanation& ex) {
  nlohmann::json j;
  j["features"] = nlohmann::json::array();
  for (std::size_t idx : ex.ranking)
    j["features"].push_back({{"feature", ex.feature_names[idx]}, {"weight", ex.weights[idx]}});
  j["intercept"] = ex.intercept;
  j["fit_score"] = ex.fit_score;
  j["n_samples"] = ex.n_samples;
  j["seed"] = ex.seed;
  return j;
}

// Plain-text heat list, strongest features first.
inline std::string explanation_heat_list(const Explanation& ex) {
  std::string out;
  char line[256];
  for (std::size_t idx : ex.ranking) {
    std::snprintf(line, sizeof(line), "%+.6f  %s\n", ex.weights[idx],
                  ex.feature_names[idx].c_str());
    out += line;
  }
  return out;
}

}  // namespace merlin::analysis
