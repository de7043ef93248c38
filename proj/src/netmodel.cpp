#include "ndt/netmodel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <queue>
#include <set>
#include <stdexcept>
#include <string>

#include "ndt/errors.hpp"
#include "ndt/rng.hpp"

namespace ndt {

std::optional<int> NetworkGraph::find_link(int src, int dst) const {
  for (int i = 0; i < link_count(); ++i) {
    if (links[i].src == src && links[i].dst == dst) return i;
  }
  return std::nullopt;
}

std::vector<std::vector<int>> NetworkGraph::out_links() const {
  std::vector<std::vector<int>> out(nodes.size());
  for (int i = 0; i < link_count(); ++i) out[links[i].src].push_back(i);
  for (auto& v : out) {
    std::sort(v.begin(), v.end(),
              [this](int a, int b) { return links[a].dst < links[b].dst; });
  }
  return out;
}

std::vector<int> NetworkGraph::out_degrees() const {
  std::vector<int> deg(nodes.size(), 0);
  for (const auto& l : links) deg[l.src]++;
  return deg;
}

void NetworkGraph::validate() const {
  for (int i = 0; i < node_count(); ++i) {
    if (nodes[i].id != i) throw std::invalid_argument("node ids must be 0..N-1 without gaps");
  }
  std::set<std::pair<int, int>> seen;
  for (const auto& l : links) {
    if (l.src < 0 || l.src >= node_count() || l.dst < 0 || l.dst >= node_count())
      throw std::invalid_argument("link endpoint out of range");
    if (l.src == l.dst) throw std::invalid_argument("self-loop link");
    if (!seen.insert({l.src, l.dst}).second)
      throw std::invalid_argument("duplicate directed link");
    if (!(l.weight > 0) || !std::isfinite(l.weight))
      throw std::invalid_argument("link weight must be positive and finite");
    if (!(l.capacity_kbps > 0) || !std::isfinite(l.capacity_kbps))
      throw std::invalid_argument("link capacity must be positive and finite");
  }
}

double node_distance(const NetworkGraph& g, int a, int b) {
  const double dx = g.nodes[a].pos.x - g.nodes[b].pos.x;
  const double dy = g.nodes[a].pos.y - g.nodes[b].pos.y;
  return std::hypot(dx, dy);
}

void validate_path(const NetworkGraph& g, const PathSpec& p) {
  if (p.links.empty()) throw std::invalid_argument("path has no links");
  std::vector<int> node_seq;
  node_seq.push_back(g.links[p.links.front()].src);
  for (size_t k = 0; k < p.links.size(); ++k) {
    const int li = p.links[k];
    if (li < 0 || li >= g.link_count()) throw std::invalid_argument("path link index out of range");
    if (g.links[li].src != node_seq.back())
      throw std::invalid_argument("path links are not incident");
    node_seq.push_back(g.links[li].dst);
  }
  if (node_seq.front() != p.source || node_seq.back() != p.destination)
    throw std::invalid_argument("path endpoints do not match source/destination");
  std::set<int> uniq(node_seq.begin(), node_seq.end());
  if (uniq.size() != node_seq.size()) throw std::invalid_argument("path repeats a node");
}

void RadioConfig::validate() const {
  if (!(gamma > 0)) throw std::invalid_argument("radio: gamma must be positive");
  if (!(ptx_dbm - rx_sens_dbm - pl0_db >= 0))
    throw std::invalid_argument("radio: link budget must allow at least 1 m range");
}

NetworkGraph gen_nsfnet(double capacity_kbps) {
  // 14-node NSFNet backbone, 21 cables as 42 directed links, unit weights.
  static const std::pair<int, int> kEdges[] = {
      {0, 1}, {0, 2}, {0, 3}, {1, 2}, {1, 7}, {2, 5},  {3, 4},
      {3, 8}, {4, 5}, {4, 6}, {5, 12}, {5, 13}, {6, 7}, {7, 10},
      {8, 9}, {8, 11}, {9, 10}, {9, 12}, {10, 11}, {10, 13}, {11, 12}};
  // Layout positions (meters); cosmetic for wired runs.
  static const Vec2 kPos[] = {{50, 550},   {0, 350},    {50, 100},  {250, 450},
                              {350, 300},  {450, 50},   {500, 400}, {650, 450},
                              {900, 400},  {850, 100},  {750, 550}, {1050, 500},
                              {1050, 300}, {950, 220}};
  NetworkGraph g;
  for (int i = 0; i < 14; ++i) g.nodes.push_back({i, kPos[i]});
  for (const auto& [a, b] : kEdges) {
    g.links.push_back({a, b, capacity_kbps, 1.0});
    g.links.push_back({b, a, capacity_kbps, 1.0});
  }
  g.validate();
  return g;
}

double max_link_distance(const RadioConfig& radio) {
  radio.validate();
  return std::pow(10.0, (radio.ptx_dbm - radio.rx_sens_dbm - radio.pl0_db) / (10.0 * radio.gamma));
}

double edge_weight(double distance_m) {
  if (!(distance_m > 0)) throw std::invalid_argument("edge_weight: distance must be positive");
  const double w = 1.0 / std::log1p(distance_m);
  return std::min(w, kEdgeWeightCap);
}

namespace {

// Symmetric distance-threshold link set shared by gen_grid and perturb.
void build_links_by_distance(NetworkGraph& g, const RadioConfig& radio, double capacity_kbps) {
  const double d_max = max_link_distance(radio);
  g.links.clear();
  const int n = g.node_count();
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      if (i == j) continue;
      const double d = node_distance(g, i, j);
      if (d <= d_max) g.links.push_back({i, j, capacity_kbps, edge_weight(d)});
    }
  }
}

}  // namespace

NetworkGraph gen_grid(int rows, int cols, double spacing_m, const RadioConfig& radio,
                      double capacity_kbps) {
  if (rows < 2 || cols < 2) throw std::invalid_argument("gen_grid: rows and cols must be >= 2");
  if (!(spacing_m > 0)) throw std::invalid_argument("gen_grid: spacing must be positive");
  NetworkGraph g;
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      g.nodes.push_back({r * cols + c, {c * spacing_m, r * spacing_m}});
    }
  }
  build_links_by_distance(g, radio, capacity_kbps);
  if (g.links.empty())
    throw EmptyGraphError("gen_grid: no node pair within the maximum link distance");
  g.validate();
  return g;
}

NetworkGraph perturb(const NetworkGraph& g, double radius_m, const RadioConfig& radio,
                     uint64_t seed, double capacity_kbps) {
  if (radius_m < 0) throw std::invalid_argument("perturb: radius must be >= 0");
  NetworkGraph out;
  out.nodes = g.nodes;
  Rng rng(seed);
  for (auto& node : out.nodes) {
    const double r = radius_m * std::sqrt(rng.uniform());
    const double theta = 2.0 * M_PI * rng.uniform();
    node.pos.x += r * std::cos(theta);
    node.pos.y += r * std::sin(theta);
  }
  build_links_by_distance(out, radio, capacity_kbps);
  out.validate();
  return out;
}

PathSpec shortest_path(const NetworkGraph& g, int src, int dst) {
  if (src == dst) throw std::invalid_argument("shortest_path: src == dst");
  if (src < 0 || src >= g.node_count() || dst < 0 || dst >= g.node_count())
    throw std::invalid_argument("shortest_path: node id out of range");

  // Hop distance to dst over reverse edges, then a greedy walk from src that
  // always picks the smallest next node id. That yields the lexicographically
  // smallest node sequence among the minimum-hop paths.
  constexpr int kUnreached = std::numeric_limits<int>::max();
  std::vector<int> dist(g.nodes.size(), kUnreached);
  std::vector<std::vector<int>> rev(g.nodes.size());
  for (const auto& l : g.links) rev[l.dst].push_back(l.src);
  std::queue<int> q;
  dist[dst] = 0;
  q.push(dst);
  while (!q.empty()) {
    const int v = q.front();
    q.pop();
    for (int u : rev[v]) {
      if (dist[u] == kUnreached) {
        dist[u] = dist[v] + 1;
        q.push(u);
      }
    }
  }
  if (dist[src] == kUnreached)
    throw NoPathError("shortest_path: destination unreachable from source");

  const auto out = g.out_links();
  PathSpec path;
  path.source = src;
  path.destination = dst;
  int cur = src;
  while (cur != dst) {
    int best_node = -1;
    int best_link = -1;
    for (int li : out[cur]) {
      const int nxt = g.links[li].dst;
      if (dist[nxt] == dist[cur] - 1 && (best_node < 0 || nxt < best_node)) {
        best_node = nxt;
        best_link = li;
      }
    }
    path.links.push_back(best_link);
    cur = best_node;
  }
  return path;
}

std::vector<std::pair<int, int>> select_path_pairs(const NetworkGraph& g, int count,
                                                   int max_hops, uint64_t seed) {
  if (count < 0) throw std::invalid_argument("select_path_pairs: count must be >= 0");
  // All ordered pairs with hop distance in [1, max_hops], canonical order.
  constexpr int kUnreached = std::numeric_limits<int>::max();
  const auto out = g.out_links();
  std::vector<std::pair<int, int>> candidates;
  for (int s = 0; s < g.node_count(); ++s) {
    std::vector<int> dist(g.nodes.size(), kUnreached);
    std::queue<int> q;
    dist[s] = 0;
    q.push(s);
    while (!q.empty()) {
      const int v = q.front();
      q.pop();
      for (int li : out[v]) {
        const int u = g.links[li].dst;
        if (dist[u] == kUnreached) {
          dist[u] = dist[v] + 1;
          q.push(u);
        }
      }
    }
    for (int d = 0; d < g.node_count(); ++d) {
      if (d != s && dist[d] != kUnreached && dist[d] <= max_hops) candidates.push_back({s, d});
    }
  }
  if (count > static_cast<int>(candidates.size()))
    throw std::invalid_argument("select_path_pairs: count exceeds feasible pairs");
  Rng rng(seed);
  rng.shuffle(candidates);
  candidates.resize(count);
  return candidates;
}

TrafficMatrix sample_traffic_matrix(int num_paths, const std::vector<double>& mean_set,
                                    double data_rate_kbps, uint64_t seed) {
  if (mean_set.empty()) throw std::invalid_argument("sample_traffic_matrix: empty mean set");
  std::vector<double> values(mean_set);
  std::sort(values.begin(), values.end());
  values.erase(std::unique(values.begin(), values.end()), values.end());
  for (double v : values) {
    if (!(v > 0)) throw std::invalid_argument("sample_traffic_matrix: means must be positive");
  }
  TrafficMatrix tm;
  tm.data_rate_kbps = data_rate_kbps;
  Rng rng(seed);
  for (int p = 0; p < num_paths; ++p) {
    TrafficRow row;
    row.tau_on_s = values[rng.uniform_int(values.size())];
    row.tau_off_s = values[rng.uniform_int(values.size())];
    tm.rows.push_back(row);
  }
  return tm;
}

}  // namespace ndt
