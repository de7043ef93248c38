#ifndef NDT_NETMODEL_HPP_
#define NDT_NETMODEL_HPP_

#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

namespace ndt {

// Default link capacities. Wired covers fixed backbone links; wireless is the
// 802.11a base rate. Both may be overridden per generator call.
inline constexpr double kWiredCapacityKbps = 1000.0;
inline constexpr double kWirelessCapacityKbps = 6000.0;

// edge_weight diverges as d -> 0+; values are clamped here so perturbed
// topologies with near-coincident nodes stay well conditioned.
inline constexpr double kEdgeWeightCap = 10.0;

struct Vec2 {
  double x{0};
  double y{0};
};

struct NodeRecord {
  int id{0};
  Vec2 pos;  // meters
};

struct LinkRecord {
  int src{0};
  int dst{0};
  double capacity_kbps{0};
  double weight{1.0};
};

// Directed graph with node positions. Wireless generators always produce
// symmetric link sets; wired topologies encode each cable as two directed
// links.
struct NetworkGraph {
  std::vector<NodeRecord> nodes;
  std::vector<LinkRecord> links;

  int node_count() const { return static_cast<int>(nodes.size()); }
  int link_count() const { return static_cast<int>(links.size()); }

  // Index of the directed link src->dst, if present.
  std::optional<int> find_link(int src, int dst) const;

  // Per-node lists of outgoing link indices, ordered by destination id.
  std::vector<std::vector<int>> out_links() const;

  // Out-degree per node (number of outgoing links).
  std::vector<int> out_degrees() const;

  // Checks structural invariants; throws std::invalid_argument on violation.
  void validate() const;
};

double node_distance(const NetworkGraph& g, int a, int b);

// Ordered link sequence from source to destination.
struct PathSpec {
  int source{0};
  int destination{0};
  std::vector<int> links;  // link indices into NetworkGraph::links
};

// Throws std::invalid_argument unless the path is a simple, connected walk
// from source to destination over existing links.
void validate_path(const NetworkGraph& g, const PathSpec& p);

struct TrafficRow {
  double tau_on_s{0};
  double tau_off_s{0};
};

// Mean on/off durations per path plus the scenario-wide data rate.
struct TrafficMatrix {
  std::vector<TrafficRow> rows;
  double data_rate_kbps{0};
};

// Log-distance propagation parameters. The defaults give three strictly
// increasing grid densities for ptx in {12, 16, 20} dBm at 30 m spacing.
struct RadioConfig {
  double ptx_dbm{16.0};
  double pl0_db{40.05};    // reference loss at 1 m
  double gamma{3.0};       // path-loss exponent
  double rx_sens_dbm{-76.0};

  void validate() const;
};

NetworkGraph gen_nsfnet(double capacity_kbps = kWiredCapacityKbps);

// Maximum distance at which the received power still meets the sensitivity:
// d_max = 1 m * 10^((ptx - sens - pl0) / (10 * gamma)).
double max_link_distance(const RadioConfig& radio);

// Link strength 1 / ln(1 + d), clamped to kEdgeWeightCap. d must be > 0.
double edge_weight(double distance_m);

NetworkGraph gen_grid(int rows, int cols, double spacing_m, const RadioConfig& radio,
                      double capacity_kbps = kWirelessCapacityKbps);

// Moves every node uniformly within a disk of the given radius (seeded) and
// recomputes the link set from the new distances exactly as gen_grid does.
NetworkGraph perturb(const NetworkGraph& g, double radius_m, const RadioConfig& radio,
                     uint64_t seed, double capacity_kbps = kWirelessCapacityKbps);

// Minimum-hop route; ties broken by the lexicographically smallest node-id
// sequence. Throws NoPathError when dst is unreachable.
PathSpec shortest_path(const NetworkGraph& g, int src, int dst);

// Seeded sample, without replacement, of ordered (src, dst) pairs whose
// shortest path has between 1 and max_hops hops.
std::vector<std::pair<int, int>> select_path_pairs(const NetworkGraph& g, int count,
                                                   int max_hops, uint64_t seed);

TrafficMatrix sample_traffic_matrix(int num_paths, const std::vector<double>& mean_set,
                                    double data_rate_kbps, uint64_t seed);

}  // namespace ndt

#endif  // NDT_NETMODEL_HPP_
