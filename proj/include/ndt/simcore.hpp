#ifndef NDT_SIMCORE_HPP_
#define NDT_SIMCORE_HPP_

#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

#include "ndt/netmodel.hpp"
#include "ndt/rng.hpp"

namespace ndt {

struct SimConfig {
  double duration_s{30.0};
  int packet_size_bytes{512};
  int queue_capacity{100};        // packets per directed link, in-service included
  double backoff_mean_s{0.001};
  bool wireless{false};
  double interference_radius_m{0.0};  // carrier-sense range, wireless only
  double prop_delay_s{10e-6};
  uint64_t seed{0};

  void validate() const;
};

// Per-path KPI summary. Counts are stored as doubles so that multi-run
// averages share the type; single-run values are exact integers.
struct FlowKpis {
  std::optional<double> delay_ms;   // defined iff rx >= 1
  std::optional<double> jitter_ms;  // defined iff rx >= 2
  double throughput_kbps{0};
  double drops{0};
  double tx_packets{0};
  double rx_packets{0};
};

struct PacketRecord {
  double send_time_s{0};
  bool delivered{false};
  double recv_time_s{0};
};

// Optional per-run trace, used to assert medium-access and queue invariants.
struct SimTrace {
  struct Transmission {
    int node{0};
    double start_s{0};
    double end_s{0};
  };
  std::vector<Transmission> transmissions;
  std::vector<std::vector<PacketRecord>> records;    // per path, send order
  std::vector<std::vector<int>> link_enqueue_order;  // per link, packet serials
  std::vector<std::vector<int>> link_depart_order;   // per link, packet serials
};

// One exponential on/off phase pair drawn from the shared stream.
std::pair<double, double> sample_onoff(double tau_on_s, double tau_off_s, Rng& rng);

FlowKpis kpis_from_records(const std::vector<PacketRecord>& records, const SimConfig& config);

// Event-driven run: on/off sources emit fixed-size packets at the scenario
// data rate, packets traverse per-link FIFO queues, wireless mode adds
// carrier-sense blocking with exponential backoff, and full queues drop.
std::vector<FlowKpis> simulate(const NetworkGraph& graph, const std::vector<PathSpec>& paths,
                               const TrafficMatrix& traffic, const SimConfig& config,
                               SimTrace* trace = nullptr);

// Element-wise mean of `runs` independent simulations seeded seed, seed+1,...
// Undefined entries are excluded; a KPI is undefined only if it is undefined
// in every run.
std::vector<FlowKpis> simulate_avg(const NetworkGraph& graph, const std::vector<PathSpec>& paths,
                                   const TrafficMatrix& traffic, const SimConfig& config,
                                   int runs);

}  // namespace ndt

#endif  // NDT_SIMCORE_HPP_
