#include "ndt/simcore.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <queue>
#include <stdexcept>

#include "ndt/errors.hpp"

namespace ndt {

void SimConfig::validate() const {
  if (!(duration_s > 0)) throw std::invalid_argument("sim: duration must be positive");
  if (packet_size_bytes <= 0) throw std::invalid_argument("sim: packet size must be positive");
  if (queue_capacity < 1) throw std::invalid_argument("sim: queue capacity must be >= 1");
  if (!(backoff_mean_s > 0)) throw std::invalid_argument("sim: backoff mean must be positive");
  if (prop_delay_s < 0) throw std::invalid_argument("sim: propagation delay must be >= 0");
  if (wireless && !(interference_radius_m >= 0))
    throw std::invalid_argument("sim: interference radius must be >= 0");
}

std::pair<double, double> sample_onoff(double tau_on_s, double tau_off_s, Rng& rng) {
  if (!(tau_on_s > 0) || !(tau_off_s > 0))
    throw std::invalid_argument("sample_onoff: means must be positive");
  const double t_on = rng.exponential(tau_on_s);
  const double t_off = rng.exponential(tau_off_s);
  return {t_on, t_off};
}

FlowKpis kpis_from_records(const std::vector<PacketRecord>& records, const SimConfig& config) {
  FlowKpis k;
  k.tx_packets = static_cast<double>(records.size());
  std::vector<std::pair<double, double>> delivered;  // (recv, send), delivery order
  for (const auto& r : records) {
    if (r.delivered) delivered.push_back({r.recv_time_s, r.send_time_s});
  }
  std::sort(delivered.begin(), delivered.end());
  k.rx_packets = static_cast<double>(delivered.size());
  k.drops = k.tx_packets - k.rx_packets;
  k.throughput_kbps = k.rx_packets * config.packet_size_bytes * 8 / config.duration_s / 1000;
  if (!delivered.empty()) {
    double sum = 0;
    for (const auto& [recv, send] : delivered) sum += recv - send;
    k.delay_ms = sum / delivered.size() * 1000.0;
  }
  if (delivered.size() >= 2) {
    double sum = 0;
    for (size_t i = 1; i < delivered.size(); ++i) {
      const double d_prev = delivered[i - 1].first - delivered[i - 1].second;
      const double d_cur = delivered[i].first - delivered[i].second;
      sum += std::abs(d_cur - d_prev);
    }
    k.jitter_ms = sum / (delivered.size() - 1) * 1000.0;
  }
  return k;
}

namespace {

enum class EventType : uint8_t { kFlowCycle, kEmit, kArrive, kServiceEnd, kRetry };

struct Event {
  double time;
  uint64_t seq;  // tie breaker: events at equal times fire in schedule order
  EventType type;
  int a;  // path id, packet id, or link id depending on type
  int b;  // hop index for kArrive
};

struct EventLater {
  bool operator()(const Event& x, const Event& y) const {
    if (x.time != y.time) return x.time > y.time;
    return x.seq > y.seq;
  }
};

enum class LinkState : uint8_t { kIdle, kBackoff, kTransmitting };

struct Packet {
  int path;
  int record;  // index into per-path record list
  int serial;  // global creation order, used by the trace
};

class Simulator {
 public:
  Simulator(const NetworkGraph& graph, const std::vector<PathSpec>& paths,
            const TrafficMatrix& traffic, const SimConfig& cfg, SimTrace* trace)
      : graph_(graph), paths_(paths), traffic_(traffic), cfg_(cfg), trace_(trace),
        rng_(cfg.seed) {
    const int num_links = graph.link_count();
    const int num_nodes = graph.node_count();
    queue_.resize(num_links);
    link_state_.assign(num_links, LinkState::kIdle);
    service_time_.resize(num_links);
    for (int l = 0; l < num_links; ++l) {
      service_time_[l] = cfg.packet_size_bytes * 8 / (graph.links[l].capacity_kbps * 1000.0);
    }
    transmitting_.assign(num_nodes, 0);
    if (cfg.wireless) {
      sense_neighbors_.resize(num_nodes);
      for (int i = 0; i < num_nodes; ++i) {
        for (int j = 0; j < num_nodes; ++j) {
          if (node_distance(graph, i, j) <= cfg.interference_radius_m)
            sense_neighbors_[i].push_back(j);
        }
      }
    }
    records_.resize(paths.size());
    emit_until_.assign(paths.size(), 0.0);
    packet_gap_.resize(paths.size());
    for (size_t p = 0; p < paths.size(); ++p) {
      packet_gap_[p] = cfg.packet_size_bytes * 8 / (traffic.data_rate_kbps * 1000.0);
    }
    if (trace_) {
      trace_->link_enqueue_order.assign(num_links, {});
      trace_->link_depart_order.assign(num_links, {});
    }
  }

  std::vector<FlowKpis> run() {
    for (int p = 0; p < static_cast<int>(paths_.size()); ++p) {
      push(0.0, EventType::kFlowCycle, p);
    }
    while (!events_.empty()) {
      const Event ev = events_.top();
      events_.pop();
      switch (ev.type) {
        case EventType::kFlowCycle: flow_cycle(ev.a, ev.time); break;
        case EventType::kEmit: emit(ev.a, ev.time); break;
        case EventType::kArrive: arrive(ev.a, ev.b, ev.time); break;
        case EventType::kServiceEnd: service_end(ev.a, ev.time); break;
        case EventType::kRetry: retry(ev.a, ev.time); break;
      }
    }
    std::vector<FlowKpis> kpis;
    kpis.reserve(paths_.size());
    for (const auto& recs : records_) kpis.push_back(kpis_from_records(recs, cfg_));
    if (trace_) trace_->records = records_;
    return kpis;
  }

 private:
  void push(double time, EventType type, int a, int b = 0) {
    events_.push({time, next_seq_++, type, a, b});
  }

  void flow_cycle(int path, double now) {
    const auto& row = traffic_.rows[path];
    const auto [t_on, t_off] = sample_onoff(row.tau_on_s, row.tau_off_s, rng_);
    emit_until_[path] = now + t_on;
    if (now < cfg_.duration_s) push(now, EventType::kEmit, path);
    const double next_cycle = now + t_on + t_off;
    if (next_cycle < cfg_.duration_s) push(next_cycle, EventType::kFlowCycle, path);
  }

  void emit(int path, double now) {
    if (now >= emit_until_[path] || now >= cfg_.duration_s) return;
    const int packet_id = static_cast<int>(packets_.size());
    packets_.push_back({path, static_cast<int>(records_[path].size()), packet_id});
    records_[path].push_back({now, false, 0.0});
    arrive(packet_id, 0, now);
    const double next = now + packet_gap_[path];
    if (next < emit_until_[path] && next < cfg_.duration_s)
      push(next, EventType::kEmit, path);
  }

  void arrive(int packet_id, int hop, double now) {
    const Packet& pkt = packets_[packet_id];
    const int link = paths_[pkt.path].links[hop];
    if (static_cast<int>(queue_[link].size()) >= cfg_.queue_capacity) {
      // Full queue: packet lost, record stays undelivered.
      return;
    }
    queue_[link].push_back({packet_id, hop});
    if (trace_) trace_->link_enqueue_order[link].push_back(pkt.serial);
    attempt_service(link, now);
  }

  bool blocked(int node) const {
    for (int m : sense_neighbors_[node]) {
      if (transmitting_[m] > 0) return true;
    }
    return false;
  }

  void attempt_service(int link, double now) {
    if (link_state_[link] != LinkState::kIdle || queue_[link].empty()) return;
    if (cfg_.wireless && blocked(graph_.links[link].src)) {
      link_state_[link] = LinkState::kBackoff;
      push(now + rng_.exponential(cfg_.backoff_mean_s), EventType::kRetry, link);
      return;
    }
    link_state_[link] = LinkState::kTransmitting;
    if (cfg_.wireless) {
      const int src = graph_.links[link].src;
      transmitting_[src]++;
      if (trace_) trace_->transmissions.push_back({src, now, now + service_time_[link]});
    }
    push(now + service_time_[link], EventType::kServiceEnd, link);
  }

  void retry(int link, double now) {
    if (link_state_[link] != LinkState::kBackoff) return;
    link_state_[link] = LinkState::kIdle;
    attempt_service(link, now);
  }

  void service_end(int link, double now) {
    const auto [packet_id, hop] = queue_[link].front();
    queue_[link].pop_front();
    link_state_[link] = LinkState::kIdle;
    if (cfg_.wireless) transmitting_[graph_.links[link].src]--;
    if (trace_) trace_->link_depart_order[link].push_back(packets_[packet_id].serial);

    const Packet& pkt = packets_[packet_id];
    const auto& hops = paths_[pkt.path].links;
    if (hop + 1 == static_cast<int>(hops.size())) {
      auto& rec = records_[pkt.path][pkt.record];
      rec.delivered = true;
      rec.recv_time_s = now + cfg_.prop_delay_s;
    } else {
      push(now + cfg_.prop_delay_s, EventType::kArrive, packet_id, hop + 1);
    }
    if (!queue_[link].empty()) attempt_service(link, now);
  }

  const NetworkGraph& graph_;
  const std::vector<PathSpec>& paths_;
  const TrafficMatrix& traffic_;
  const SimConfig& cfg_;
  SimTrace* trace_;

  Rng rng_;
  std::priority_queue<Event, std::vector<Event>, EventLater> events_;
  uint64_t next_seq_ = 0;

  std::vector<Packet> packets_;
  std::vector<std::vector<PacketRecord>> records_;
  std::vector<std::deque<std::pair<int, int>>> queue_;  // (packet id, hop)
  std::vector<LinkState> link_state_;
  std::vector<double> service_time_;
  std::vector<int> transmitting_;
  std::vector<std::vector<int>> sense_neighbors_;
  std::vector<double> emit_until_;
  std::vector<double> packet_gap_;
};

}  // namespace

std::vector<FlowKpis> simulate(const NetworkGraph& graph, const std::vector<PathSpec>& paths,
                               const TrafficMatrix& traffic, const SimConfig& config,
                               SimTrace* trace) {
  config.validate();
  if (traffic.rows.size() != paths.size())
    throw std::invalid_argument("simulate: traffic rows must match path count");
  for (const auto& p : paths) validate_path(graph, p);
  Simulator sim(graph, paths, traffic, config, trace);
  return sim.run();
}

std::vector<FlowKpis> simulate_avg(const NetworkGraph& graph, const std::vector<PathSpec>& paths,
                                   const TrafficMatrix& traffic, const SimConfig& config,
                                   int runs) {
  if (runs < 1) throw std::invalid_argument("simulate_avg: runs must be >= 1");
  std::vector<std::vector<FlowKpis>> all;
  all.reserve(runs);
  for (int r = 0; r < runs; ++r) {
    SimConfig c = config;
    c.seed = config.seed + static_cast<uint64_t>(r);
    all.push_back(simulate(graph, paths, traffic, c));
  }
  std::vector<FlowKpis> mean(paths.size());
  for (size_t p = 0; p < paths.size(); ++p) {
    FlowKpis m;
    auto avg_opt = [&](auto getter) -> std::optional<double> {
      double sum = 0;
      int n = 0;
      for (const auto& run : all) {
        if (auto v = getter(run[p])) {
          sum += *v;
          n++;
        }
      }
      if (n == 0) return std::nullopt;
      return sum / n;
    };
    m.delay_ms = avg_opt([](const FlowKpis& k) { return k.delay_ms; });
    m.jitter_ms = avg_opt([](const FlowKpis& k) { return k.jitter_ms; });
    double thr = 0, drops = 0, tx = 0, rx = 0;
    for (const auto& run : all) {
      thr += run[p].throughput_kbps;
      drops += run[p].drops;
      tx += run[p].tx_packets;
      rx += run[p].rx_packets;
    }
    m.throughput_kbps = thr / runs;
    m.drops = drops / runs;
    m.tx_packets = tx / runs;
    m.rx_packets = rx / runs;
    mean[p] = m;
  }
  return mean;
}

}  // namespace ndt
