#pragma once

#include <map>
#include <utility>
#include <vector>

#include "pszsim/pm.hpp"
#include "pszsim/types.hpp"

namespace psz {

/// Undirected connected node graph. Neighborhoods always include the node
/// itself; connectivity is checked at construction.
class Topology {
 public:
  Topology(int n_nodes, const std::vector<std::pair<int, int>>& edges);

  int n_nodes() const { return n_nodes_; }
  bool adjacent(int a, int b) const;

  /// Sorted one-hop neighborhood of k, including k.
  const std::vector<int>& neighborhood(int k) const { return neighborhoods_[k]; }

  /// Neighbor count excluding the node itself.
  int degree(int k) const {
    return static_cast<int>(neighborhoods_[k].size()) - 1;
  }

 private:
  int n_nodes_ = 0;
  std::vector<std::vector<int>> neighborhoods_;
};

/// Nodes 0..N-1 in a cycle; N = 2 is the degenerate two-node ring.
Topology ring_topology(int n_nodes);

/// Microphone and loudspeaker ownership sets. Both families must partition
/// their index ranges: pairwise disjoint, exhaustive, every mic set nonempty.
struct Partition {
  std::vector<std::vector<int>> mic_sets;      // C_k, indices into 0..M-1
  std::vector<std::vector<int>> speaker_sets;  // S_k, indices into 0..L-1

  int n_nodes() const { return static_cast<int>(mic_sets.size()); }
  void validate(Eigen::Index n_mics, Eigen::Index n_speakers) const;
};

/// 9-node ring for the 9-speaker / 32-microphone setup: node k owns speaker
/// k; nodes 0-3 hold 4 bright mics each, nodes 4-6 hold 4 dark mics each,
/// nodes 7-8 hold 2 dark mics each (the documented default split).
std::pair<Topology, Partition> system1_partition();

/// 4-node ring: 8 mics per node (two bright nodes, two dark), speaker
/// counts (3, 2, 2, 2).
std::pair<Topology, Partition> system2_partition();

/// Left-stochastic combination weights: columns sum to one and the support
/// respects the neighborhoods.
struct CombinationMatrix {
  Eigen::MatrixXd entries;  // entry (l, k): weight node k applies to psi_l

  Eigen::Index size() const { return entries.rows(); }
};

/// a_{lk} = 1 / |N_k| for l in N_k.
CombinationMatrix uniform_combination(const Topology& top);

/// Metropolis-Hastings weights a_{lk} = 1 / (1 + max(deg_l, deg_k)) for
/// neighbors l != k, remainder on the diagonal. Doubly stochastic; on
/// regular graphs it coincides with the uniform rule.
CombinationMatrix metropolis_combination(const Topology& top);

/// Rows of H and entries of d owned by one node; the only per-iteration
/// data a node may read besides its own state.
struct LocalData {
  CMatrix atf_rows;   // |C_k| x L
  CVector desired;    // |C_k|
};

LocalData local_data(const ATFMatrix& atf, const DesiredField& d,
                     const Partition& part, int node);

struct NodeState {
  ControlFilter estimate;      // g_k, full length L
  ControlFilter intermediate;  // psi_k
  double step_size = 0.0;      // mu_k
};

struct NetworkState {
  std::vector<NodeState> nodes;
  long iteration = 0;

  int n_nodes() const { return static_cast<int>(nodes.size()); }
};

/// All-zero estimates of the given length with equal step sizes.
NetworkState make_network(int n_nodes, Eigen::Index filter_length,
                          double step_size, double freq_hz = 0.0);

/// Local gradient step: psi_k = g_k - mu_k sum_{l in C_k} h_l^H e_l with
/// e_l = h_l g_k - d_l, computed from the node's own rows only. Throws
/// DivergenceError carrying the node id on a non-finite result.
ControlFilter adapt(const NodeState& node, const LocalData& local, int node_id,
                    long iteration = 0, MacCounter* counter = nullptr);

/// g_k = sum_{l in N_k} a_{lk} psi_l. The message map must cover exactly
/// N_k, otherwise a ProtocolError is thrown.
ControlFilter combine(int node, const std::map<int, CVector>& neighbor_psis,
                      const CombinationMatrix& weights, const Topology& top,
                      MacCounter* counter = nullptr);

/// One synchronous adapt-then-combine step. Phase 1 computes every psi_k
/// against the iteration-n state; phase 2 combines neighbor psi values.
/// Node evaluation order within a phase cannot affect the result. Per-node
/// operation counters are advanced when `counters` is non-null (size N).
NetworkState dpmd_iteration(const NetworkState& state, const ATFMatrix& atf_n,
                            const DesiredField& d_n, const Partition& part,
                            const CombinationMatrix& weights, const Topology& top,
                            std::vector<MacCounter>* counters = nullptr);

/// max_{k,l} ||g_k - g_l||; zero for a single node.
double disagreement(const NetworkState& state);

/// The filter the network physically realizes: speaker l is driven by the
/// weight block of the node that owns l.
ControlFilter deployed_filter(const NetworkState& state, const Partition& part);

}  // namespace psz
