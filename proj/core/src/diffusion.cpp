#include "pszsim/diffusion.hpp"

#include <algorithm>
#include <numeric>
#include <queue>
#include <set>

namespace psz {

Topology::Topology(int n_nodes, const std::vector<std::pair<int, int>>& edges)
    : n_nodes_(n_nodes) {
  if (n_nodes < 1) throw ConfigError("topology needs at least one node");

  std::vector<std::set<int>> nbrs(static_cast<std::size_t>(n_nodes));
  for (int k = 0; k < n_nodes; ++k) nbrs[k].insert(k);
  for (const auto& [a, b] : edges) {
    if (a < 0 || a >= n_nodes || b < 0 || b >= n_nodes)
      throw ConfigError("edge (" + std::to_string(a) + ", " + std::to_string(b) +
                        ") references a node outside 0.." + std::to_string(n_nodes - 1));
    if (a == b) continue;
    nbrs[a].insert(b);
    nbrs[b].insert(a);
  }
  neighborhoods_.reserve(nbrs.size());
  for (auto& s : nbrs) neighborhoods_.emplace_back(s.begin(), s.end());

  // Connectivity check (BFS from node 0).
  std::vector<bool> seen(static_cast<std::size_t>(n_nodes), false);
  std::queue<int> frontier;
  frontier.push(0);
  seen[0] = true;
  int reached = 0;
  while (!frontier.empty()) {
    const int k = frontier.front();
    frontier.pop();
    ++reached;
    for (int l : neighborhoods_[k]) {
      if (!seen[l]) {
        seen[l] = true;
        frontier.push(l);
      }
    }
  }
  if (reached != n_nodes)
    throw ConfigError("topology is disconnected: reached " + std::to_string(reached) +
                      " of " + std::to_string(n_nodes) + " nodes");
}

bool Topology::adjacent(int a, int b) const {
  const auto& n = neighborhoods_[a];
  return std::binary_search(n.begin(), n.end(), b);
}

Topology ring_topology(int n_nodes) {
  if (n_nodes < 2) throw ConfigError("ring topology needs at least two nodes");
  std::vector<std::pair<int, int>> edges;
  for (int k = 0; k < n_nodes; ++k) edges.emplace_back(k, (k + 1) % n_nodes);
  return Topology(n_nodes, edges);
}

void Partition::validate(Eigen::Index n_mics, Eigen::Index n_speakers) const {
  if (mic_sets.size() != speaker_sets.size())
    throw ConfigError("partition: mic and speaker set counts differ");

  auto check_family = [](const std::vector<std::vector<int>>& sets, Eigen::Index total,
                         const char* what, bool allow_empty) {
    std::vector<int> seen(static_cast<std::size_t>(total), 0);
    for (std::size_t k = 0; k < sets.size(); ++k) {
      if (!allow_empty && sets[k].empty())
        throw ConfigError(std::string("partition: node ") + std::to_string(k) +
                          " owns no " + what);
      for (int idx : sets[k]) {
        if (idx < 0 || idx >= total)
          throw ConfigError(std::string("partition: ") + what + " index " +
                            std::to_string(idx) + " out of range 0.." +
                            std::to_string(total - 1));
        if (seen[idx]++)
          throw ConfigError(std::string("partition: ") + what + " index " +
                            std::to_string(idx) + " owned by two nodes");
      }
    }
    for (Eigen::Index i = 0; i < total; ++i)
      if (!seen[i])
        throw ConfigError(std::string("partition: ") + what + " index " +
                          std::to_string(i) + " owned by no node");
  };
  check_family(mic_sets, n_mics, "microphone", false);
  check_family(speaker_sets, n_speakers, "speaker", true);
}

namespace {

std::vector<std::vector<int>> contiguous_sets(const std::vector<int>& counts) {
  std::vector<std::vector<int>> sets;
  int next = 0;
  for (int c : counts) {
    std::vector<int> s(static_cast<std::size_t>(c));
    std::iota(s.begin(), s.end(), next);
    next += c;
    sets.push_back(std::move(s));
  }
  return sets;
}

}  // namespace

std::pair<Topology, Partition> system1_partition() {
  Partition part;
  // 32 mics over 9 nodes: four bright nodes with 4 mics, then the dark
  // zone as 4+4+4+2+2. One speaker per node.
  part.mic_sets = contiguous_sets({4, 4, 4, 4, 4, 4, 4, 2, 2});
  part.speaker_sets = contiguous_sets({1, 1, 1, 1, 1, 1, 1, 1, 1});
  part.validate(32, 9);
  return {ring_topology(9), std::move(part)};
}

std::pair<Topology, Partition> system2_partition() {
  Partition part;
  part.mic_sets = contiguous_sets({8, 8, 8, 8});
  part.speaker_sets = contiguous_sets({3, 2, 2, 2});
  part.validate(32, 9);
  return {ring_topology(4), std::move(part)};
}

CombinationMatrix uniform_combination(const Topology& top) {
  const int n = top.n_nodes();
  CombinationMatrix a;
  a.entries = Eigen::MatrixXd::Zero(n, n);
  for (int k = 0; k < n; ++k) {
    const auto& nbrs = top.neighborhood(k);
    const double w = 1.0 / static_cast<double>(nbrs.size());
    for (int l : nbrs) a.entries(l, k) = w;
  }
  return a;
}

CombinationMatrix metropolis_combination(const Topology& top) {
  const int n = top.n_nodes();
  CombinationMatrix a;
  a.entries = Eigen::MatrixXd::Zero(n, n);
  for (int k = 0; k < n; ++k) {
    double off_sum = 0.0;
    for (int l : top.neighborhood(k)) {
      if (l == k) continue;
      const double w = 1.0 / (1.0 + std::max(top.degree(k), top.degree(l)));
      a.entries(l, k) = w;
      off_sum += w;
    }
    a.entries(k, k) = 1.0 - off_sum;
  }
  return a;
}

LocalData local_data(const ATFMatrix& atf, const DesiredField& d,
                     const Partition& part, int node) {
  const auto& mics = part.mic_sets.at(static_cast<std::size_t>(node));
  LocalData local;
  local.atf_rows.resize(static_cast<Eigen::Index>(mics.size()), atf.speakers());
  local.desired.resize(static_cast<Eigen::Index>(mics.size()));
  for (std::size_t i = 0; i < mics.size(); ++i) {
    local.atf_rows.row(static_cast<Eigen::Index>(i)) = atf.entries.row(mics[i]);
    local.desired[static_cast<Eigen::Index>(i)] = d.values[mics[i]];
  }
  return local;
}

ControlFilter adapt(const NodeState& node, const LocalData& local, int node_id,
                    long iteration, MacCounter* counter) {
  if (local.atf_rows.cols() != node.estimate.weights.size())
    throw DimensionError("adapt: local ATF rows have " +
                         std::to_string(local.atf_rows.cols()) +
                         " columns, estimate has " +
                         std::to_string(node.estimate.weights.size()) + " weights");
  if (local.atf_rows.rows() != local.desired.size())
    throw DimensionError("adapt: local row/target count mismatch");

  const CVector e = local.atf_rows * node.estimate.weights - local.desired;
  const CVector grad = local.atf_rows.adjoint() * e;

  ControlFilter psi;
  psi.freq = node.estimate.freq;
  psi.weights = node.estimate.weights - node.step_size * grad;

  if (!psi.weights.allFinite()) throw DivergenceError("dpmd", node_id, iteration);

  if (counter) {
    const auto c = static_cast<double>(local.atf_rows.rows());
    const auto l = static_cast<double>(local.atf_rows.cols());
    counter->multiplications += (c + 1.0) * l;
    counter->additions += c * l;
  }
  return psi;
}

ControlFilter combine(int node, const std::map<int, CVector>& neighbor_psis,
                      const CombinationMatrix& weights, const Topology& top,
                      MacCounter* counter) {
  const auto& nbrs = top.neighborhood(node);
  if (neighbor_psis.size() != nbrs.size())
    throw ProtocolError("combine: node " + std::to_string(node) + " received " +
                        std::to_string(neighbor_psis.size()) + " messages for " +
                        std::to_string(nbrs.size()) + " neighbors");

  ControlFilter g;
  bool first = true;
  for (int l : nbrs) {
    const auto it = neighbor_psis.find(l);
    if (it == neighbor_psis.end())
      throw ProtocolError("combine: node " + std::to_string(node) +
                          " missing message from neighbor " + std::to_string(l));
    const double w = weights.entries(l, node);
    if (first) {
      g.weights = w * it->second;
      first = false;
    } else {
      g.weights += w * it->second;
    }
  }

  if (counter) {
    const auto n = static_cast<double>(nbrs.size());
    const auto len = static_cast<double>(g.weights.size());
    counter->multiplications += n * len;
    counter->additions += (n - 1.0) * len;
  }
  return g;
}

NetworkState make_network(int n_nodes, Eigen::Index filter_length, double step_size,
                          double freq_hz) {
  if (n_nodes < 1) throw ConfigError("network needs at least one node");
  NetworkState state;
  state.nodes.resize(static_cast<std::size_t>(n_nodes));
  for (auto& node : state.nodes) {
    node.estimate.weights = CVector::Zero(filter_length);
    node.estimate.freq = freq_hz;
    node.intermediate.weights = CVector::Zero(filter_length);
    node.intermediate.freq = freq_hz;
    node.step_size = step_size;
  }
  return state;
}

NetworkState dpmd_iteration(const NetworkState& state, const ATFMatrix& atf_n,
                            const DesiredField& d_n, const Partition& part,
                            const CombinationMatrix& weights, const Topology& top,
                            std::vector<MacCounter>* counters) {
  const int n = top.n_nodes();
  if (state.n_nodes() != n || part.n_nodes() != n)
    throw DimensionError("dpmd_iteration: state, partition and topology disagree on N");
  if (counters && static_cast<int>(counters->size()) != n)
    throw DimensionError("dpmd_iteration: counter vector must have one entry per node");

  NetworkState next = state;
  next.iteration = state.iteration + 1;

  // Adapt phase: every psi_k reads only the iteration-n state.
  for (int k = 0; k < n; ++k) {
    const LocalData local = local_data(atf_n, d_n, part, k);
    MacCounter* c = counters ? &(*counters)[k] : nullptr;
    next.nodes[k].intermediate = adapt(state.nodes[k], local, k, next.iteration, c);
  }

  // Combine phase: exchange psi with the one-hop neighborhood.
  for (int k = 0; k < n; ++k) {
    std::map<int, CVector> inbox;
    for (int l : top.neighborhood(k)) inbox.emplace(l, next.nodes[l].intermediate.weights);
    MacCounter* c = counters ? &(*counters)[k] : nullptr;
    ControlFilter combined = combine(k, inbox, weights, top, c);
    combined.freq = state.nodes[k].estimate.freq;
    next.nodes[k].estimate = std::move(combined);
  }
  return next;
}

double disagreement(const NetworkState& state) {
  double worst = 0.0;
  for (std::size_t k = 0; k < state.nodes.size(); ++k)
    for (std::size_t l = k + 1; l < state.nodes.size(); ++l)
      worst = std::max(worst, (state.nodes[k].estimate.weights -
                               state.nodes[l].estimate.weights).norm());
  return worst;
}

ControlFilter deployed_filter(const NetworkState& state, const Partition& part) {
  if (state.n_nodes() != part.n_nodes())
    throw DimensionError("deployed_filter: state and partition disagree on N");
  ControlFilter g;
  g.freq = state.nodes.empty() ? 0.0 : state.nodes.front().estimate.freq;
  const Eigen::Index length =
      state.nodes.empty() ? 0 : state.nodes.front().estimate.weights.size();
  g.weights = CVector::Zero(length);
  for (int k = 0; k < part.n_nodes(); ++k)
    for (int idx : part.speaker_sets[static_cast<std::size_t>(k)])
      g.weights[idx] = state.nodes[static_cast<std::size_t>(k)].estimate.weights[idx];
  return g;
}

}  // namespace psz
