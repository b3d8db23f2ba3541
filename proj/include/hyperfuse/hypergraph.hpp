#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "hyperfuse/tape.hpp"
#include "hyperfuse/tensor.hpp"

namespace hyperfuse {

// Hyperedge membership in compressed sparse rows, with the vertex->edge
// transpose and both degree vectors. Immutable once built.
class Hypergraph {
 public:
  // Members of each edge; duplicates inside an edge are rejected.
  static Hypergraph from_edges(std::size_t num_vertices, const std::vector<std::vector<std::uint32_t>>& edges);

  std::size_t num_vertices() const { return num_vertices_; }
  std::size_t num_edges() const { return edge_degree_.size(); }

  std::span<const std::uint32_t> members(std::size_t edge) const {
    return {edge_members_.data() + edge_offsets_[edge], edge_offsets_[edge + 1] - edge_offsets_[edge]};
  }
  std::span<const std::uint32_t> incident_edges(std::size_t vertex) const {
    return {vertex_edges_.data() + vertex_offsets_[vertex], vertex_offsets_[vertex + 1] - vertex_offsets_[vertex]};
  }
  const std::vector<std::size_t>& vertex_degree() const { return vertex_degree_; }
  const std::vector<std::size_t>& edge_degree() const { return edge_degree_; }

  // Dense |V| x |E| incidence: H[v,e] = 1 iff v is a member of e.
  Tensor<double> incidence() const;

 private:
  std::size_t num_vertices_ = 0;
  std::vector<std::size_t> edge_offsets_{0};
  std::vector<std::uint32_t> edge_members_;
  std::vector<std::size_t> vertex_offsets_;
  std::vector<std::uint32_t> vertex_edges_;
  std::vector<std::size_t> vertex_degree_;
  std::vector<std::size_t> edge_degree_;
};

// Euclidean distances between the rows of features [N,C].
template <typename T>
Tensor<double> pairwise_distances(const Tensor<T>& features);

// One hyperedge per centroid vertex v: {u : ||x_u - x_v|| < lambda}.
template <typename T>
Hypergraph build_hypergraph(const Tensor<T>& features, double lambda);
Hypergraph build_hypergraph_from_distances(const Tensor<double>& distances, double lambda);

// Data-adaptive threshold: the q-quantile (linear interpolation) of
// distances over every vertex pair, or over max_pairs pairs drawn with the
// given seed when there are more. Never below min_lambda.
struct LambdaRule {
  double quantile = 0.1;
  std::size_t max_pairs = 512;
  std::uint64_t seed = 0x5eed;
  double min_lambda = 1e-12;
};

template <typename T>
double adaptive_lambda(const Tensor<T>& features, const LambdaRule& rule);

// Two-stage mean message passing with shared theta [C,C']:
//   X_e  = mean_{v in e} X_v * theta
//   X'_v = X_v + mean_{e ni v} X_e
// The residual term requires C == C'.
template <typename T>
Var<T> hyperconv_spatial(Var<T> x, const Hypergraph& hg, Var<T> theta, bool residual = true);

// X + Dv^-1 H De^-1 H^T X theta, evaluated with sparse products.
template <typename T>
Var<T> hyperconv_matrix(Var<T> x, const Hypergraph& hg, Var<T> theta, bool residual = true);

}  // namespace hyperfuse
