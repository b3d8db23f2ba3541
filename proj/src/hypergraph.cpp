#include "hyperfuse/hypergraph.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <string>

#include "hyperfuse/ops.hpp"
#include "hyperfuse/params.hpp"

namespace hyperfuse {

Hypergraph Hypergraph::from_edges(std::size_t num_vertices, const std::vector<std::vector<std::uint32_t>>& edges) {
  if (num_vertices == 0) throw ParameterError("hypergraph needs at least one vertex");
  Hypergraph hg;
  hg.num_vertices_ = num_vertices;
  hg.vertex_degree_.assign(num_vertices, 0);
  for (const auto& e : edges) {
    if (e.empty()) throw ParameterError("hyperedge with no members");
    std::vector<std::uint32_t> sorted = e;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
      throw ParameterError("hyperedge lists a vertex twice");
    if (sorted.back() >= num_vertices)
      throw ParameterError("hyperedge member " + std::to_string(sorted.back()) + " out of range");
    for (auto v : sorted) ++hg.vertex_degree_[v];
    hg.edge_members_.insert(hg.edge_members_.end(), sorted.begin(), sorted.end());
    hg.edge_offsets_.push_back(hg.edge_members_.size());
    hg.edge_degree_.push_back(sorted.size());
  }
  hg.vertex_offsets_.assign(num_vertices + 1, 0);
  for (std::size_t v = 0; v < num_vertices; ++v) hg.vertex_offsets_[v + 1] = hg.vertex_offsets_[v] + hg.vertex_degree_[v];
  hg.vertex_edges_.resize(hg.edge_members_.size());
  std::vector<std::size_t> cursor(hg.vertex_offsets_.begin(), hg.vertex_offsets_.end() - 1);
  for (std::size_t e = 0; e < hg.num_edges(); ++e)
    for (auto v : hg.members(e)) hg.vertex_edges_[cursor[v]++] = static_cast<std::uint32_t>(e);
  return hg;
}

Tensor<double> Hypergraph::incidence() const {
  Tensor<double> h(Shape{num_vertices_, std::max<std::size_t>(num_edges(), 1)});
  for (std::size_t e = 0; e < num_edges(); ++e)
    for (auto v : members(e)) h.at(v, e) = 1.0;
  return h;
}

template <typename T>
Tensor<double> pairwise_distances(const Tensor<T>& features) {
  if (features.rank() != 2) throw ShapeError("pairwise_distances: features must be [N,C], got " + shape_str(features.shape()));
  std::size_t n = features.dim(0), c = features.dim(1);
  Tensor<double> d(Shape{n, n});
  for (std::size_t u = 0; u < n; ++u) {
    const T* xu = features.ptr() + u * c;
    for (std::size_t v = u + 1; v < n; ++v) {
      const T* xv = features.ptr() + v * c;
      double s = 0.0;
      for (std::size_t k = 0; k < c; ++k) {
        double diff = static_cast<double>(xu[k]) - static_cast<double>(xv[k]);
        s += diff * diff;
      }
      d.at(u, v) = d.at(v, u) = std::sqrt(s);
    }
  }
  return d;
}

Hypergraph build_hypergraph_from_distances(const Tensor<double>& distances, double lambda) {
  if (!(lambda > 0.0)) throw ParameterError("build_hypergraph: lambda must be > 0");
  std::size_t n = distances.dim(0);
  std::vector<std::vector<std::uint32_t>> edges(n);
  for (std::size_t v = 0; v < n; ++v)
    for (std::size_t u = 0; u < n; ++u)
      if (distances.at(u, v) < lambda) edges[v].push_back(static_cast<std::uint32_t>(u));
  return Hypergraph::from_edges(n, edges);
}

template <typename T>
Hypergraph build_hypergraph(const Tensor<T>& features, double lambda) {
  if (!(lambda > 0.0)) throw ParameterError("build_hypergraph: lambda must be > 0");
  return build_hypergraph_from_distances(pairwise_distances(features), lambda);
}

template <typename T>
double adaptive_lambda(const Tensor<T>& features, const LambdaRule& rule) {
  if (features.rank() != 2) throw ShapeError("adaptive_lambda: features must be [N,C]");
  if (rule.quantile < 0.0 || rule.quantile > 1.0) throw ParameterError("adaptive_lambda: quantile must be in [0,1]");
  std::size_t n = features.dim(0), c = features.dim(1);
  auto dist = [&](std::size_t u, std::size_t v) {
    double s = 0.0;
    for (std::size_t k = 0; k < c; ++k) {
      double diff = static_cast<double>(features.at(u, k)) - static_cast<double>(features.at(v, k));
      s += diff * diff;
    }
    return std::sqrt(s);
  };
  std::vector<double> sample;
  std::size_t all_pairs = n * (n - 1) / 2;
  if (all_pairs <= rule.max_pairs) {
    for (std::size_t u = 0; u < n; ++u)
      for (std::size_t v = u + 1; v < n; ++v) sample.push_back(dist(u, v));
  } else {
    Rng rng(rule.seed);
    sample.reserve(rule.max_pairs);
    while (sample.size() < rule.max_pairs) {
      std::size_t u = rng.below(n), v = rng.below(n);
      if (u != v) sample.push_back(dist(u, v));
    }
  }
  if (sample.empty()) return rule.min_lambda;
  std::sort(sample.begin(), sample.end());
  double pos = rule.quantile * static_cast<double>(sample.size() - 1);
  auto lo = static_cast<std::size_t>(std::floor(pos));
  std::size_t hi = std::min(lo + 1, sample.size() - 1);
  double q = sample[lo] + (pos - static_cast<double>(lo)) * (sample[hi] - sample[lo]);
  return std::max(q, rule.min_lambda);
}

namespace {

void require_vertex_rows(const Shape& s, const Hypergraph& hg, const char* op) {
  if (s.size() != 2 || s[0] != hg.num_vertices())
    throw ShapeError(std::string(op) + ": features must be [" + std::to_string(hg.num_vertices()) + ",C], got " +
                     shape_str(s));
}

void require_covered(const Hypergraph& hg, const char* op) {
  for (std::size_t v = 0; v < hg.num_vertices(); ++v)
    if (hg.vertex_degree()[v] == 0)
      throw ContractError(std::string(op) + ": vertex " + std::to_string(v) + " belongs to no hyperedge");
}

void check_theta(const Shape& xs, const Shape& ts, bool residual, const char* op) {
  if (ts.size() != 2 || ts[0] != xs[1])
    throw ShapeError(std::string(op) + ": theta must be [" + std::to_string(xs[1]) + ",C'], got " + shape_str(ts));
  if (residual && ts[1] != ts[0])
    throw ShapeError(std::string(op) + ": residual connection needs a square theta, got " + shape_str(ts));
}

// [N,C] -> [E,C], mean over edge members.
template <typename T>
Var<T> edge_mean(Var<T> x, const std::shared_ptr<const Hypergraph>& shared) {
  const Hypergraph& hg = *shared;
  std::size_t c = x.shape()[1];
  Tensor<T> out(Shape{std::max<std::size_t>(hg.num_edges(), 1), c});
  const auto& xv = x.value();
  for (std::size_t e = 0; e < hg.num_edges(); ++e) {
    T inv = T(1) / static_cast<T>(hg.edge_degree()[e]);
    for (auto v : hg.members(e))
      for (std::size_t k = 0; k < c; ++k) out.at(e, k) += xv.at(v, k);
    for (std::size_t k = 0; k < c; ++k) out.at(e, k) *= inv;
  }
  return x.tape().record("edge_mean", std::move(out), {x}, [shared, c](BackwardContext<T>& ctx) {
    const Hypergraph& hg = *shared;
    auto* gx = ctx.input_grad(0);
    const auto& g = ctx.grad_output();
    for (std::size_t e = 0; e < hg.num_edges(); ++e) {
      T inv = T(1) / static_cast<T>(hg.edge_degree()[e]);
      for (auto v : hg.members(e))
        for (std::size_t k = 0; k < c; ++k) gx->at(v, k) += g.at(e, k) * inv;
    }
  });
}

// [E,C] -> [N,C], mean over incident edges.
template <typename T>
Var<T> vertex_mean(Var<T> y, const std::shared_ptr<const Hypergraph>& shared) {
  const Hypergraph& hg = *shared;
  std::size_t c = y.shape()[1];
  Tensor<T> out(Shape{hg.num_vertices(), c});
  const auto& yv = y.value();
  for (std::size_t v = 0; v < hg.num_vertices(); ++v) {
    T inv = T(1) / static_cast<T>(hg.vertex_degree()[v]);
    for (auto e : hg.incident_edges(v))
      for (std::size_t k = 0; k < c; ++k) out.at(v, k) += yv.at(e, k);
    for (std::size_t k = 0; k < c; ++k) out.at(v, k) *= inv;
  }
  return y.tape().record("vertex_mean", std::move(out), {y}, [shared, c](BackwardContext<T>& ctx) {
    const Hypergraph& hg = *shared;
    auto* gy = ctx.input_grad(0);
    const auto& g = ctx.grad_output();
    for (std::size_t v = 0; v < hg.num_vertices(); ++v) {
      T inv = T(1) / static_cast<T>(hg.vertex_degree()[v]);
      for (auto e : hg.incident_edges(v))
        for (std::size_t k = 0; k < c; ++k) gy->at(e, k) += g.at(v, k) * inv;
    }
  });
}

// H^T y : [N,C] -> [E,C], plain sums.
template <typename T>
Var<T> incidence_t_product(Var<T> y, const std::shared_ptr<const Hypergraph>& shared) {
  const Hypergraph& hg = *shared;
  std::size_t c = y.shape()[1];
  Tensor<T> out(Shape{std::max<std::size_t>(hg.num_edges(), 1), c});
  const auto& yv = y.value();
  for (std::size_t e = 0; e < hg.num_edges(); ++e)
    for (auto v : hg.members(e))
      for (std::size_t k = 0; k < c; ++k) out.at(e, k) += yv.at(v, k);
  return y.tape().record("incidence_t_product", std::move(out), {y}, [shared, c](BackwardContext<T>& ctx) {
    const Hypergraph& hg = *shared;
    auto* gy = ctx.input_grad(0);
    const auto& g = ctx.grad_output();
    for (std::size_t e = 0; e < hg.num_edges(); ++e)
      for (auto v : hg.members(e))
        for (std::size_t k = 0; k < c; ++k) gy->at(v, k) += g.at(e, k);
  });
}

// H z : [E,C] -> [N,C], plain sums.
template <typename T>
Var<T> incidence_product(Var<T> z, const std::shared_ptr<const Hypergraph>& shared) {
  const Hypergraph& hg = *shared;
  std::size_t c = z.shape()[1];
  Tensor<T> out(Shape{hg.num_vertices(), c});
  const auto& zv = z.value();
  for (std::size_t v = 0; v < hg.num_vertices(); ++v)
    for (auto e : hg.incident_edges(v))
      for (std::size_t k = 0; k < c; ++k) out.at(v, k) += zv.at(e, k);
  return z.tape().record("incidence_product", std::move(out), {z}, [shared, c](BackwardContext<T>& ctx) {
    const Hypergraph& hg = *shared;
    auto* gz = ctx.input_grad(0);
    const auto& g = ctx.grad_output();
    for (std::size_t v = 0; v < hg.num_vertices(); ++v)
      for (auto e : hg.incident_edges(v))
        for (std::size_t k = 0; k < c; ++k) gz->at(e, k) += g.at(v, k);
  });
}

// Row r scaled by 1 / degree[r] (diagonal inverse degree matrix).
template <typename T>
Var<T> inverse_degree_scale(Var<T> x, const std::shared_ptr<const Hypergraph>& shared, bool by_edge) {
  const auto& degree = by_edge ? shared->edge_degree() : shared->vertex_degree();
  std::size_t rows = x.shape()[0], c = x.shape()[1];
  Tensor<T> out = x.value();
  for (std::size_t r = 0; r < std::min(rows, degree.size()); ++r) {
    T inv = T(1) / static_cast<T>(degree[r]);
    for (std::size_t k = 0; k < c; ++k) out.at(r, k) *= inv;
  }
  return x.tape().record("inverse_degree_scale", std::move(out), {x}, [shared, by_edge, rows, c](BackwardContext<T>& ctx) {
    const auto& degree = by_edge ? shared->edge_degree() : shared->vertex_degree();
    auto* gx = ctx.input_grad(0);
    const auto& g = ctx.grad_output();
    for (std::size_t r = 0; r < std::min(rows, degree.size()); ++r) {
      T inv = T(1) / static_cast<T>(degree[r]);
      for (std::size_t k = 0; k < c; ++k) gx->at(r, k) += g.at(r, k) * inv;
    }
  });
}

}  // namespace

template <typename T>
Var<T> hyperconv_spatial(Var<T> x, const Hypergraph& hg, Var<T> theta, bool residual) {
  require_vertex_rows(x.shape(), hg, "hyperconv_spatial");
  check_theta(x.shape(), theta.shape(), residual, "hyperconv_spatial");
  require_covered(hg, "hyperconv_spatial");
  auto shared = std::make_shared<const Hypergraph>(hg);
  Var<T> edge_features = matmul(edge_mean(x, shared), theta);
  Var<T> aggregated = vertex_mean(edge_features, shared);
  return residual ? add(x, aggregated) : aggregated;
}

template <typename T>
Var<T> hyperconv_matrix(Var<T> x, const Hypergraph& hg, Var<T> theta, bool residual) {
  require_vertex_rows(x.shape(), hg, "hyperconv_matrix");
  check_theta(x.shape(), theta.shape(), residual, "hyperconv_matrix");
  require_covered(hg, "hyperconv_matrix");
  Var<T> transformed = matmul(x, theta);
  auto shared = std::make_shared<const Hypergraph>(hg);
  Var<T> per_edge = inverse_degree_scale(incidence_t_product(transformed, shared), shared, true);
  Var<T> aggregated = inverse_degree_scale(incidence_product(per_edge, shared), shared, false);
  return residual ? add(x, aggregated) : aggregated;
}

template Tensor<double> pairwise_distances(const Tensor<float>&);
template Tensor<double> pairwise_distances(const Tensor<double>&);
template Hypergraph build_hypergraph(const Tensor<float>&, double);
template Hypergraph build_hypergraph(const Tensor<double>&, double);
template double adaptive_lambda(const Tensor<float>&, const LambdaRule&);
template double adaptive_lambda(const Tensor<double>&, const LambdaRule&);
template Var<float> hyperconv_spatial(Var<float>, const Hypergraph&, Var<float>, bool);
template Var<double> hyperconv_spatial(Var<double>, const Hypergraph&, Var<double>, bool);
template Var<float> hyperconv_matrix(Var<float>, const Hypergraph&, Var<float>, bool);
template Var<double> hyperconv_matrix(Var<double>, const Hypergraph&, Var<double>, bool);

}  // namespace hyperfuse
