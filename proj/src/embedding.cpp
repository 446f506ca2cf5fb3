#include "lesioncal/embedding.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <stdexcept>

#include "lesioncal/random.hpp"

namespace lesioncal {

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

constexpr double kGradClip = 4.0;
constexpr double kTransformLearningRate = 0.25;

double clip(double g) { return std::clamp(g, -kGradClip, kGradClip); }

/// Index of the first occurrence of each distinct row, and for every row
/// the position of its representative in that list.
struct Dedup {
  std::vector<std::size_t> unique_rows;
  std::vector<std::size_t> rep_of;
};

Dedup dedup_rows(const MatrixXd& data) {
  Dedup d;
  d.rep_of.resize(static_cast<std::size_t>(data.rows()));
  std::map<std::vector<double>, std::size_t> seen;
  for (Eigen::Index r = 0; r < data.rows(); ++r) {
    std::vector<double> key(data.cols());
    for (Eigen::Index c = 0; c < data.cols(); ++c) key[static_cast<std::size_t>(c)] = data(r, c);
    const auto [it, inserted] = seen.emplace(std::move(key), d.unique_rows.size());
    if (inserted) d.unique_rows.push_back(static_cast<std::size_t>(r));
    d.rep_of[static_cast<std::size_t>(r)] = it->second;
  }
  return d;
}

double row_distance(const MatrixXd& a, Eigen::Index i, const MatrixXd& b, Eigen::Index j) {
  return (a.row(i) - b.row(j)).norm();
}

/// k nearest rows of `ref` for each row of `query`. Candidates are ranked
/// through the Gram expansion and the kept distances recomputed directly,
/// so exact duplicates get distance 0.
KnnGraph knn_between(const MatrixXd& query, const MatrixXd& ref, std::size_t k, bool exclude_self) {
  const VectorXd qn = query.rowwise().squaredNorm();
  const VectorXd rn = ref.rowwise().squaredNorm();
  KnnGraph g;
  g.indices.resize(static_cast<std::size_t>(query.rows()));
  g.distances.resize(static_cast<std::size_t>(query.rows()));
  const Eigen::Index chunk = 256;
  for (Eigen::Index start = 0; start < query.rows(); start += chunk) {
    const Eigen::Index len = std::min(chunk, query.rows() - start);
    const MatrixXd gram = query.middleRows(start, len) * ref.transpose();
    for (Eigen::Index r = 0; r < len; ++r) {
      const Eigen::Index qi = start + r;
      std::vector<std::pair<double, std::size_t>> cand;
      cand.reserve(static_cast<std::size_t>(ref.rows()));
      for (Eigen::Index j = 0; j < ref.rows(); ++j) {
        if (exclude_self && j == qi) continue;
        cand.emplace_back(std::max(0.0, qn(qi) + rn(j) - 2.0 * gram(r, j)), static_cast<std::size_t>(j));
      }
      // Keep a margin beyond k so rounding in the expansion cannot drop a
      // true neighbour, then rank on exact distances.
      const std::size_t keep = std::min(cand.size(), k + 8);
      std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(keep), cand.end());
      cand.resize(keep);
      for (auto& [d, j] : cand) d = row_distance(query, qi, ref, static_cast<Eigen::Index>(j));
      std::sort(cand.begin(), cand.end());
      cand.resize(std::min(k, cand.size()));
      auto& idx = g.indices[static_cast<std::size_t>(qi)];
      auto& dist = g.distances[static_cast<std::size_t>(qi)];
      for (const auto& [d, j] : cand) {
        idx.push_back(j);
        dist.push_back(d);
      }
    }
  }
  return g;
}

double smooth_sigma(const std::vector<double>& dist, double rho, double target, double mean_all) {
  double lo = 0.0;
  double hi = std::numeric_limits<double>::infinity();
  double mid = 1.0;
  for (int it = 0; it < 64; ++it) {
    double psum = 0.0;
    for (double d : dist) {
      const double x = d - rho;
      psum += x > 0.0 ? std::exp(-x / mid) : 1.0;
    }
    if (std::fabs(psum - target) < 1e-5) break;
    if (psum > target) {
      hi = mid;
      mid = 0.5 * (lo + hi);
    } else {
      lo = mid;
      mid = std::isinf(hi) ? mid * 2.0 : 0.5 * (lo + hi);
    }
  }
  const double mean_i = dist.empty() ? 0.0 : std::accumulate(dist.begin(), dist.end(), 0.0) / static_cast<double>(dist.size());
  const double floor = 1e-3 * (rho > 0.0 ? mean_i : mean_all);
  return std::max(mid, floor);
}

double membership(double d, double rho, double sigma) {
  const double x = d - rho;
  if (x <= 0.0 || sigma <= 0.0) return 1.0;
  return std::exp(-x / sigma);
}

double first_nonzero(const std::vector<double>& dist) {
  for (double d : dist) {
    if (d > 0.0) return d;
  }
  return 0.0;
}

struct Layout {
  std::vector<std::size_t> head, tail;
  std::vector<double> epochs_per_sample;
};

Layout make_layout(const std::vector<GraphEdge>& edges, std::size_t n_epochs) {
  double w_max = 0.0;
  for (const auto& e : edges) w_max = std::max(w_max, e.weight);
  Layout l;
  for (const auto& e : edges) {
    if (e.weight < w_max / static_cast<double>(n_epochs)) continue;
    const double eps = w_max / e.weight;
    l.head.push_back(e.i);
    l.tail.push_back(e.j);
    l.epochs_per_sample.push_back(eps);
    l.head.push_back(e.j);
    l.tail.push_back(e.i);
    l.epochs_per_sample.push_back(eps);
  }
  return l;
}

double attract_coeff(double d2, const CurveParams& c) {
  if (d2 <= 0.0) return 0.0;
  return -2.0 * c.a * c.b * std::pow(d2, c.b - 1.0) / (c.a * std::pow(d2, c.b) + 1.0);
}

double repel_coeff(double d2, const CurveParams& c) {
  return 2.0 * c.b / ((0.001 + d2) * (c.a * std::pow(d2, c.b) + 1.0));
}

/// SGD on the fuzzy cross-entropy. `head` rows live in `moving`; `tail`
/// rows and negative samples come from `fixed` when it is given, otherwise
/// from `moving` (and tails move too).
void optimize(MatrixXd& moving, const MatrixXd* fixed, const Layout& l, std::size_t n_epochs, double alpha0,
              std::size_t neg_rate, const CurveParams& curve, Rng& rng) {
  const bool move_other = fixed == nullptr;
  const MatrixXd& other_set = fixed ? *fixed : moving;
  const auto n_other = static_cast<std::uint64_t>(other_set.rows());
  const std::size_t m = l.head.size();
  std::vector<double> next_sample = l.epochs_per_sample;
  std::vector<double> eps_neg(m), next_neg(m);
  for (std::size_t e = 0; e < m; ++e) {
    eps_neg[e] = l.epochs_per_sample[e] / static_cast<double>(neg_rate);
    next_neg[e] = eps_neg[e];
  }
  double alpha = alpha0;
  for (std::size_t epoch = 0; epoch < n_epochs; ++epoch) {
    const double n = static_cast<double>(epoch);
    for (std::size_t e = 0; e < m; ++e) {
      if (next_sample[e] > n) continue;
      const auto j = static_cast<Eigen::Index>(l.head[e]);
      const auto k = static_cast<Eigen::Index>(l.tail[e]);
      {
        const double dx = moving(j, 0) - other_set(k, 0);
        const double dy = moving(j, 1) - other_set(k, 1);
        const double g = attract_coeff(dx * dx + dy * dy, curve);
        const double gx = clip(g * dx), gy = clip(g * dy);
        moving(j, 0) += gx * alpha;
        moving(j, 1) += gy * alpha;
        if (move_other) {
          moving(k, 0) -= gx * alpha;
          moving(k, 1) -= gy * alpha;
        }
      }
      next_sample[e] += l.epochs_per_sample[e];
      const auto n_neg = static_cast<std::size_t>((n - next_neg[e]) / eps_neg[e]);
      for (std::size_t p = 0; p < n_neg; ++p) {
        const auto s = static_cast<Eigen::Index>(rng.below(n_other));
        if (move_other && s == j) continue;
        const double dx = moving(j, 0) - other_set(s, 0);
        const double dy = moving(j, 1) - other_set(s, 1);
        const double d2 = dx * dx + dy * dy;
        if (d2 > 0.0) {
          const double g = repel_coeff(d2, curve);
          moving(j, 0) += clip(g * dx) * alpha;
          moving(j, 1) += clip(g * dy) * alpha;
        } else {
          moving(j, 0) += kGradClip * alpha;
          moving(j, 1) += kGradClip * alpha;
        }
      }
      next_neg[e] += static_cast<double>(n_neg) * eps_neg[e];
    }
    alpha = alpha0 * (1.0 - static_cast<double>(epoch + 1) / static_cast<double>(n_epochs));
  }
}

bool connected(std::size_t n, const std::vector<GraphEdge>& edges) {
  std::vector<std::size_t> parent(n);
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](std::size_t a) {
    while (parent[a] != a) a = parent[a] = parent[parent[a]];
    return a;
  };
  std::size_t components = n;
  for (const auto& e : edges) {
    const auto a = find(e.i), b = find(e.j);
    if (a != b) {
      parent[a] = b;
      --components;
    }
  }
  return components == 1;
}

constexpr Eigen::Index kMaxSpectral = 3000;

bool spectral_layout(std::size_t n, const std::vector<GraphEdge>& edges, MatrixXd& out) {
  if (n < 3 || static_cast<Eigen::Index>(n) > kMaxSpectral || !connected(n, edges)) return false;
  const auto nn = static_cast<Eigen::Index>(n);
  MatrixXd w = MatrixXd::Zero(nn, nn);
  for (const auto& e : edges) {
    w(static_cast<Eigen::Index>(e.i), static_cast<Eigen::Index>(e.j)) = e.weight;
    w(static_cast<Eigen::Index>(e.j), static_cast<Eigen::Index>(e.i)) = e.weight;
  }
  const VectorXd deg = w.rowwise().sum();
  const VectorXd inv_sqrt = deg.cwiseSqrt().cwiseInverse();
  const MatrixXd lap = MatrixXd::Identity(nn, nn) - inv_sqrt.asDiagonal() * w * inv_sqrt.asDiagonal();
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(lap);
  if (es.info() != Eigen::Success) return false;
  out = es.eigenvectors().middleCols(1, 2);
  // Fix the sign of each axis so results do not depend on solver internals.
  for (Eigen::Index c = 0; c < 2; ++c) {
    Eigen::Index arg = 0;
    out.col(c).cwiseAbs().maxCoeff(&arg);
    if (out(arg, c) < 0.0) out.col(c) *= -1.0;
  }
  return out.allFinite();
}

}  // namespace

void EmbeddingParams::validate() const {
  if (n_neighbors < 2) throw std::invalid_argument("embedding: n_neighbors must be >= 2");
  if (!(min_dist > 0.0)) throw std::invalid_argument("embedding: min_dist must be > 0");
  if (!(spread > 0.0) || min_dist > spread) throw std::invalid_argument("embedding: need 0 < min_dist <= spread");
  if (n_epochs < 1) throw std::invalid_argument("embedding: n_epochs must be >= 1");
  if (negative_sample_rate < 1) throw std::invalid_argument("embedding: negative_sample_rate must be >= 1");
  if (!(learning_rate > 0.0)) throw std::invalid_argument("embedding: learning_rate must be > 0");
}

CurveParams fit_curve(double min_dist, double spread) {
  const int n = 300;
  std::vector<double> xs(n), ys(n);
  for (int i = 0; i < n; ++i) {
    xs[i] = 3.0 * spread * static_cast<double>(i) / static_cast<double>(n - 1);
    ys[i] = xs[i] < min_dist ? 1.0 : std::exp(-(xs[i] - min_dist) / spread);
  }
  auto residuals = [&](double a, double b, VectorXd& r, MatrixXd* jac) {
    r.resize(n);
    if (jac) jac->resize(n, 2);
    for (int i = 0; i < n; ++i) {
      const double u = xs[i] > 0.0 ? std::pow(xs[i], 2.0 * b) : 0.0;
      const double den = 1.0 + a * u;
      r(i) = 1.0 / den - ys[i];
      if (jac) {
        (*jac)(i, 0) = -u / (den * den);
        (*jac)(i, 1) = xs[i] > 0.0 ? -a * u * 2.0 * std::log(xs[i]) / (den * den) : 0.0;
      }
    }
  };
  double a = 1.0, b = 1.0, lambda = 1e-3;
  VectorXd r;
  MatrixXd jac;
  residuals(a, b, r, &jac);
  double cost = r.squaredNorm();
  for (int it = 0; it < 500; ++it) {
    const Eigen::Matrix2d jtj = jac.transpose() * jac;
    const Eigen::Vector2d g = jac.transpose() * r;
    Eigen::Matrix2d damped = jtj;
    damped.diagonal() += lambda * jtj.diagonal();
    const Eigen::Vector2d step = damped.ldlt().solve(-g);
    VectorXd r_new;
    residuals(a + step(0), b + step(1), r_new, nullptr);
    const double c_new = r_new.squaredNorm();
    if (std::isfinite(c_new) && c_new < cost) {
      a += step(0);
      b += step(1);
      const bool done = cost - c_new < 1e-15 * std::max(1.0, cost);
      cost = c_new;
      residuals(a, b, r, &jac);
      lambda = std::max(lambda / 10.0, 1e-12);
      if (done) break;
    } else {
      lambda *= 10.0;
      if (lambda > 1e12) break;
    }
  }
  return {a, b};
}

KnnGraph exact_knn(const Eigen::MatrixXd& data, std::size_t k) {
  if (static_cast<std::size_t>(data.rows()) < k + 1) throw std::invalid_argument("exact_knn: need more than k rows");
  return knn_between(data, data, k, true);
}

SmoothKnn smooth_knn(const KnnGraph& knn, std::size_t k) {
  const double target = std::log2(static_cast<double>(k));
  double total = 0.0;
  std::size_t count = 0;
  for (const auto& d : knn.distances) {
    total += std::accumulate(d.begin(), d.end(), 0.0);
    count += d.size();
  }
  const double mean_all = count ? total / static_cast<double>(count) : 0.0;
  SmoothKnn s;
  for (const auto& d : knn.distances) {
    const double rho = first_nonzero(d);
    s.rho.push_back(rho);
    s.sigma.push_back(smooth_sigma(d, rho, target, mean_all));
  }
  return s;
}

std::vector<GraphEdge> fuzzy_graph(const KnnGraph& knn, const SmoothKnn& smooth) {
  std::map<std::pair<std::size_t, std::size_t>, std::pair<double, double>> directed;
  for (std::size_t i = 0; i < knn.indices.size(); ++i) {
    for (std::size_t t = 0; t < knn.indices[i].size(); ++t) {
      const std::size_t j = knn.indices[i][t];
      const double w = membership(knn.distances[i][t], smooth.rho[i], smooth.sigma[i]);
      if (i < j) {
        directed[{i, j}].first = w;
      } else {
        directed[{j, i}].second = w;
      }
    }
  }
  std::vector<GraphEdge> edges;
  for (const auto& [key, w] : directed) {
    const double u = 1.0 - (1.0 - w.first) * (1.0 - w.second);
    if (u > 0.0) edges.push_back({key.first, key.second, u});
  }
  return edges;
}

double EmbeddingModel::diameter() const {
  if (coords.rows() == 0) return 0.0;
  const Eigen::Vector2d lo = coords.colwise().minCoeff();
  const Eigen::Vector2d hi = coords.colwise().maxCoeff();
  return (hi - lo).norm();
}

EmbeddingModel fit_embedding(const Eigen::MatrixXd& data, const EmbeddingParams& params) {
  params.validate();
  if (static_cast<std::size_t>(data.rows()) < params.n_neighbors + 1)
    throw std::invalid_argument("fit_embedding: need at least n_neighbors + 1 vectors");
  if (!data.allFinite()) throw std::invalid_argument("fit_embedding: non-finite input");

  EmbeddingModel model;
  model.params = params;
  model.curve = fit_curve(params.min_dist, params.spread);
  model.data = data;
  model.coords = MatrixXd::Zero(data.rows(), 2);

  const Dedup dd = dedup_rows(data);
  const std::size_t n = dd.unique_rows.size();
  if (n < 2) {
    model.degenerate = true;
    return model;
  }
  MatrixXd uniq(static_cast<Eigen::Index>(n), data.cols());
  for (std::size_t u = 0; u < n; ++u) uniq.row(static_cast<Eigen::Index>(u)) = data.row(static_cast<Eigen::Index>(dd.unique_rows[u]));

  const std::size_t k = std::min(params.n_neighbors, n - 1);
  const auto knn = exact_knn(uniq, k);
  const auto smooth = smooth_knn(knn, std::max<std::size_t>(k, 2));
  const auto edges = fuzzy_graph(knn, smooth);

  Rng rng(params.seed);
  MatrixXd layout;
  if (spectral_layout(n, edges, layout)) {
    model.spectral_init = true;
    const double expansion = 10.0 / layout.cwiseAbs().maxCoeff();
    layout *= expansion;
    for (Eigen::Index i = 0; i < layout.size(); ++i) layout.data()[i] += 1e-4 * rng.normal();
  } else {
    layout.resize(static_cast<Eigen::Index>(n), 2);
    for (Eigen::Index i = 0; i < layout.size(); ++i) layout.data()[i] = rng.uniform(-10.0, 10.0);
  }

  const Layout l = make_layout(edges, params.n_epochs);
  optimize(layout, nullptr, l, params.n_epochs, params.learning_rate, params.negative_sample_rate, model.curve, rng);

  for (Eigen::Index r = 0; r < data.rows(); ++r) model.coords.row(r) = layout.row(static_cast<Eigen::Index>(dd.rep_of[static_cast<std::size_t>(r)]));
  return model;
}

Eigen::MatrixXd embed_new(const EmbeddingModel& model, const Eigen::MatrixXd& data) {
  if (data.cols() != model.data.cols()) throw std::invalid_argument("embed_new: dimension does not match the model");
  MatrixXd out = MatrixXd::Zero(data.rows(), 2);
  if (model.degenerate || data.rows() == 0) return out;

  const Dedup dd = dedup_rows(model.data);
  MatrixXd uniq(static_cast<Eigen::Index>(dd.unique_rows.size()), model.data.cols());
  MatrixXd uniq_coords(uniq.rows(), 2);
  for (std::size_t u = 0; u < dd.unique_rows.size(); ++u) {
    uniq.row(static_cast<Eigen::Index>(u)) = model.data.row(static_cast<Eigen::Index>(dd.unique_rows[u]));
    uniq_coords.row(static_cast<Eigen::Index>(u)) = model.coords.row(static_cast<Eigen::Index>(dd.unique_rows[u]));
  }
  const std::size_t k = std::min(model.params.n_neighbors, dd.unique_rows.size());
  const auto knn = knn_between(data, uniq, k, false);
  const auto smooth = smooth_knn(knn, std::max<std::size_t>(k, 2));
  const std::size_t epochs = std::max<std::size_t>(1, model.params.n_epochs / 3);

  for (Eigen::Index r = 0; r < data.rows(); ++r) {
    const auto& idx = knn.indices[static_cast<std::size_t>(r)];
    const auto& dist = knn.distances[static_cast<std::size_t>(r)];
    std::vector<GraphEdge> edges;
    Eigen::Vector2d init = Eigen::Vector2d::Zero();
    double wsum = 0.0;
    std::size_t exact = 0;
    Eigen::Vector2d exact_sum = Eigen::Vector2d::Zero();
    for (std::size_t t = 0; t < idx.size(); ++t) {
      const double w = membership(dist[t], smooth.rho[static_cast<std::size_t>(r)], smooth.sigma[static_cast<std::size_t>(r)]);
      const Eigen::Vector2d c = uniq_coords.row(static_cast<Eigen::Index>(idx[t])).transpose();
      init += w * c;
      wsum += w;
      if (dist[t] == 0.0) {
        exact_sum += c;
        ++exact;
      }
      edges.push_back({0, idx[t], w});
    }
    // A row equal to a training row is a duplicate of it, and duplicates
    // share one coordinate, as in fit_embedding.
    if (exact > 0) {
      out.row(r) = (exact_sum / static_cast<double>(exact)).transpose();
      continue;
    }
    init /= wsum;

    MatrixXd point(1, 2);
    point.row(0) = init.transpose();
    double w_max = 0.0;
    for (const auto& e : edges) w_max = std::max(w_max, e.weight);
    Layout l;
    for (const auto& e : edges) {
      if (e.weight < w_max / static_cast<double>(epochs)) continue;
      l.head.push_back(0);
      l.tail.push_back(e.j);
      l.epochs_per_sample.push_back(w_max / e.weight);
    }
    Rng rng(derive_seed(model.params.seed, 0x7E57ULL + static_cast<std::uint64_t>(r)));
    optimize(point, &uniq_coords, l, epochs, kTransformLearningRate, model.params.negative_sample_rate, model.curve, rng);
    out.row(r) = point.row(0);
  }
  return out;
}

nlohmann::ordered_json to_json(const EmbeddingModel& model) {
  nlohmann::ordered_json j;
  const auto& p = model.params;
  j["params"] = {{"n_neighbors", p.n_neighbors}, {"min_dist", p.min_dist},
                 {"spread", p.spread},           {"n_epochs", p.n_epochs},
                 {"negative_sample_rate", p.negative_sample_rate},
                 {"learning_rate", p.learning_rate}, {"seed", p.seed}};
  j["a"] = model.curve.a;
  j["b"] = model.curve.b;
  j["degenerate"] = model.degenerate;
  j["spectral_init"] = model.spectral_init;
  j["dimension"] = model.data.cols();
  auto& rows = j["training"] = nlohmann::ordered_json::array();
  for (Eigen::Index r = 0; r < model.data.rows(); ++r) {
    std::vector<double> v(model.data.cols());
    for (Eigen::Index c = 0; c < model.data.cols(); ++c) v[static_cast<std::size_t>(c)] = model.data(r, c);
    rows.push_back({{"x", model.coords(r, 0)}, {"y", model.coords(r, 1)}, {"vector", v}});
  }
  return j;
}

EmbeddingModel embedding_from_json(const nlohmann::json& j) {
  EmbeddingModel m;
  const auto& p = j.at("params");
  m.params.n_neighbors = p.at("n_neighbors").get<std::size_t>();
  m.params.min_dist = p.at("min_dist").get<double>();
  m.params.spread = p.at("spread").get<double>();
  m.params.n_epochs = p.at("n_epochs").get<std::size_t>();
  m.params.negative_sample_rate = p.at("negative_sample_rate").get<std::size_t>();
  m.params.learning_rate = p.at("learning_rate").get<double>();
  m.params.seed = p.at("seed").get<std::uint64_t>();
  m.curve = {j.at("a").get<double>(), j.at("b").get<double>()};
  m.degenerate = j.at("degenerate").get<bool>();
  m.spectral_init = j.value("spectral_init", false);
  const auto dim = j.at("dimension").get<Eigen::Index>();
  const auto& rows = j.at("training");
  m.data.resize(static_cast<Eigen::Index>(rows.size()), dim);
  m.coords.resize(static_cast<Eigen::Index>(rows.size()), 2);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto ri = static_cast<Eigen::Index>(r);
    m.coords(ri, 0) = rows[r].at("x").get<double>();
    m.coords(ri, 1) = rows[r].at("y").get<double>();
    const auto v = rows[r].at("vector").get<std::vector<double>>();
    if (static_cast<Eigen::Index>(v.size()) != dim) throw std::invalid_argument("embedding model: bad vector length");
    for (Eigen::Index c = 0; c < dim; ++c) m.data(ri, c) = v[static_cast<std::size_t>(c)];
  }
  return m;
}

}  // namespace lesioncal
