#include "lesioncal/morphology.hpp"

#include <map>
#include <stdexcept>

#include "lesioncal/metrics.hpp"

namespace lesioncal {

std::vector<double> lesion_vector(const BinaryMask& mask, std::size_t factor) {
  if (factor < 1) throw std::invalid_argument("lesion_vector: factor must be >= 1");
  const Dims& d = mask.dims();
  const Dims out{(d.nx + factor - 1) / factor, (d.ny + factor - 1) / factor, (d.nz + factor - 1) / factor};
  std::vector<double> sum(out.count(), 0.0), count(out.count(), 0.0);
  for (std::size_t z = 0; z < d.nz; ++z)
    for (std::size_t y = 0; y < d.ny; ++y)
      for (std::size_t x = 0; x < d.nx; ++x) {
        const std::size_t o = x / factor + out.nx * (y / factor + out.ny * (z / factor));
        sum[o] += mask.volume().at(x, y, z);
        count[o] += 1.0;
      }
  std::vector<double> v(out.count());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = sum[i] / count[i] >= 0.5 ? 1.0 : 0.0;
  return v;
}

Eigen::MatrixXd lesion_matrix(std::span<const BinaryMask> masks, std::size_t factor) {
  if (masks.empty()) throw std::invalid_argument("lesion_matrix: no masks");
  const auto first = lesion_vector(masks.front(), factor);
  Eigen::MatrixXd m(static_cast<Eigen::Index>(masks.size()), static_cast<Eigen::Index>(first.size()));
  for (std::size_t r = 0; r < masks.size(); ++r) {
    require_same_grid(masks.front().volume(), masks[r].volume(), "lesion_matrix");
    const auto v = r == 0 ? first : lesion_vector(masks[r], factor);
    for (std::size_t c = 0; c < v.size(); ++c) m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = v[c];
  }
  return m;
}

AlignmentTransform compute_alignment(const Eigen::MatrixXd& gt) {
  if (gt.rows() == 0 || gt.cols() != 2) throw std::invalid_argument("compute_alignment: need n x 2 coordinates");
  AlignmentTransform t;
  for (Eigen::Index a = 0; a < 2; ++a) {
    const double lo = gt.col(a).minCoeff();
    const double hi = gt.col(a).maxCoeff();
    if (!(hi > lo)) throw std::invalid_argument("compute_alignment: zero range on axis " + std::to_string(a));
    t.min[static_cast<std::size_t>(a)] = lo;
    t.range[static_cast<std::size_t>(a)] = hi - lo;
  }
  return t;
}

Eigen::MatrixXd apply_alignment(const AlignmentTransform& t, const Eigen::MatrixXd& coords) {
  if (coords.cols() != 2) throw std::invalid_argument("apply_alignment: need n x 2 coordinates");
  Eigen::MatrixXd out(coords.rows(), 2);
  for (Eigen::Index a = 0; a < 2; ++a) {
    const auto i = static_cast<std::size_t>(a);
    out.col(a) = (coords.col(a).array() - t.min[i]) / t.range[i];
  }
  return out;
}

Eigen::MatrixXd invert_alignment(const AlignmentTransform& t, const Eigen::MatrixXd& aligned) {
  if (aligned.cols() != 2) throw std::invalid_argument("invert_alignment: need n x 2 coordinates");
  Eigen::MatrixXd out(aligned.rows(), 2);
  for (Eigen::Index a = 0; a < 2; ++a) {
    const auto i = static_cast<std::size_t>(a);
    out.col(a) = aligned.col(a).array() * t.range[i] + t.min[i];
  }
  return out;
}

DistanceSummary embedding_distances(std::span<const std::string> gt_ids, const Eigen::MatrixXd& gt,
                                    std::span<const std::string> pred_ids, const Eigen::MatrixXd& pred) {
  if (static_cast<Eigen::Index>(gt_ids.size()) != gt.rows() || static_cast<Eigen::Index>(pred_ids.size()) != pred.rows())
    throw std::invalid_argument("embedding_distances: id count does not match coordinates");
  if (gt_ids.size() != pred_ids.size()) throw std::invalid_argument("embedding_distances: id sets differ in size");
  if (gt_ids.empty()) throw std::invalid_argument("embedding_distances: no studies");
  std::map<std::string, Eigen::Index> pred_row;
  for (std::size_t i = 0; i < pred_ids.size(); ++i) {
    if (!pred_row.emplace(pred_ids[i], static_cast<Eigen::Index>(i)).second)
      throw std::invalid_argument("embedding_distances: duplicate prediction id " + pred_ids[i]);
  }
  DistanceSummary s;
  for (std::size_t i = 0; i < gt_ids.size(); ++i) {
    const auto it = pred_row.find(gt_ids[i]);
    if (it == pred_row.end()) throw std::invalid_argument("embedding_distances: no prediction for study " + gt_ids[i]);
    s.ids.push_back(gt_ids[i]);
    s.distances.push_back((gt.row(static_cast<Eigen::Index>(i)) - pred.row(it->second)).norm());
  }
  s.mean = stats::mean(s.distances);
  s.median = percentile_linear(s.distances, 50.0);
  return s;
}

ModelComparison compare_models(std::span<const double> dist_a, std::span<const double> dist_b) {
  ModelComparison c;
  try {
    c.test = stats::paired_t(dist_a, dist_b);
  } catch (const stats::ZeroVarianceError&) {
    c.indistinguishable = true;
  }
  return c;
}

}  // namespace lesioncal
