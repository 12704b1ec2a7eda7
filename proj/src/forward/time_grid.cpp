#include <algorithm>
#include <cmath>

#include "fisherpde/forward.hpp"

namespace fisherpde::forward {

namespace {

void push_pairs(std::vector<double>& nodes, double start, double end, double max_step) {
  const double length = end - start;
  const int pairs = std::max(1, static_cast<int>(std::ceil(length / (2.0 * max_step) - 1e-9)));
  const double h = length / (2.0 * pairs);
  for (int p = 0; p < pairs; ++p) {
    nodes.push_back(start + (2 * p + 1) * h);
    nodes.push_back(p + 1 == pairs ? end : start + (2 * p + 2) * h);
  }
}

}  // namespace

TimeGrid TimeGrid::graded(double horizon, double max_step, double min_step, double growth,
                          std::vector<double> breakpoints) {
  if (!(horizon > 0.0)) throw std::invalid_argument("time horizon must be positive");
  if (!(max_step > 0.0) || !(min_step > 0.0)) throw std::invalid_argument("time steps must be positive");
  if (!(growth >= 1.0)) throw std::invalid_argument("step growth factor must be >= 1");
  min_step = std::min(min_step, max_step);
  std::vector<double> ends;
  for (double b : breakpoints) {
    if (!(b > 0.0 && b <= horizon)) throw std::invalid_argument("time breakpoint outside (0, T]");
    if (b < horizon) ends.push_back(b);
  }
  ends.push_back(horizon);
  std::sort(ends.begin(), ends.end());
  ends.erase(std::unique(ends.begin(), ends.end()), ends.end());

  TimeGrid g;
  g.nodes_.push_back(0.0);
  double t = 0.0;
  double h = min_step;
  const double first_end = ends.front();
  while (t + 2.0 * h < first_end * (1.0 - 1e-12)) {
    g.nodes_.push_back(t + h);
    g.nodes_.push_back(t + 2.0 * h);
    t += 2.0 * h;
    h = std::min(h * growth, max_step);
  }
  push_pairs(g.nodes_, t, first_end, h);
  for (std::size_t s = 1; s < ends.size(); ++s) push_pairs(g.nodes_, ends[s - 1], ends[s], max_step);
  return g;
}

TimeGrid TimeGrid::uniform(double horizon, int pairs) {
  if (!(horizon > 0.0) || pairs < 1) throw std::invalid_argument("uniform time grid needs T > 0 and pairs >= 1");
  TimeGrid g;
  g.nodes_.push_back(0.0);
  push_pairs(g.nodes_, 0.0, horizon, horizon / (2.0 * pairs));
  return g;
}

TimeGrid TimeGrid::from_nodes(std::vector<double> nodes) {
  if (nodes.size() < 3 || nodes.size() % 2 == 0 || nodes.front() != 0.0)
    throw std::invalid_argument("time nodes must start at 0 and span an even number of intervals");
  for (std::size_t i = 1; i < nodes.size(); ++i)
    if (!(nodes[i] > nodes[i - 1])) throw std::invalid_argument("time nodes must be strictly increasing");
  TimeGrid g;
  g.nodes_ = std::move(nodes);
  return g;
}

int TimeGrid::node_index(double t) const {
  const double tol = 1e-12 * std::max(1.0, horizon());
  auto it = std::lower_bound(nodes_.begin(), nodes_.end(), t - tol);
  if (it != nodes_.end() && std::abs(*it - t) <= tol) return static_cast<int>(it - nodes_.begin());
  return -1;
}

int TimeGrid::locate(double t) const {
  const double tol = 1e-12 * std::max(1.0, horizon());
  if (t < -tol || t > horizon() + tol) throw std::out_of_range("time outside [0, T]");
  auto it = std::upper_bound(nodes_.begin(), nodes_.end(), t);
  int i = static_cast<int>(it - nodes_.begin()) - 1;
  return std::clamp(i, 0, size() - 2);
}

std::vector<double> TimeGrid::simpson_weights() const { return simpson_weights(0.0, horizon()); }

std::vector<double> TimeGrid::simpson_weights(double a, double b) const {
  const int ia = node_index(a), ib = node_index(b);
  if (ia < 0 || ib < 0 || ia % 2 != 0 || ib % 2 != 0 || ib < ia)
    throw std::invalid_argument("Simpson window must start and end at pair boundaries");
  std::vector<double> w(nodes_.size(), 0.0);
  for (int i = ia; i < ib; i += 2) {
    const double h1 = nodes_[i + 1] - nodes_[i];
    const double h2 = nodes_[i + 2] - nodes_[i + 1];
    const double s = h1 + h2;
    w[i] += s / 6.0 * (2.0 - h2 / h1);
    w[i + 1] += s * s * s / (6.0 * h1 * h2);
    w[i + 2] += s / 6.0 * (2.0 - h1 / h2);
  }
  return w;
}

}  // namespace fisherpde::forward
