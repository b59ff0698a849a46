#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cstdint>
#include <unordered_map>
#include <vector>

#include "hula/env.hpp"

namespace hula {

/// Dense (observation-key x action) table. Rows are allocated on first write;
/// reads of an absent key return the default value without inserting.
template <typename Scalar>
class ValueTable {
 public:
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using Counts = Eigen::Matrix<std::uint64_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using Row = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

  explicit ValueTable(int num_actions = kNumMoves, Scalar default_value = Scalar(0))
      : num_actions_(num_actions), default_(default_value) {}

  int num_actions() const { return num_actions_; }
  Scalar default_value() const { return default_; }
  std::size_t size() const { return keys_.size(); }
  bool contains(ObsKey k) const { return index_.count(k) != 0; }

  /// Keys in insertion order.
  const std::vector<ObsKey>& keys() const { return keys_; }

  std::vector<ObsKey> sorted_keys() const {
    std::vector<ObsKey> out = keys_;
    std::sort(out.begin(), out.end());
    return out;
  }

  Scalar operator()(ObsKey k, int a) const {
    auto it = index_.find(k);
    return it == index_.end() ? default_ : values_(it->second, a);
  }

  /// Action values of `k` (a default-filled row when the key is absent).
  Row row(ObsKey k) const {
    auto it = index_.find(k);
    if (it == index_.end()) return Row::Constant(num_actions_, default_);
    return values_.row(it->second);
  }

  std::uint64_t visits(ObsKey k, int a) const {
    auto it = index_.find(k);
    return it == index_.end() ? 0 : visits_(it->second, a);
  }

  std::uint64_t total_visits(ObsKey k) const {
    auto it = index_.find(k);
    return it == index_.end() ? 0 : visits_.row(it->second).sum();
  }

  void set(ObsKey k, int a, Scalar v) { values_(slot(k), a) = v; }

  /// Stores `v` and bumps the visit count; the single mutation path of the
  /// learning updates.
  void apply_update(ObsKey k, int a, Scalar v) {
    const Eigen::Index i = slot(k);
    values_(i, a) = v;
    ++visits_(i, a);
  }

  void set_visits(ObsKey k, int a, std::uint64_t n) { visits_(slot(k), a) = n; }

  friend bool operator==(const ValueTable& l, const ValueTable& r) {
    if (l.num_actions_ != r.num_actions_ || l.default_ != r.default_ || l.keys_ != r.keys_)
      return false;
    const auto n = static_cast<Eigen::Index>(l.keys_.size());
    return l.values_.topRows(n) == r.values_.topRows(n) && l.visits_.topRows(n) == r.visits_.topRows(n);
  }

 private:
  Eigen::Index slot(ObsKey k) {
    auto [it, inserted] = index_.try_emplace(k, static_cast<Eigen::Index>(keys_.size()));
    if (inserted) {
      keys_.push_back(k);
      const auto n = static_cast<Eigen::Index>(keys_.size());
      if (n > values_.rows()) {
        const Eigen::Index cap = std::max<Eigen::Index>(64, 2 * values_.rows());
        const Eigen::Index old = values_.rows();
        values_.conservativeResize(cap, num_actions_);
        visits_.conservativeResize(cap, num_actions_);
        values_.bottomRows(cap - old).setConstant(default_);
        visits_.bottomRows(cap - old).setZero();
      }
    }
    return it->second;
  }

  int num_actions_;
  Scalar default_;
  std::unordered_map<ObsKey, Eigen::Index> index_;
  std::vector<ObsKey> keys_;
  Matrix values_;
  Counts visits_;
};

using QTable = ValueTable<double>;

/// First maximal action by ordinal.
template <typename Scalar>
int greedy_index(const ValueTable<Scalar>& q, ObsKey key) {
  auto row = q.row(key);
  int best = 0;
  for (int a = 1; a < row.size(); ++a) {
    if (row(a) > row(best)) best = a;
  }
  return best;
}

/// Greedy movement action of a four-column table.
template <typename Scalar>
Action greedy_action(const ValueTable<Scalar>& q, ObsKey key) {
  return action_from_ordinal(greedy_index(q, key));
}

}  // namespace hula
