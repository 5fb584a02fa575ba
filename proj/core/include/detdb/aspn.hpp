#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "detdb/model.hpp"

namespace detdb {

// Row-major records of fixed arity.
class RecordSet {
 public:
  RecordSet() = default;
  explicit RecordSet(std::size_t arity) : arity_(arity) {}

  std::size_t arity() const { return arity_; }
  std::size_t size() const { return arity_ == 0 ? 0 : data_.size() / arity_; }
  bool empty() const { return data_.empty(); }
  std::span<const AttrValue> row(std::size_t i) const { return {data_.data() + i * arity_, arity_}; }
  AttrValue at(std::size_t i, std::size_t attr) const { return data_[i * arity_ + attr]; }
  void push_back(std::span<const AttrValue> r);
  void reserve(std::size_t rows) { data_.reserve(rows * arity_); }
  const std::vector<AttrValue>& data() const { return data_; }

  RecordSet select(std::span<const std::size_t> rows) const;

  friend bool operator==(const RecordSet&, const RecordSet&) = default;

 private:
  std::size_t arity_ = 0;
  std::vector<AttrValue> data_;
};

// Header row of attribute names, any order; every schema attribute must
// appear.
RecordSet load_csv(const std::string& path, const TableSchema& schema);
void save_csv(const std::string& path, const TableSchema& schema, const RecordSet& records);

struct AspnConfig {
  double correlation_threshold = 0.3;
  // Attributes whose strongest pairwise score stays below this factor out.
  double independence_floor = 0.0;
  std::size_t clusters = 2;
  std::size_t min_node_records = 50;
  std::size_t sample_cap = 2000;
  std::size_t leaf_bins = 64;
  std::size_t joint_bins = 64;
  std::size_t rdc_features = 6;
  double rdc_frequency = 2.0;
  std::size_t max_depth = 24;
  std::uint64_t rng_seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static AspnConfig from_json(const nlohmann::json& j);
};

struct CorrelationReport {
  std::vector<std::size_t> attrs;
  std::vector<double> scores;  // |attrs| x |attrs|, symmetric, unit diagonal
  std::vector<std::size_t> strong_subset;

  double score(std::size_t a, std::size_t b) const;  // by position in attrs
};

// Randomized rank dependence score in [0, 1] for every pair of `attrs`
// over `rows` of `records`.
CorrelationReport find_strong_subset(std::span<const std::size_t> attrs, const RecordSet& records,
                                     std::span<const std::size_t> rows, double threshold,
                                     const AspnConfig& config);
CorrelationReport find_strong_subset(std::span<const std::size_t> attrs, const RecordSet& records,
                                     double threshold, const AspnConfig& config);

// Equi-width counts over a closed integer domain.
class Histogram {
 public:
  Histogram() = default;
  Histogram(Interval domain, std::size_t max_bins);

  void add(AttrValue v, std::int64_t delta = 1);
  std::int64_t total() const { return total_; }
  std::size_t bins() const { return counts_.size(); }
  std::size_t bin_of(AttrValue v) const;
  Interval bin_range(std::size_t b) const;
  // Fraction of the bin's integers inside q.
  double overlap(std::size_t b, const Interval& q) const;
  // Mass of q as a fraction of the total; uniform within bins.
  double mass(const Interval& q) const;
  const std::vector<std::int64_t>& counts() const { return counts_; }

  nlohmann::json to_json() const;
  static Histogram from_json(const nlohmann::json& j);

  friend bool operator==(const Histogram&, const Histogram&) = default;

 private:
  AttrValue lo_ = 0;
  AttrValue hi_ = -1;
  AttrValue width_ = 1;
  std::vector<std::int64_t> counts_;
  std::int64_t total_ = 0;
};

// Chained pairwise grids: x0 - x1 - ... - x(k-1).
class ChainGrid {
 public:
  ChainGrid() = default;
  ChainGrid(std::vector<std::size_t> order, const TableSchema& schema, std::size_t max_bins);

  void add(std::span<const AttrValue> row, std::int64_t delta = 1);
  double mass(const Predicate& q) const;
  std::int64_t total() const { return total_; }
  const std::vector<std::size_t>& order() const { return order_; }

  nlohmann::json to_json() const;
  static ChainGrid from_json(const nlohmann::json& j);

  friend bool operator==(const ChainGrid&, const ChainGrid&) = default;

 private:
  std::vector<std::size_t> order_;
  std::vector<Histogram> axes_;  // binning per attribute; counts unused
  std::vector<std::vector<std::int64_t>> grids_;
  std::int64_t total_ = 0;
};

enum class NodeKind : std::uint8_t { kDecomposition, kIndependent, kJoint, kLeaf };

const char* to_string(NodeKind k);

struct AspnNode {
  NodeKind kind = NodeKind::kLeaf;
  std::vector<std::size_t> attrs;                         // A_n, ascending
  std::vector<std::pair<std::size_t, Interval>> context;  // C_n
  std::vector<AspnNode> children;
  std::int64_t count = 0;
  bool low_confidence = false;

  // Decomposition payload.
  std::size_t split_attr = 0;
  std::vector<Interval> split_ranges;
  std::vector<std::int64_t> child_counts;
  std::vector<double> weights;
  std::vector<Histogram> split_marginals;

  // Leaf and Joint estimators.
  Histogram histogram;
  ChainGrid grid;
  std::vector<Interval> flat_box;  // low-confidence estimator

  // Retained rows for dependence re-checks (Joint / Independent / flat).
  RecordSet sample;

  friend bool operator==(const AspnNode&, const AspnNode&) = default;
};

struct AspnModel {
  TableSchema schema;
  std::vector<TableId> tables;  // source tables; one entry for single-table models
  AspnConfig config;
  std::size_t sample_size = 0;
  std::uint64_t rng_seed = 0;
  AspnNode root;

  std::size_t node_count() const;
  std::size_t depth() const;
  // Compact structure string: node kinds and split attributes.
  std::string structure() const;

  nlohmann::json to_json() const;
  static AspnModel from_json(const nlohmann::json& j);
  void save(const std::string& path) const;
  static AspnModel load(const std::string& path);
};

AspnNode build_aspn(std::vector<std::size_t> attrs, std::vector<std::pair<std::size_t, Interval>> context,
                    const RecordSet& records, std::span<const std::size_t> rows,
                    const TableSchema& schema, const AspnConfig& config);

AspnModel build_model(const TableSchema& schema, const RecordSet& records, const AspnConfig& config);

double infer_probability(const AspnModel& model, const Predicate& q);

bool predict_conflict(const AspnModel& model, const Predicate& a, const Predicate& b,
                      double table_size, double threshold_expected_rows);

struct RecordDelta {
  RecordSet inserts;
  RecordSet deletes;
};

AspnModel update_incremental(const AspnModel& model, const RecordDelta& delta);

struct TableData {
  TableSchema schema;
  RecordSet records;
};

struct JoinEdge {
  TableId left = 0;
  std::size_t left_attr = 0;
  TableId right = 0;
  std::size_t right_attr = 0;
};

inline constexpr TableId kUnitTableBase = 1u << 15;

// One model per modeling unit. Single-table units keep the source
// schema; merged units get a synthesized schema whose attributes are named
// "<table>.<attr>" in unit-table order.
std::vector<AspnModel> build_multi_table(const std::vector<TableData>& tables,
                                         const std::vector<JoinEdge>& joins, std::size_t sample_size,
                                         const AspnConfig& config);

// Per-table models consulted by the engine's prediction phase.
class ModelSet {
 public:
  void set(TableId table, std::shared_ptr<const AspnModel> model);
  const AspnModel* find(TableId table) const;
  bool empty() const { return models_.empty(); }
  std::size_t size() const { return models_.size(); }

 private:
  std::map<TableId, std::shared_ptr<const AspnModel>> models_;
};

}  // namespace detdb
