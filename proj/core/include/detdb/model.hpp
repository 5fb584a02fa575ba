#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace detdb {

using AttrValue = std::int64_t;
using AttributeVector = std::vector<AttrValue>;
using TableId = std::uint16_t;
using Tid = std::uint32_t;

struct Key {
  TableId table = 0;
  std::int64_t pk = 0;

  friend auto operator<=>(const Key&, const Key&) = default;
};

struct KeyHash {
  std::size_t operator()(const Key& k) const noexcept;
};

std::string to_string(const Key& k);

// Closed integer interval. lo > hi means empty.
struct Interval {
  AttrValue lo = 0;
  AttrValue hi = -1;

  bool empty() const { return lo > hi; }
  bool contains(AttrValue v) const { return lo <= v && v <= hi; }
  bool contains(const Interval& o) const { return o.empty() || (lo <= o.lo && o.hi <= hi); }
  // Number of integers covered; saturates for very wide ranges.
  double width() const;

  friend bool operator==(const Interval&, const Interval&) = default;
};

Interval intersect(const Interval& a, const Interval& b);

struct AttributeDef {
  std::string name;
  AttrValue lo = 0;
  AttrValue hi = 0;

  Interval domain() const { return {lo, hi}; }
};

struct TableSchema {
  TableId id = 0;
  std::string name;
  std::vector<AttributeDef> attributes;
  std::uint64_t record_count = 0;
  // When set, values[*key_attribute] must equal the record's primary key.
  std::optional<std::size_t> key_attribute;

  std::size_t arity() const { return attributes.size(); }
  Interval domain(std::size_t attr) const { return attributes.at(attr).domain(); }
  std::optional<std::size_t> index_of(std::string_view attr) const;
  // Throws SchemaError when the vector does not fit this table.
  void check_record(std::int64_t pk, std::span<const AttrValue> values) const;
};

class Schema {
 public:
  Schema() = default;
  explicit Schema(std::vector<TableSchema> tables);

  const std::vector<TableSchema>& tables() const { return tables_; }
  const TableSchema& table(TableId id) const;
  const TableSchema* find(TableId id) const;
  const TableSchema* find(std::string_view name) const;
  bool empty() const { return tables_.empty(); }

  // { "<table>": { "id": 0, "attributes": [{"name","lo","hi"}...],
  //                "record_count": n, "key_attribute": "<attr>" }, ... }
  static Schema from_json(const nlohmann::json& j);
  static Schema load_file(const std::string& path);
  nlohmann::json to_json() const;

 private:
  std::vector<TableSchema> tables_;
};

// Axis-aligned box over one table's attributes. Any inverted bound
// collapses the predicate into the canonical EMPTY value for its table.
class Predicate {
 public:
  Predicate() = default;
  Predicate(TableId table, std::vector<Interval> bounds);

  static Predicate full(const TableSchema& t);
  static Predicate empty(TableId table) { return Predicate(table); }
  // Degenerate on the key attribute, full everywhere else. Tables without
  // a key attribute yield the full predicate.
  static Predicate point(const TableSchema& t, std::int64_t pk);

  TableId table() const { return table_; }
  bool is_empty() const { return empty_; }
  std::size_t arity() const { return bounds_.size(); }
  const std::vector<Interval>& bounds() const { return bounds_; }
  const Interval& bound(std::size_t attr) const { return bounds_.at(attr); }

  bool matches(std::span<const AttrValue> values) const;
  Predicate with_bound(std::size_t attr, Interval iv) const;

  nlohmann::json to_json() const;
  static Predicate from_json(const nlohmann::json& j);

  friend bool operator==(const Predicate&, const Predicate&) = default;

 private:
  explicit Predicate(TableId table) : table_(table), empty_(true) {}
  void canonicalize();

  TableId table_ = 0;
  bool empty_ = true;
  std::vector<Interval> bounds_;
};

// Per-attribute max of lower bounds and min of upper bounds.
Predicate intersect_predicates(const Predicate& p, const Predicate& q);

struct PointRead {
  Key key;
};

struct RangeRead {
  Predicate pred;
};

struct PointWrite {
  Key key;
  AttributeVector value;
};

// Adds `amount` to one attribute of every record matching `pred`.
struct RangeWrite {
  Predicate pred;
  std::size_t attribute = 0;
  AttrValue amount = 0;
};

using Operation = std::variant<PointRead, RangeRead, PointWrite, RangeWrite>;

using KeySet = std::vector<Key>;  // sorted, unique

void normalize(KeySet& keys);
bool intersects(const KeySet& a, const KeySet& b);

struct Transaction {
  Tid tid = 0;
  // Stable identity across re-sequencing into later batches.
  std::uint64_t uid = 0;
  std::vector<Operation> ops;
  std::vector<Predicate> read_summary;
  std::vector<Predicate> write_summary;
  KeySet read_set;
  KeySet write_set;
  bool executed = false;

  void reset_execution() {
    read_set.clear();
    write_set.clear();
    executed = false;
  }
};

// Fills read/write summaries from the op list.
void derive_summaries(Transaction& txn, const Schema& schema);

// Throws SchemaError for ops that cannot run against the schema.
void validate_transaction(const Transaction& txn, const Schema& schema);

bool summaries_cover(const Transaction& txn, const Schema& schema,
                     const std::function<const AttributeVector*(const Key&)>& lookup);

enum class DependencyKind : std::uint8_t { kRaw = 1, kWar = 2, kWaw = 4, kInd = 8 };

class DependencySet {
 public:
  constexpr DependencySet() = default;

  constexpr bool has(DependencyKind k) const { return (bits_ & static_cast<std::uint8_t>(k)) != 0; }
  constexpr void add(DependencyKind k) { bits_ |= static_cast<std::uint8_t>(k); }
  constexpr bool independent() const { return has(DependencyKind::kInd); }
  constexpr std::uint8_t bits() const { return bits_; }

  friend constexpr bool operator==(DependencySet, DependencySet) = default;

 private:
  std::uint8_t bits_ = 0;
};

std::string to_string(DependencySet s);

// Kinds holding from `earlier` to `later`; {IND} when none.
DependencySet classify_dependency(const Transaction& earlier, const Transaction& later);

nlohmann::json to_json(const Operation& op);
Operation operation_from_json(const nlohmann::json& j);
nlohmann::json to_json(const Transaction& txn);
Transaction transaction_from_json(const nlohmann::json& j);

}  // namespace detdb
