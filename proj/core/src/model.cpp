#include "detdb/model.hpp"

#include <algorithm>
#include <fstream>
#include <limits>
#include <map>

#include <nlohmann/json.hpp>

#include "detdb/error.hpp"
#include "detdb/rng.hpp"

namespace detdb {

using nlohmann::json;

std::size_t KeyHash::operator()(const Key& k) const noexcept {
  return static_cast<std::size_t>(mix64(k.table, static_cast<std::uint64_t>(k.pk)));
}

std::string to_string(const Key& k) {
  return std::to_string(k.table) + ":" + std::to_string(k.pk);
}

double Interval::width() const {
  if (empty()) return 0.0;
  return static_cast<double>(hi) - static_cast<double>(lo) + 1.0;
}

Interval intersect(const Interval& a, const Interval& b) {
  return {std::max(a.lo, b.lo), std::min(a.hi, b.hi)};
}

std::optional<std::size_t> TableSchema::index_of(std::string_view attr) const {
  for (std::size_t i = 0; i < attributes.size(); ++i) {
    if (attributes[i].name == attr) return i;
  }
  return std::nullopt;
}

void TableSchema::check_record(std::int64_t pk, std::span<const AttrValue> values) const {
  if (values.size() != arity()) {
    throw SchemaError("table " + name + ": expected " + std::to_string(arity()) +
                      " attributes, got " + std::to_string(values.size()));
  }
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!attributes[i].domain().contains(values[i])) {
      throw SchemaError("table " + name + ": attribute " + attributes[i].name + " value " +
                        std::to_string(values[i]) + " outside domain");
    }
  }
  if (key_attribute && values[*key_attribute] != pk) {
    throw SchemaError("table " + name + ": key attribute does not match primary key " +
                      std::to_string(pk));
  }
}

Schema::Schema(std::vector<TableSchema> tables) : tables_(std::move(tables)) {
  std::sort(tables_.begin(), tables_.end(),
            [](const TableSchema& a, const TableSchema& b) { return a.id < b.id; });
  for (std::size_t i = 0; i < tables_.size(); ++i) {
    const auto& t = tables_[i];
    if (i > 0 && tables_[i - 1].id == t.id) {
      throw SchemaError("duplicate table id " + std::to_string(t.id));
    }
    if (t.attributes.empty()) throw SchemaError("table " + t.name + " has no attributes");
    for (const auto& a : t.attributes) {
      if (a.lo > a.hi) throw SchemaError("table " + t.name + ": empty domain for " + a.name);
    }
    if (t.key_attribute && *t.key_attribute >= t.arity()) {
      throw SchemaError("table " + t.name + ": key attribute out of range");
    }
    for (std::size_t j = 0; j < i; ++j) {
      if (tables_[j].name == t.name) throw SchemaError("duplicate table name " + t.name);
    }
  }
}

const TableSchema* Schema::find(TableId id) const {
  auto it = std::lower_bound(tables_.begin(), tables_.end(), id,
                             [](const TableSchema& t, TableId v) { return t.id < v; });
  if (it == tables_.end() || it->id != id) return nullptr;
  return &*it;
}

const TableSchema* Schema::find(std::string_view name) const {
  for (const auto& t : tables_) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

const TableSchema& Schema::table(TableId id) const {
  const auto* t = find(id);
  if (!t) throw NotFoundError("unknown table id " + std::to_string(id));
  return *t;
}

Schema Schema::from_json(const json& j) {
  if (!j.is_object()) throw SchemaError("schema must be a JSON object");
  std::vector<TableSchema> tables;
  TableId next_id = 0;
  for (const auto& [name, body] : j.items()) {
    TableSchema t;
    t.name = name;
    t.id = body.contains("id") ? body.at("id").get<TableId>() : next_id;
    next_id = static_cast<TableId>(std::max<int>(next_id, t.id) + 1);
    if (!body.contains("attributes")) throw SchemaError("table " + name + ": missing attributes");
    for (const auto& a : body.at("attributes")) {
      AttributeDef def;
      def.name = a.at("name").get<std::string>();
      def.lo = a.at("lo").get<AttrValue>();
      def.hi = a.at("hi").get<AttrValue>();
      t.attributes.push_back(std::move(def));
    }
    t.record_count = body.value("record_count", std::uint64_t{0});
    if (body.contains("key_attribute") && !body.at("key_attribute").is_null()) {
      const auto attr = body.at("key_attribute").get<std::string>();
      t.key_attribute = t.index_of(attr);
      if (!t.key_attribute) throw SchemaError("table " + name + ": unknown key attribute " + attr);
    }
    tables.push_back(std::move(t));
  }
  return Schema(std::move(tables));
}

Schema Schema::load_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open schema file " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("schema file " + path + ": " + e.what());
  }
  return from_json(j);
}

json Schema::to_json() const {
  json j = json::object();
  for (const auto& t : tables_) {
    json attrs = json::array();
    for (const auto& a : t.attributes) attrs.push_back({{"name", a.name}, {"lo", a.lo}, {"hi", a.hi}});
    json body = {{"id", t.id}, {"attributes", attrs}, {"record_count", t.record_count}};
    if (t.key_attribute) body["key_attribute"] = t.attributes[*t.key_attribute].name;
    j[t.name] = body;
  }
  return j;
}

Predicate::Predicate(TableId table, std::vector<Interval> bounds)
    : table_(table), empty_(false), bounds_(std::move(bounds)) {
  canonicalize();
}

void Predicate::canonicalize() {
  if (bounds_.empty()) empty_ = true;
  for (const auto& b : bounds_) {
    if (b.empty()) empty_ = true;
  }
  if (empty_) bounds_.clear();
}

Predicate Predicate::full(const TableSchema& t) {
  std::vector<Interval> b;
  b.reserve(t.arity());
  for (const auto& a : t.attributes) b.push_back(a.domain());
  return Predicate(t.id, std::move(b));
}

Predicate Predicate::point(const TableSchema& t, std::int64_t pk) {
  Predicate p = full(t);
  if (t.key_attribute) p = p.with_bound(*t.key_attribute, {pk, pk});
  return p;
}

bool Predicate::matches(std::span<const AttrValue> values) const {
  if (empty_ || values.size() != bounds_.size()) return false;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!bounds_[i].contains(values[i])) return false;
  }
  return true;
}

Predicate Predicate::with_bound(std::size_t attr, Interval iv) const {
  if (empty_) return *this;
  auto b = bounds_;
  b.at(attr) = iv;
  return Predicate(table_, std::move(b));
}

json Predicate::to_json() const {
  json j = {{"table", table_}};
  if (empty_) {
    j["empty"] = true;
    return j;
  }
  json b = json::array();
  for (const auto& iv : bounds_) b.push_back({iv.lo, iv.hi});
  j["bounds"] = b;
  return j;
}

Predicate Predicate::from_json(const json& j) {
  const auto table = j.at("table").get<TableId>();
  if (j.value("empty", false)) return Predicate::empty(table);
  std::vector<Interval> b;
  for (const auto& iv : j.at("bounds")) b.push_back({iv.at(0).get<AttrValue>(), iv.at(1).get<AttrValue>()});
  return Predicate(table, std::move(b));
}

Predicate intersect_predicates(const Predicate& p, const Predicate& q) {
  if (p.table() != q.table()) {
    throw UsageError("cross-table predicate intersection: " + std::to_string(p.table()) + " vs " +
                     std::to_string(q.table()));
  }
  if (p.is_empty() || q.is_empty()) return Predicate::empty(p.table());
  if (p.arity() != q.arity()) throw UsageError("predicate arity mismatch on one table");
  std::vector<Interval> b(p.arity());
  for (std::size_t i = 0; i < b.size(); ++i) b[i] = intersect(p.bound(i), q.bound(i));
  return Predicate(p.table(), std::move(b));
}

void normalize(KeySet& keys) {
  std::sort(keys.begin(), keys.end());
  keys.erase(std::unique(keys.begin(), keys.end()), keys.end());
}

bool intersects(const KeySet& a, const KeySet& b) {
  auto i = a.begin();
  auto j = b.begin();
  while (i != a.end() && j != b.end()) {
    if (*i < *j) {
      ++i;
    } else if (*j < *i) {
      ++j;
    } else {
      return true;
    }
  }
  return false;
}

namespace {

const TableSchema& table_for(const Schema& schema, TableId id) { return schema.table(id); }

}  // namespace

void derive_summaries(Transaction& txn, const Schema& schema) {
  txn.read_summary.clear();
  txn.write_summary.clear();
  for (const auto& op : txn.ops) {
    std::visit(
        [&](const auto& o) {
          using T = std::decay_t<decltype(o)>;
          if constexpr (std::is_same_v<T, PointRead>) {
            txn.read_summary.push_back(Predicate::point(table_for(schema, o.key.table), o.key.pk));
          } else if constexpr (std::is_same_v<T, RangeRead>) {
            txn.read_summary.push_back(o.pred);
          } else if constexpr (std::is_same_v<T, PointWrite>) {
            txn.write_summary.push_back(Predicate::point(table_for(schema, o.key.table), o.key.pk));
          } else {
            txn.read_summary.push_back(o.pred);
            txn.write_summary.push_back(o.pred);
          }
        },
        op);
  }
}

void validate_transaction(const Transaction& txn, const Schema& schema) {
  for (const auto& op : txn.ops) {
    std::visit(
        [&](const auto& o) {
          using T = std::decay_t<decltype(o)>;
          if constexpr (std::is_same_v<T, PointRead>) {
            table_for(schema, o.key.table);
          } else if constexpr (std::is_same_v<T, RangeRead>) {
            const auto& t = table_for(schema, o.pred.table());
            if (!o.pred.is_empty() && o.pred.arity() != t.arity()) {
              throw SchemaError("range read arity mismatch on " + t.name);
            }
          } else if constexpr (std::is_same_v<T, PointWrite>) {
            table_for(schema, o.key.table).check_record(o.key.pk, o.value);
          } else {
            const auto& t = table_for(schema, o.pred.table());
            if (!o.pred.is_empty() && o.pred.arity() != t.arity()) {
              throw SchemaError("range write arity mismatch on " + t.name);
            }
            if (o.attribute >= t.arity()) throw SchemaError("range write attribute out of range");
            if (t.key_attribute && *t.key_attribute == o.attribute) {
              throw SchemaError("range write may not modify the key attribute of " + t.name);
            }
          }
        },
        op);
  }
}

bool summaries_cover(const Transaction& txn, const Schema& schema,
                     const std::function<const AttributeVector*(const Key&)>& lookup) {
  auto covered = [&](const Key& k, const std::vector<Predicate>& summary) {
    const auto* v = lookup(k);
    const auto& t = schema.table(k.table);
    for (const auto& p : summary) {
      if (p.table() != k.table || p.is_empty()) continue;
      if (v) {
        if (p.matches(*v)) return true;
      } else if (!t.key_attribute || p.bound(*t.key_attribute).contains(k.pk)) {
        return true;
      }
    }
    return false;
  };
  for (const auto& k : txn.read_set) {
    if (!covered(k, txn.read_summary)) return false;
  }
  for (const auto& k : txn.write_set) {
    if (!covered(k, txn.write_summary)) return false;
  }
  return true;
}

std::string to_string(DependencySet s) {
  std::string out;
  auto add = [&](DependencyKind k, const char* name) {
    if (!s.has(k)) return;
    if (!out.empty()) out += ",";
    out += name;
  };
  add(DependencyKind::kRaw, "RAW");
  add(DependencyKind::kWar, "WAR");
  add(DependencyKind::kWaw, "WAW");
  add(DependencyKind::kInd, "IND");
  return "{" + out + "}";
}

DependencySet classify_dependency(const Transaction& earlier, const Transaction& later) {
  if (!earlier.executed || !later.executed) {
    throw UsageError("dependency classification before execution");
  }
  if (earlier.tid >= later.tid) throw UsageError("classify_dependency expects earlier.tid < later.tid");
  DependencySet s;
  if (intersects(later.read_set, earlier.write_set)) s.add(DependencyKind::kRaw);
  if (intersects(later.write_set, earlier.read_set)) s.add(DependencyKind::kWar);
  if (intersects(later.write_set, earlier.write_set)) s.add(DependencyKind::kWaw);
  if (s.bits() == 0) s.add(DependencyKind::kInd);
  return s;
}

json to_json(const Operation& op) {
  return std::visit(
      [](const auto& o) -> json {
        using T = std::decay_t<decltype(o)>;
        if constexpr (std::is_same_v<T, PointRead>) {
          return {{"op", "point_read"}, {"table", o.key.table}, {"pk", o.key.pk}};
        } else if constexpr (std::is_same_v<T, RangeRead>) {
          return {{"op", "range_read"}, {"pred", o.pred.to_json()}};
        } else if constexpr (std::is_same_v<T, PointWrite>) {
          return {{"op", "point_write"}, {"table", o.key.table}, {"pk", o.key.pk}, {"value", o.value}};
        } else {
          return {{"op", "range_write"},
                  {"pred", o.pred.to_json()},
                  {"attribute", o.attribute},
                  {"amount", o.amount}};
        }
      },
      op);
}

Operation operation_from_json(const json& j) {
  const auto kind = j.at("op").get<std::string>();
  if (kind == "point_read") return PointRead{{j.at("table").get<TableId>(), j.at("pk").get<std::int64_t>()}};
  if (kind == "range_read") return RangeRead{Predicate::from_json(j.at("pred"))};
  if (kind == "point_write") {
    return PointWrite{{j.at("table").get<TableId>(), j.at("pk").get<std::int64_t>()},
                      j.at("value").get<AttributeVector>()};
  }
  if (kind == "range_write") {
    return RangeWrite{Predicate::from_json(j.at("pred")), j.at("attribute").get<std::size_t>(),
                      j.at("amount").get<AttrValue>()};
  }
  throw ConfigError("unknown operation kind " + kind);
}

namespace {

json keys_json(const KeySet& keys) {
  json a = json::array();
  for (const auto& k : keys) a.push_back({k.table, k.pk});
  return a;
}

KeySet keys_from_json(const json& j) {
  KeySet out;
  for (const auto& k : j) out.push_back({k.at(0).get<TableId>(), k.at(1).get<std::int64_t>()});
  normalize(out);
  return out;
}

}  // namespace

json to_json(const Transaction& txn) {
  json ops = json::array();
  for (const auto& op : txn.ops) ops.push_back(to_json(op));
  json rs = json::array();
  for (const auto& p : txn.read_summary) rs.push_back(p.to_json());
  json ws = json::array();
  for (const auto& p : txn.write_summary) ws.push_back(p.to_json());
  json j = {{"tid", txn.tid}, {"uid", txn.uid}, {"ops", ops}, {"read_summary", rs}, {"write_summary", ws}};
  if (txn.executed) {
    j["read_set"] = keys_json(txn.read_set);
    j["write_set"] = keys_json(txn.write_set);
  }
  return j;
}

Transaction transaction_from_json(const json& j) {
  Transaction t;
  t.tid = j.at("tid").get<Tid>();
  t.uid = j.value("uid", std::uint64_t{0});
  for (const auto& op : j.at("ops")) t.ops.push_back(operation_from_json(op));
  for (const auto& p : j.value("read_summary", json::array())) t.read_summary.push_back(Predicate::from_json(p));
  for (const auto& p : j.value("write_summary", json::array())) t.write_summary.push_back(Predicate::from_json(p));
  if (j.contains("read_set")) {
    t.read_set = keys_from_json(j.at("read_set"));
    t.write_set = keys_from_json(j.at("write_set"));
    t.executed = true;
  }
  return t;
}

}  // namespace detdb
