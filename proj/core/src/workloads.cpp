#include "detdb/workloads.hpp"

#include <algorithm>
#include <functional>
#include <cmath>
#include <limits>

#include <nlohmann/json.hpp>

#include "detdb/error.hpp"

namespace detdb {

using nlohmann::json;

namespace {

constexpr AttrValue kFieldMax = (AttrValue{1} << 20) - 1;
constexpr AttrValue kCounterMax = AttrValue{1} << 40;
constexpr AttrValue kOrderKeyMax = AttrValue{1} << 62;
constexpr std::size_t kYcsbFields = 10;

struct KindName {
  WorkloadKind kind;
  const char* name;
};

constexpr KindName kKindNames[] = {{WorkloadKind::kYcsbA, "ycsb_a"},
                                   {WorkloadKind::kYcsbB, "ycsb_b"},
                                   {WorkloadKind::kYcsbCustom, "ycsb"},
                                   {WorkloadKind::kTpccLite, "tpcc_lite"},
                                   {WorkloadKind::kAspnSynthetic, "aspn_synthetic"}};

bool is_ycsb(WorkloadKind k) {
  return k == WorkloadKind::kYcsbA || k == WorkloadKind::kYcsbB || k == WorkloadKind::kYcsbCustom;
}

std::optional<double> fixed_read_fraction(WorkloadKind k) {
  if (k == WorkloadKind::kYcsbA) return 0.5;
  if (k == WorkloadKind::kYcsbB) return 0.95;
  return std::nullopt;
}

TableSchema make_table(TableId id, std::string name, std::vector<AttributeDef> attrs, std::uint64_t rows) {
  TableSchema t;
  t.id = id;
  t.name = std::move(name);
  t.attributes = std::move(attrs);
  t.record_count = rows;
  t.key_attribute = 0;
  return t;
}

AttrValue max_key(std::size_t n) { return static_cast<AttrValue>(n) - 1; }

DependenceSpec synthetic_dependence() {
  DependenceSpec d;
  Relation r;
  r.target = 2;
  r.source = 1;
  r.noise = 15.0;
  d.relations.push_back(r);
  return d;
}

}  // namespace

const char* to_string(WorkloadKind k) {
  for (const auto& kn : kKindNames) {
    if (kn.kind == k) return kn.name;
  }
  return "?";
}

WorkloadKind workload_kind_from_string(std::string_view s) {
  for (const auto& kn : kKindNames) {
    if (s == kn.name) return kn.kind;
  }
  throw ConfigError("workload.kind: unknown kind " + std::string(s));
}

void WorkloadSpec::normalize() {
  if (const auto rf = fixed_read_fraction(kind)) read_fraction = *rf;
  validate();
}

void WorkloadSpec::validate() const {
  if (partitions == 0) throw ConfigError("workload.partitions must be positive");
  if (keys_per_partition == 0) throw ConfigError("workload.keys_per_partition must be positive");
  if (!(read_fraction >= 0.0 && read_fraction <= 1.0)) throw ConfigError("workload.read_fraction must lie in [0, 1]");
  if (const auto rf = fixed_read_fraction(kind); rf && read_fraction != *rf) {
    throw ConfigError(std::string("workload.read_fraction is fixed for ") + to_string(kind));
  }
  if (!(zipf_theta >= 0.0 && zipf_theta < 1.0)) throw ConfigError("workload.zipf_theta must lie in [0, 1)");
  if (ops_per_txn == 0) throw ConfigError("workload.ops_per_txn must be positive");
  if (is_ycsb(kind) && ops_per_txn > keys_per_partition) {
    throw ConfigError("workload.ops_per_txn exceeds keys_per_partition");
  }
  if (!(rmw_fraction >= 0.0 && rmw_fraction <= 1.0)) throw ConfigError("workload.rmw_fraction must lie in [0, 1]");
  if (districts_per_partition == 0) throw ConfigError("workload.districts_per_partition must be positive");
  if (min_items == 0 || min_items > max_items) throw ConfigError("workload.min_items/max_items out of order");
  if (kind == WorkloadKind::kTpccLite && max_items > keys_per_partition) {
    throw ConfigError("workload.max_items exceeds keys_per_partition");
  }
}

json WorkloadSpec::to_json() const {
  return {{"kind", to_string(kind)},
          {"partitions", partitions},
          {"keys_per_partition", keys_per_partition},
          {"read_fraction", read_fraction},
          {"ops_per_txn", ops_per_txn},
          {"zipf_theta", zipf_theta},
          {"rmw_fraction", rmw_fraction},
          {"districts_per_partition", districts_per_partition},
          {"min_items", min_items},
          {"max_items", max_items},
          {"rng_seed", rng_seed}};
}

WorkloadSpec WorkloadSpec::from_json(const json& j) {
  WorkloadSpec s;
  if (!j.is_object()) throw ConfigError("workload: expected an object");
  bool has_read_fraction = false;
  try {
    for (const auto& [k, v] : j.items()) {
      if (k == "kind") s.kind = workload_kind_from_string(v.get<std::string>());
      else if (k == "partitions") s.partitions = v.get<std::size_t>();
      else if (k == "keys_per_partition") s.keys_per_partition = v.get<std::size_t>();
      else if (k == "read_fraction") {
        s.read_fraction = v.get<double>();
        has_read_fraction = true;
      } else if (k == "ops_per_txn") s.ops_per_txn = v.get<std::size_t>();
      else if (k == "zipf_theta") s.zipf_theta = v.get<double>();
      else if (k == "rmw_fraction") s.rmw_fraction = v.get<double>();
      else if (k == "districts_per_partition") s.districts_per_partition = v.get<std::size_t>();
      else if (k == "min_items") s.min_items = v.get<std::size_t>();
      else if (k == "max_items") s.max_items = v.get<std::size_t>();
      else if (k == "rng_seed") s.rng_seed = v.get<std::uint64_t>();
      else throw ConfigError("workload." + k + ": unknown field");
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("workload: ") + e.what());
  }
  if (has_read_fraction) {
    s.validate();
  } else {
    s.normalize();
  }
  return s;
}

ZipfSampler::ZipfSampler(std::size_t n, double theta) : theta_(theta) {
  if (n == 0) throw ConfigError("zipf: domain size must be positive");
  if (!(theta >= 0.0 && theta < 1.0)) throw ConfigError("zipf: theta must lie in [0, 1)");
  cdf_.resize(n);
  double sum = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    sum += 1.0 / std::pow(static_cast<double>(r + 1), theta);
    cdf_[r] = sum;
  }
  for (auto& c : cdf_) c /= sum;
  cdf_.back() = 1.0;
}

std::size_t ZipfSampler::operator()(Rng& rng) const {
  const double u = rng.uniform();
  const auto it = std::upper_bound(cdf_.begin(), cdf_.end(), u);
  return std::min<std::size_t>(static_cast<std::size_t>(it - cdf_.begin()), cdf_.size() - 1);
}

std::size_t zipf_sample(std::size_t n, double theta, Rng& rng) { return ZipfSampler(n, theta)(rng); }

Schema workload_schema(const WorkloadSpec& spec) {
  spec.validate();
  const std::size_t n = spec.partitions * spec.keys_per_partition;
  const auto p = max_key(spec.partitions);
  std::vector<TableSchema> tables;
  switch (spec.kind) {
    case WorkloadKind::kYcsbA:
    case WorkloadKind::kYcsbB:
    case WorkloadKind::kYcsbCustom: {
      std::vector<AttributeDef> attrs{{"id", 0, max_key(n)}};
      for (std::size_t f = 0; f < kYcsbFields; ++f) attrs.push_back({"f" + std::to_string(f), 0, kFieldMax});
      tables.push_back(make_table(kUsertable, "usertable", std::move(attrs), n));
      break;
    }
    case WorkloadKind::kTpccLite: {
      const std::size_t d = spec.partitions * spec.districts_per_partition;
      tables.push_back(make_table(kWarehouse, "warehouse", {{"w_id", 0, p}, {"w_tax", 0, 2000}}, spec.partitions));
      tables.push_back(make_table(kDistrict, "district",
                                  {{"d_id", 0, max_key(d)}, {"d_w_id", 0, p}, {"d_next_o_id", 0, kCounterMax}}, d));
      tables.push_back(make_table(kStock, "stock",
                                  {{"s_id", 0, max_key(n)}, {"s_w_id", 0, p}, {"s_quantity", -kCounterMax, kCounterMax}},
                                  n));
      tables.push_back(make_table(kOrders, "orders",
                                  {{"o_id", 0, kOrderKeyMax},
                                   {"o_w_id", 0, p},
                                   {"o_d_id", 0, max_key(d)},
                                   {"o_items", 0, 64}},
                                  0));
      break;
    }
    case WorkloadKind::kAspnSynthetic:
      tables.push_back(make_table(
          kItems, "items", {{"id", 0, max_key(n)}, {"a", 0, 999}, {"b", 0, 999}, {"c", 0, kCounterMax}, {"d", 0, 999}},
          n));
      break;
  }
  return Schema(std::move(tables));
}

std::vector<TableData> initial_tables(const WorkloadSpec& spec) {
  const Schema schema = workload_schema(spec);
  std::vector<TableData> out;
  for (const auto& t : schema.tables()) {
    TableData td{t, RecordSet(t.arity())};
    const auto rows = static_cast<std::size_t>(t.record_count);
    td.records.reserve(rows);
    AttributeVector row(t.arity());
    switch (t.id) {
      case kUsertable:
        for (std::size_t k = 0; k < rows; ++k) {
          row[0] = static_cast<AttrValue>(k);
          for (std::size_t f = 0; f < kYcsbFields; ++f) {
            row[f + 1] = static_cast<AttrValue>(mix64(spec.rng_seed, k * 16 + f) & static_cast<std::uint64_t>(kFieldMax));
          }
          td.records.push_back(row);
        }
        break;
      case kWarehouse:
        for (std::size_t w = 0; w < rows; ++w) td.records.push_back(AttributeVector{static_cast<AttrValue>(w), 100});
        break;
      case kDistrict:
        for (std::size_t d = 0; d < rows; ++d) {
          td.records.push_back(AttributeVector{static_cast<AttrValue>(d),
                                               static_cast<AttrValue>(d / spec.districts_per_partition), 1});
        }
        break;
      case kStock:
        for (std::size_t s = 0; s < rows; ++s) {
          td.records.push_back(
              AttributeVector{static_cast<AttrValue>(s), static_cast<AttrValue>(s / spec.keys_per_partition), 100});
        }
        break;
      case kItems: {
        auto gen = gen_correlated_table(t, rows, synthetic_dependence(), spec.rng_seed);
        td.records = std::move(gen);
        break;
      }
      default:
        break;
    }
    out.push_back(std::move(td));
  }
  return out;
}

void populate_store(MvStore& store, const WorkloadSpec& spec) {
  for (const auto& td : initial_tables(spec)) {
    for (std::size_t r = 0; r < td.records.size(); ++r) {
      const auto row = td.records.row(r);
      store.load_record({td.schema.id, row[0]}, AttributeVector(row.begin(), row.end()));
    }
  }
}

WorkloadGenerator::WorkloadGenerator(WorkloadSpec spec)
    : spec_(spec), schema_(workload_schema(spec)), keys_(spec.keys_per_partition, spec.zipf_theta) {}

Transaction WorkloadGenerator::ycsb(Rng& rng) const {
  Transaction t;
  const auto kpp = spec_.keys_per_partition;
  const auto base = static_cast<AttrValue>(rng.below(spec_.partitions) * kpp);
  std::vector<AttrValue> keys;
  while (keys.size() < spec_.ops_per_txn) {
    const AttrValue k = base + static_cast<AttrValue>(keys_(rng));
    if (std::find(keys.begin(), keys.end(), k) == keys.end()) keys.push_back(k);
  }
  const auto& table = schema_.table(kUsertable);
  for (const auto k : keys) {
    if (rng.bernoulli(spec_.read_fraction)) {
      t.ops.emplace_back(PointRead{{kUsertable, k}});
    } else if (rng.bernoulli(spec_.rmw_fraction)) {
      t.ops.emplace_back(RangeWrite{Predicate::point(table, k), 1 + static_cast<std::size_t>(rng.below(kYcsbFields)), 1});
    } else {
      AttributeVector v(kYcsbFields + 1);
      v[0] = k;
      for (std::size_t f = 1; f <= kYcsbFields; ++f) v[f] = rng.uniform_int(0, kFieldMax);
      t.ops.emplace_back(PointWrite{{kUsertable, k}, std::move(v)});
    }
  }
  return t;
}

Transaction WorkloadGenerator::tpcc(Rng& rng, std::uint64_t order_key) const {
  Transaction t;
  const auto w = static_cast<AttrValue>(rng.below(spec_.partitions));
  const auto d = w * static_cast<AttrValue>(spec_.districts_per_partition) +
                 static_cast<AttrValue>(rng.below(spec_.districts_per_partition));
  const auto items = static_cast<std::size_t>(
      rng.uniform_int(static_cast<std::int64_t>(spec_.min_items), static_cast<std::int64_t>(spec_.max_items)));
  std::vector<AttrValue> stock;
  const auto base = w * static_cast<AttrValue>(spec_.keys_per_partition);
  while (stock.size() < items) {
    const AttrValue s = base + static_cast<AttrValue>(keys_(rng));
    if (std::find(stock.begin(), stock.end(), s) == stock.end()) stock.push_back(s);
  }
  const auto ok = static_cast<AttrValue>(order_key);
  t.ops.emplace_back(PointRead{{kWarehouse, w}});
  t.ops.emplace_back(RangeWrite{Predicate::point(schema_.table(kDistrict), d), 2, 1});
  t.ops.emplace_back(PointWrite{{kOrders, ok}, {ok, w, d, static_cast<AttrValue>(items)}});
  for (const auto s : stock) {
    t.ops.emplace_back(RangeWrite{Predicate::point(schema_.table(kStock), s), 2, -rng.uniform_int(1, 10)});
  }
  return t;
}

Transaction WorkloadGenerator::synthetic(Rng& rng) const {
  Transaction t;
  const auto& table = schema_.table(kItems);
  const std::size_t n = spec_.partitions * spec_.keys_per_partition;
  const std::size_t window = std::max<std::size_t>(1, n / 50);
  const std::size_t starts = n - window + 1;
  for (std::size_t i = 0; i < spec_.ops_per_txn; ++i) {
    const auto start = static_cast<AttrValue>(std::min(starts - 1, keys_(rng) * starts / spec_.keys_per_partition));
    const AttrValue a = rng.uniform_int(0, 899);
    const AttrValue b = std::clamp<AttrValue>(a + rng.uniform_int(-60, 60), 0, 899);
    Predicate p = Predicate::full(table)
                      .with_bound(0, {start, start + static_cast<AttrValue>(window) - 1})
                      .with_bound(1, {a, a + 99})
                      .with_bound(2, {b, b + 99});
    if (rng.bernoulli(spec_.read_fraction)) {
      t.ops.emplace_back(RangeRead{std::move(p)});
    } else {
      t.ops.emplace_back(RangeWrite{std::move(p), 3, 1});
    }
  }
  return t;
}

std::vector<Transaction> WorkloadGenerator::batch(std::size_t batch_size, std::uint64_t epoch) const {
  std::vector<Transaction> out;
  out.reserve(batch_size);
  const std::uint64_t seed = mix64(spec_.rng_seed, epoch);
  for (std::size_t i = 0; i < batch_size; ++i) {
    Rng rng(mix64(seed, i));
    const std::uint64_t uid = (epoch << 20) | i;
    Transaction t;
    switch (spec_.kind) {
      case WorkloadKind::kTpccLite:
        t = tpcc(rng, uid);
        break;
      case WorkloadKind::kAspnSynthetic:
        t = synthetic(rng);
        break;
      default:
        t = ycsb(rng);
        break;
    }
    t.tid = static_cast<Tid>(i + 1);
    t.uid = uid;
    derive_summaries(t, schema_);
    out.push_back(std::move(t));
  }
  return out;
}

std::vector<Transaction> gen_batch(const WorkloadSpec& spec, std::size_t batch_size, std::uint64_t epoch) {
  if (batch_size == 0) {
    spec.validate();
    return {};
  }
  return WorkloadGenerator(spec).batch(batch_size, epoch);
}

json batch_to_json(const std::vector<Transaction>& batch) {
  json a = json::array();
  for (const auto& t : batch) a.push_back(to_json(t));
  return a;
}

std::vector<Transaction> batch_from_json(const json& j) {
  std::vector<Transaction> out;
  for (const auto& t : j) out.push_back(transaction_from_json(t));
  return out;
}

std::uint64_t batch_checksum(const std::vector<Transaction>& batch) {
  const std::string s = batch_to_json(batch).dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

void DependenceSpec::validate(const TableSchema& schema) const {
  const auto arity = schema.arity();
  for (std::size_t i = 0; i < relations.size(); ++i) {
    const auto& r = relations[i];
    const std::string where = "relation " + std::to_string(i);
    if (r.target >= arity || r.source >= arity) throw ConfigError(where + ": attribute out of range");
    if (r.target == r.source) throw ConfigError(where + ": attribute depends on itself");
    if (!(r.noise >= 0.0)) throw ConfigError(where + ": noise must be non-negative");
    for (const auto& [a, iv] : r.when) {
      if (a >= arity) throw ConfigError(where + ": condition attribute out of range");
      if (iv.empty()) throw ConfigError(where + ": empty condition interval");
    }
  }
  auto box = [&](const Relation& r) {
    std::vector<Interval> b;
    for (std::size_t a = 0; a < arity; ++a) b.push_back(schema.domain(a));
    for (const auto& [a, iv] : r.when) b[a] = intersect(b[a], iv);
    return b;
  };
  for (std::size_t i = 0; i < relations.size(); ++i) {
    for (std::size_t j = i + 1; j < relations.size(); ++j) {
      if (relations[i].target != relations[j].target) continue;
      const auto bi = box(relations[i]);
      const auto bj = box(relations[j]);
      bool overlap = true;
      for (std::size_t a = 0; a < arity && overlap; ++a) overlap = !intersect(bi[a], bj[a]).empty();
      if (overlap) {
        throw ConfigError("relations " + std::to_string(i) + " and " + std::to_string(j) +
                          " assign the same attribute on overlapping rows");
      }
    }
  }
  // A source may not depend on its own target through other relations.
  std::vector<std::vector<std::size_t>> feeds(arity);
  for (const auto& r : relations) feeds[r.source].push_back(r.target);
  std::vector<int> state(arity, 0);
  std::function<void(std::size_t)> visit = [&](std::size_t a) {
    state[a] = 1;
    for (const auto b : feeds[a]) {
      if (state[b] == 1) throw ConfigError("relations form a cycle through attribute " + schema.attributes[b].name);
      if (state[b] == 0) visit(b);
    }
    state[a] = 2;
  };
  for (std::size_t a = 0; a < arity; ++a) {
    if (state[a] == 0) visit(a);
  }
}

namespace {

bool apply_relations(const TableSchema& schema, const DependenceSpec& spec, AttributeVector& row, Rng& rng) {
  for (const auto& r : spec.relations) {
    bool active = true;
    for (const auto& [a, iv] : r.when) active = active && iv.contains(row[a]);
    if (!active) continue;
    AttrValue v = r.scale * row[r.source] + r.offset;
    if (r.noise > 0.0) v += static_cast<AttrValue>(std::llround(rng.normal(0.0, r.noise)));
    row[r.target] = v;
  }
  for (std::size_t a = 0; a < row.size(); ++a) {
    if (!schema.domain(a).contains(row[a])) return false;
  }
  return true;
}

}  // namespace

RecordSet gen_correlated_table(const TableSchema& schema, std::size_t row_count, const DependenceSpec& spec,
                               std::uint64_t seed) {
  spec.validate(schema);
  const auto arity = schema.arity();
  RecordSet out(arity);
  out.reserve(row_count);
  AttributeVector row(arity);
  if (spec.sampling == DependenceSpec::Sampling::kFactorial) {
    std::uint64_t cells = 1;
    for (std::size_t a = 0; a < arity; ++a) {
      const auto w = static_cast<std::uint64_t>(schema.domain(a).hi - schema.domain(a).lo + 1);
      if (cells > std::numeric_limits<std::uint64_t>::max() / w) throw ConfigError("factorial grid too large");
      cells *= w;
    }
    if (cells != row_count) {
      throw ConfigError("factorial sampling needs row_count " + std::to_string(cells));
    }
    for (std::uint64_t i = 0; i < cells; ++i) {
      std::uint64_t rest = i;
      for (std::size_t a = arity; a-- > 0;) {
        const auto dom = schema.domain(a);
        const auto w = static_cast<std::uint64_t>(dom.hi - dom.lo + 1);
        row[a] = dom.lo + static_cast<AttrValue>(rest % w);
        rest /= w;
      }
      Rng rng(mix64(seed, i));
      if (!apply_relations(schema, spec, row, rng)) {
        throw ConfigError("relations push factorial row " + std::to_string(i) + " outside the domain");
      }
      out.push_back(row);
    }
    return out;
  }
  for (std::size_t i = 0; i < row_count; ++i) {
    Rng rng(mix64(seed, i));
    bool ok = false;
    for (int attempt = 0; attempt < 1000 && !ok; ++attempt) {
      for (std::size_t a = 0; a < arity; ++a) {
        const auto dom = schema.domain(a);
        row[a] = (schema.key_attribute && *schema.key_attribute == a) ? dom.lo + static_cast<AttrValue>(i)
                                                                       : rng.uniform_int(dom.lo, dom.hi);
      }
      ok = apply_relations(schema, spec, row, rng);
    }
    if (!ok) throw ConfigError("relations keep producing rows outside the domain");
    out.push_back(row);
  }
  return out;
}

}  // namespace detdb
