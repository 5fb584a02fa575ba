#include "detdb/mvstore.hpp"

#include <algorithm>
#include <limits>
#include <string>

#include <nlohmann/json.hpp>

#include "detdb/error.hpp"

namespace detdb {

using nlohmann::json;

std::string to_string(const Timestamp& ts) {
  static constexpr const char* kRound[] = {"base", "main", "fallback"};
  return "(" + std::to_string(ts.epoch) + "," + kRound[static_cast<int>(ts.round)] + "," +
         std::to_string(ts.tid) + ")";
}

VersionChain::VersionChain(Key key, std::optional<AttributeVector> base, std::uint64_t epoch)
    : key_(key) {
  if (base) {
    base_ = new Version(Timestamp::base(epoch), std::move(*base), true);
    head_.store(base_, std::memory_order_release);
  }
}

VersionChain::~VersionChain() {
  Version* v = head_.load(std::memory_order_acquire);
  while (v) {
    Version* next = v->next.load(std::memory_order_relaxed);
    delete v;
    v = next;
  }
}

void VersionChain::install(Timestamp ts, AttributeVector value) {
  auto* node = new Version(ts, std::move(value), false);
  std::atomic<Version*>* link = &head_;
  Version* cur = link->load(std::memory_order_acquire);
  for (;;) {
    while (cur && cur->ts > ts) {
      link = &cur->next;
      cur = link->load(std::memory_order_acquire);
    }
    if (cur && cur->ts == ts) {
      delete node;
      throw InvariantError("double install of " + to_string(ts) + " on key " + to_string(key_));
    }
    node->next.store(cur, std::memory_order_relaxed);
    if (link->compare_exchange_weak(cur, node, std::memory_order_release,
                                    std::memory_order_acquire)) {
      return;
    }
  }
}

const Version* VersionChain::visible(Timestamp reader) const {
  for (const Version* v = head_.load(std::memory_order_acquire); v;
       v = v->next.load(std::memory_order_acquire)) {
    if (v->ts >= reader) continue;
    if (v->ts.round == Round::kFallback || v->committed.load(std::memory_order_acquire)) return v;
  }
  return nullptr;
}

const Version* VersionChain::find(Timestamp ts) const {
  for (const Version* v = head_.load(std::memory_order_acquire); v;
       v = v->next.load(std::memory_order_acquire)) {
    if (v->ts == ts) return v;
    if (v->ts < ts) break;
  }
  return nullptr;
}

bool VersionChain::commit(Timestamp ts) {
  auto* v = const_cast<Version*>(find(ts));
  if (!v) return false;
  v->committed.store(true, std::memory_order_release);
  return true;
}

bool VersionChain::retract(Timestamp ts) {
  std::atomic<Version*>* link = &head_;
  for (Version* v = link->load(std::memory_order_acquire); v; v = link->load(std::memory_order_acquire)) {
    if (v->ts == ts) {
      if (v == base_) return false;
      link->store(v->next.load(std::memory_order_acquire), std::memory_order_release);
      delete v;
      return true;
    }
    link = &v->next;
  }
  return false;
}

bool VersionChain::replace(Timestamp ts, AttributeVector value) {
  auto* v = const_cast<Version*>(find(ts));
  if (!v || v == base_ || v->committed.load(std::memory_order_acquire)) return false;
  v->value = std::move(value);
  return true;
}

std::size_t VersionChain::collapse(std::uint64_t next_epoch) {
  Version* keep = nullptr;
  std::size_t removed = 0;
  Version* v = head_.load(std::memory_order_acquire);
  while (v) {
    Version* next = v->next.load(std::memory_order_relaxed);
    if (!keep && v->committed.load(std::memory_order_acquire)) {
      keep = v;
    } else {
      delete v;
      ++removed;
    }
    v = next;
  }
  if (keep) {
    keep->ts = Timestamp::base(next_epoch);
    keep->next.store(nullptr, std::memory_order_relaxed);
  }
  base_ = keep;
  head_.store(keep, std::memory_order_release);
  return removed;
}

std::size_t VersionChain::length() const {
  std::size_t n = 0;
  for (const Version* v = head_.load(std::memory_order_acquire); v;
       v = v->next.load(std::memory_order_acquire)) {
    ++n;
  }
  return n;
}

MvStore::MvStore(Schema schema) : schema_(std::move(schema)) {
  for (const auto& t : schema_.tables()) {
    auto tab = std::make_unique<Table>();
    tab->schema = &t;
    table_index_[t.id] = tables_.size();
    tables_.push_back(std::move(tab));
  }
}

MvStore::~MvStore() = default;

MvStore::Table& MvStore::table(TableId id) {
  auto it = table_index_.find(id);
  if (it == table_index_.end()) throw NotFoundError("unknown table id " + std::to_string(id));
  return *tables_[it->second];
}

const MvStore::Table& MvStore::table(TableId id) const {
  return const_cast<MvStore*>(this)->table(id);
}

VersionChain* MvStore::chain(const Key& key) const {
  const auto& t = table(key.table);
  std::shared_lock lock(t.mu);
  auto it = t.chains.find(key.pk);
  return it == t.chains.end() ? nullptr : it->second.get();
}

VersionChain& MvStore::chain_or_create(const Key& key) {
  if (auto* c = chain(key)) return *c;
  auto& t = table(key.table);
  std::unique_lock lock(t.mu);
  auto& slot = t.chains[key.pk];
  if (!slot) slot = std::make_unique<VersionChain>(key, std::nullopt, epoch_);
  return *slot;
}

void MvStore::require_active(const char* op) const {
  if (state_ != EpochState::kActive) {
    throw PhaseError(std::string(op) + " outside an active epoch");
  }
}

void MvStore::load_record(Key key, AttributeVector value) {
  if (state_ != EpochState::kClean) throw PhaseError("load_record during an epoch");
  auto& t = table(key.table);
  t.schema->check_record(key.pk, value);
  std::unique_lock lock(t.mu);
  auto& slot = t.chains[key.pk];
  if (slot) versions_.fetch_sub(slot->length(), std::memory_order_relaxed);
  slot = std::make_unique<VersionChain>(key, std::move(value), epoch_ + 1);
  versions_.fetch_add(1, std::memory_order_relaxed);
}

Snapshot MvStore::begin_epoch() {
  if (state_ != EpochState::kClean) throw PhaseError("begin_epoch while an epoch is open");
  ++epoch_;
  state_ = EpochState::kActive;
  return Snapshot{epoch_};
}

void MvStore::finish_epoch() {
  if (state_ != EpochState::kActive) throw PhaseError("finish_epoch without an active epoch");
  state_ = EpochState::kFinished;
}

std::size_t MvStore::garbage_collect(std::uint64_t min_active_epoch) {
  if (state_ == EpochState::kActive) throw PhaseError("garbage_collect called mid-epoch");
  if (state_ == EpochState::kClean) return 0;
  if (min_active_epoch <= epoch_) {
    throw PhaseError("garbage_collect: epoch " + std::to_string(epoch_) + " still active");
  }
  std::size_t reclaimed = 0;
  for (auto& t : tables_) {
    std::unique_lock lock(t->mu);
    for (auto it = t->chains.begin(); it != t->chains.end();) {
      reclaimed += it->second->collapse(epoch_ + 1);
      if (!it->second->has_value()) {
        it = t->chains.erase(it);
      } else {
        ++it;
      }
    }
  }
  versions_.fetch_sub(reclaimed, std::memory_order_relaxed);
  state_ = EpochState::kClean;
  return reclaimed;
}

const AttributeVector* MvStore::try_snapshot_read(const Snapshot& snap, const Key& key) const {
  if (snap.epoch != epoch_ || state_ == EpochState::kClean) {
    throw PhaseError("stale snapshot for epoch " + std::to_string(snap.epoch));
  }
  const auto* c = chain(key);
  return c ? c->base_value() : nullptr;
}

const AttributeVector& MvStore::snapshot_read(const Snapshot& snap, const Key& key) const {
  const auto* v = try_snapshot_read(snap, key);
  if (!v) throw NotFoundError("snapshot_read: unknown key " + to_string(key));
  return *v;
}

const AttributeVector* MvStore::read_visible(const Key& key, Timestamp reader) const {
  const auto* c = chain(key);
  if (!c) return nullptr;
  const auto* v = c->visible(reader);
  return v ? &v->value : nullptr;
}

void MvStore::scan(const Predicate& range, const std::function<void(VersionChain&)>& fn) const {
  if (range.is_empty()) return;
  const auto& t = table(range.table());
  Interval keys{std::numeric_limits<std::int64_t>::min(), std::numeric_limits<std::int64_t>::max()};
  if (t.schema->key_attribute) keys = range.bound(*t.schema->key_attribute);
  std::shared_lock lock(t.mu);
  for (auto it = t.chains.lower_bound(keys.lo); it != t.chains.end() && it->first <= keys.hi; ++it) {
    fn(*it->second);
  }
}

void MvStore::scan_snapshot(const Snapshot& snap, const Predicate& range, const ScanFn& fn) const {
  if (snap.epoch != epoch_ || state_ == EpochState::kClean) {
    throw PhaseError("stale snapshot for epoch " + std::to_string(snap.epoch));
  }
  scan(range, [&](VersionChain& c) {
    if (const auto* v = c.base_value()) fn(c.key(), *v);
  });
}

void MvStore::scan_visible(Timestamp reader, const Predicate& range, const ScanFn& fn) const {
  scan(range, [&](VersionChain& c) {
    if (const auto* v = c.visible(reader)) fn(c.key(), v->value);
  });
}

void MvStore::install_version(const Key& key, Timestamp ts, AttributeVector value) {
  require_active("install_version");
  if (ts.epoch != epoch_ || ts.round == Round::kBase) {
    throw InvariantError("install_version with foreign timestamp " + to_string(ts));
  }
  chain_or_create(key).install(ts, std::move(value));
  versions_.fetch_add(1, std::memory_order_relaxed);
}

void MvStore::commit_version(const Key& key, Timestamp ts) {
  require_active("commit_version");
  auto* c = chain(key);
  if (!c || !c->commit(ts)) {
    throw InvariantError("commit of missing version " + to_string(ts) + " on " + to_string(key));
  }
}

void MvStore::retract_version(const Key& key, Timestamp ts) {
  require_active("retract_version");
  auto* c = chain(key);
  if (!c || !c->retract(ts)) {
    throw InvariantError("retract of missing version " + to_string(ts) + " on " + to_string(key));
  }
  versions_.fetch_sub(1, std::memory_order_relaxed);
}

void MvStore::replace_version(const Key& key, Timestamp ts, AttributeVector value) {
  require_active("replace_version");
  auto* c = chain(key);
  if (!c || !c->replace(ts, std::move(value))) {
    throw InvariantError("replace of missing version " + to_string(ts) + " on " + to_string(key));
  }
}

const VersionChain* MvStore::find_chain(const Key& key) const { return chain(key); }

std::size_t MvStore::chain_count() const {
  std::size_t n = 0;
  for (const auto& t : tables_) {
    std::shared_lock lock(t->mu);
    n += t->chains.size();
  }
  return n;
}

std::size_t MvStore::max_chain_length() const {
  std::size_t n = 0;
  for (const auto& t : tables_) {
    std::shared_lock lock(t->mu);
    for (const auto& [pk, c] : t->chains) n = std::max(n, c->length());
  }
  return n;
}

std::size_t MvStore::record_count(TableId id) const {
  const auto& t = table(id);
  std::shared_lock lock(t.mu);
  std::size_t n = 0;
  for (const auto& [pk, c] : t.chains) n += c->has_value() ? 1 : 0;
  return n;
}

StoreDump MvStore::dump() const {
  StoreDump out;
  for (const auto& t : tables_) {
    std::shared_lock lock(t->mu);
    for (const auto& [pk, c] : t->chains) {
      if (const auto* v = c->base_value()) out.emplace(c->key(), *v);
    }
  }
  return out;
}

json MvStore::dump_json() const {
  json j = json::object();
  for (const auto& t : tables_) j[t->schema->name] = json::object();
  for (const auto& [key, value] : dump()) {
    j[schema_.table(key.table).name][std::to_string(key.pk)] = value;
  }
  return j;
}

void MvStore::load_dump(const StoreDump& d) {
  if (state_ != EpochState::kClean) throw PhaseError("load_dump during an epoch");
  for (auto& t : tables_) {
    std::unique_lock lock(t->mu);
    t->chains.clear();
  }
  versions_.store(0, std::memory_order_relaxed);
  for (const auto& [key, value] : d) load_record(key, value);
}

void MvStore::load_json(const json& j) {
  StoreDump d;
  for (const auto& [name, rows] : j.items()) {
    const auto* t = schema_.find(name);
    if (!t) throw SchemaError("dump references unknown table " + name);
    for (const auto& [pk, value] : rows.items()) {
      d.emplace(Key{t->id, std::stoll(pk)}, value.get<AttributeVector>());
    }
  }
  load_dump(d);
}

}  // namespace detdb
