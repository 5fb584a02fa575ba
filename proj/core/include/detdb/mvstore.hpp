#pragma once

#include <atomic>
#include <compare>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "detdb/model.hpp"

namespace detdb {

enum class Round : std::uint8_t { kBase = 0, kMain = 1, kFallback = 2 };

struct Timestamp {
  std::uint64_t epoch = 0;
  Round round = Round::kBase;
  Tid tid = 0;

  static constexpr Timestamp base(std::uint64_t epoch) { return {epoch, Round::kBase, 0}; }
  static constexpr Timestamp main(std::uint64_t epoch, Tid tid) { return {epoch, Round::kMain, tid}; }
  static constexpr Timestamp fallback(std::uint64_t epoch, Tid tid) {
    return {epoch, Round::kFallback, tid};
  }

  friend constexpr auto operator<=>(const Timestamp&, const Timestamp&) = default;
};

std::string to_string(const Timestamp& ts);

struct Version {
  Version(Timestamp t, AttributeVector v, bool c) : value(std::move(v)), ts(t), committed(c) {}

  AttributeVector value;
  Timestamp ts;
  std::atomic<Version*> next{nullptr};  // older neighbour
  std::atomic<bool> committed;
};

// Versions sorted by descending timestamp. Inserts are lock-free; removal
// (retract, collapse) needs exclusive access to the chain.
class VersionChain {
 public:
  VersionChain(Key key, std::optional<AttributeVector> base, std::uint64_t epoch);
  ~VersionChain();
  VersionChain(const VersionChain&) = delete;
  VersionChain& operator=(const VersionChain&) = delete;

  const Key& key() const { return key_; }

  // The snapshot value; null when the key did not exist at epoch start.
  const AttributeVector* base_value() const { return base_ ? &base_->value : nullptr; }

  // Throws InvariantError when `ts` is already present.
  void install(Timestamp ts, AttributeVector value);

  // Greatest version strictly below `reader` that is committed or belongs
  // to the fallback round. Null when nothing qualifies.
  const Version* visible(Timestamp reader) const;
  const Version* find(Timestamp ts) const;
  const Version* head() const { return head_.load(std::memory_order_acquire); }

  bool commit(Timestamp ts);
  bool retract(Timestamp ts);
  bool replace(Timestamp ts, AttributeVector value);

  // Drops everything but the newest committed version, which becomes the
  // new base. Returns the number of removed versions.
  std::size_t collapse(std::uint64_t next_epoch);

  std::size_t length() const;
  bool has_value() const { return base_ != nullptr; }

 private:
  Key key_;
  std::atomic<Version*> head_{nullptr};
  Version* base_ = nullptr;
};

struct Snapshot {
  std::uint64_t epoch = 0;
};

enum class EpochState : std::uint8_t { kClean, kActive, kFinished };

// Committed record values keyed by (table, pk).
using StoreDump = std::map<Key, AttributeVector>;

class MvStore {
 public:
  explicit MvStore(Schema schema);
  ~MvStore();
  MvStore(const MvStore&) = delete;
  MvStore& operator=(const MvStore&) = delete;

  const Schema& schema() const { return schema_; }
  std::uint64_t epoch() const { return epoch_; }
  EpochState state() const { return state_; }

  // Only between epochs.
  void load_record(Key key, AttributeVector value);

  Snapshot begin_epoch();
  void finish_epoch();
  // Requires a finished epoch older than min_active_epoch.
  std::size_t garbage_collect(std::uint64_t min_active_epoch);

  const AttributeVector& snapshot_read(const Snapshot& snap, const Key& key) const;
  const AttributeVector* try_snapshot_read(const Snapshot& snap, const Key& key) const;
  const AttributeVector* read_visible(const Key& key, Timestamp reader) const;

  using ScanFn = std::function<void(const Key&, const AttributeVector&)>;
  // Visits keys whose key-attribute falls in the predicate's key range in
  // ascending order, passing the snapshot value; does not apply the rest of
  // the predicate.
  void scan_snapshot(const Snapshot& snap, const Predicate& range, const ScanFn& fn) const;
  void scan_visible(Timestamp reader, const Predicate& range, const ScanFn& fn) const;

  void install_version(const Key& key, Timestamp ts, AttributeVector value);
  void commit_version(const Key& key, Timestamp ts);
  void retract_version(const Key& key, Timestamp ts);
  // Overwrites an uncommitted version's value; callers need exclusive
  // access to the chain.
  void replace_version(const Key& key, Timestamp ts, AttributeVector value);

  const VersionChain* find_chain(const Key& key) const;

  std::size_t version_count() const { return versions_.load(std::memory_order_relaxed); }
  std::size_t chain_count() const;
  std::size_t max_chain_length() const;
  std::size_t record_count(TableId table) const;

  StoreDump dump() const;
  nlohmann::json dump_json() const;
  void load_dump(const StoreDump& dump);
  void load_json(const nlohmann::json& j);

 private:
  struct Table {
    const TableSchema* schema = nullptr;
    mutable std::shared_mutex mu;
    std::map<std::int64_t, std::unique_ptr<VersionChain>> chains;
  };

  Table& table(TableId id);
  const Table& table(TableId id) const;
  VersionChain* chain(const Key& key) const;
  VersionChain& chain_or_create(const Key& key);
  void require_active(const char* op) const;
  void scan(const Predicate& range, const std::function<void(VersionChain&)>& fn) const;

  Schema schema_;
  std::vector<std::unique_ptr<Table>> tables_;
  std::map<TableId, std::size_t> table_index_;
  std::uint64_t epoch_ = 0;
  EpochState state_ = EpochState::kClean;
  std::atomic<std::size_t> versions_{0};
};

}  // namespace detdb
