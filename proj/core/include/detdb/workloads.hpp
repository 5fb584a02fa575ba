#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "detdb/aspn.hpp"
#include "detdb/model.hpp"
#include "detdb/mvstore.hpp"
#include "detdb/rng.hpp"

namespace detdb {

enum class WorkloadKind : std::uint8_t { kYcsbA, kYcsbB, kYcsbCustom, kTpccLite, kAspnSynthetic };

const char* to_string(WorkloadKind k);
WorkloadKind workload_kind_from_string(std::string_view s);

inline constexpr TableId kUsertable = 0;
inline constexpr TableId kWarehouse = 1;
inline constexpr TableId kDistrict = 2;
inline constexpr TableId kStock = 3;
inline constexpr TableId kOrders = 4;
inline constexpr TableId kItems = 5;

struct WorkloadSpec {
  WorkloadKind kind = WorkloadKind::kYcsbA;
  std::size_t partitions = 1;
  std::size_t keys_per_partition = 40000;
  double read_fraction = 0.5;
  std::size_t ops_per_txn = 10;
  double zipf_theta = 0.0;
  // Share of YCSB updates issued as read-modify-write increments.
  double rmw_fraction = 0.0;
  std::size_t districts_per_partition = 1;
  std::size_t min_items = 5;
  std::size_t max_items = 15;
  std::uint64_t rng_seed = 0;

  // Applies the kind's fixed read mix, then checks every field.
  void normalize();
  void validate() const;
  nlohmann::json to_json() const;
  static WorkloadSpec from_json(const nlohmann::json& j);
};

// Inverse-CDF sampler over [0, n) with weight 1 / (rank + 1)^theta.
class ZipfSampler {
 public:
  ZipfSampler(std::size_t n, double theta);
  std::size_t operator()(Rng& rng) const;
  std::size_t size() const { return cdf_.size(); }
  double theta() const { return theta_; }

 private:
  std::vector<double> cdf_;
  double theta_ = 0.0;
};

std::size_t zipf_sample(std::size_t n, double theta, Rng& rng);

Schema workload_schema(const WorkloadSpec& spec);
// Initial contents of every table of the workload.
std::vector<TableData> initial_tables(const WorkloadSpec& spec);
void populate_store(MvStore& store, const WorkloadSpec& spec);

// Stateful generator; reuses the Zipf tables across batches.
class WorkloadGenerator {
 public:
  explicit WorkloadGenerator(WorkloadSpec spec);
  const WorkloadSpec& spec() const { return spec_; }
  const Schema& schema() const { return schema_; }
  // Tids 1..batch_size; uid encodes (epoch, position).
  std::vector<Transaction> batch(std::size_t batch_size, std::uint64_t epoch) const;

 private:
  Transaction ycsb(Rng& rng) const;
  Transaction tpcc(Rng& rng, std::uint64_t order_key) const;
  Transaction synthetic(Rng& rng) const;

  WorkloadSpec spec_;
  Schema schema_;
  ZipfSampler keys_;
};

std::vector<Transaction> gen_batch(const WorkloadSpec& spec, std::size_t batch_size, std::uint64_t epoch);

nlohmann::json batch_to_json(const std::vector<Transaction>& batch);
std::vector<Transaction> batch_from_json(const nlohmann::json& j);
// Order-sensitive digest of the batch contents.
std::uint64_t batch_checksum(const std::vector<Transaction>& batch);

// target := scale * source + offset + round(N(0, noise)), applied only to
// rows inside every `when` interval. Relations run in listed order.
struct Relation {
  std::size_t target = 0;
  std::size_t source = 0;
  AttrValue scale = 1;
  AttrValue offset = 0;
  double noise = 0.0;
  std::vector<std::pair<std::size_t, Interval>> when;
};

struct DependenceSpec {
  enum class Sampling : std::uint8_t { kUniform, kFactorial };
  std::vector<Relation> relations;
  // kFactorial enumerates the full domain grid; row_count must match its
  // size and relations may not leave the domain.
  Sampling sampling = Sampling::kUniform;

  void validate(const TableSchema& schema) const;
};

RecordSet gen_correlated_table(const TableSchema& schema, std::size_t row_count, const DependenceSpec& spec,
                               std::uint64_t seed);

}  // namespace detdb
