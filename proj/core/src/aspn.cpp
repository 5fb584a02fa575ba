#include "detdb/aspn.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "detdb/error.hpp"
#include "detdb/rng.hpp"

namespace detdb {

using nlohmann::json;

// ---------------------------------------------------------------- records

void RecordSet::push_back(std::span<const AttrValue> r) {
  if (r.size() != arity_) throw SchemaError("record arity mismatch");
  data_.insert(data_.end(), r.begin(), r.end());
}

RecordSet RecordSet::select(std::span<const std::size_t> rows) const {
  RecordSet out(arity_);
  out.reserve(rows.size());
  for (const auto r : rows) out.push_back(row(r));
  return out;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) {
    while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
    std::size_t b = 0;
    while (b < cell.size() && cell[b] == ' ') ++b;
    out.push_back(cell.substr(b));
  }
  return out;
}

void check_row(const TableSchema& schema, std::span<const AttrValue> row) {
  const std::int64_t pk = schema.key_attribute ? row[*schema.key_attribute] : 0;
  schema.check_record(pk, row);
}

}  // namespace

RecordSet load_csv(const std::string& path, const TableSchema& schema) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open CSV file " + path);
  std::string line;
  if (!std::getline(in, line)) throw ConfigError("CSV file " + path + " has no header row");
  const auto header = split_csv_line(line);
  std::vector<std::size_t> column_attr(header.size());
  std::vector<bool> seen(schema.arity(), false);
  for (std::size_t c = 0; c < header.size(); ++c) {
    const auto idx = schema.index_of(header[c]);
    if (!idx) throw SchemaError("CSV column " + header[c] + " not in table " + schema.name);
    if (seen[*idx]) throw SchemaError("CSV column " + header[c] + " repeated");
    seen[*idx] = true;
    column_attr[c] = *idx;
  }
  for (std::size_t a = 0; a < schema.arity(); ++a) {
    if (!seen[a]) throw SchemaError("CSV lacks attribute " + schema.attributes[a].name);
  }
  RecordSet out(schema.arity());
  AttributeVector row(schema.arity());
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != header.size()) {
      throw SchemaError(path + ":" + std::to_string(lineno) + ": wrong number of columns");
    }
    for (std::size_t c = 0; c < cells.size(); ++c) {
      AttrValue v = 0;
      const auto* first = cells[c].data();
      const auto* last = first + cells[c].size();
      auto [ptr, ec] = std::from_chars(first, last, v);
      if (ec != std::errc() || ptr != last) {
        throw SchemaError(path + ":" + std::to_string(lineno) + ": not an integer: " + cells[c]);
      }
      row[column_attr[c]] = v;
    }
    check_row(schema, row);
    out.push_back(row);
  }
  return out;
}

void save_csv(const std::string& path, const TableSchema& schema, const RecordSet& records) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write CSV file " + path);
  for (std::size_t a = 0; a < schema.arity(); ++a) out << (a ? "," : "") << schema.attributes[a].name;
  out << '\n';
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto r = records.row(i);
    for (std::size_t a = 0; a < r.size(); ++a) out << (a ? "," : "") << r[a];
    out << '\n';
  }
}

// ----------------------------------------------------------------- config

void AspnConfig::validate() const {
  if (!(correlation_threshold >= 0.0 && correlation_threshold <= 1.0)) {
    throw ConfigError("aspn.correlation_threshold must lie in [0, 1]");
  }
  if (!(independence_floor >= 0.0 && independence_floor <= correlation_threshold)) {
    throw ConfigError("aspn.independence_floor must lie in [0, correlation_threshold]");
  }
  if (clusters < 2) throw ConfigError("aspn.clusters must be at least 2");
  if (min_node_records < 2) throw ConfigError("aspn.min_node_records must be at least 2");
  if (sample_cap < 2) throw ConfigError("aspn.sample_cap must be at least 2");
  if (leaf_bins == 0 || joint_bins == 0) throw ConfigError("aspn bins must be positive");
  if (rdc_features == 0) throw ConfigError("aspn.rdc_features must be positive");
}

json AspnConfig::to_json() const {
  return {{"correlation_threshold", correlation_threshold},
          {"independence_floor", independence_floor},
          {"clusters", clusters},
          {"min_node_records", min_node_records},
          {"sample_cap", sample_cap},
          {"leaf_bins", leaf_bins},
          {"joint_bins", joint_bins},
          {"rdc_features", rdc_features},
          {"rdc_frequency", rdc_frequency},
          {"max_depth", max_depth},
          {"rng_seed", rng_seed}};
}

AspnConfig AspnConfig::from_json(const json& j) {
  AspnConfig c;
  for (const auto& [k, v] : j.items()) {
    if (k == "correlation_threshold") c.correlation_threshold = v.get<double>();
    else if (k == "independence_floor") c.independence_floor = v.get<double>();
    else if (k == "clusters") c.clusters = v.get<std::size_t>();
    else if (k == "min_node_records") c.min_node_records = v.get<std::size_t>();
    else if (k == "sample_cap") c.sample_cap = v.get<std::size_t>();
    else if (k == "leaf_bins") c.leaf_bins = v.get<std::size_t>();
    else if (k == "joint_bins") c.joint_bins = v.get<std::size_t>();
    else if (k == "rdc_features") c.rdc_features = v.get<std::size_t>();
    else if (k == "rdc_frequency") c.rdc_frequency = v.get<double>();
    else if (k == "max_depth") c.max_depth = v.get<std::size_t>();
    else if (k == "rng_seed") c.rng_seed = v.get<std::uint64_t>();
    else throw ConfigError("aspn: unknown field " + k);
  }
  c.validate();
  return c;
}

// ------------------------------------------------------------ correlation

namespace {

std::uint64_t hash_rows(std::span<const std::size_t> rows) {
  std::uint64_t h = mix64(rows.size());
  const std::size_t step = std::max<std::size_t>(1, rows.size() / 64);
  for (std::size_t i = 0; i < rows.size(); i += step) h = mix64(h, rows[i]);
  return h;
}

// Sorted subset of at most `cap` rows, seeded.
std::vector<std::size_t> subsample(std::span<const std::size_t> rows, std::size_t cap, std::uint64_t seed) {
  std::vector<std::size_t> out(rows.begin(), rows.end());
  if (out.size() <= cap) return out;
  Rng rng(mix64(seed, hash_rows(rows)));
  for (std::size_t i = 0; i < cap; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(out.size() - i));
    std::swap(out[i], out[j]);
  }
  out.resize(cap);
  std::sort(out.begin(), out.end());
  return out;
}

// Average ranks scaled into (0, 1].
std::vector<double> copula(const std::vector<AttrValue>& v) {
  const std::size_t n = v.size();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> u(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && v[idx[j]] == v[idx[i]]) ++j;
    const double r = (static_cast<double>(i + j - 1) / 2.0 + 1.0) / static_cast<double>(n);
    for (std::size_t k = i; k < j; ++k) u[idx[k]] = r;
    i = j;
  }
  return u;
}

// Standardized random sinusoid features of the copula; empty when the
// column carries no variation.
Eigen::MatrixXd features(const std::vector<AttrValue>& v, std::size_t attr, const AspnConfig& cfg) {
  const auto n = static_cast<Eigen::Index>(v.size());
  if (std::all_of(v.begin(), v.end(), [&](AttrValue x) { return x == v.front(); })) return {};
  const auto u = copula(v);
  Rng rng(mix64(cfg.rng_seed, 0xfea70000ULL + attr));
  std::vector<Eigen::VectorXd> cols;
  for (std::size_t m = 0; m < cfg.rdc_features; ++m) {
    const double a = rng.normal(0.0, cfg.rdc_frequency);
    const double b = rng.uniform(0.0, 2.0 * std::numbers::pi);
    Eigen::VectorXd c(n);
    for (Eigen::Index i = 0; i < n; ++i) c(i) = std::sin(a * u[static_cast<std::size_t>(i)] + b);
    c.array() -= c.mean();
    const double sd = std::sqrt(c.squaredNorm() / static_cast<double>(std::max<Eigen::Index>(1, n - 1)));
    if (sd < 1e-9) continue;
    cols.push_back(c / sd);
  }
  Eigen::MatrixXd f(n, static_cast<Eigen::Index>(cols.size()));
  for (std::size_t m = 0; m < cols.size(); ++m) f.col(static_cast<Eigen::Index>(m)) = cols[m];
  return f;
}

double canonical_score(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y) {
  if (x.cols() == 0 || y.cols() == 0) return 0.0;
  constexpr double kRidge = 1e-3;
  const double n = static_cast<double>(x.rows());
  const double denom = std::max(1.0, n - 1.0);
  Eigen::MatrixXd cxx = x.transpose() * x / denom;
  Eigen::MatrixXd cyy = y.transpose() * y / denom;
  const Eigen::MatrixXd cxy = x.transpose() * y / denom;
  cxx.diagonal().array() += kRidge;
  cyy.diagonal().array() += kRidge;
  const Eigen::LLT<Eigen::MatrixXd> lx(cxx);
  const Eigen::LLT<Eigen::MatrixXd> ly(cyy);
  const Eigen::MatrixXd a = lx.matrixL().solve(cxy);
  const Eigen::MatrixXd m = ly.matrixL().solve(a.transpose()).transpose();
  const Eigen::JacobiSVD<Eigen::MatrixXd> svd(m);
  const double rho = std::clamp(svd.singularValues()(0), 0.0, 1.0);
  // Subtract the largest canonical correlation expected under independence.
  const double c1 = static_cast<double>(x.cols()) / n;
  const double c2 = static_cast<double>(y.cols()) / n;
  double edge = std::sqrt(c1 * std::max(0.0, 1.0 - c2)) + std::sqrt(c2 * std::max(0.0, 1.0 - c1));
  edge = std::min(edge * edge, 0.999);
  const double adj = (rho * rho - edge) / (1.0 - edge);
  return adj <= 0.0 ? 0.0 : std::min(1.0, std::sqrt(adj));
}

}  // namespace

double CorrelationReport::score(std::size_t a, std::size_t b) const {
  return scores[a * attrs.size() + b];
}

CorrelationReport find_strong_subset(std::span<const std::size_t> attrs, const RecordSet& records,
                                     std::span<const std::size_t> rows, double threshold,
                                     const AspnConfig& config) {
  CorrelationReport r;
  r.attrs.assign(attrs.begin(), attrs.end());
  const std::size_t k = attrs.size();
  r.scores.assign(k * k, 0.0);
  for (std::size_t i = 0; i < k; ++i) r.scores[i * k + i] = 1.0;
  if (k < 2 || rows.size() < 2) return r;

  const auto chosen = subsample(rows, config.sample_cap, config.rng_seed);
  std::vector<Eigen::MatrixXd> feats(k);
  std::vector<AttrValue> col(chosen.size());
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t t = 0; t < chosen.size(); ++t) col[t] = records.at(chosen[t], attrs[i]);
    feats[i] = features(col, attrs[i], config);
  }
  std::vector<bool> strong(k, false);
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = i + 1; j < k; ++j) {
      const double s = canonical_score(feats[i], feats[j]);
      r.scores[i * k + j] = r.scores[j * k + i] = s;
      if (s >= threshold) strong[i] = strong[j] = true;
    }
  }
  for (std::size_t i = 0; i < k; ++i) {
    if (strong[i]) r.strong_subset.push_back(attrs[i]);
  }
  return r;
}

CorrelationReport find_strong_subset(std::span<const std::size_t> attrs, const RecordSet& records,
                                     double threshold, const AspnConfig& config) {
  std::vector<std::size_t> rows(records.size());
  std::iota(rows.begin(), rows.end(), 0);
  return find_strong_subset(attrs, records, rows, threshold, config);
}

// ------------------------------------------------------------- histograms

Histogram::Histogram(Interval domain, std::size_t max_bins) : lo_(domain.lo), hi_(domain.hi) {
  if (domain.empty()) throw UsageError("histogram over an empty domain");
  const double span = domain.width();
  const double bins = std::min(static_cast<double>(max_bins), span);
  width_ = static_cast<AttrValue>(std::ceil(span / bins));
  const auto n = static_cast<std::size_t>(std::ceil(span / static_cast<double>(width_)));
  counts_.assign(std::max<std::size_t>(1, n), 0);
}

std::size_t Histogram::bin_of(AttrValue v) const {
  if (v <= lo_) return 0;
  const auto b = static_cast<std::size_t>((static_cast<double>(v) - static_cast<double>(lo_)) /
                                          static_cast<double>(width_));
  // Guard the floating step for very wide domains.
  std::size_t out = std::min(b, counts_.size() - 1);
  while (out > 0 && bin_range(out).lo > v) --out;
  while (out + 1 < counts_.size() && bin_range(out).hi < v) ++out;
  return out;
}

Interval Histogram::bin_range(std::size_t b) const {
  const AttrValue lo = lo_ + static_cast<AttrValue>(b) * width_;
  const AttrValue hi = (b + 1 == counts_.size()) ? hi_ : lo + width_ - 1;
  return {lo, hi};
}

void Histogram::add(AttrValue v, std::int64_t delta) {
  auto& c = counts_[bin_of(v)];
  const std::int64_t next = std::max<std::int64_t>(0, c + delta);
  total_ += next - c;
  c = next;
}

double Histogram::overlap(std::size_t b, const Interval& q) const {
  const Interval r = bin_range(b);
  const Interval x = intersect(r, q);
  if (x.empty()) return 0.0;
  if (x == r) return 1.0;
  return x.width() / r.width();
}

double Histogram::mass(const Interval& q) const {
  if (total_ <= 0) return 0.0;
  const Interval x = intersect(q, {lo_, hi_});
  if (x.empty()) return 0.0;
  const std::size_t b0 = bin_of(x.lo);
  const std::size_t b1 = bin_of(x.hi);
  double sum = 0.0;
  for (std::size_t b = b0; b <= b1; ++b) {
    if (counts_[b] == 0) continue;
    sum += static_cast<double>(counts_[b]) * ((b == b0 || b == b1) ? overlap(b, x) : 1.0);
  }
  return std::clamp(sum / static_cast<double>(total_), 0.0, 1.0);
}

json Histogram::to_json() const {
  return {{"lo", lo_}, {"hi", hi_}, {"width", width_}, {"counts", counts_}};
}

Histogram Histogram::from_json(const json& j) {
  Histogram h;
  h.lo_ = j.at("lo").get<AttrValue>();
  h.hi_ = j.at("hi").get<AttrValue>();
  h.width_ = j.at("width").get<AttrValue>();
  h.counts_ = j.at("counts").get<std::vector<std::int64_t>>();
  if (h.counts_.empty() || h.width_ <= 0 || h.lo_ > h.hi_) throw ConfigError("malformed histogram");
  h.total_ = std::accumulate(h.counts_.begin(), h.counts_.end(), std::int64_t{0});
  return h;
}

ChainGrid::ChainGrid(std::vector<std::size_t> order, const TableSchema& schema, std::size_t max_bins)
    : order_(std::move(order)) {
  if (order_.size() < 2) throw UsageError("chain grid needs at least two attributes");
  for (const auto a : order_) axes_.emplace_back(schema.domain(a), max_bins);
  for (std::size_t t = 0; t + 1 < order_.size(); ++t) {
    grids_.emplace_back(axes_[t].bins() * axes_[t + 1].bins(), 0);
  }
}

void ChainGrid::add(std::span<const AttrValue> row, std::int64_t delta) {
  std::vector<std::size_t> b(order_.size());
  for (std::size_t t = 0; t < order_.size(); ++t) b[t] = axes_[t].bin_of(row[order_[t]]);
  bool clamped = false;
  for (std::size_t t = 0; t + 1 < order_.size(); ++t) {
    auto& c = grids_[t][b[t] * axes_[t + 1].bins() + b[t + 1]];
    if (c + delta < 0) {
      clamped = true;
      continue;
    }
    c += delta;
  }
  if (!clamped) total_ = std::max<std::int64_t>(0, total_ + delta);
}

double ChainGrid::mass(const Predicate& q) const {
  if (total_ <= 0 || q.is_empty()) return 0.0;
  std::vector<std::vector<double>> f(order_.size());
  for (std::size_t t = 0; t < order_.size(); ++t) {
    const auto& axis = axes_[t];
    const auto& iv = q.bound(order_[t]);
    f[t].resize(axis.bins());
    bool any = false;
    for (std::size_t b = 0; b < axis.bins(); ++b) {
      f[t][b] = axis.overlap(b, iv);
      any = any || f[t][b] > 0.0;
    }
    if (!any) return 0.0;
  }
  const std::size_t b0 = axes_[0].bins();
  const std::size_t b1 = axes_[1].bins();
  std::vector<double> alpha(b1, 0.0);
  const auto n = static_cast<double>(total_);
  for (std::size_t i = 0; i < b0; ++i) {
    if (f[0][i] == 0.0) continue;
    const auto* row = &grids_[0][i * b1];
    for (std::size_t j = 0; j < b1; ++j) {
      if (row[j] != 0 && f[1][j] != 0.0) alpha[j] += f[0][i] * static_cast<double>(row[j]) / n * f[1][j];
    }
  }
  for (std::size_t t = 1; t + 1 < order_.size(); ++t) {
    const std::size_t bi = axes_[t].bins();
    const std::size_t bj = axes_[t + 1].bins();
    std::vector<double> next(bj, 0.0);
    for (std::size_t i = 0; i < bi; ++i) {
      if (alpha[i] == 0.0) continue;
      const auto* row = &grids_[t][i * bj];
      std::int64_t rowsum = 0;
      for (std::size_t j = 0; j < bj; ++j) rowsum += row[j];
      if (rowsum <= 0) continue;
      for (std::size_t j = 0; j < bj; ++j) {
        if (row[j] != 0 && f[t + 1][j] != 0.0) {
          next[j] += alpha[i] * static_cast<double>(row[j]) / static_cast<double>(rowsum) * f[t + 1][j];
        }
      }
    }
    alpha = std::move(next);
  }
  double sum = 0.0;
  for (const double a : alpha) sum += a;
  return std::clamp(sum, 0.0, 1.0);
}

json ChainGrid::to_json() const {
  json axes = json::array();
  for (const auto& a : axes_) axes.push_back(a.to_json());
  return {{"order", order_}, {"axes", axes}, {"grids", grids_}, {"total", total_}};
}

ChainGrid ChainGrid::from_json(const json& j) {
  ChainGrid g;
  g.order_ = j.at("order").get<std::vector<std::size_t>>();
  for (const auto& a : j.at("axes")) g.axes_.push_back(Histogram::from_json(a));
  g.grids_ = j.at("grids").get<std::vector<std::vector<std::int64_t>>>();
  g.total_ = j.at("total").get<std::int64_t>();
  if (g.order_.size() < 2 || g.axes_.size() != g.order_.size() || g.grids_.size() + 1 != g.order_.size()) {
    throw ConfigError("malformed chain grid");
  }
  for (std::size_t t = 0; t < g.grids_.size(); ++t) {
    if (g.grids_[t].size() != g.axes_[t].bins() * g.axes_[t + 1].bins()) {
      throw ConfigError("malformed chain grid cell count");
    }
  }
  return g;
}

const char* to_string(NodeKind k) {
  switch (k) {
    case NodeKind::kDecomposition: return "decomposition";
    case NodeKind::kIndependent: return "independent";
    case NodeKind::kJoint: return "joint";
    case NodeKind::kLeaf: return "leaf";
  }
  return "?";
}

// --------------------------------------------------------------- building

namespace {

struct Builder {
  const RecordSet& records;
  const TableSchema& schema;
  const AspnConfig& cfg;

  std::uint64_t node_seed(const std::vector<std::size_t>& attrs,
                          const std::vector<std::pair<std::size_t, Interval>>& ctx) const {
    std::uint64_t h = mix64(cfg.rng_seed);
    for (const auto a : attrs) h = mix64(h, a);
    for (const auto& [a, iv] : ctx) h = mix64(mix64(h, a), mix64(static_cast<std::uint64_t>(iv.lo), static_cast<std::uint64_t>(iv.hi)));
    return h;
  }

  RecordSet keep_sample(const AspnNode& n, std::span<const std::size_t> rows) const {
    const auto chosen = subsample(rows, cfg.sample_cap, node_seed(n.attrs, n.context));
    return records.select(chosen);
  }

  void make_flat(AspnNode& n, std::span<const std::size_t> rows) const {
    n.kind = n.attrs.size() == 1 ? NodeKind::kLeaf : NodeKind::kJoint;
    n.low_confidence = true;
    n.flat_box.clear();
    for (const auto a : n.attrs) {
      Interval box{0, -1};
      for (const auto r : rows) {
        const AttrValue v = records.at(r, a);
        if (box.empty()) {
          box = {v, v};
        } else {
          box.lo = std::min(box.lo, v);
          box.hi = std::max(box.hi, v);
        }
      }
      n.flat_box.push_back(box);
    }
    n.sample = records.select(rows);
  }

  void make_leaf(AspnNode& n, std::span<const std::size_t> rows) const {
    n.kind = NodeKind::kLeaf;
    const auto a = n.attrs.front();
    n.histogram = Histogram(schema.domain(a), cfg.leaf_bins);
    for (const auto r : rows) n.histogram.add(records.at(r, a));
  }

  void make_joint(AspnNode& n, std::span<const std::size_t> rows, const CorrelationReport& rep) const {
    n.kind = NodeKind::kJoint;
    const std::size_t k = n.attrs.size();
    // Greedy dependence chain: best pair first, then extend at either end.
    std::size_t bi = 0, bj = 1;
    for (std::size_t i = 0; i < k; ++i) {
      for (std::size_t j = i + 1; j < k; ++j) {
        if (rep.score(i, j) > rep.score(bi, bj)) {
          bi = i;
          bj = j;
        }
      }
    }
    std::vector<std::size_t> chain{bi, bj};
    std::vector<bool> used(k, false);
    used[bi] = used[bj] = true;
    while (chain.size() < k) {
      double best = -1.0;
      std::size_t pick = 0;
      bool front = false;
      for (std::size_t x = 0; x < k; ++x) {
        if (used[x]) continue;
        const double sb = rep.score(x, chain.back());
        const double sf = rep.score(x, chain.front());
        if (sb > best) {
          best = sb;
          pick = x;
          front = false;
        }
        if (sf > best) {
          best = sf;
          pick = x;
          front = true;
        }
      }
      used[pick] = true;
      if (front) {
        chain.insert(chain.begin(), pick);
      } else {
        chain.push_back(pick);
      }
    }
    std::vector<std::size_t> order;
    for (const auto c : chain) order.push_back(n.attrs[c]);
    n.grid = ChainGrid(order, schema, cfg.joint_bins);
    for (const auto r : rows) n.grid.add(records.row(r));
    n.sample = keep_sample(n, rows);
  }

  // Cut points at equal-frequency quantiles; empty when the attribute has a
  // single value on these rows.
  std::vector<AttrValue> cuts(std::size_t attr, std::span<const std::size_t> rows) const {
    std::vector<AttrValue> v;
    v.reserve(rows.size());
    for (const auto r : rows) v.push_back(records.at(r, attr));
    std::sort(v.begin(), v.end());
    if (v.front() == v.back()) return {};
    std::vector<AttrValue> out;
    const std::size_t n = v.size();
    for (std::size_t t = 1; t < cfg.clusters; ++t) {
      const std::size_t pos = (t * n + cfg.clusters - 1) / cfg.clusters;
      AttrValue c = v[pos == 0 ? 0 : pos - 1];
      if (c == v.back()) {
        c = *std::prev(std::lower_bound(v.begin(), v.end(), v.back()));
      }
      if (out.empty() || c > out.back()) out.push_back(c);
    }
    return out;
  }

  AspnNode build(std::vector<std::size_t> attrs, std::vector<std::pair<std::size_t, Interval>> ctx,
                 std::span<const std::size_t> rows, std::size_t depth) const {
    AspnNode n;
    n.attrs = std::move(attrs);
    n.context = std::move(ctx);
    n.count = static_cast<std::int64_t>(rows.size());
    if (rows.size() < cfg.min_node_records) {
      make_flat(n, rows);
      return n;
    }
    if (n.attrs.size() == 1) {
      make_leaf(n, rows);
      return n;
    }
    AspnConfig local = cfg;
    local.rng_seed = node_seed(n.attrs, n.context);
    const auto rep = find_strong_subset(n.attrs, records, rows, cfg.correlation_threshold, local);
    if (depth >= cfg.max_depth || rep.strong_subset.size() == n.attrs.size()) {
      make_joint(n, rows, rep);
      return n;
    }
    if (rep.strong_subset.empty()) {
      n.kind = NodeKind::kIndependent;
      for (const auto a : n.attrs) n.children.push_back(build({a}, n.context, rows, depth + 1));
      n.sample = keep_sample(n, rows);
      return n;
    }

    // Condition on the attribute outside D that is least tied to the rest.
    std::vector<std::pair<double, std::size_t>> cand;
    for (std::size_t i = 0; i < n.attrs.size(); ++i) {
      const auto a = n.attrs[i];
      if (std::binary_search(rep.strong_subset.begin(), rep.strong_subset.end(), a)) continue;
      double worst = 0.0;
      for (std::size_t j = 0; j < n.attrs.size(); ++j) {
        if (j != i) worst = std::max(worst, rep.score(i, j));
      }
      cand.emplace_back(worst, a);
    }
    std::sort(cand.begin(), cand.end());
    // Constant attributes and attributes unrelated to every other one
    // factor out as independent children.
    std::vector<std::size_t> loose;
    for (const auto& [score, a] : cand) {
      if (score < cfg.independence_floor || cuts(a, rows).empty()) loose.push_back(a);
    }
    if (!loose.empty()) {
      std::sort(loose.begin(), loose.end());
      n.kind = NodeKind::kIndependent;
      std::vector<std::size_t> rest;
      for (const auto b : n.attrs) {
        if (!std::binary_search(loose.begin(), loose.end(), b)) rest.push_back(b);
      }
      for (const auto a : loose) n.children.push_back(build({a}, n.context, rows, depth + 1));
      n.children.push_back(build(rest, n.context, rows, depth + 1));
      n.sample = keep_sample(n, rows);
      return n;
    }
    const std::size_t a = cand.front().second;
    const auto cut = cuts(a, rows);
    const Interval dom = schema.domain(a);
    n.kind = NodeKind::kDecomposition;
    n.split_attr = a;
    AttrValue lo = dom.lo;
    for (const auto c : cut) {
      n.split_ranges.push_back({lo, c});
      lo = c + 1;
    }
    n.split_ranges.push_back({lo, dom.hi});
    std::vector<std::size_t> rest;
    for (const auto b : n.attrs) {
      if (b != a) rest.push_back(b);
    }
    for (const auto& range : n.split_ranges) {
      std::vector<std::size_t> part;
      for (const auto r : rows) {
        if (range.contains(records.at(r, a))) part.push_back(r);
      }
      Histogram marg(range, cfg.leaf_bins);
      for (const auto r : part) marg.add(records.at(r, a));
      auto ctx = n.context;
      ctx.emplace_back(a, range);
      n.children.push_back(build(rest, std::move(ctx), part, depth + 1));
      n.child_counts.push_back(static_cast<std::int64_t>(part.size()));
      n.split_marginals.push_back(std::move(marg));
    }
    n.weights.clear();
    for (const auto c : n.child_counts) {
      n.weights.push_back(static_cast<double>(c) / static_cast<double>(rows.size()));
    }
    return n;
  }
};

void recompute_weights(AspnNode& n) {
  const std::int64_t total = std::accumulate(n.child_counts.begin(), n.child_counts.end(), std::int64_t{0});
  n.weights.assign(n.child_counts.size(), 0.0);
  for (std::size_t j = 0; j < n.child_counts.size(); ++j) {
    n.weights[j] = total > 0 ? static_cast<double>(n.child_counts[j]) / static_cast<double>(total)
                             : 1.0 / static_cast<double>(n.child_counts.size());
  }
}

double flat_mass(const AspnNode& n, const Predicate& q) {
  double p = 1.0;
  for (std::size_t i = 0; i < n.attrs.size(); ++i) {
    const Interval& box = n.flat_box[i];
    if (box.empty()) return 0.0;
    p *= intersect(box, q.bound(n.attrs[i])).width() / box.width();
    if (p == 0.0) return 0.0;
  }
  return p;
}

double evaluate(const AspnNode& n, const Predicate& q) {
  switch (n.kind) {
    case NodeKind::kLeaf:
      return n.low_confidence ? flat_mass(n, q) : n.histogram.mass(q.bound(n.attrs.front()));
    case NodeKind::kJoint:
      return n.low_confidence ? flat_mass(n, q) : n.grid.mass(q);
    case NodeKind::kIndependent: {
      double p = 1.0;
      for (const auto& c : n.children) {
        p *= evaluate(c, q);
        if (p == 0.0) return 0.0;
      }
      return p;
    }
    case NodeKind::kDecomposition: {
      const Interval& qa = q.bound(n.split_attr);
      double p = 0.0;
      for (std::size_t j = 0; j < n.children.size(); ++j) {
        if (n.weights[j] == 0.0) continue;
        const double m = n.split_marginals[j].mass(qa);
        if (m == 0.0) continue;
        p += n.weights[j] * m * evaluate(n.children[j], q);
      }
      return std::clamp(p, 0.0, 1.0);
    }
  }
  return 0.0;
}

void collect_structure(const AspnNode& n, const TableSchema& s, std::string& out) {
  auto names = [&](const std::vector<std::size_t>& attrs) {
    std::string r;
    for (std::size_t i = 0; i < attrs.size(); ++i) r += (i ? "," : "") + s.attributes[attrs[i]].name;
    return r;
  };
  switch (n.kind) {
    case NodeKind::kLeaf:
      out += "L(" + names(n.attrs) + ")";
      return;
    case NodeKind::kJoint:
      out += "J(" + names(n.attrs) + ")";
      return;
    case NodeKind::kIndependent:
      out += "I[";
      break;
    case NodeKind::kDecomposition:
      out += "D(" + s.attributes[n.split_attr].name + ")[";
      break;
  }
  for (std::size_t i = 0; i < n.children.size(); ++i) {
    if (i) out += ",";
    collect_structure(n.children[i], s, out);
  }
  out += "]";
}

std::size_t count_nodes(const AspnNode& n) {
  std::size_t c = 1;
  for (const auto& ch : n.children) c += count_nodes(ch);
  return c;
}

std::size_t node_depth(const AspnNode& n) {
  std::size_t d = 0;
  for (const auto& ch : n.children) d = std::max(d, node_depth(ch));
  return d + 1;
}

json records_json(const RecordSet& r) {
  json rows = json::array();
  for (std::size_t i = 0; i < r.size(); ++i) {
    const auto row = r.row(i);
    rows.push_back(std::vector<AttrValue>(row.begin(), row.end()));
  }
  return {{"arity", r.arity()}, {"rows", rows}};
}

RecordSet records_from_json(const json& j) {
  RecordSet r(j.at("arity").get<std::size_t>());
  for (const auto& row : j.at("rows")) r.push_back(row.get<std::vector<AttrValue>>());
  return r;
}

json intervals_json(const std::vector<Interval>& v) {
  json a = json::array();
  for (const auto& iv : v) a.push_back({iv.lo, iv.hi});
  return a;
}

std::vector<Interval> intervals_from_json(const json& j) {
  std::vector<Interval> v;
  for (const auto& iv : j) v.push_back({iv.at(0).get<AttrValue>(), iv.at(1).get<AttrValue>()});
  return v;
}

NodeKind kind_from_string(const std::string& s) {
  if (s == "decomposition") return NodeKind::kDecomposition;
  if (s == "independent") return NodeKind::kIndependent;
  if (s == "joint") return NodeKind::kJoint;
  if (s == "leaf") return NodeKind::kLeaf;
  throw ConfigError("unknown node kind " + s);
}

json node_json(const AspnNode& n) {
  json ctx = json::array();
  for (const auto& [a, iv] : n.context) ctx.push_back({a, iv.lo, iv.hi});
  json j = {{"kind", to_string(n.kind)},
            {"attrs", n.attrs},
            {"context", ctx},
            {"count", n.count},
            {"low_confidence", n.low_confidence}};
  if (n.low_confidence) j["flat_box"] = intervals_json(n.flat_box);
  if (n.kind == NodeKind::kLeaf && !n.low_confidence) j["histogram"] = n.histogram.to_json();
  if (n.kind == NodeKind::kJoint && !n.low_confidence) j["grid"] = n.grid.to_json();
  if (n.kind == NodeKind::kDecomposition) {
    json marg = json::array();
    for (const auto& h : n.split_marginals) marg.push_back(h.to_json());
    j["split_attr"] = n.split_attr;
    j["split_ranges"] = intervals_json(n.split_ranges);
    j["child_counts"] = n.child_counts;
    j["weights"] = n.weights;
    j["split_marginals"] = marg;
  }
  if (!n.sample.empty() || n.sample.arity() > 0) j["sample"] = records_json(n.sample);
  if (!n.children.empty()) {
    json ch = json::array();
    for (const auto& c : n.children) ch.push_back(node_json(c));
    j["children"] = ch;
  }
  return j;
}

AspnNode node_from_json(const json& j) {
  AspnNode n;
  n.kind = kind_from_string(j.at("kind").get<std::string>());
  n.attrs = j.at("attrs").get<std::vector<std::size_t>>();
  for (const auto& c : j.at("context")) {
    n.context.emplace_back(c.at(0).get<std::size_t>(), Interval{c.at(1).get<AttrValue>(), c.at(2).get<AttrValue>()});
  }
  n.count = j.at("count").get<std::int64_t>();
  n.low_confidence = j.value("low_confidence", false);
  if (n.low_confidence) n.flat_box = intervals_from_json(j.at("flat_box"));
  if (n.kind == NodeKind::kLeaf && !n.low_confidence) n.histogram = Histogram::from_json(j.at("histogram"));
  if (n.kind == NodeKind::kJoint && !n.low_confidence) n.grid = ChainGrid::from_json(j.at("grid"));
  if (n.kind == NodeKind::kDecomposition) {
    n.split_attr = j.at("split_attr").get<std::size_t>();
    n.split_ranges = intervals_from_json(j.at("split_ranges"));
    n.child_counts = j.at("child_counts").get<std::vector<std::int64_t>>();
    for (const auto& h : j.at("split_marginals")) n.split_marginals.push_back(Histogram::from_json(h));
  }
  if (j.contains("sample")) n.sample = records_from_json(j.at("sample"));
  if (j.contains("children")) {
    for (const auto& c : j.at("children")) n.children.push_back(node_from_json(c));
  }
  if (n.kind == NodeKind::kDecomposition) {
    if (n.children.size() != n.split_ranges.size() || n.child_counts.size() != n.children.size() ||
        n.split_marginals.size() != n.children.size()) {
      throw ConfigError("malformed decomposition node");
    }
    recompute_weights(n);
  }
  if ((n.kind == NodeKind::kLeaf && n.attrs.size() != 1) ||
      (n.low_confidence && n.flat_box.size() != n.attrs.size())) {
    throw ConfigError("malformed leaf node");
  }
  return n;
}

json table_json(const TableSchema& t) {
  json attrs = json::array();
  for (const auto& a : t.attributes) attrs.push_back({{"name", a.name}, {"lo", a.lo}, {"hi", a.hi}});
  json j = {{"id", t.id}, {"name", t.name}, {"attributes", attrs}, {"record_count", t.record_count}};
  if (t.key_attribute) j["key_attribute"] = t.attributes[*t.key_attribute].name;
  return j;
}

TableSchema table_from_json(const json& j) {
  json wrapped = json::object();
  json body = j;
  body.erase("name");
  wrapped[j.at("name").get<std::string>()] = body;
  return Schema::from_json(wrapped).tables().front();
}

}  // namespace

AspnNode build_aspn(std::vector<std::size_t> attrs, std::vector<std::pair<std::size_t, Interval>> context,
                    const RecordSet& records, std::span<const std::size_t> rows,
                    const TableSchema& schema, const AspnConfig& config) {
  config.validate();
  if (rows.empty()) throw UsageError("build_aspn needs at least one record");
  if (attrs.empty()) throw UsageError("build_aspn needs at least one attribute");
  if (records.arity() != schema.arity()) throw SchemaError("record arity differs from schema");
  std::sort(attrs.begin(), attrs.end());
  attrs.erase(std::unique(attrs.begin(), attrs.end()), attrs.end());
  for (const auto a : attrs) {
    if (a >= schema.arity()) throw UsageError("attribute id out of range");
  }
  Builder b{records, schema, config};
  return b.build(std::move(attrs), std::move(context), rows, 0);
}

AspnModel build_model(const TableSchema& schema, const RecordSet& records, const AspnConfig& config) {
  AspnModel m;
  m.schema = schema;
  m.tables = {schema.id};
  m.config = config;
  m.sample_size = records.size();
  m.rng_seed = config.rng_seed;
  std::vector<std::size_t> attrs(schema.arity());
  std::iota(attrs.begin(), attrs.end(), 0);
  std::vector<std::size_t> rows(records.size());
  std::iota(rows.begin(), rows.end(), 0);
  m.root = build_aspn(attrs, {}, records, rows, schema, config);
  return m;
}

double infer_probability(const AspnModel& model, const Predicate& q) {
  if (q.is_empty()) return 0.0;
  if (q.table() != model.schema.id) throw UsageError("predicate over a table the model does not cover");
  if (q.arity() != model.schema.arity()) throw UsageError("predicate arity differs from the model schema");
  return evaluate(model.root, q);
}

bool predict_conflict(const AspnModel& model, const Predicate& a, const Predicate& b,
                      double table_size, double threshold_expected_rows) {
  const Predicate x = intersect_predicates(a, b);
  if (x.is_empty()) return false;
  return infer_probability(model, x) * table_size >= threshold_expected_rows;
}

std::size_t AspnModel::node_count() const { return count_nodes(root); }
std::size_t AspnModel::depth() const { return node_depth(root); }

std::string AspnModel::structure() const {
  std::string s;
  collect_structure(root, schema, s);
  return s;
}

json AspnModel::to_json() const {
  return {{"format", "detdb-aspn"},
          {"version", 1},
          {"schema", table_json(schema)},
          {"tables", tables},
          {"config", config.to_json()},
          {"sample_size", sample_size},
          {"rng_seed", rng_seed},
          {"root", node_json(root)}};
}

AspnModel AspnModel::from_json(const json& j) {
  if (j.value("format", std::string{}) != "detdb-aspn") throw ConfigError("not an ASPN model document");
  if (j.value("version", 0) != 1) throw ConfigError("unsupported ASPN model version");
  AspnModel m;
  m.schema = table_from_json(j.at("schema"));
  m.tables = j.at("tables").get<std::vector<TableId>>();
  m.config = AspnConfig::from_json(j.at("config"));
  m.sample_size = j.at("sample_size").get<std::size_t>();
  m.rng_seed = j.at("rng_seed").get<std::uint64_t>();
  m.root = node_from_json(j.at("root"));
  return m;
}

void AspnModel::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write model file " + path);
  out << to_json().dump() << '\n';
}

AspnModel AspnModel::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open model file " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("model file " + path + ": " + e.what());
  }
  return from_json(j);
}

// ------------------------------------------------------------ maintenance

namespace {

struct Updater {
  const TableSchema& schema;
  const AspnConfig& cfg;

  static void merge_sample(RecordSet& sample, const RecordSet& ins, const RecordSet& del, std::size_t cap) {
    std::vector<AttrValue> data(sample.data());
    const std::size_t k = sample.arity();
    for (std::size_t i = 0; i < del.size(); ++i) {
      const auto r = del.row(i);
      for (std::size_t off = 0; off + k <= data.size(); off += k) {
        if (std::equal(r.begin(), r.end(), data.begin() + static_cast<std::ptrdiff_t>(off))) {
          data.erase(data.begin() + static_cast<std::ptrdiff_t>(off),
                     data.begin() + static_cast<std::ptrdiff_t>(off + k));
          break;
        }
      }
    }
    RecordSet merged(k);
    for (std::size_t off = 0; off + k <= data.size(); off += k) merged.push_back({data.data() + off, k});
    for (std::size_t i = 0; i < ins.size(); ++i) merged.push_back(ins.row(i));
    if (merged.size() > cap) {
      std::vector<std::size_t> keep(cap);
      for (std::size_t i = 0; i < cap; ++i) keep[i] = i * merged.size() / cap;
      merged = merged.select(keep);
    }
    sample = std::move(merged);
  }

  AspnNode rebuild(const AspnNode& n, std::int64_t count) const {
    std::vector<std::size_t> rows(n.sample.size());
    std::iota(rows.begin(), rows.end(), 0);
    AspnNode out = Builder{n.sample, schema, cfg}.build(n.attrs, n.context, rows, 0);
    out.count = count;
    return out;
  }

  bool children_still_independent(const AspnNode& n) const {
    std::vector<std::size_t> rows(n.sample.size());
    std::iota(rows.begin(), rows.end(), 0);
    AspnConfig local = cfg;
    local.rng_seed = mix64(cfg.rng_seed, n.attrs.size());
    const auto rep = find_strong_subset(n.attrs, n.sample, rows, cfg.correlation_threshold, local);
    std::vector<std::size_t> group(schema.arity(), 0);
    for (std::size_t c = 0; c < n.children.size(); ++c) {
      for (const auto a : n.children[c].attrs) group[a] = c;
    }
    for (std::size_t i = 0; i < n.attrs.size(); ++i) {
      for (std::size_t j = i + 1; j < n.attrs.size(); ++j) {
        if (group[n.attrs[i]] != group[n.attrs[j]] && rep.score(i, j) >= cfg.correlation_threshold) return false;
      }
    }
    return true;
  }

  bool joint_still_dependent(const AspnNode& n) const {
    std::vector<std::size_t> rows(n.sample.size());
    std::iota(rows.begin(), rows.end(), 0);
    AspnConfig local = cfg;
    local.rng_seed = mix64(cfg.rng_seed, n.attrs.size());
    const auto rep = find_strong_subset(n.attrs, n.sample, rows, cfg.correlation_threshold, local);
    return rep.strong_subset.size() == n.attrs.size();
  }

  void update(AspnNode& n, const RecordSet& ins, const RecordSet& del) const {
    if (ins.empty() && del.empty()) return;
    const std::int64_t count =
        std::max<std::int64_t>(0, n.count + static_cast<std::int64_t>(ins.size()) - static_cast<std::int64_t>(del.size()));
    n.count = count;
    if (n.low_confidence) {
      merge_sample(n.sample, ins, del, cfg.sample_cap);
      if (n.sample.size() >= cfg.min_node_records) {
        n = rebuild(n, count);
        return;
      }
      for (std::size_t i = 0; i < n.attrs.size(); ++i) {
        Interval box{0, -1};
        for (std::size_t r = 0; r < n.sample.size(); ++r) {
          const AttrValue v = n.sample.at(r, n.attrs[i]);
          box = box.empty() ? Interval{v, v} : Interval{std::min(box.lo, v), std::max(box.hi, v)};
        }
        n.flat_box[i] = box;
      }
      return;
    }
    switch (n.kind) {
      case NodeKind::kLeaf:
        for (std::size_t i = 0; i < ins.size(); ++i) n.histogram.add(ins.at(i, n.attrs.front()), 1);
        for (std::size_t i = 0; i < del.size(); ++i) n.histogram.add(del.at(i, n.attrs.front()), -1);
        return;
      case NodeKind::kJoint:
        for (std::size_t i = 0; i < ins.size(); ++i) n.grid.add(ins.row(i), 1);
        for (std::size_t i = 0; i < del.size(); ++i) n.grid.add(del.row(i), -1);
        merge_sample(n.sample, ins, del, cfg.sample_cap);
        if (n.sample.size() >= 2 && !joint_still_dependent(n)) n = rebuild(n, count);
        return;
      case NodeKind::kIndependent:
        for (auto& c : n.children) update(c, ins, del);
        merge_sample(n.sample, ins, del, cfg.sample_cap);
        if (n.sample.size() >= 2 && !children_still_independent(n)) n = rebuild(n, count);
        return;
      case NodeKind::kDecomposition: {
        for (std::size_t j = 0; j < n.children.size(); ++j) {
          const Interval& range = n.split_ranges[j];
          RecordSet ci(ins.arity()), cd(del.arity());
          for (std::size_t i = 0; i < ins.size(); ++i) {
            if (range.contains(ins.at(i, n.split_attr))) ci.push_back(ins.row(i));
          }
          for (std::size_t i = 0; i < del.size(); ++i) {
            if (range.contains(del.at(i, n.split_attr))) cd.push_back(del.row(i));
          }
          if (ci.empty() && cd.empty()) continue;
          n.child_counts[j] = std::max<std::int64_t>(
              0, n.child_counts[j] + static_cast<std::int64_t>(ci.size()) - static_cast<std::int64_t>(cd.size()));
          for (std::size_t i = 0; i < ci.size(); ++i) n.split_marginals[j].add(ci.at(i, n.split_attr), 1);
          for (std::size_t i = 0; i < cd.size(); ++i) n.split_marginals[j].add(cd.at(i, n.split_attr), -1);
          update(n.children[j], ci, cd);
        }
        recompute_weights(n);
        return;
      }
    }
  }
};

void check_delta(const TableSchema& schema, const RecordSet& rs) {
  if (rs.empty()) return;
  if (rs.arity() != schema.arity()) {
    throw SchemaError("delta arity " + std::to_string(rs.arity()) + " differs from model schema; rebuild the model");
  }
  for (std::size_t i = 0; i < rs.size(); ++i) check_row(schema, rs.row(i));
}

}  // namespace

AspnModel update_incremental(const AspnModel& model, const RecordDelta& delta) {
  check_delta(model.schema, delta.inserts);
  check_delta(model.schema, delta.deletes);
  AspnModel out = model;
  const RecordSet empty(model.schema.arity());
  const RecordSet& ins = delta.inserts.empty() ? empty : delta.inserts;
  const RecordSet& del = delta.deletes.empty() ? empty : delta.deletes;
  Updater{out.schema, out.config}.update(out.root, ins, del);
  out.sample_size = static_cast<std::size_t>(std::max<std::int64_t>(
      0, static_cast<std::int64_t>(model.sample_size) + static_cast<std::int64_t>(ins.size()) -
             static_cast<std::int64_t>(del.size())));
  return out;
}

// ------------------------------------------------------------ multi-table

namespace {

struct UnitBuilder {
  const std::vector<TableData>& tables;
  const std::vector<JoinEdge>& joins;
  std::map<TableId, std::size_t> pos;

  const TableData& data(TableId id) const { return tables[pos.at(id)]; }

  // Columns of a unit in table order; (table, attr) pairs.
  std::vector<std::pair<TableId, std::size_t>> columns(const std::vector<TableId>& unit) const {
    std::vector<std::pair<TableId, std::size_t>> cols;
    for (const auto t : unit) {
      for (std::size_t a = 0; a < data(t).schema.arity(); ++a) cols.emplace_back(t, a);
    }
    return cols;
  }

  // Random walk over the join tree from the unit's first table.
  RecordSet sample_join(const std::vector<TableId>& unit, std::size_t n, std::uint64_t seed) const {
    struct Step {
      TableId table;
      TableId parent;
      std::size_t parent_attr;
      std::size_t attr;
    };
    std::vector<Step> steps;
    std::vector<TableId> seen{unit.front()};
    bool grew = true;
    while (grew) {
      grew = false;
      for (const auto& e : joins) {
        const bool has_l = std::find(seen.begin(), seen.end(), e.left) != seen.end();
        const bool has_r = std::find(seen.begin(), seen.end(), e.right) != seen.end();
        const bool in_l = std::find(unit.begin(), unit.end(), e.left) != unit.end();
        const bool in_r = std::find(unit.begin(), unit.end(), e.right) != unit.end();
        if (!in_l || !in_r || has_l == has_r) continue;
        if (has_l) {
          steps.push_back({e.right, e.left, e.left_attr, e.right_attr});
          seen.push_back(e.right);
        } else {
          steps.push_back({e.left, e.right, e.right_attr, e.left_attr});
          seen.push_back(e.left);
        }
        grew = true;
      }
    }
    std::map<std::pair<TableId, std::size_t>, std::unordered_map<AttrValue, std::vector<std::size_t>>> index;
    for (const auto& s : steps) {
      auto& idx = index[{s.table, s.attr}];
      if (!idx.empty()) continue;
      const auto& rs = data(s.table).records;
      for (std::size_t r = 0; r < rs.size(); ++r) idx[rs.at(r, s.attr)].push_back(r);
    }
    const auto cols = columns(unit);
    RecordSet out(cols.size());
    const auto& root = data(unit.front()).records;
    if (root.empty()) return out;
    Rng rng(seed);
    std::map<TableId, std::size_t> pick;
    AttributeVector row(cols.size());
    for (std::size_t attempt = 0; out.size() < n && attempt < n * 20; ++attempt) {
      pick.clear();
      pick[unit.front()] = static_cast<std::size_t>(rng.below(root.size()));
      bool ok = true;
      for (const auto& s : steps) {
        const AttrValue v = data(s.parent).records.at(pick.at(s.parent), s.parent_attr);
        const auto& idx = index.at({s.table, s.attr});
        auto it = idx.find(v);
        if (it == idx.end()) {
          ok = false;
          break;
        }
        pick[s.table] = it->second[static_cast<std::size_t>(rng.below(it->second.size()))];
      }
      if (!ok) continue;
      for (std::size_t c = 0; c < cols.size(); ++c) row[c] = data(cols[c].first).records.at(pick.at(cols[c].first), cols[c].second);
      out.push_back(row);
    }
    return out;
  }

  TableSchema unit_schema(const std::vector<TableId>& unit, TableId id) const {
    TableSchema s;
    s.id = id;
    for (const auto t : unit) {
      const auto& ts = data(t).schema;
      s.name += (s.name.empty() ? "" : "+") + ts.name;
      for (const auto& a : ts.attributes) s.attributes.push_back({ts.name + "." + a.name, a.lo, a.hi});
    }
    return s;
  }
};

}  // namespace

std::vector<AspnModel> build_multi_table(const std::vector<TableData>& tables,
                                         const std::vector<JoinEdge>& joins, std::size_t sample_size,
                                         const AspnConfig& config) {
  config.validate();
  if (sample_size < 2) throw ConfigError("multi-table sample size must be at least 2");
  UnitBuilder ub{tables, joins, {}};
  for (std::size_t i = 0; i < tables.size(); ++i) {
    if (!ub.pos.emplace(tables[i].schema.id, i).second) throw ConfigError("duplicate table in multi-table build");
    if (tables[i].records.arity() != tables[i].schema.arity()) throw SchemaError("records do not fit " + tables[i].schema.name);
  }
  // Union-find over tables; a repeated union means a cycle.
  std::map<TableId, TableId> parent;
  for (const auto& t : tables) parent[t.schema.id] = t.schema.id;
  std::function<TableId(TableId)> root = [&](TableId x) { return parent[x] == x ? x : parent[x] = root(parent[x]); };
  for (const auto& e : joins) {
    if (!ub.pos.count(e.left) || !ub.pos.count(e.right)) throw ConfigError("join references an unknown table");
    if (e.left_attr >= ub.data(e.left).schema.arity() || e.right_attr >= ub.data(e.right).schema.arity()) {
      throw ConfigError("join attribute out of range");
    }
    const TableId a = root(e.left), b = root(e.right);
    if (a == b) throw ConfigError("cyclic joins are not supported");
    parent[a] = b;
  }

  std::vector<std::vector<TableId>> units;
  for (const auto& t : tables) units.push_back({t.schema.id});
  std::sort(units.begin(), units.end());
  auto unit_of = [&](TableId t) {
    for (std::size_t u = 0; u < units.size(); ++u) {
      if (std::find(units[u].begin(), units[u].end(), t) != units[u].end()) return u;
    }
    return units.size();
  };

  bool merged = true;
  while (merged) {
    merged = false;
    for (const auto& e : joins) {
      const auto ul = unit_of(e.left), ur = unit_of(e.right);
      if (ul == ur) continue;
      std::vector<TableId> both = units[ul];
      both.insert(both.end(), units[ur].begin(), units[ur].end());
      std::sort(both.begin(), both.end());
      const auto sample = ub.sample_join(both, sample_size, mix64(config.rng_seed, both.front() * 131u + both.size()));
      if (sample.size() < 2) continue;
      const auto cols = ub.columns(both);
      std::vector<std::size_t> attrs(cols.size());
      std::iota(attrs.begin(), attrs.end(), 0);
      const auto rep = find_strong_subset(attrs, sample, config.correlation_threshold, config);
      double best = 0.0;
      for (std::size_t i = 0; i < cols.size(); ++i) {
        for (std::size_t j = i + 1; j < cols.size(); ++j) {
          const bool i_left = std::find(units[ul].begin(), units[ul].end(), cols[i].first) != units[ul].end();
          const bool j_left = std::find(units[ul].begin(), units[ul].end(), cols[j].first) != units[ul].end();
          if (i_left == j_left) continue;
          const bool join_pair = (cols[i] == std::make_pair(e.left, e.left_attr) && cols[j] == std::make_pair(e.right, e.right_attr)) ||
                                 (cols[j] == std::make_pair(e.left, e.left_attr) && cols[i] == std::make_pair(e.right, e.right_attr));
          if (join_pair) continue;
          best = std::max(best, rep.score(i, j));
        }
      }
      if (best >= config.correlation_threshold) {
        units[ul] = both;
        units.erase(units.begin() + static_cast<std::ptrdiff_t>(ur));
        std::sort(units.begin(), units.end());
        merged = true;
        break;
      }
    }
  }

  std::vector<AspnModel> out;
  TableId next_virtual = kUnitTableBase;
  for (const auto& unit : units) {
    if (unit.size() == 1) {
      const auto& d = ub.data(unit.front());
      out.push_back(build_model(d.schema, d.records, config));
      continue;
    }
    const auto sample = ub.sample_join(unit, sample_size, mix64(config.rng_seed, unit.front() * 131u + unit.size()));
    if (sample.empty()) throw ConfigError("join of unit produced no tuples");
    auto schema = ub.unit_schema(unit, next_virtual++);
    schema.record_count = sample.size();
    AspnModel m = build_model(schema, sample, config);
    m.tables = unit;
    out.push_back(std::move(m));
  }
  return out;
}

void ModelSet::set(TableId table, std::shared_ptr<const AspnModel> model) {
  if (!model) {
    models_.erase(table);
    return;
  }
  models_[table] = std::move(model);
}

const AspnModel* ModelSet::find(TableId table) const {
  auto it = models_.find(table);
  return it == models_.end() ? nullptr : it->second.get();
}

}  // namespace detdb
