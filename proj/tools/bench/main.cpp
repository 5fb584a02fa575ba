#include <chrono>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "detdb/aspn.hpp"
#include "detdb/error.hpp"
#include "detdb/oracle.hpp"
#include "experiment.hpp"

namespace {

using nlohmann::json;
using namespace detdb;

json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

Predicate query_predicate(const json& j, const TableSchema& t) {
  if (j.contains("bounds") || j.contains("empty")) return Predicate::from_json(j);
  Predicate p = Predicate::full(t);
  for (const auto& [name, iv] : j.items()) {
    const auto idx = t.index_of(name);
    if (!idx) throw ConfigError("query names unknown attribute " + name);
    p = p.with_bound(*idx, {iv.at(0).get<AttrValue>(), iv.at(1).get<AttrValue>()});
  }
  return p;
}

int cmd_run(const std::string& config_path, const std::vector<std::string>& protocols,
            const std::vector<double>& thetas, std::optional<std::size_t> threads, std::uint64_t seed,
            std::optional<std::size_t> epochs, const std::string& out_dir) {
  auto base = bench::ExperimentConfig::load(config_path);
  base.apply_seed(seed);
  if (threads) base.engine.worker_threads = *threads;
  if (epochs) base.epochs = *epochs;
  std::vector<Protocol> ps;
  for (const auto& p : protocols) ps.push_back(protocol_from_string(p));
  if (ps.empty()) ps.push_back(base.engine.protocol);
  std::vector<double> ts = thetas;
  if (ts.empty()) ts.push_back(base.workload.zipf_theta);

  std::ostringstream sweep;
  sweep << "protocol,theta,epochs,submitted,committed,commit_rate,txns_per_sec,workload_checksum\n";
  json runs = json::array();
  for (const auto p : ps) {
    for (const double theta : ts) {
      auto cfg = base;
      cfg.engine.protocol = p;
      cfg.workload.zipf_theta = theta;
      cfg.validate();
      const auto report = bench::run_experiment(cfg);
      const auto j = report.to_json();
      sweep << to_string(p) << ',' << theta << ',' << cfg.epochs << ',' << report.submitted << ','
            << report.committed << ',' << report.commit_rate() << ',' << report.txns_per_sec() << ','
            << j["workload_checksum"].get<std::string>() << '\n';
      runs.push_back({{"protocol", to_string(p)},
                      {"theta", theta},
                      {"commit_rate", report.commit_rate()},
                      {"txns_per_sec", report.txns_per_sec()},
                      {"workload_checksum", j["workload_checksum"]},
                      {"state_checksum", j["state_checksum"]}});
      if (!out_dir.empty()) report.write(out_dir);
    }
  }
  if (!out_dir.empty()) {
    std::ofstream(out_dir + "/sweep.csv") << sweep.str();
  }
  std::cout << runs.dump(2) << '\n';
  return 0;
}

int cmd_train(const std::string& data, const std::string& schema_path, const std::string& out,
              const std::string& table, const std::string& aspn_path, std::optional<std::uint64_t> seed) {
  const Schema schema = Schema::load_file(schema_path);
  const TableSchema* t = nullptr;
  if (!table.empty()) {
    t = schema.find(table);
    if (!t) throw ConfigError("--table: no table named " + table);
  } else if (schema.tables().size() == 1) {
    t = &schema.tables().front();
  } else {
    throw ConfigError("--table is required when the schema has several tables");
  }
  AspnConfig cfg;
  if (!aspn_path.empty()) cfg = AspnConfig::from_json(read_json(aspn_path));
  if (seed) cfg.rng_seed = *seed;
  const auto records = load_csv(data, *t);
  const auto t0 = std::chrono::steady_clock::now();
  const auto model = build_model(*t, records, cfg);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  model.save(out);
  std::cout << json{{"table", t->name},
                    {"records", records.size()},
                    {"nodes", model.node_count()},
                    {"depth", model.depth()},
                    {"structure", model.structure()},
                    {"train_seconds", secs}}
                   .dump(2)
            << '\n';
  return 0;
}

int cmd_eval(const std::string& model_path, const std::string& queries_path, const std::string& data,
             double conflict_rows) {
  const auto model = AspnModel::load(model_path);
  const auto records = load_csv(data, model.schema);
  const auto queries = read_json(queries_path);
  if (!queries.is_array()) throw ConfigError(queries_path + ": expected an array of query pairs");
  std::vector<std::pair<Predicate, Predicate>> pairs;
  for (const auto& q : queries) {
    pairs.emplace_back(query_predicate(q.at("a"), model.schema), query_predicate(q.at("b"), model.schema));
  }
  const double rows = static_cast<double>(records.size());
  std::vector<double> prob(pairs.size());
  std::vector<char> guess(pairs.size()), truth(pairs.size());
  auto t0 = std::chrono::steady_clock::now();
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto x = intersect_predicates(pairs[i].first, pairs[i].second);
    prob[i] = infer_probability(model, x);
    guess[i] = prob[i] * rows >= conflict_rows;
  }
  const double t_p = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  t0 = std::chrono::steady_clock::now();
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    truth[i] = oracle::conflict_ground_truth(records, pairs[i].first, pairs[i].second);
  }
  const double t_e = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  bench::Confusion c;
  json per = json::array();
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    if (guess[i] && truth[i]) ++c.tp;
    else if (guess[i]) ++c.fp;
    else if (truth[i]) ++c.fn;
    else ++c.tn;
    per.push_back({{"probability", prob[i]}, {"predicted", static_cast<bool>(guess[i])},
                   {"truth", static_cast<bool>(truth[i])}});
  }
  auto m = bench::compute_prediction_metrics(c);
  std::cout << json{{"queries", per}, {"metrics", m.to_json()}, {"t_p", t_p}, {"t_e", t_e}}.dump(2) << '\n';
  return 0;
}

int cmd_verify(const std::string& config_path, std::optional<std::uint64_t> seed, std::optional<std::size_t> threads,
               std::optional<std::size_t> epochs) {
  auto cfg = bench::ExperimentConfig::load(config_path);
  if (seed) cfg.apply_seed(*seed);
  if (threads) cfg.engine.worker_threads = *threads;
  if (epochs) cfg.epochs = *epochs;
  cfg.validate();
  const auto report = bench::verify_experiment(cfg);
  std::cout << report.to_json().dump(2) << '\n';
  return report.ok() ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Deterministic batch concurrency-control benchmark harness"};
  app.require_subcommand(1);

  std::string config, out_dir;
  std::vector<std::string> protocols;
  std::vector<double> thetas;
  std::optional<std::size_t> threads, epochs;
  std::uint64_t seed = 0;
  auto* run = app.add_subcommand("run", "Run an experiment or a protocol/skew sweep");
  run->add_option("--config", config, "Experiment JSON file")->required()->check(CLI::ExistingFile);
  run->add_option("--protocol", protocols, "Protocol(s): predictive rule1 rule2 aria aria_fb fga");
  run->add_option("--theta", thetas, "Zipf skew value(s)");
  run->add_option("--threads", threads, "Worker threads");
  run->add_option("--seed", seed, "Seed for workload, engine and models")->required();
  run->add_option("--epochs", epochs, "Override the epoch count");
  run->add_option("--out", out_dir, "Directory for CSV/JSON reports");

  std::string data, schema, model_out, table, aspn_cfg;
  std::optional<std::uint64_t> train_seed;
  auto* train = app.add_subcommand("aspn-train", "Train a model from CSV data");
  train->add_option("--data", data, "CSV with a header row")->required()->check(CLI::ExistingFile);
  train->add_option("--schema", schema, "Schema JSON")->required()->check(CLI::ExistingFile);
  train->add_option("--out", model_out, "Model output path")->required();
  train->add_option("--table", table, "Table to model");
  train->add_option("--aspn-config", aspn_cfg, "Model settings JSON")->check(CLI::ExistingFile);
  train->add_option("--seed", train_seed, "Model seed");

  std::string model_in, queries, eval_data;
  double conflict_rows = 0.5;
  auto* eval = app.add_subcommand("aspn-eval", "Score query pairs against full-scan labels");
  eval->add_option("--model", model_in, "Model JSON")->required()->check(CLI::ExistingFile);
  eval->add_option("--queries", queries, "JSON array of {a, b} predicate pairs")->required()->check(CLI::ExistingFile);
  eval->add_option("--data", eval_data, "CSV with the table contents")->required()->check(CLI::ExistingFile);
  eval->add_option("--conflict-rows", conflict_rows, "Expected overlapping rows that count as a conflict");

  std::string verify_config;
  std::optional<std::uint64_t> verify_seed;
  std::optional<std::size_t> verify_threads, verify_epochs;
  auto* verify = app.add_subcommand("verify", "Check every batch against the serial replay oracle");
  verify->add_option("--config", verify_config, "Experiment JSON file")->required()->check(CLI::ExistingFile);
  verify->add_option("--seed", verify_seed, "Seed override");
  verify->add_option("--threads", verify_threads, "Worker threads");
  verify->add_option("--epochs", verify_epochs, "Override the epoch count");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*run) return cmd_run(config, protocols, thetas, threads, seed, epochs, out_dir);
    if (*train) return cmd_train(data, schema, model_out, table, aspn_cfg, train_seed);
    if (*eval) return cmd_eval(model_in, queries, eval_data, conflict_rows);
    if (*verify) return cmd_verify(verify_config, verify_seed, verify_threads, verify_epochs);
  } catch (const InvariantError& e) {
    std::cerr << "invariant violation: " << e.what() << '\n';
    return 2;
  } catch (const PhaseError& e) {
    std::cerr << "invariant violation: " << e.what() << '\n';
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
