#pragma once

// Experiment orchestration behind the command-line tool: final training,
// searches, fixed baselines, the manual quantisation grid search, sweeps with
// Pareto filtering, and bitwidth statistics.

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "lpgnas/nas/nas.hpp"

namespace lpgnas::harness {

using nas::SearchConfig;
using supernet::NetworkChoice;
using supernet::NetworkConfig;

// --- training -------------------------------------------------------------

struct TrainConfig {
  std::size_t epochs = 200;
  std::size_t patience = 20;  // epochs without a validation improvement
  Real lr = 0.005;
  Real weight_decay = 5e-4;
  std::uint64_t seed = 0;

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

struct TrainResult {
  Real val_metric = 0;   // at the best validation epoch
  Real test_metric = 0;  // at the best validation epoch
  std::size_t best_epoch = 0;
  std::size_t epochs_run = 0;
};

// Fresh initialisation, Adam, early stopping on validation accuracy (or
// micro-F1); the test metric is read at the best validation epoch.
TrainResult train_network(const graph::Graph& g, const NetworkConfig& net,
                          const NetworkChoice& choice, const TrainConfig& cfg,
                          nlohmann::json* checkpoint = nullptr);

// --- records --------------------------------------------------------------

struct ExperimentRecord {
  std::string command;  // search | baseline | gridsearch
  std::string dataset;
  std::string model;    // "lpgnas" or a baseline name
  std::size_t layers = 0;
  std::size_t channels = 0;
  SearchConfig search;
  TrainConfig train;
  NetworkChoice choice;
  Real test_metric = 0;
  Real val_metric = 0;
  std::size_t model_bytes = 0;
  std::size_t buffer_bytes = 0;
  double seconds = 0;
  std::uint64_t seed = 0;

  nlohmann::json to_json() const;
  static ExperimentRecord from_json(const nlohmann::json& j);
  void validate() const;

  // Equality of everything except wall-clock time.
  bool same_result(const ExperimentRecord& other) const;
};

std::vector<ExperimentRecord> read_records(const std::filesystem::path& path);
void write_records(const std::vector<ExperimentRecord>& records, const std::filesystem::path& path);

// --- commands -------------------------------------------------------------

struct SearchRequest {
  std::size_t layers = 2;
  std::size_t channels = 32;
  SearchConfig search;
  TrainConfig train;
};

struct SearchOutcome {
  ExperimentRecord record;
  nas::SearchResult search;
  nlohmann::json checkpoint;
};

// Search, then retrain the chosen network from scratch and test it.
SearchOutcome cmd_search(const graph::Graph& g, const SearchRequest& req,
                         std::ostream* search_log = nullptr);

struct BaselineSpec {
  std::string name;
  std::size_t layers = 2;
  std::size_t channels = 32;
  supernet::ArchChoice arch;
  bool all_shortcuts = false;
};

// graphsage | gat | jknet, each optionally suffixed "-v2".
BaselineSpec baseline_spec(const std::string& model);

// "float", "w4a8", "w8a8", a search-space row index or "<weight>/<act>".
quant::QuantPair quant_from_name(const std::string& text);

NetworkChoice baseline_choice(const BaselineSpec& spec, const quant::QuantPair& q);

ExperimentRecord cmd_baseline(const graph::Graph& g, const std::string& model,
                              const quant::QuantPair& q, const TrainConfig& train);

// Runs an evaluation for one quantisation option and returns its accuracy.
using AccuracyFn = std::function<Real(const quant::QuantPair&)>;

struct GridStep {
  int row = -1;  // -1 for the float reference
  Real accuracy = 0;
  bool passed = false;
};

struct GridResult {
  quant::QuantPair chosen;  // float pair when nothing passed
  bool none_passed = false;
  Real float_accuracy = 0;
  std::vector<GridStep> trace;

  nlohmann::json to_json() const;
};

// Table rows from the most to the least precise; stops at the first row more
// than `tolerance` below the float accuracy and returns the row before it.
GridResult gridsearch(const AccuracyFn& evaluate, Real tolerance = 0.005);

GridResult cmd_gridsearch(const graph::Graph& g, const std::string& model,
                          const TrainConfig& train);

// --- sweeps -----------------------------------------------------------------

struct SweepPoint {
  std::size_t layers = 2;
  std::size_t channels = 32;
  Real beta = 0.1;
  std::uint64_t seed = 0;

  std::string id() const;
};

struct SweepRow {
  SweepPoint point;
  bool ok = false;
  std::string error;
  Real accuracy = 0;
  std::size_t model_bytes = 0;
  std::size_t buffer_bytes = 0;
};

// Indices of rows not dominated in (higher accuracy, smaller model). Failed
// rows are ignored; among exact duplicates the first is kept.
std::vector<std::size_t> pareto_front(const std::vector<SweepRow>& rows);

std::string sweep_csv(const std::vector<SweepRow>& rows, const std::vector<std::size_t>& front);

// Runs one sweep point and returns its record; throws on failure.
using PointRunner = std::function<ExperimentRecord(const SweepPoint&)>;

// Runs every point through `runner` with up to `jobs` concurrent workers.
// A failing point is reported in its row and does not stop the others.
std::vector<SweepRow> run_sweep(const std::vector<SweepPoint>& points, const PointRunner& runner,
                                std::size_t jobs);

// Runner that launches `executable sweep-worker ...` as a child process per
// point, writing per-point record files under `work_dir`.
PointRunner process_runner(const std::filesystem::path& executable,
                           const std::filesystem::path& work_dir,
                           std::vector<std::string> common_args);

// --- statistics ---------------------------------------------------------

struct BitHistogram {
  std::map<int, std::size_t> counts;
  std::size_t total() const;
  int mode() const;  // smallest bitwidth among the most frequent
  friend bool operator==(const BitHistogram&, const BitHistogram&) = default;
};

struct QuantStats {
  // category -> histogram; categories are "<site>.weight" / "<site>.activation"
  // for site in linear, attention, aggregation, shortcut.
  std::map<std::string, BitHistogram> histograms;
  BitHistogram all_weights;
  BitHistogram all_activations;
  std::size_t records = 0;

  nlohmann::json to_json() const;
  static QuantStats from_json(const nlohmann::json& j);
  std::string csv() const;
  friend bool operator==(const QuantStats&, const QuantStats&) = default;
};

QuantStats cmd_stats(const std::vector<ExperimentRecord>& records);

// --- environment ----------------------------------------------------------

// $LPGNAS_DATA if set, otherwise the compiled-in default.
std::filesystem::path data_root();

graph::Graph load_graph(const std::string& dataset, std::optional<std::filesystem::path> root = {},
                        const graph::LoadOptions& options = {});

}  // namespace lpgnas::harness
