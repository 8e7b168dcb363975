#include "lpgnas/harness/harness.hpp"

#include <spawn.h>
#include <sys/wait.h>
#include <fcntl.h>

#include <atomic>
#include <charconv>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

extern char** environ;

namespace lpgnas::harness {

using json = nlohmann::json;
using quant::QuantPair;
using supernet::Supernet;

#ifndef LPGNAS_DEFAULT_DATA_DIR
#define LPGNAS_DEFAULT_DATA_DIR "data"
#endif

// --- training ------------------------------------------------------------

TrainResult train_network(const graph::Graph& g, const NetworkConfig& net,
                          const NetworkChoice& choice, const TrainConfig& cfg,
                          json* checkpoint) {
  if (cfg.epochs == 0) throw ArgumentError("training needs at least one epoch");
  if (g.split.train.empty() || g.split.val.empty() || g.split.test.empty())
    throw ArgumentError("training needs nonempty train, validation and test sets");
  supernet::validate_choice(choice, net.blocks);

  Supernet model(net, mix_seed(cfg.seed, fnv1a("final")));
  nas::Adam opt(cfg.lr, 0.9, 0.999, 1e-8, cfg.weight_decay);
  TrainResult best;
  Real best_loss = 0;  // validation loss at the reported epoch
  Real min_loss = 0;   // lowest validation loss so far
  bool have_best = false;
  std::size_t since_best = 0;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    auto params = model.parameters();
    for (ad::Parameter* p : params) p->zero_grad();
    {
      ad::Tape tape;
      std::mt19937_64 rng(mix_seed(mix_seed(cfg.seed, fnv1a("final-dropout")), epoch));
      ad::Var logits = model.forward(tape, g, choice, {.train = true, .rng = &rng});
      ad::Var loss = nas::task_loss(logits, g, g.split.train);
      nas::check_finite(loss.value().item(), "training loss",
                        {{"epoch", epoch}, {"choice", supernet::to_json(choice)}});
      tape.backward(loss);
    }
    params = model.parameters();
    opt.step(params, true);

    ad::Tape tape;
    ad::Var logits = model.forward(tape, g, choice, {});
    const Real val_loss = nas::task_loss(logits, g, g.split.val).value().item();
    const Real val = graph::evaluate(g, logits.value(), g.split.val);
    best.epochs_run = epoch + 1;
    // Patience restarts when either validation accuracy or loss improves.
    bool improved = !have_best || val_loss < min_loss;
    if (!have_best || val > best.val_metric || (val == best.val_metric && val_loss < best_loss)) {
      improved = true;
      best_loss = val_loss;
      best.val_metric = val;
      best.test_metric = graph::evaluate(g, logits.value(), g.split.test);
      best.best_epoch = epoch;
      if (checkpoint) *checkpoint = model.checkpoint(choice);
    }
    if (!have_best || val_loss < min_loss) min_loss = val_loss;
    have_best = true;
    if (improved) since_best = 0;
    else if (++since_best >= cfg.patience) break;
  }
  return best;
}

// --- records -------------------------------------------------------------

namespace {

json train_to_json(const TrainConfig& t) {
  return {{"epochs", t.epochs}, {"patience", t.patience}, {"lr", t.lr},
          {"weight_decay", t.weight_decay}, {"seed", t.seed}};
}

TrainConfig train_from_json(const json& j) {
  TrainConfig t;
  for (const auto& [key, value] : j.items()) {
    if (key == "epochs") t.epochs = value.get<std::size_t>();
    else if (key == "patience") t.patience = value.get<std::size_t>();
    else if (key == "lr") t.lr = value.get<Real>();
    else if (key == "weight_decay") t.weight_decay = value.get<Real>();
    else if (key == "seed") t.seed = value.get<std::uint64_t>();
    else throw SchemaError("unknown train config key '" + key + "'");
  }
  return t;
}

}  // namespace

json ExperimentRecord::to_json() const {
  return {{"format", "lpgnas-record"},
          {"command", command},
          {"dataset", dataset},
          {"model", model},
          {"config",
           {{"layers", layers},
            {"channels", channels},
            {"search", nas::to_json(search)},
            {"train", train_to_json(train)}}},
          {"choice", supernet::to_json(choice)},
          {"test_metric", test_metric},
          {"val_metric", val_metric},
          {"model_bytes", model_bytes},
          {"buffer_bytes", buffer_bytes},
          {"seconds", seconds},
          {"seed", seed}};
}

ExperimentRecord ExperimentRecord::from_json(const json& j) {
  ExperimentRecord r;
  try {
    if (j.value("format", std::string()) != "lpgnas-record")
      throw SchemaError("not an experiment record");
    r.command = j.at("command").get<std::string>();
    r.dataset = j.at("dataset").get<std::string>();
    r.model = j.at("model").get<std::string>();
    const json& c = j.at("config");
    r.layers = c.at("layers").get<std::size_t>();
    r.channels = c.at("channels").get<std::size_t>();
    r.search = nas::search_config_from_json(c.at("search"));
    r.train = train_from_json(c.at("train"));
    r.choice = supernet::choice_from_json(j.at("choice"));
    r.test_metric = j.at("test_metric").get<Real>();
    r.val_metric = j.at("val_metric").get<Real>();
    r.model_bytes = j.at("model_bytes").get<std::size_t>();
    r.buffer_bytes = j.at("buffer_bytes").get<std::size_t>();
    r.seconds = j.at("seconds").get<double>();
    r.seed = j.at("seed").get<std::uint64_t>();
  } catch (const json::exception& e) {
    throw SchemaError(std::string("bad experiment record: ") + e.what());
  }
  r.validate();
  return r;
}

void ExperimentRecord::validate() const {
  if (!(test_metric >= 0 && test_metric <= 1) || !(val_metric >= 0 && val_metric <= 1))
    throw SchemaError("record metric outside [0, 1]");
  if (model_bytes == 0 || buffer_bytes == 0) throw SchemaError("record sizes must be positive");
  if (choice.blocks.size() != layers) throw SchemaError("record choice does not match its layer count");
}

bool ExperimentRecord::same_result(const ExperimentRecord& o) const {
  return command == o.command && dataset == o.dataset && model == o.model && layers == o.layers &&
         channels == o.channels && search == o.search && train == o.train && choice == o.choice &&
         test_metric == o.test_metric && val_metric == o.val_metric &&
         model_bytes == o.model_bytes && buffer_bytes == o.buffer_bytes && seed == o.seed;
}

std::vector<ExperimentRecord> read_records(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IngestionError("cannot open records file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  const std::string text = buf.str();
  std::vector<ExperimentRecord> out;
  // A JSON array, a single object, or one object per line.
  try {
    json j = json::parse(text);
    if (j.is_array())
      for (const json& e : j) out.push_back(ExperimentRecord::from_json(e));
    else
      out.push_back(ExperimentRecord::from_json(j));
    return out;
  } catch (const json::parse_error&) {
  }
  std::istringstream lines(text);
  std::string line;
  std::size_t number = 0;
  while (std::getline(lines, line)) {
    ++number;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(ExperimentRecord::from_json(json::parse(line)));
    } catch (const json::parse_error& e) {
      throw IngestionError(path.string() + ":" + std::to_string(number) + ": " + e.what());
    }
  }
  return out;
}

void write_records(const std::vector<ExperimentRecord>& records, const std::filesystem::path& path) {
  json arr = json::array();
  for (const auto& r : records) arr.push_back(r.to_json());
  std::ofstream out(path);
  if (!out) throw IngestionError("cannot write " + path.string());
  out << arr.dump(2) << '\n';
}

// --- commands -------------------------------------------------------------

namespace {

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

NetworkConfig network_for(const graph::Graph& g, std::size_t layers, std::size_t channels) {
  NetworkConfig net;
  net.in_features = g.f;
  net.classes = g.c;
  net.blocks = layers;
  net.hidden = channels;
  return net;
}

}  // namespace

SearchOutcome cmd_search(const graph::Graph& g, const SearchRequest& req, std::ostream* search_log) {
  const auto start = std::chrono::steady_clock::now();
  const NetworkConfig net = network_for(g, req.layers, req.channels);
  SearchOutcome out;
  out.search = nas::search(g, net, req.search, search_log);

  TrainConfig train = req.train;
  train.lr = req.search.lr;
  train.seed = req.search.seed;
  const TrainResult t = train_network(g, net, out.search.choice, train, &out.checkpoint);

  ExperimentRecord& r = out.record;
  r.command = "search";
  r.dataset = g.name;
  r.model = "lpgnas";
  r.layers = req.layers;
  r.channels = req.channels;
  r.search = req.search;
  r.train = train;
  r.choice = out.search.choice;
  r.test_metric = t.test_metric;
  r.val_metric = t.val_metric;
  r.model_bytes = supernet::model_size(net, r.choice);
  r.buffer_bytes = supernet::buffer_size(net, r.choice, g.n, g.num_edges());
  r.seed = req.search.seed;
  r.seconds = seconds_since(start);
  return out;
}

BaselineSpec baseline_spec(const std::string& model) {
  std::string base = model;
  bool v2 = false;
  if (base.size() > 3 && base.ends_with("-v2")) {
    v2 = true;
    base.resize(base.size() - 3);
  }
  BaselineSpec s;
  s.name = model;
  if (base == "graphsage") {
    s.arch = {supernet::Attention::constant, ad::ActivationKind::relu, kernels::Reduce::mean, 1};
    s.channels = v2 ? 512 : 16;
  } else if (base == "gat") {
    s.arch = {supernet::Attention::gat, ad::ActivationKind::elu, kernels::Reduce::sum, 1};
    s.channels = v2 ? 64 : 32;
  } else if (base == "jknet") {
    s.arch = {supernet::Attention::gcn, ad::ActivationKind::relu, kernels::Reduce::sum, 1};
    s.channels = v2 ? 512 : 32;
    s.all_shortcuts = true;
  } else {
    throw ArgumentError("unknown baseline model '" + model + "' (graphsage, gat, jknet, optionally -v2)");
  }
  return s;
}

QuantPair quant_from_name(const std::string& text) {
  const auto& space = quant::quant_search_space();
  if (text == "w4a8") return space[6];
  if (text == "w8a8") return space[10];
  return quant::pair_from_name(text);
}

NetworkChoice baseline_choice(const BaselineSpec& spec, const QuantPair& q) {
  NetworkChoice c;
  for (std::size_t k = 0; k < spec.layers; ++k) {
    supernet::BlockChoice b;
    b.arch = spec.arch;
    b.quant = supernet::BlockQuant::uniform(q);
    b.route.assign(k + 1, spec.all_shortcuts ? 1 : 0);
    c.blocks.push_back(std::move(b));
  }
  return c;
}

ExperimentRecord cmd_baseline(const graph::Graph& g, const std::string& model, const QuantPair& q,
                              const TrainConfig& train) {
  const auto start = std::chrono::steady_clock::now();
  const BaselineSpec spec = baseline_spec(model);
  const NetworkConfig net = network_for(g, spec.layers, spec.channels);
  const NetworkChoice choice = baseline_choice(spec, q);
  const TrainResult t = train_network(g, net, choice, train);
  ExperimentRecord r;
  r.command = "baseline";
  r.dataset = g.name;
  r.model = model;
  r.layers = spec.layers;
  r.channels = spec.channels;
  r.search.seed = train.seed;
  r.train = train;
  r.choice = choice;
  r.test_metric = t.test_metric;
  r.val_metric = t.val_metric;
  r.model_bytes = supernet::model_size(net, choice);
  r.buffer_bytes = supernet::buffer_size(net, choice, g.n, g.num_edges());
  r.seed = train.seed;
  r.seconds = seconds_since(start);
  return r;
}

json GridResult::to_json() const {
  json trace_j = json::array();
  for (const GridStep& s : trace)
    trace_j.push_back({{"row", s.row},
                       {"option", s.row < 0 ? std::string("float")
                                            : quant::quant_search_space()[s.row].name()},
                       {"accuracy", s.accuracy},
                       {"passed", s.passed}});
  return {{"chosen", chosen.name()},
          {"chosen_row", chosen.index},
          {"none_passed", none_passed},
          {"float_accuracy", float_accuracy},
          {"trace", trace_j}};
}

GridResult gridsearch(const AccuracyFn& evaluate, Real tolerance) {
  const auto& space = quant::quant_search_space();
  GridResult r;
  r.float_accuracy = evaluate(QuantPair::float_pair());
  r.trace.push_back({-1, r.float_accuracy, true});
  r.chosen = QuantPair::float_pair();
  r.none_passed = true;
  for (int row = static_cast<int>(space.size()) - 1; row >= 0; --row) {
    const Real acc = evaluate(space[row]);
    const bool passed = !(r.float_accuracy - acc > tolerance);
    r.trace.push_back({row, acc, passed});
    if (!passed) break;
    r.chosen = space[row];
    r.none_passed = false;
  }
  return r;
}

GridResult cmd_gridsearch(const graph::Graph& g, const std::string& model, const TrainConfig& train) {
  const BaselineSpec spec = baseline_spec(model);
  const NetworkConfig net = network_for(g, spec.layers, spec.channels);
  return gridsearch([&](const QuantPair& q) {
    return train_network(g, net, baseline_choice(spec, q), train).val_metric;
  });
}

// --- sweeps ----------------------------------------------------------------

std::string SweepPoint::id() const {
  char buf[96];
  std::snprintf(buf, sizeof buf, "L%zu-C%zu-b%g-s%llu", layers, channels, beta,
                static_cast<unsigned long long>(seed));
  return buf;
}

std::vector<std::size_t> pareto_front(const std::vector<SweepRow>& rows) {
  std::vector<std::size_t> front;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (!rows[i].ok) continue;
    bool dominated = false;
    for (std::size_t j = 0; j < rows.size() && !dominated; ++j) {
      if (j == i || !rows[j].ok) continue;
      const SweepRow& a = rows[j];
      const SweepRow& b = rows[i];
      const bool no_worse = a.accuracy >= b.accuracy && a.model_bytes <= b.model_bytes;
      const bool better = a.accuracy > b.accuracy || a.model_bytes < b.model_bytes;
      dominated = no_worse && (better || j < i);
    }
    if (!dominated) front.push_back(i);
  }
  return front;
}

namespace {

// Shortest text that reads back to the same double.
std::string format_real(Real v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

}  // namespace

std::string sweep_csv(const std::vector<SweepRow>& rows, const std::vector<std::size_t>& front) {
  std::ostringstream out;
  out << "id,layers,channels,beta,seed,ok,accuracy,model_bytes,buffer_bytes,pareto,error\n";
  std::vector<bool> on_front(rows.size(), false);
  for (std::size_t i : front) on_front.at(i) = true;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const SweepRow& r = rows[i];
    std::string err = r.error;
    for (char& ch : err)
      if (ch == ',' || ch == '\n' || ch == '"') ch = ' ';
    out << r.point.id() << ',' << r.point.layers << ',' << r.point.channels << ','
        << format_real(r.point.beta) << ',' << r.point.seed << ',' << (r.ok ? 1 : 0) << ','
        << format_real(r.accuracy) << ','
        << r.model_bytes << ',' << r.buffer_bytes << ',' << (on_front[i] ? 1 : 0) << ',' << err
        << '\n';
  }
  return out.str();
}

std::vector<SweepRow> run_sweep(const std::vector<SweepPoint>& points, const PointRunner& runner,
                                std::size_t jobs) {
  if (points.empty()) throw ArgumentError("sweep grid is empty");
  std::vector<SweepRow> rows(points.size());
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i = next++; i < points.size(); i = next++) {
      SweepRow& row = rows[i];
      row.point = points[i];
      try {
        const ExperimentRecord r = runner(points[i]);
        row.ok = true;
        row.accuracy = r.test_metric;
        row.model_bytes = r.model_bytes;
        row.buffer_bytes = r.buffer_bytes;
      } catch (const std::exception& e) {
        row.ok = false;
        row.error = e.what();
      }
    }
  };
  jobs = std::max<std::size_t>(1, std::min(jobs, points.size()));
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < jobs; ++t) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();
  return rows;
}

PointRunner process_runner(const std::filesystem::path& executable,
                           const std::filesystem::path& work_dir,
                           std::vector<std::string> common_args) {
  std::filesystem::create_directories(work_dir);
  return [=](const SweepPoint& p) {
    const std::string id = p.id();
    const auto record_path = work_dir / (id + ".json");
    const auto log_path = work_dir / (id + ".log");
    char beta[32];
    std::snprintf(beta, sizeof beta, "%.17g", p.beta);
    std::vector<std::string> args{executable.string(), "sweep-worker",
                                  "--layers",          std::to_string(p.layers),
                                  "--channels",        std::to_string(p.channels),
                                  "--beta",            beta,
                                  "--seed",            std::to_string(p.seed),
                                  "--out",             record_path.string()};
    args.insert(args.end(), common_args.begin(), common_args.end());
    std::vector<char*> argv;
    for (auto& a : args) argv.push_back(a.data());
    argv.push_back(nullptr);

    posix_spawn_file_actions_t actions;
    posix_spawn_file_actions_init(&actions);
    posix_spawn_file_actions_addopen(&actions, 1, log_path.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
    posix_spawn_file_actions_adddup2(&actions, 1, 2);
    pid_t pid = 0;
    const int rc = posix_spawn(&pid, argv[0], &actions, nullptr, argv.data(), environ);
    posix_spawn_file_actions_destroy(&actions);
    if (rc != 0) throw std::runtime_error("cannot start worker for " + id);
    int status = 0;
    if (waitpid(pid, &status, 0) < 0) throw std::runtime_error("lost worker for " + id);
    if (!WIFEXITED(status) || WEXITSTATUS(status) != 0)
      throw std::runtime_error("worker for " + id + " failed, see " + log_path.string());
    const auto records = read_records(record_path);
    if (records.size() != 1) throw SchemaError("worker for " + id + " wrote no single record");
    return records.front();
  };
}

// --- statistics ----------------------------------------------------------

std::size_t BitHistogram::total() const {
  std::size_t t = 0;
  for (const auto& [bits, count] : counts) t += count;
  return t;
}

int BitHistogram::mode() const {
  int best = 0;
  std::size_t best_count = 0;
  for (const auto& [bits, count] : counts)
    if (count > best_count) {
      best = bits;
      best_count = count;
    }
  return best;
}

namespace {

json histogram_json(const BitHistogram& h) {
  json j = json::object();
  for (const auto& [bits, count] : h.counts) j[std::to_string(bits)] = count;
  return j;
}

BitHistogram histogram_from_json(const json& j) {
  BitHistogram h;
  for (const auto& [key, value] : j.items()) h.counts[std::stoi(key)] = value.get<std::size_t>();
  return h;
}

}  // namespace

json QuantStats::to_json() const {
  json hist = json::object();
  for (const auto& [name, h] : histograms) hist[name] = histogram_json(h);
  return {{"records", records},
          {"histograms", hist},
          {"all_weights", histogram_json(all_weights)},
          {"all_activations", histogram_json(all_activations)},
          {"weight_mode", all_weights.mode()},
          {"activation_mode", all_activations.mode()}};
}

QuantStats QuantStats::from_json(const json& j) {
  QuantStats s;
  try {
    s.records = j.at("records").get<std::size_t>();
    for (const auto& [name, h] : j.at("histograms").items()) s.histograms[name] = histogram_from_json(h);
    s.all_weights = histogram_from_json(j.at("all_weights"));
    s.all_activations = histogram_from_json(j.at("all_activations"));
  } catch (const std::exception& e) {
    throw SchemaError(std::string("bad statistics document: ") + e.what());
  }
  return s;
}

std::string QuantStats::csv() const {
  std::ostringstream out;
  out << "category,bits,count\n";
  for (const auto& [name, h] : histograms)
    for (const auto& [bits, count] : h.counts) out << name << ',' << bits << ',' << count << '\n';
  for (const auto& [bits, count] : all_weights.counts) out << "all.weight," << bits << ',' << count << '\n';
  for (const auto& [bits, count] : all_activations.counts)
    out << "all.activation," << bits << ',' << count << '\n';
  return out.str();
}

QuantStats cmd_stats(const std::vector<ExperimentRecord>& records) {
  if (records.empty()) throw ArgumentError("statistics need at least one record");
  QuantStats s;
  s.records = records.size();
  auto add = [&](const std::string& category, bool weight, const quant::QuantScheme& scheme) {
    const int bits = scheme.total_bits();
    ++s.histograms[category + (weight ? ".weight" : ".activation")].counts[bits];
    ++(weight ? s.all_weights : s.all_activations).counts[bits];
  };
  // Every quantisation site counts once per record; the aggregation site has
  // no weights.
  for (const ExperimentRecord& r : records)
    for (const supernet::BlockChoice& b : r.choice.blocks) {
      add("linear", true, b.quant.linear.weight);
      add("linear", false, b.quant.linear.activation);
      add("attention", true, b.quant.attention.weight);
      add("attention", false, b.quant.attention.activation);
      add("aggregation", false, b.quant.aggregation.activation);
      add("shortcut", true, b.quant.router.weight);
      add("shortcut", false, b.quant.router.activation);
    }
  return s;
}

// --- environment -----------------------------------------------------------

std::filesystem::path data_root() {
  if (const char* env = std::getenv("LPGNAS_DATA"); env && *env) return env;
  return LPGNAS_DEFAULT_DATA_DIR;
}

graph::Graph load_graph(const std::string& dataset, std::optional<std::filesystem::path> root,
                        const graph::LoadOptions& options) {
  const std::filesystem::path dir = root ? *root : data_root();
  const auto raw = dir / "raw" / dataset;
  if (!std::filesystem::exists(dir / dataset / "meta.json") &&
      !std::filesystem::exists(dir / "meta.json") &&
      std::filesystem::exists(raw / (dataset + ".content")))
    return graph::preprocess(graph::read_linqs(raw, dataset), options);
  return graph::load_dataset(dir, dataset, options);
}

}  // namespace lpgnas::harness
