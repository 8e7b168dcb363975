// lpgnas command-line tool.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <thread>

#include <CLI11.hpp>

#include "lpgnas/harness/harness.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace lpgnas;

namespace {

// Options shared by every command that runs a search.
struct SearchOpts {
  std::string dataset = "cora";
  std::string data_root;
  std::string config;
  std::optional<std::size_t> epochs, arch_start, quant_start, steps, train_epochs, patience;
  std::optional<double> beta, noise, lr, weight_decay, train_weight_decay, qloss_scale;
  std::optional<std::uint64_t> seed;

  void add(CLI::App* app) {
    app->add_option("--dataset", dataset, "dataset name")->capture_default_str();
    app->add_option("--data-root", data_root, "dataset root (default $LPGNAS_DATA)");
    app->add_option("--config", config, "JSON file overriding search settings");
    app->add_option("--epochs", epochs, "search epochs M");
    app->add_option("--arch-start", arch_start, "architecture controller start epoch");
    app->add_option("--quant-start", quant_start, "quantisation controller start epoch");
    app->add_option("--steps", steps, "supernet steps per epoch");
    app->add_option("--beta", beta, "size regulariser weight");
    app->add_option("--noise", noise, "initial noise scale");
    app->add_option("--lr", lr, "learning rate");
    app->add_option("--weight-decay", weight_decay, "supernet weight decay during search");
    app->add_option("--qloss-scale", qloss_scale, "regulariser unit scale");
    app->add_option("--seed", seed, "seed");
    app->add_option("--train-epochs", train_epochs, "final training epochs");
    app->add_option("--patience", patience, "final training early-stopping patience");
    app->add_option("--train-weight-decay", train_weight_decay, "final training weight decay");
  }

  nas::SearchConfig search_config() const {
    nas::SearchConfig c;
    if (!config.empty()) {
      std::ifstream in(config);
      if (!in) throw IngestionError("cannot open config " + config);
      json j;
      try {
        j = json::parse(in);
      } catch (const json::parse_error& e) {
        throw SchemaError(config + ": " + e.what());
      }
      c = nas::search_config_from_json(j, c);
    }
    if (epochs) c.epochs = *epochs;
    if (arch_start) c.arch_start = *arch_start;
    if (quant_start) c.quant_start = *quant_start;
    if (steps) c.steps = *steps;
    if (beta) c.beta = *beta;
    if (noise) c.noise = *noise;
    if (lr) c.lr = *lr;
    if (weight_decay) c.weight_decay = *weight_decay;
    if (qloss_scale) c.qloss_scale = *qloss_scale;
    if (seed) c.seed = *seed;
    c.validate();
    return c;
  }

  harness::TrainConfig train_config() const {
    harness::TrainConfig t;
    if (train_epochs) t.epochs = *train_epochs;
    if (patience) t.patience = *patience;
    if (train_weight_decay) t.weight_decay = *train_weight_decay;
    if (lr) t.lr = *lr;
    if (seed) t.seed = *seed;
    return t;
  }

  graph::Graph graph() const {
    std::optional<fs::path> root;
    if (!data_root.empty()) root = data_root;
    return harness::load_graph(dataset, root);
  }

  // Arguments to hand to a sweep worker, minus the per-point ones.
  std::vector<std::string> forward_args() const {
    std::vector<std::string> a{"--dataset", dataset};
    if (!data_root.empty()) a.insert(a.end(), {"--data-root", fs::absolute(data_root).string()});
    if (!config.empty()) a.insert(a.end(), {"--config", fs::absolute(config).string()});
    auto opt = [&](const char* flag, const auto& v) {
      if (v) {
        std::ostringstream s;
        s.precision(17);
        s << *v;
        a.insert(a.end(), {flag, s.str()});
      }
    };
    opt("--epochs", epochs);
    opt("--arch-start", arch_start);
    opt("--quant-start", quant_start);
    opt("--steps", steps);
    opt("--noise", noise);
    opt("--lr", lr);
    opt("--weight-decay", weight_decay);
    opt("--qloss-scale", qloss_scale);
    opt("--train-epochs", train_epochs);
    opt("--patience", patience);
    opt("--train-weight-decay", train_weight_decay);
    return a;
  }
};

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw IngestionError("cannot write " + path);
  out << text;
}

void emit_json(const json& j, const std::string& path) {
  if (path.empty()) std::cout << j.dump(2) << '\n';
  else write_text(path, j.dump(2) + "\n");
}

harness::ExperimentRecord run_search(const SearchOpts& o, std::size_t layers, std::size_t channels,
                                     const std::string& log_path, const std::string& ckpt_path) {
  const graph::Graph g = o.graph();
  harness::SearchRequest req;
  req.layers = layers;
  req.channels = channels;
  req.search = o.search_config();
  req.train = o.train_config();
  std::ofstream log;
  if (!log_path.empty()) {
    log.open(log_path);
    if (!log) throw IngestionError("cannot write " + log_path);
  }
  auto outcome = harness::cmd_search(g, req, log_path.empty() ? nullptr : &log);
  if (!ckpt_path.empty()) write_text(ckpt_path, outcome.checkpoint.dump() + "\n");
  return outcome.record;
}

template <typename T>
std::string join(const std::vector<T>& v) {
  std::ostringstream s;
  for (std::size_t i = 0; i < v.size(); ++i) s << (i ? "," : "") << v[i];
  return s.str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Low-precision graph neural architecture search"};
  app.require_subcommand(1);

  // search
  SearchOpts search_opts;
  std::size_t layers = 2, channels = 32;
  std::string out_path, log_path, ckpt_path;
  auto* search = app.add_subcommand("search", "search a network, retrain it and test it");
  search_opts.add(search);
  search->add_option("--layers", layers, "graph blocks")->capture_default_str();
  search->add_option("--channels", channels, "hidden channels")->capture_default_str();
  search->add_option("-o,--out", out_path, "record file (default stdout)");
  search->add_option("--log", log_path, "JSON-lines search log");
  search->add_option("--checkpoint", ckpt_path, "checkpoint of the retrained network");

  // sweep-worker: one sweep point, used by sweep
  auto* worker = app.add_subcommand("sweep-worker", "run one sweep point");
  worker->group("");
  SearchOpts worker_opts;
  worker_opts.add(worker);
  worker->add_option("--layers", layers);
  worker->add_option("--channels", channels);
  worker->add_option("--out", out_path)->required();

  // baseline
  std::string model = "gat", quant_name = "float";
  SearchOpts base_opts;
  auto* baseline = app.add_subcommand("baseline", "train a fixed baseline network");
  base_opts.add(baseline);
  baseline->add_option("--model", model, "graphsage | gat | jknet, optional -v2 suffix")
      ->capture_default_str();
  baseline->add_option("--quant", quant_name, "float | w4a8 | w8a8 | row index | <w>/<a>")
      ->capture_default_str();
  baseline->add_option("-o,--out", out_path, "record file (default stdout)");

  // gridsearch
  SearchOpts grid_opts;
  auto* grid = app.add_subcommand("gridsearch", "manual quantisation search for a baseline");
  grid_opts.add(grid);
  grid->add_option("--model", model, "baseline model")->capture_default_str();
  grid->add_option("-o,--out", out_path, "result file (default stdout)");

  // sweep
  SearchOpts sweep_opts;
  std::vector<std::size_t> sweep_layers{2}, sweep_channels{32};
  std::vector<double> sweep_betas{0.1};
  std::vector<std::uint64_t> sweep_seeds{0};
  std::size_t jobs = std::max(1u, std::thread::hardware_concurrency() / 4);
  std::string work_dir = "sweep", csv_path;
  auto* sweep = app.add_subcommand("sweep", "search over a grid and report the Pareto frontier");
  sweep_opts.add(sweep);
  sweep->add_option("--layers", sweep_layers, "layer counts")->delimiter(',');
  sweep->add_option("--channels", sweep_channels, "channel counts")->delimiter(',');
  sweep->add_option("--betas", sweep_betas, "regulariser weights")->delimiter(',');
  sweep->add_option("--seeds", sweep_seeds, "seeds")->delimiter(',');
  sweep->add_option("-j,--jobs", jobs, "worker processes")->capture_default_str();
  sweep->add_option("--work-dir", work_dir, "per-point records and logs")->capture_default_str();
  sweep->add_option("--csv", csv_path, "frontier CSV (default stdout)");

  // stats
  std::vector<std::string> record_files;
  std::string json_path;
  auto* stats = app.add_subcommand("stats", "bitwidth histograms over search records");
  stats->add_option("records", record_files, "record files")->required();
  stats->add_option("--json", json_path, "JSON report (default stdout)");
  stats->add_option("--csv", csv_path, "CSV report");

  // convert-dataset
  std::string input_dir, name, output_dir;
  auto* convert = app.add_subcommand("convert-dataset", "convert a LINQS dataset to the native format");
  convert->add_option("--input", input_dir, "directory with <name>.content and <name>.cites")
      ->required();
  convert->add_option("--name", name, "dataset name")->required();
  convert->add_option("--output", output_dir, "output directory (default <data root>/<name>)");

  // eval
  SearchOpts eval_opts;
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  eval->add_option("--dataset", eval_opts.dataset, "dataset name")->capture_default_str();
  eval->add_option("--data-root", eval_opts.data_root, "dataset root");
  eval->add_option("--checkpoint", ckpt_path, "checkpoint file")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*search) {
      const auto r = run_search(search_opts, layers, channels, log_path, ckpt_path);
      emit_json(r.to_json(), out_path);
    } else if (*worker) {
      const auto r = run_search(worker_opts, layers, channels, "", "");
      emit_json(r.to_json(), out_path);
    } else if (*baseline) {
      const auto r = harness::cmd_baseline(base_opts.graph(), model, harness::quant_from_name(quant_name),
                                           base_opts.train_config());
      emit_json(r.to_json(), out_path);
    } else if (*grid) {
      const auto r = harness::cmd_gridsearch(grid_opts.graph(), model, grid_opts.train_config());
      if (r.none_passed) std::cerr << "no quantisation option passed the 0.5 point rule\n";
      emit_json(r.to_json(), out_path);
    } else if (*sweep) {
      std::vector<harness::SweepPoint> points;
      for (auto l : sweep_layers)
        for (auto c : sweep_channels)
          for (auto b : sweep_betas)
            for (auto s : sweep_seeds) points.push_back({l, c, b, s});
      const auto self = fs::read_symlink("/proc/self/exe");
      const auto rows = harness::run_sweep(
          points, harness::process_runner(self, work_dir, sweep_opts.forward_args()), jobs);
      const auto front = harness::pareto_front(rows);
      const std::string csv = harness::sweep_csv(rows, front);
      if (csv_path.empty()) std::cout << csv;
      else write_text(csv_path, csv);
      std::size_t failed = 0;
      for (const auto& r : rows)
        if (!r.ok) {
          ++failed;
          std::cerr << r.point.id() << ": " << r.error << '\n';
        }
      std::cerr << rows.size() - failed << " of " << rows.size() << " points finished, "
                << front.size() << " on the frontier\n";
      return failed ? 1 : 0;
    } else if (*stats) {
      std::vector<harness::ExperimentRecord> records;
      for (const auto& f : record_files) {
        auto part = harness::read_records(f);
        records.insert(records.end(), part.begin(), part.end());
      }
      const auto s = harness::cmd_stats(records);
      emit_json(s.to_json(), json_path);
      if (!csv_path.empty()) write_text(csv_path, s.csv());
    } else if (*convert) {
      auto raw = graph::read_linqs(input_dir, name);
      const fs::path out = output_dir.empty() ? harness::data_root() / name : fs::path(output_dir);
      fs::create_directories(out);
      graph::write_dataset_dir(raw, out);
      std::cerr << "wrote " << raw.n << " nodes, " << raw.edges.size() << " edges to " << out << '\n';
    } else if (*eval) {
      std::ifstream in(ckpt_path);
      if (!in) throw IngestionError("cannot open checkpoint " + ckpt_path);
      json j;
      try {
        j = json::parse(in);
      } catch (const json::parse_error& e) {
        throw SchemaError(ckpt_path + ": " + e.what());
      }
      auto [net, choice] = supernet::Supernet::from_checkpoint(j);
      const graph::Graph g = eval_opts.graph();
      if (g.f != net.config().in_features || g.c != net.config().classes)
        throw DimensionError("checkpoint does not fit dataset " + g.name);
      ad::Tape tape;
      const ad::Var logits = net.forward(tape, g, choice, {});
      json r{{"dataset", g.name},
             {"choice", supernet::to_json(choice)},
             {"train_metric", graph::evaluate(g, logits.value(), g.split.train)},
             {"val_metric", graph::evaluate(g, logits.value(), g.split.val)},
             {"test_metric", graph::evaluate(g, logits.value(), g.split.test)},
             {"model_bytes", supernet::model_size(net.config(), choice)},
             {"buffer_bytes", supernet::buffer_size(net.config(), choice, g.n, g.num_edges())}};
      std::cout << r.dump(2) << '\n';
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
