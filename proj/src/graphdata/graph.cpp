#include "lpgnas/graphdata/graph.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <unordered_map>

#include <json.hpp>

namespace lpgnas::graph {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (start <= line.size()) {
    std::size_t end = line.find_first_of("\t ", start);
    if (end == std::string_view::npos) end = line.size();
    if (end > start) out.push_back(line.substr(start, end - start));
    start = end + 1;
  }
  return out;
}

template <class T>
T parse_number(std::string_view field, const fs::path& file, std::size_t line_no) {
  T value{};
  auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
  if (ec != std::errc{} || ptr != field.data() + field.size())
    throw IngestionError(file.string() + ":" + std::to_string(line_no) + ": bad number '" +
                         std::string(field) + "'");
  return value;
}

std::ifstream open_input(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw IngestionError("cannot open " + file.string());
  return in;
}

// Calls fn(fields, line_no) for each non-empty, non-comment line.
template <class Fn>
void for_each_row(const fs::path& file, Fn&& fn) {
  std::ifstream in = open_input(file);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    fn(split_fields(line), line_no);
  }
}

std::size_t node_id(std::string_view field, std::size_t n, const fs::path& file,
                    std::size_t line_no) {
  const auto id = parse_number<std::size_t>(field, file, line_no);
  if (id >= n)
    throw IngestionError(file.string() + ":" + std::to_string(line_no) + ": node " +
                         std::to_string(id) + " out of range (n = " + std::to_string(n) + ")");
  return id;
}

CsrMatrix csr_from_rows(std::size_t rows, std::size_t cols,
                        std::vector<std::vector<std::pair<std::size_t, Real>>>& entries) {
  CsrMatrix m;
  m.rows = rows;
  m.cols = cols;
  m.offsets.assign(rows + 1, 0);
  for (std::size_t r = 0; r < rows; ++r) {
    auto& row = entries[r];
    std::sort(row.begin(), row.end());
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i > 0 && row[i].first == row[i - 1].first)
        throw IngestionError("duplicate feature entry (" + std::to_string(r) + ", " +
                             std::to_string(row[i].first) + ")");
      if (row[i].second == 0) continue;
      m.indices.push_back(row[i].first);
      m.values.push_back(row[i].second);
    }
    m.offsets[r + 1] = m.values.size();
  }
  return m;
}

struct KnownCounts {
  std::size_t n, f, c;
};

const std::map<std::string, KnownCounts>& published_counts() {
  static const std::map<std::string, KnownCounts> counts{
      {"cora", {2708, 1433, 7}},
      {"citeseer", {3327, 3703, 6}},
      {"pubmed", {19717, 500, 3}},
  };
  return counts;
}

}  // namespace

void RawDataset::validate() const {
  if (features.rows != n || features.cols != f)
    throw SchemaError("feature matrix is " + std::to_string(features.rows) + "x" +
                      std::to_string(features.cols) + ", expected " + std::to_string(n) + "x" +
                      std::to_string(f));
  features.validate();
  if (labelled.size() != n) throw SchemaError("labelled mask has wrong length");
  for (auto [u, v] : edges)
    if (u >= n || v >= n) throw IndexError("edge endpoint out of range");
  if (multi_label) {
    if (label_matrix.rows() != n || label_matrix.cols() != c)
      throw SchemaError("multi-hot label matrix has wrong shape");
  } else {
    if (labels.size() != n) throw SchemaError("label vector has wrong length");
    for (std::size_t i = 0; i < n; ++i)
      if (labelled[i] && (labels[i] < 0 || labels[i] >= static_cast<int>(c)))
        throw SchemaError("class id " + std::to_string(labels[i]) + " outside [0, " +
                          std::to_string(c) + ")");
  }
}

Tensor Graph::dense_features() const {
  Tensor out({n, f});
  const CsrMatrix& m = features->matrix;
  for (std::size_t r = 0; r < m.rows; ++r)
    for (std::size_t k = m.offsets[r]; k < m.offsets[r + 1]; ++k)
      out(r, m.indices[k]) = m.values[k];
  return out;
}

std::vector<std::uint8_t> Graph::mask(std::span<const std::size_t> nodes) const {
  std::vector<std::uint8_t> m(n, 0);
  for (std::size_t v : nodes) m[v] = 1;
  return m;
}

RawDataset read_dataset_dir(const fs::path& dir) {
  const fs::path meta_file = dir / "meta.json";
  json meta;
  try {
    std::ifstream in = open_input(meta_file);
    meta = json::parse(in);
  } catch (const json::exception& e) {
    throw IngestionError(meta_file.string() + ": " + e.what());
  }

  RawDataset data;
  std::string arity, format;
  try {
    data.name = meta.value("name", dir.filename().string());
    data.n = meta.at("n").get<std::size_t>();
    data.f = meta.at("f").get<std::size_t>();
    data.c = meta.at("c").get<std::size_t>();
    arity = meta.value("label_arity", "single");
    format = meta.value("feature_format", "dense");
  } catch (const json::exception& e) {
    throw IngestionError(meta_file.string() + ": " + e.what());
  }
  if (arity != "single" && arity != "multi")
    throw SchemaError(meta_file.string() + ": label_arity must be single or multi");
  if (format != "dense" && format != "sparse")
    throw SchemaError(meta_file.string() + ": feature_format must be dense or sparse");
  data.multi_label = arity == "multi";

  const fs::path edge_file = dir / "edges.tsv";
  for_each_row(edge_file, [&](const auto& fields, std::size_t line_no) {
    if (fields.size() != 2)
      throw IngestionError(edge_file.string() + ":" + std::to_string(line_no) +
                           ": expected 2 columns");
    data.edges.emplace_back(node_id(fields[0], data.n, edge_file, line_no),
                            node_id(fields[1], data.n, edge_file, line_no));
  });

  const fs::path feature_file = dir / "features.tsv";
  std::vector<std::vector<std::pair<std::size_t, Real>>> entries(data.n);
  std::vector<std::uint8_t> seen(data.n, 0);
  for_each_row(feature_file, [&](const auto& fields, std::size_t line_no) {
    const std::size_t v = node_id(fields[0], data.n, feature_file, line_no);
    if (format == "dense") {
      if (fields.size() != data.f + 1)
        throw IngestionError(feature_file.string() + ":" + std::to_string(line_no) +
                             ": expected " + std::to_string(data.f + 1) + " columns, got " +
                             std::to_string(fields.size()));
      if (seen[v]) throw IngestionError(feature_file.string() + ": node listed twice");
      seen[v] = 1;
      for (std::size_t j = 0; j < data.f; ++j)
        entries[v].emplace_back(j, parse_number<Real>(fields[j + 1], feature_file, line_no));
    } else {
      if (fields.size() != 3)
        throw IngestionError(feature_file.string() + ":" + std::to_string(line_no) +
                             ": expected 3 columns");
      const auto j = parse_number<std::size_t>(fields[1], feature_file, line_no);
      if (j >= data.f)
        throw IngestionError(feature_file.string() + ":" + std::to_string(line_no) +
                             ": feature index out of range");
      entries[v].emplace_back(j, parse_number<Real>(fields[2], feature_file, line_no));
    }
  });
  try {
    data.features = csr_from_rows(data.n, data.f, entries);
  } catch (const IngestionError& e) {
    throw IngestionError(feature_file.string() + ": " + e.what());
  }

  const fs::path label_file = dir / "labels.tsv";
  data.labelled.assign(data.n, 0);
  if (data.multi_label)
    data.label_matrix = Tensor({data.n, data.c});
  else
    data.labels.assign(data.n, -1);
  for_each_row(label_file, [&](const auto& fields, std::size_t line_no) {
    const std::string where = label_file.string() + ":" + std::to_string(line_no);
    if (fields.size() != 2) throw IngestionError(where + ": expected 2 columns");
    const std::size_t v = node_id(fields[0], data.n, label_file, line_no);
    data.labelled[v] = 1;
    if (data.multi_label) {
      if (fields[1].size() != data.c)
        throw SchemaError(where + ": label bit string has length " +
                          std::to_string(fields[1].size()) + ", expected " +
                          std::to_string(data.c));
      for (std::size_t j = 0; j < data.c; ++j) {
        const char b = fields[1][j];
        if (b != '0' && b != '1') throw SchemaError(where + ": label bits must be 0/1");
        data.label_matrix(v, j) = b == '1' ? 1 : 0;
      }
    } else {
      if (fields[1].size() == data.c && data.c > 1 &&
          fields[1].find_first_not_of("01") == std::string_view::npos &&
          std::count(fields[1].begin(), fields[1].end(), '1') != 1)
        throw SchemaError(where + ": multi-hot label in a single-label dataset");
      const int cls = parse_number<int>(fields[1], label_file, line_no);
      if (cls < 0 || cls >= static_cast<int>(data.c))
        throw SchemaError(where + ": class " + std::to_string(cls) + " outside [0, " +
                          std::to_string(data.c) + ")");
      data.labels[v] = cls;
    }
  });
  data.validate();
  return data;
}

void write_dataset_dir(const RawDataset& data, const fs::path& dir) {
  data.validate();
  fs::create_directories(dir);
  const bool sparse = data.features.nnz() * 4 < data.n * data.f;
  json meta{{"name", data.name},
            {"n", data.n},
            {"f", data.f},
            {"c", data.c},
            {"label_arity", data.multi_label ? "multi" : "single"},
            {"feature_format", sparse ? "sparse" : "dense"}};
  std::ofstream(dir / "meta.json") << meta.dump(2) << '\n';

  std::ofstream edges(dir / "edges.tsv");
  for (auto [u, v] : data.edges) edges << u << '\t' << v << '\n';

  std::ofstream feats(dir / "features.tsv");
  feats.precision(17);
  const CsrMatrix& m = data.features;
  for (std::size_t r = 0; r < data.n; ++r) {
    if (sparse) {
      for (std::size_t k = m.offsets[r]; k < m.offsets[r + 1]; ++k)
        feats << r << '\t' << m.indices[k] << '\t' << m.values[k] << '\n';
    } else {
      std::vector<Real> row(data.f, 0);
      for (std::size_t k = m.offsets[r]; k < m.offsets[r + 1]; ++k) row[m.indices[k]] = m.values[k];
      feats << r;
      for (Real x : row) feats << '\t' << x;
      feats << '\n';
    }
  }

  std::ofstream labels(dir / "labels.tsv");
  for (std::size_t v = 0; v < data.n; ++v) {
    if (!data.labelled[v]) continue;
    labels << v << '\t';
    if (data.multi_label)
      for (std::size_t j = 0; j < data.c; ++j) labels << (data.label_matrix(v, j) != 0 ? '1' : '0');
    else
      labels << data.labels[v];
    labels << '\n';
  }
  if (!edges || !feats || !labels) throw IngestionError("failed writing " + dir.string());
}

RawDataset read_linqs(const fs::path& dir, const std::string& name) {
  const fs::path content = dir / (name + ".content");
  const fs::path cites = dir / (name + ".cites");

  std::vector<std::string> ids;
  std::vector<std::string> class_names;
  std::vector<std::vector<std::pair<std::size_t, Real>>> entries;
  std::size_t f = 0;
  for_each_row(content, [&](const auto& fields, std::size_t line_no) {
    if (fields.size() < 3)
      throw IngestionError(content.string() + ":" + std::to_string(line_no) + ": too few columns");
    const std::size_t width = fields.size() - 2;
    if (f == 0) f = width;
    if (width != f)
      throw IngestionError(content.string() + ":" + std::to_string(line_no) + ": expected " +
                           std::to_string(f) + " features, got " + std::to_string(width));
    ids.emplace_back(fields.front());
    class_names.emplace_back(fields.back());
    auto& row = entries.emplace_back();
    for (std::size_t j = 0; j < f; ++j) {
      const Real x = parse_number<Real>(fields[j + 1], content, line_no);
      if (x != 0) row.emplace_back(j, x);
    }
  });

  RawDataset data;
  data.name = name;
  data.n = ids.size();
  data.f = f;
  std::vector<std::string> classes = class_names;
  std::sort(classes.begin(), classes.end());
  classes.erase(std::unique(classes.begin(), classes.end()), classes.end());
  data.c = classes.size();
  data.labels.resize(data.n);
  data.labelled.assign(data.n, 1);
  for (std::size_t v = 0; v < data.n; ++v)
    data.labels[v] = static_cast<int>(
        std::lower_bound(classes.begin(), classes.end(), class_names[v]) - classes.begin());
  data.features = csr_from_rows(data.n, data.f, entries);

  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t v = 0; v < data.n; ++v)
    if (!index.emplace(ids[v], v).second)
      throw IngestionError(content.string() + ": duplicate paper id " + ids[v]);
  for_each_row(cites, [&](const auto& fields, std::size_t line_no) {
    if (fields.size() != 2)
      throw IngestionError(cites.string() + ":" + std::to_string(line_no) + ": expected 2 columns");
    auto a = index.find(std::string(fields[0]));
    auto b = index.find(std::string(fields[1]));
    if (a == index.end() || b == index.end()) return;
    data.edges.emplace_back(b->second, a->second);
  });
  data.validate();
  return data;
}

Split make_split(std::span<const std::uint8_t> labelled, std::uint64_t seed) {
  std::vector<std::size_t> nodes;
  for (std::size_t v = 0; v < labelled.size(); ++v)
    if (labelled[v]) nodes.push_back(v);
  std::mt19937_64 rng(mix_seed(seed, fnv1a("split")));
  shuffle(nodes, rng);
  const std::size_t n_train = nodes.size() * 6 / 10;
  const std::size_t n_val = nodes.size() * 2 / 10;
  Split s;
  s.train.assign(nodes.begin(), nodes.begin() + n_train);
  s.val.assign(nodes.begin() + n_train, nodes.begin() + n_train + n_val);
  s.test.assign(nodes.begin() + n_train + n_val, nodes.end());
  for (auto* part : {&s.train, &s.val, &s.test}) std::sort(part->begin(), part->end());
  return s;
}

Graph preprocess(RawDataset data, const LoadOptions& options) {
  data.validate();
  Graph g;
  g.name = data.name;
  g.n = data.n;
  g.f = data.f;
  g.c = data.c;
  g.multi_label = data.multi_label;

  // (target, source) pairs: symmetrised, self-loops replaced by exactly one
  // per node, duplicates removed.
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  pairs.reserve(2 * data.edges.size() + data.n);
  for (auto [u, v] : data.edges) {
    if (u == v) continue;
    pairs.emplace_back(v, u);
    pairs.emplace_back(u, v);
  }
  for (std::size_t v = 0; v < data.n; ++v) pairs.emplace_back(v, v);
  std::sort(pairs.begin(), pairs.end());
  pairs.erase(std::unique(pairs.begin(), pairs.end()), pairs.end());

  const std::size_t e = pairs.size();
  g.edge_src.resize(e);
  g.edge_dst.resize(e);
  for (std::size_t i = 0; i < e; ++i) {
    g.edge_dst[i] = pairs[i].first;
    g.edge_src[i] = pairs[i].second;
  }
  g.reverse_edge.resize(e);
  for (std::size_t i = 0; i < e; ++i) {
    auto it = std::lower_bound(pairs.begin(), pairs.end(),
                               std::pair{pairs[i].second, pairs[i].first});
    g.reverse_edge[i] = static_cast<std::size_t>(it - pairs.begin());
  }
  g.by_dst = Segments::build(g.edge_dst, g.n);
  g.by_src = Segments::build(g.edge_src, g.n);
  g.degree.resize(g.n);
  for (std::size_t v = 0; v < g.n; ++v) g.degree[v] = g.by_dst.count(v);

  CsrMatrix feats = std::move(data.features);
  if (options.row_normalise) {
    for (std::size_t r = 0; r < feats.rows; ++r) {
      Real norm = 0;
      for (std::size_t k = feats.offsets[r]; k < feats.offsets[r + 1]; ++k)
        norm += std::abs(feats.values[k]);
      if (norm > 0)
        for (std::size_t k = feats.offsets[r]; k < feats.offsets[r + 1]; ++k)
          feats.values[k] /= norm;
    }
  }
  g.features = std::make_shared<const ad::SparseOperand>(std::move(feats));
  g.labels = std::move(data.labels);
  g.label_matrix = std::move(data.label_matrix);
  g.labelled = std::move(data.labelled);
  g.split = make_split(g.labelled, options.split_seed);
  return g;
}

Graph load_dataset(const fs::path& root, const std::string& name, const LoadOptions& options) {
  fs::path dir = root / name;
  if (!fs::exists(dir / "meta.json") && fs::exists(root / "meta.json")) dir = root;
  if (!fs::exists(dir / "meta.json"))
    throw IngestionError("no dataset '" + name + "' under " + root.string() +
                         " (missing meta.json)");
  RawDataset data = read_dataset_dir(dir);
  auto known = published_counts().find(data.name);
  if (known != published_counts().end()) {
    const KnownCounts k = known->second;
    if (data.n != k.n || data.f != k.f || data.c != k.c)
      throw IngestionError(dir.string() + ": " + data.name + " should have n=" +
                           std::to_string(k.n) + " f=" + std::to_string(k.f) +
                           " c=" + std::to_string(k.c));
  }
  return preprocess(std::move(data), options);
}

Graph sample_subgraph(const Graph& g, std::size_t k, std::uint64_t seed) {
  if (k == 0 || k > g.n)
    throw ArgumentError("sample size " + std::to_string(k) + " outside [1, " +
                        std::to_string(g.n) + "]");
  std::vector<std::size_t> nodes(g.n);
  for (std::size_t v = 0; v < g.n; ++v) nodes[v] = v;
  std::mt19937_64 rng(mix_seed(seed, fnv1a("sample")));
  shuffle(nodes, rng);
  nodes.resize(k);
  std::sort(nodes.begin(), nodes.end());
  std::vector<std::size_t> remap(g.n, SIZE_MAX);
  for (std::size_t i = 0; i < k; ++i) remap[nodes[i]] = i;

  RawDataset sub;
  sub.name = g.name;
  sub.n = k;
  sub.f = g.f;
  sub.c = g.c;
  sub.multi_label = g.multi_label;
  for (std::size_t e = 0; e < g.num_edges(); ++e) {
    const std::size_t u = remap[g.edge_src[e]], v = remap[g.edge_dst[e]];
    if (u != SIZE_MAX && v != SIZE_MAX && u < v) sub.edges.emplace_back(u, v);
  }
  const CsrMatrix& m = g.features->matrix;
  sub.features.rows = k;
  sub.features.cols = g.f;
  sub.features.offsets.push_back(0);
  for (std::size_t v : nodes) {
    for (std::size_t j = m.offsets[v]; j < m.offsets[v + 1]; ++j) {
      sub.features.indices.push_back(m.indices[j]);
      sub.features.values.push_back(m.values[j]);
    }
    sub.features.offsets.push_back(sub.features.values.size());
  }
  sub.labelled.resize(k);
  if (g.multi_label) sub.label_matrix = Tensor({k, g.c});
  else sub.labels.resize(k);
  for (std::size_t i = 0; i < k; ++i) {
    sub.labelled[i] = g.labelled[nodes[i]];
    if (g.multi_label)
      for (std::size_t j = 0; j < g.c; ++j) sub.label_matrix(i, j) = g.label_matrix(nodes[i], j);
    else
      sub.labels[i] = g.labels[nodes[i]];
  }

  Graph out = preprocess(std::move(sub), {.row_normalise = false});
  auto inherit = [&](const std::vector<std::size_t>& part) {
    std::vector<std::size_t> kept;
    for (std::size_t v : part)
      if (remap[v] != SIZE_MAX) kept.push_back(remap[v]);
    return kept;
  };
  out.split = {inherit(g.split.train), inherit(g.split.val), inherit(g.split.test)};
  return out;
}

Real accuracy(const Tensor& scores, std::span<const int> labels,
              std::span<const std::size_t> rows) {
  if (rows.empty()) throw ArgumentError("accuracy over an empty node set");
  if (labels.size() != scores.rows())
    throw DimensionError("label count does not match score rows");
  std::size_t correct = 0;
  const std::size_t c = scores.cols();
  for (std::size_t r : rows) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < c; ++j)
      if (scores(r, j) > scores(r, best)) best = j;
    if (static_cast<int>(best) == labels[r]) ++correct;
  }
  return static_cast<Real>(correct) / static_cast<Real>(rows.size());
}

Real micro_f1(const Tensor& logits, const Tensor& targets, std::span<const std::size_t> rows) {
  if (rows.empty()) throw ArgumentError("micro-F1 over an empty node set");
  if (!logits.same_shape(targets)) throw DimensionError("prediction and label arity differ");
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t r : rows)
    for (std::size_t j = 0; j < logits.cols(); ++j) {
      const bool pred = logits(r, j) > 0;
      const bool truth = targets(r, j) != 0;
      tp += pred && truth;
      fp += pred && !truth;
      fn += !pred && truth;
    }
  if (tp == 0) return 0;
  return 2.0 * static_cast<Real>(tp) / static_cast<Real>(2 * tp + fp + fn);
}

Real evaluate(const Graph& g, const Tensor& logits, std::span<const std::size_t> rows) {
  return g.multi_label ? micro_f1(logits, g.label_matrix, rows) : accuracy(logits, g.labels, rows);
}

}  // namespace lpgnas::graph
