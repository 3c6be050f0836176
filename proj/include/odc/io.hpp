#pragma once

#include <bit>
#include <charconv>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "odc/eval.hpp"
#include "odc/flow.hpp"
#include "odc/mixture.hpp"
#include "odc/npe.hpp"
#include "odc/simulator.hpp"

namespace odc::io {

static_assert(std::endian::native == std::endian::little, "checkpoint format assumes little-endian");

using nlohmann::json;

// Shortest round-trip decimal representation, locale independent.
inline std::string fmt(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline double parse_double(const std::string& s) {
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{}) throw std::runtime_error("csv: cannot parse number '" + s + "'");
  return v;
}

inline void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << content;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// ---- generic CSV -----------------------------------------------------------

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  int col(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return static_cast<int>(i);
    throw std::runtime_error("csv: missing column '" + name + "'");
  }
};

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.push_back("");
  return out;
}

inline CsvTable read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path);
  CsvTable t;
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("csv: empty file " + path);
  t.header = split_csv_line(line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    t.rows.push_back(split_csv_line(line));
  }
  return t;
}

// ---- param space JSON ------------------------------------------------------

inline json space_to_json(const ParamSpace& space) {
  json dims = json::array();
  for (int i = 0; i < space.n_dims(); ++i) {
    const ParamDim& d = space.dims[i];
    json jd = {{"name", d.name}, {"lower", d.lower}, {"upper", d.upper},
               {"predicted", static_cast<bool>(space.predicted[i])}};
    if (d.fixed_value) jd["fixed"] = *d.fixed_value;
    dims.push_back(jd);
  }
  return json{{"dims", dims}};
}

inline ParamSpace space_from_json(const json& j) {
  std::vector<ParamDim> dims;
  std::vector<bool> predicted;
  for (const auto& jd : j.at("dims")) {
    std::optional<double> fixed;
    if (jd.contains("fixed")) fixed = jd.at("fixed").get<double>();
    dims.emplace_back(jd.at("name").get<std::string>(), jd.at("lower").get<double>(),
                      jd.at("upper").get<double>(), fixed);
    predicted.push_back(jd.at("predicted").get<bool>());
  }
  return ParamSpace(std::move(dims), std::move(predicted));
}

// ---- dataset ---------------------------------------------------------------

inline const char* split_name(int split) {
  switch (split) {
    case 0: return "train";
    case 1: return "val";
    default: return "test";
  }
}

inline int split_index(const std::string& name) {
  if (name == "train") return 0;
  if (name == "val") return 1;
  if (name == "test") return 2;
  throw std::runtime_error("dataset: unknown split '" + name + "'");
}

// Columns: the parameter names in space order, then o1..o8, then split.
inline void save_dataset(const Dataset& ds, const std::string& csv_path, const std::string& meta_path) {
  std::ostringstream out;
  for (int i = 0; i < ds.space.n_dims(); ++i) out << ds.space.dims[i].name << ',';
  for (int i = 0; i < kObsDim; ++i) out << 'o' << (i + 1) << ',';
  out << "split\n";
  for (const Record& r : ds.records) {
    for (int i = 0; i < ds.space.n_dims(); ++i) out << fmt(r.params[i]) << ',';
    for (int i = 0; i < kObsDim; ++i) out << fmt(r.obs[i]) << ',';
    out << split_name(r.split) << '\n';
  }
  write_file(csv_path, out.str());

  json meta = {{"seed", ds.seed},
               {"n", ds.records.size()},
               {"fractions", {{"train", ds.fractions.train}, {"val", ds.fractions.val}, {"test", ds.fractions.test}}},
               {"space", space_to_json(ds.space)}};
  write_file(meta_path, meta.dump(2) + "\n");
}

inline Dataset load_dataset(const std::string& csv_path, const std::string& meta_path) {
  json meta = json::parse(read_file(meta_path));
  Dataset ds;
  ds.space = space_from_json(meta.at("space"));
  ds.seed = meta.at("seed").get<std::uint64_t>();
  ds.fractions.train = meta.at("fractions").at("train").get<double>();
  ds.fractions.val = meta.at("fractions").at("val").get<double>();
  ds.fractions.test = meta.at("fractions").at("test").get<double>();

  CsvTable t = read_csv(csv_path);
  const int nd = ds.space.n_dims();
  if (t.header.size() != static_cast<std::size_t>(nd + kObsDim + 1))
    throw std::runtime_error("dataset: column count mismatch in " + csv_path);
  for (int i = 0; i < nd; ++i)
    if (t.header[i] != ds.space.dims[i].name)
      throw std::runtime_error("dataset: column '" + t.header[i] + "' does not match space");
  ds.records.reserve(t.rows.size());
  for (std::size_t row = 0; row < t.rows.size(); ++row) {
    const auto& cells = t.rows[row];
    Record r;
    r.params = Vec(nd);
    for (int i = 0; i < nd; ++i) r.params[i] = parse_double(cells[i]);
    r.obs = Vec(kObsDim);
    for (int i = 0; i < kObsDim; ++i) r.obs[i] = parse_double(cells[nd + i]);
    r.split = split_index(cells[nd + kObsDim]);
    r.noise_seed = mix_seed(ds.seed, row, 1);  // re-derived, matching generate_dataset
    ds.records.push_back(std::move(r));
  }
  return ds;
}

// ---- flow checkpoint -------------------------------------------------------
//
// Self-describing container: magic, version, JSON header (param space, flow
// hyperparameters, section directory), then one flat little-endian float64
// blob. Offsets are in doubles.

constexpr char kCheckpointMagic[8] = {'O', 'D', 'C', 'F', 'L', 'O', 'W', '1'};

inline void save_flow(const ConditionalFlow& flow, const std::string& path) {
  json layers = json::array();
  json sections = json::array();
  std::vector<double> blob;
  for (std::size_t l = 0; l < flow.layers.size(); ++l) {
    const CouplingLayer& layer = flow.layers[l];
    json jl = {{"transformed", layer.transformed}, {"identity", layer.identity}};
    layers.push_back(jl);
    for (int k = 0; k < layer.conditioner.n_layers(); ++k) {
      const Mat& W = layer.conditioner.W[k];
      const Vec& b = layer.conditioner.b[k];
      sections.push_back({{"name", "layer" + std::to_string(l) + "/W" + std::to_string(k)},
                          {"rows", W.rows()}, {"cols", W.cols()}, {"offset", blob.size()}});
      for (Eigen::Index r = 0; r < W.rows(); ++r)
        for (Eigen::Index c = 0; c < W.cols(); ++c) blob.push_back(W(r, c));
      sections.push_back({{"name", "layer" + std::to_string(l) + "/b" + std::to_string(k)},
                          {"rows", b.size()}, {"cols", 1}, {"offset", blob.size()}});
      for (Eigen::Index r = 0; r < b.size(); ++r) blob.push_back(b[r]);
    }
  }
  json header = {{"format_version", 1},
                 {"ndim", flow.ndim},
                 {"ctx_dim", flow.ctx_dim},
                 {"config",
                  {{"n_layers", flow.cfg.n_layers},
                   {"bins", flow.cfg.bins},
                   {"tail", flow.cfg.tail},
                   {"min_bin", flow.cfg.min_bin},
                   {"min_deriv", flow.cfg.min_deriv},
                   {"hidden", flow.cfg.hidden}}},
                 {"param_space", space_to_json(flow.space)},
                 {"layers", layers},
                 {"sections", sections}};
  const std::string hs = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out.write(kCheckpointMagic, 8);
  const std::uint32_t version = 1;
  out.write(reinterpret_cast<const char*>(&version), sizeof(version));
  const std::uint64_t hlen = hs.size();
  out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
  out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
  out.write(reinterpret_cast<const char*>(blob.data()),
            static_cast<std::streamsize>(blob.size() * sizeof(double)));
}

inline ConditionalFlow load_flow(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kCheckpointMagic, 8) != 0)
    throw std::runtime_error("checkpoint: bad magic in " + path);
  std::uint32_t version = 0;
  in.read(reinterpret_cast<char*>(&version), sizeof(version));
  if (version != 1) throw std::runtime_error("checkpoint: unsupported version");
  std::uint64_t hlen = 0;
  in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
  std::string hs(hlen, '\0');
  in.read(hs.data(), static_cast<std::streamsize>(hlen));
  json header = json::parse(hs);
  std::vector<double> doubles;
  double v;
  while (in.read(reinterpret_cast<char*>(&v), sizeof(v))) doubles.push_back(v);

  ConditionalFlow flow;
  flow.space = space_from_json(header.at("param_space"));
  flow.ndim = header.at("ndim").get<int>();
  flow.ctx_dim = header.at("ctx_dim").get<int>();
  const json& jc = header.at("config");
  flow.cfg.n_layers = jc.at("n_layers").get<int>();
  flow.cfg.bins = jc.at("bins").get<int>();
  flow.cfg.tail = jc.at("tail").get<double>();
  flow.cfg.min_bin = jc.at("min_bin").get<double>();
  flow.cfg.min_deriv = jc.at("min_deriv").get<double>();
  flow.cfg.hidden = jc.at("hidden").get<std::vector<int>>();

  std::size_t sec = 0;
  const json& sections = header.at("sections");
  for (const auto& jl : header.at("layers")) {
    CouplingLayer layer;
    layer.transformed = jl.at("transformed").get<std::vector<int>>();
    layer.identity = jl.at("identity").get<std::vector<int>>();
    while (sec < sections.size()) {
      const json& js = sections[sec];
      const std::string name = js.at("name").get<std::string>();
      const std::string prefix = "layer" + std::to_string(flow.layers.size()) + "/";
      if (name.rfind(prefix, 0) != 0) break;
      const auto rows = js.at("rows").get<Eigen::Index>();
      const auto cols = js.at("cols").get<Eigen::Index>();
      const auto offset = js.at("offset").get<std::size_t>();
      if (name.find("/W") != std::string::npos) {
        Mat W(rows, cols);
        for (Eigen::Index r = 0; r < rows; ++r)
          for (Eigen::Index c = 0; c < cols; ++c) W(r, c) = doubles.at(offset + static_cast<std::size_t>(r * cols + c));
        layer.conditioner.W.push_back(std::move(W));
      } else {
        Vec b(rows);
        for (Eigen::Index r = 0; r < rows; ++r) b[r] = doubles.at(offset + static_cast<std::size_t>(r));
        layer.conditioner.b.push_back(std::move(b));
      }
      ++sec;
    }
    flow.layers.push_back(std::move(layer));
  }
  return flow;
}

// ---- analysis outputs ------------------------------------------------------

inline void save_train_report(const TrainReport& r, const std::string& csv_path) {
  std::ostringstream out;
  out << "epoch,train_loss,val_loss\n";
  for (std::size_t e = 0; e < r.train_loss.size(); ++e)
    out << e << ',' << fmt(r.train_loss[e]) << ',' << fmt(r.val_loss[e]) << '\n';
  write_file(csv_path, out.str());
}

inline void save_coverage(const CoverageCurve& c, const std::string& path) {
  std::ostringstream out;
  out << "gamma,coverage\n";
  for (std::size_t i = 0; i < c.levels.size(); ++i)
    out << fmt(c.levels[i]) << ',' << fmt(c.coverage[i]) << '\n';
  write_file(path, out.str());
}

inline void save_pi(const std::vector<double>& pis, const std::string& path) {
  std::ostringstream out;
  out << "pair,pi\n";
  for (std::size_t i = 0; i < pis.size(); ++i) out << i << ',' << fmt(pis[i]) << '\n';
  write_file(path, out.str());
}

// Box-and-whisker summary (Tukey whiskers at 1.5 IQR).
inline void save_pi_summary(const std::vector<double>& pis, const std::string& path) {
  std::vector<double> v = pis;
  std::sort(v.begin(), v.end());
  const double q1 = detail::quantile(v, 0.25);
  const double med = detail::quantile(v, 0.5);
  const double q3 = detail::quantile(v, 0.75);
  const double iqr = q3 - q1;
  double wlo = v.front(), whi = v.back();
  for (double x : v)
    if (x >= q1 - 1.5 * iqr) {
      wlo = x;
      break;
    }
  for (auto it = v.rbegin(); it != v.rend(); ++it)
    if (*it <= q3 + 1.5 * iqr) {
      whi = *it;
      break;
    }
  std::ostringstream out;
  out << "n,median,q1,q3,whisker_low,whisker_high\n";
  out << v.size() << ',' << fmt(med) << ',' << fmt(q1) << ',' << fmt(q3) << ',' << fmt(wlo) << ','
      << fmt(whi) << '\n';
  write_file(path, out.str());
}

inline void save_ppc(const PpcResult& posterior, const PpcResult& prior, const std::string& path) {
  std::ostringstream out;
  out << "kind,sample,distance\n";
  for (std::size_t i = 0; i < posterior.distances.size(); ++i)
    out << "posterior," << i << ',' << fmt(posterior.distances[i]) << '\n';
  for (std::size_t i = 0; i < prior.distances.size(); ++i)
    out << "prior," << i << ',' << fmt(prior.distances[i]) << '\n';
  write_file(path, out.str());
}

inline void save_corner(const CornerData& corner, const std::string& marginals_path,
                        const std::string& pairs_path, const std::string& levels_path) {
  {
    std::ostringstream out;
    out << "dim,bin,lower,upper,mass\n";
    for (const auto& h : corner.marginals)
      for (Eigen::Index b = 0; b + 1 < h.edges.size(); ++b)
        out << h.dim << ',' << b << ',' << fmt(h.edges[b]) << ',' << fmt(h.edges[b + 1]) << ','
            << fmt(h.mass[b]) << '\n';
    write_file(marginals_path, out.str());
  }
  {
    std::ostringstream out;
    out << "dim_i,dim_j,bin_i,bin_j,density\n";
    for (const auto& g : corner.pair_grids)
      for (Eigen::Index r = 0; r < g.density.rows(); ++r)
        for (Eigen::Index c = 0; c < g.density.cols(); ++c)
          out << g.dim_i << ',' << g.dim_j << ',' << r << ',' << c << ',' << fmt(g.density(r, c)) << '\n';
    write_file(pairs_path, out.str());
  }
  {
    std::ostringstream out;
    out << "dim_i,dim_j,gamma,level\n";
    const double gammas[3] = {0.6827, 0.9545, 0.9973};
    for (const auto& g : corner.pair_grids)
      for (int k = 0; k < 3; ++k)
        out << g.dim_i << ',' << g.dim_j << ',' << fmt(gammas[k]) << ',' << fmt(g.levels[k]) << '\n';
    write_file(levels_path, out.str());
  }
}

inline void save_weights(const Vec& lambda, const std::string& path) {
  std::ostringstream out;
  out << "source,lambda_hat\n";
  for (Eigen::Index k = 0; k < lambda.size(); ++k) out << k << ',' << fmt(lambda[k]) << '\n';
  write_file(path, out.str());
}

inline void save_sweep(const SweepResult& sweep, const std::string& path) {
  std::ostringstream out;
  out << "eta,rep,d_e,delta,baseline_median,out_of_odd\n";
  for (const SweepRow& r : sweep.rows)
    out << fmt(r.eta) << ',' << r.rep << ',' << fmt(r.d_e) << ',' << fmt(r.delta) << ','
        << fmt(r.baseline_median) << ',' << (r.out_of_odd ? 1 : 0) << '\n';
  write_file(path, out.str());
}

// Bag file: o1..o8, weight, optional timestamp.
inline void save_bag(const ObservationBag& bag, const std::string& path) {
  bool with_ts = !bag.entries.empty() && bag.entries.front().timestamp.has_value();
  std::ostringstream out;
  for (int i = 0; i < kObsDim; ++i) out << 'o' << (i + 1) << ',';
  out << "weight";
  if (with_ts) out << ",timestamp";
  out << '\n';
  for (const auto& e : bag.entries) {
    for (int i = 0; i < kObsDim; ++i) out << fmt(e.obs[i]) << ',';
    out << fmt(e.weight);
    if (with_ts) out << ',' << fmt(e.timestamp.value_or(0.0));
    out << '\n';
  }
  write_file(path, out.str());
}

inline ObservationBag load_bag(const std::string& path) {
  CsvTable t = read_csv(path);
  const bool with_ts = t.header.size() == static_cast<std::size_t>(kObsDim) + 2;
  if (t.header.size() != static_cast<std::size_t>(kObsDim) + 1 && !with_ts)
    throw std::runtime_error("bag: expected o1..o8,weight[,timestamp] in " + path);
  ObservationBag bag;
  for (const auto& cells : t.rows) {
    BagEntry e;
    e.obs = Vec(kObsDim);
    for (int i = 0; i < kObsDim; ++i) e.obs[i] = parse_double(cells[i]);
    e.weight = parse_double(cells[kObsDim]);
    if (with_ts) e.timestamp = parse_double(cells[kObsDim + 1]);
    bag.entries.push_back(std::move(e));
  }
  bag.validate();
  return bag;
}

}  // namespace odc::io
