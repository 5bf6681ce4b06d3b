#include "dostx/crystal.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include <json.hpp>

#include "dostx/errors.hpp"

namespace dostx {

using nlohmann::json;

const char* to_string(CrystalSystem s) {
  switch (s) {
    case CrystalSystem::cubic: return "cubic";
    case CrystalSystem::hexagonal: return "hexagonal";
    case CrystalSystem::tetragonal: return "tetragonal";
    case CrystalSystem::trigonal: return "trigonal";
    case CrystalSystem::orthorhombic: return "orthorhombic";
    case CrystalSystem::monoclinic: return "monoclinic";
    case CrystalSystem::triclinic: return "triclinic";
  }
  return "cubic";
}

CrystalSystem crystal_system_from_string(const std::string& s) {
  static const std::array<CrystalSystem, 7> all = {
      CrystalSystem::cubic,        CrystalSystem::hexagonal,
      CrystalSystem::tetragonal,   CrystalSystem::trigonal,
      CrystalSystem::orthorhombic, CrystalSystem::monoclinic,
      CrystalSystem::triclinic};
  for (CrystalSystem c : all)
    if (s == to_string(c)) return c;
  throw ValidationError("unknown crystal system '" + s + "'");
}

Eigen::VectorXd featurize(int species, const FeaturizerConfig& cfg) {
  if (species < 0 || species >= cfg.num_species)
    throw ValidationError("species index " + std::to_string(species) +
                          " out of range [0, " + std::to_string(cfg.num_species) + ")");
  Eigen::VectorXd v = Eigen::VectorXd::Zero(cfg.num_species);
  v[species] = 1.0;
  return v;
}

Eigen::VectorXd bond_rbf(double length, const FeaturizerConfig& cfg) {
  Eigen::VectorXd v(cfg.rbf_centers);
  const double step = (cfg.rbf_max - cfg.rbf_min) / (cfg.rbf_centers - 1);
  for (int k = 0; k < cfg.rbf_centers; ++k) {
    const double mu = cfg.rbf_min + k * step;
    const double z = (length - mu) / cfg.rbf_width;
    v[k] = std::exp(-0.5 * z * z);
  }
  return v;
}

void apply_default_features(Dataset& dataset, const FeaturizerConfig& cfg) {
  for (auto& c : dataset.crystals) {
    if (c.atom_features.size() == 0) {
      c.atom_features.resize(c.n_atoms(), cfg.num_species);
      for (int i = 0; i < c.n_atoms(); ++i)
        c.atom_features.row(i) = featurize(c.atom_species[i], cfg).transpose();
    }
    if (c.edge_features.size() == 0 && !c.edges.empty()) {
      if (c.bond_lengths.size() != c.edges.size())
        throw ValidationError("crystal " + c.id +
                              ": bond_lengths required to featurize edges");
      c.edge_features.resize(static_cast<Eigen::Index>(c.edges.size()), cfg.rbf_centers);
      for (std::size_t e = 0; e < c.edges.size(); ++e)
        c.edge_features.row(static_cast<Eigen::Index>(e)) =
            bond_rbf(c.bond_lengths[e], cfg).transpose();
    }
  }
}

namespace {

void validate_crystal(const CrystalGraph& c, int grid_m) {
  const int n = c.n_atoms();
  if (n < 1) throw ValidationError("crystal " + c.id + ": no atoms");
  std::set<std::pair<int, int>> seen;
  for (const auto& [i, j] : c.edges) {
    if (i < 0 || i >= n || j < 0 || j >= n)
      throw ValidationError("crystal " + c.id + ": edge index out of range");
    seen.insert({i, j});
  }
  for (const auto& [i, j] : c.edges)
    if (!seen.count({j, i}))
      throw ValidationError("crystal " + c.id + ": edge (" + std::to_string(i) +
                            "," + std::to_string(j) + ") lacks reverse orientation");
  std::set<int> kinds(c.atom_species.begin(), c.atom_species.end());
  if (c.n_species_kinds != static_cast<int>(kinds.size()))
    throw ValidationError("crystal " + c.id + ": n_species_kinds " +
                          std::to_string(c.n_species_kinds) + " != distinct species " +
                          std::to_string(kinds.size()));
  if (c.dos.size() != 0 && c.dos.size() != grid_m)
    throw ValidationError("crystal " + c.id + ": dos length " +
                          std::to_string(c.dos.size()) + " != " + std::to_string(grid_m));
  if (c.atom_features.size() != 0 && c.atom_features.rows() != n)
    throw ValidationError("crystal " + c.id + ": atom_features row count != n");
  if (c.edge_features.size() != 0 &&
      c.edge_features.rows() != static_cast<Eigen::Index>(c.edges.size()))
    throw ValidationError("crystal " + c.id + ": edge_features row count != |edges|");
}

CrystalGraph crystal_from_json(const json& j) {
  CrystalGraph c;
  c.id = j.at("id").get<std::string>();
  c.atom_species = j.at("atom_species").get<std::vector<int>>();
  for (const auto& e : j.at("edges"))
    c.edges.emplace_back(e.at(0).get<int>(), e.at(1).get<int>());
  if (j.contains("atom_features")) {
    const auto rows = j["atom_features"].get<std::vector<std::vector<double>>>();
    if (!rows.empty()) {
      c.atom_features.resize(static_cast<Eigen::Index>(rows.size()),
                             static_cast<Eigen::Index>(rows[0].size()));
      for (std::size_t r = 0; r < rows.size(); ++r)
        for (std::size_t k = 0; k < rows[r].size(); ++k)
          c.atom_features(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(k)) =
              rows[r][k];
    }
  }
  if (j.contains("bond_lengths"))
    c.bond_lengths = j["bond_lengths"].get<std::vector<double>>();
  if (j.contains("edge_features")) {
    const auto rows = j["edge_features"].get<std::vector<std::vector<double>>>();
    if (!rows.empty()) {
      c.edge_features.resize(static_cast<Eigen::Index>(rows.size()),
                             static_cast<Eigen::Index>(rows[0].size()));
      for (std::size_t r = 0; r < rows.size(); ++r)
        for (std::size_t k = 0; k < rows[r].size(); ++k)
          c.edge_features(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(k)) =
              rows[r][k];
    }
  }
  if (j.contains("dos")) {
    const auto dos = j["dos"].get<std::vector<double>>();
    c.dos = Eigen::Map<const Eigen::VectorXd>(dos.data(), static_cast<Eigen::Index>(dos.size()));
  }
  c.n_species_kinds = j.at("n_species_kinds").get<int>();
  c.crystal_system = crystal_system_from_string(j.at("crystal_system").get<std::string>());
  c.is_magnetic = j.at("is_magnetic").get<bool>();
  if (j.contains("fermi_target")) c.fermi_target = j["fermi_target"].get<double>();
  return c;
}

json crystal_to_json(const CrystalGraph& c) {
  json j;
  j["id"] = c.id;
  j["atom_species"] = c.atom_species;
  json edges = json::array();
  for (const auto& [a, b] : c.edges) edges.push_back({a, b});
  j["edges"] = edges;
  if (c.atom_features.size() != 0) {
    json rows = json::array();
    for (Eigen::Index r = 0; r < c.atom_features.rows(); ++r) {
      json row = json::array();
      for (Eigen::Index k = 0; k < c.atom_features.cols(); ++k)
        row.push_back(c.atom_features(r, k));
      rows.push_back(row);
    }
    j["atom_features"] = rows;
  }
  if (!c.bond_lengths.empty()) j["bond_lengths"] = c.bond_lengths;
  if (c.edge_features.size() != 0) {
    json rows = json::array();
    for (Eigen::Index r = 0; r < c.edge_features.rows(); ++r) {
      json row = json::array();
      for (Eigen::Index k = 0; k < c.edge_features.cols(); ++k)
        row.push_back(c.edge_features(r, k));
      rows.push_back(row);
    }
    j["edge_features"] = rows;
  }
  j["dos"] = std::vector<double>(c.dos.data(), c.dos.data() + c.dos.size());
  j["n_species_kinds"] = c.n_species_kinds;
  j["crystal_system"] = to_string(c.crystal_system);
  j["is_magnetic"] = c.is_magnetic;
  if (c.fermi_target) j["fermi_target"] = *c.fermi_target;
  return j;
}

}  // namespace

Dataset load_dataset(const std::string& path, const EnergyGrid& grid, LoadReport* report) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open dataset file " + path);
  Dataset ds;
  ds.grid = grid;
  LoadReport rep;
  std::string line;
  std::size_t lineno = 0;
  std::set<std::string> ids;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw ValidationError("line " + std::to_string(lineno) + ": malformed JSON: " + e.what());
    }
    CrystalGraph c;
    try {
      c = crystal_from_json(j);
    } catch (const json::exception& e) {
      throw ValidationError("line " + std::to_string(lineno) + ": " + e.what());
    }
    if (c.is_magnetic) {
      ++rep.dropped_magnetic;
      continue;
    }
    validate_crystal(c, grid.m);
    if (c.dos.size() == 0) c.dos = Eigen::VectorXd::Zero(grid.m);  // unlabeled input
    if (!ids.insert(c.id).second)
      throw ValidationError("duplicate crystal id " + c.id);
    ds.crystals.push_back(std::move(c));
  }
  rep.loaded = ds.crystals.size();
  if (report) *report = rep;
  return ds;
}

void save_dataset(const Dataset& dataset, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write dataset file " + path);
  for (const auto& c : dataset.crystals) out << crystal_to_json(c).dump() << "\n";
}

namespace {

SplitResult split_pool(const Dataset& dataset, const std::vector<std::size_t>& train_idx,
                       std::vector<std::size_t> pool, std::uint64_t seed,
                       std::size_t excluded) {
  std::mt19937_64 rng(seed);
  std::shuffle(pool.begin(), pool.end(), rng);
  const std::size_t half = pool.size() / 2;
  SplitResult r;
  r.train.grid = r.valid.grid = r.test.grid = dataset.grid;
  r.excluded = excluded;
  for (auto i : train_idx) r.train.crystals.push_back(dataset.crystals[i]);
  for (std::size_t k = 0; k < pool.size(); ++k)
    (k < half ? r.valid : r.test).crystals.push_back(dataset.crystals[pool[k]]);
  if (r.train.crystals.empty() || r.valid.crystals.empty() || r.test.crystals.empty())
    throw ValidationError("split produced an empty partition");
  return r;
}

}  // namespace

SplitResult split(const Dataset& dataset, const SplitSpec& spec) {
  if (dataset.crystals.empty()) throw ValidationError("cannot split an empty dataset");
  const double fsum = spec.fractions[0] + spec.fractions[1] + spec.fractions[2];
  if (std::abs(fsum - 1.0) > 1e-9 || spec.fractions[0] <= 0 ||
      spec.fractions[1] <= 0 || spec.fractions[2] <= 0)
    throw ValidationError("split fractions must be positive and sum to 1");

  const std::size_t n = dataset.crystals.size();
  switch (spec.strategy) {
    case SplitStrategy::random_split: {
      std::vector<std::size_t> idx(n);
      std::iota(idx.begin(), idx.end(), 0u);
      std::mt19937_64 rng(spec.seed);
      std::shuffle(idx.begin(), idx.end(), rng);
      const auto b1 = static_cast<std::size_t>(std::llround(spec.fractions[0] * n));
      const auto b2 = static_cast<std::size_t>(
          std::llround((spec.fractions[0] + spec.fractions[1]) * n));
      SplitResult r;
      r.train.grid = r.valid.grid = r.test.grid = dataset.grid;
      for (std::size_t k = 0; k < n; ++k) {
        const auto& c = dataset.crystals[idx[k]];
        (k < b1 ? r.train : k < b2 ? r.valid : r.test).crystals.push_back(c);
      }
      if (r.train.crystals.empty() || r.valid.crystals.empty() || r.test.crystals.empty())
        throw ValidationError("split produced an empty partition");
      return r;
    }
    case SplitStrategy::by_species_count: {
      std::vector<std::size_t> train_idx, pool;
      std::size_t excluded = 0;
      for (std::size_t i = 0; i < n; ++i) {
        const int k = dataset.crystals[i].n_species_kinds;
        if (k == 2 || k == 3)
          train_idx.push_back(i);
        else if (k == 1 || k == 4 || k == 5)
          pool.push_back(i);
        else
          ++excluded;
      }
      return split_pool(dataset, train_idx, std::move(pool), spec.seed, excluded);
    }
    case SplitStrategy::by_crystal_system: {
      std::vector<std::size_t> train_idx, pool;
      for (std::size_t i = 0; i < n; ++i) {
        const CrystalSystem s = dataset.crystals[i].crystal_system;
        if (s == CrystalSystem::monoclinic || s == CrystalSystem::triclinic)
          pool.push_back(i);
        else
          train_idx.push_back(i);
      }
      return split_pool(dataset, train_idx, std::move(pool), spec.seed, 0);
    }
  }
  throw ValidationError("unknown split strategy");
}

Dataset generate_synthetic(int n_crystals, std::uint64_t seed, const EnergyGrid& grid) {
  if (n_crystals < 1) throw ValidationError("generate_synthetic requires n_crystals >= 1");
  static constexpr std::array<double, 4> kSpeciesCenter = {-3.0, -1.0, 1.0, 3.0};
  static constexpr double kWidth = 0.4;
  const FeaturizerConfig feat_cfg;

  std::mt19937_64 rng(seed);
  Dataset ds;
  ds.grid = grid;
  for (int c = 0; c < n_crystals; ++c) {
    CrystalGraph g;
    {
      std::ostringstream oss;
      oss << "syn-" << seed << "-" << c;
      g.id = oss.str();
    }
    const int n = static_cast<int>(std::uniform_int_distribution<int>(2, 10)(rng));
    g.atom_species.resize(n);
    for (int i = 0; i < n; ++i)
      g.atom_species[i] = std::uniform_int_distribution<int>(0, 3)(rng);

    // random spanning tree plus a few extra bonds keeps the graph connected
    std::set<std::pair<int, int>> bonds;
    for (int i = 1; i < n; ++i)
      bonds.insert({std::uniform_int_distribution<int>(0, i - 1)(rng), i});
    const int extra = std::uniform_int_distribution<int>(0, n - 1)(rng);
    for (int t = 0; t < extra; ++t) {
      int a = std::uniform_int_distribution<int>(0, n - 1)(rng);
      int b = std::uniform_int_distribution<int>(0, n - 1)(rng);
      if (a == b) continue;
      bonds.insert({std::min(a, b), std::max(a, b)});
    }
    for (const auto& [a, b] : bonds) {
      const double len = std::uniform_real_distribution<double>(1.0, 3.0)(rng);
      g.edges.emplace_back(a, b);
      g.bond_lengths.push_back(len);
      g.edges.emplace_back(b, a);
      g.bond_lengths.push_back(len);
    }

    std::vector<int> degree(n, 0);
    for (const auto& [a, b] : g.edges) degree[a]++;

    g.dos = Eigen::VectorXd::Zero(grid.m);
    for (int i = 0; i < n; ++i) {
      const double mu = kSpeciesCenter[static_cast<std::size_t>(g.atom_species[i])] +
                        0.1 * degree[i];
      for (int k = 0; k < grid.m; ++k) {
        const double z = (grid.values[k] - mu) / kWidth;
        g.dos[k] += std::exp(-0.5 * z * z);
      }
    }
    g.dos /= g.dos.maxCoeff();

    const double total = g.dos.sum();
    double cum = 0.0;
    for (int k = 0; k < grid.m; ++k) {
      cum += g.dos[k];
      if (cum > 0.5 * total) {
        g.fermi_target = grid.values[k];
        break;
      }
    }

    std::set<int> kinds(g.atom_species.begin(), g.atom_species.end());
    g.n_species_kinds = static_cast<int>(kinds.size());
    g.crystal_system = static_cast<CrystalSystem>(c % 7);
    g.is_magnetic = false;
    ds.crystals.push_back(std::move(g));
  }
  apply_default_features(ds, feat_cfg);
  return ds;
}

PrepReport prepare(Dataset& dataset, const SmootherConfig& cfg) {
  PrepReport rep;
  for (auto& c : dataset.crystals) {
    bool degenerate = false;
    Eigen::VectorXd v = normalize_dos(c.dos, &degenerate);
    v = savgol_smooth(v, cfg);
    c.dos = v.cwiseMax(0.0).cwiseMin(1.0);
    c.degenerate_spectrum = degenerate;
    if (degenerate) rep.degenerate_ids.push_back(c.id);
  }
  return rep;
}

}  // namespace dostx
