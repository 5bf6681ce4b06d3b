#pragma once

#include <Eigen/Dense>
#include <array>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "dostx/prep.hpp"

namespace dostx {

enum class CrystalSystem {
  cubic,
  hexagonal,
  tetragonal,
  trigonal,
  orthorhombic,
  monoclinic,
  triclinic,
};

const char* to_string(CrystalSystem s);
CrystalSystem crystal_system_from_string(const std::string& s);

// One material: atoms as nodes, bonds as directed edge pairs, a DOS
// target on the shared energy grid, plus the metadata the OOD split
// protocols key on.
struct CrystalGraph {
  std::string id;
  std::vector<int> atom_species;
  Eigen::MatrixXd atom_features;                  // n x F
  std::vector<std::pair<int, int>> edges;         // directed, both orientations present
  std::vector<double> bond_lengths;               // per edge, empty if features given
  Eigen::MatrixXd edge_features;                  // |edges| x Fe
  Eigen::VectorXd dos;                            // length M
  int n_species_kinds = 0;
  CrystalSystem crystal_system = CrystalSystem::cubic;
  bool is_magnetic = false;
  std::optional<double> fermi_target;
  bool degenerate_spectrum = false;

  int n_atoms() const { return static_cast<int>(atom_species.size()); }
};

struct Dataset {
  std::vector<CrystalGraph> crystals;
  EnergyGrid grid;

  std::size_t size() const { return crystals.size(); }
};

struct LoadReport {
  std::size_t loaded = 0;
  std::size_t dropped_magnetic = 0;
};

struct FeaturizerConfig {
  int num_species = 4;
  int rbf_centers = 16;
  double rbf_min = 0.0;    // angstrom
  double rbf_max = 5.0;
  double rbf_width = 0.5;
};

// One-hot species featurizer.
Eigen::VectorXd featurize(int species, const FeaturizerConfig& cfg);

// Gaussian radial basis expansion of a scalar bond length.
Eigen::VectorXd bond_rbf(double length, const FeaturizerConfig& cfg);

// Fill in atom_features / edge_features for any crystal that lacks
// them, from species one-hots and bond-length RBFs.
void apply_default_features(Dataset& dataset, const FeaturizerConfig& cfg);

// JSONL ingestion; magnetic crystals are dropped and counted.
Dataset load_dataset(const std::string& path, const EnergyGrid& grid,
                     LoadReport* report = nullptr);
void save_dataset(const Dataset& dataset, const std::string& path);

enum class SplitStrategy { random_split, by_species_count, by_crystal_system };

struct SplitSpec {
  SplitStrategy strategy = SplitStrategy::random_split;
  std::array<double, 3> fractions = {0.8, 0.1, 0.1};
  std::uint64_t seed = 0;
};

struct SplitResult {
  Dataset train, valid, test;
  std::size_t excluded = 0;  // species counts outside {1..5} under by_species_count
};

SplitResult split(const Dataset& dataset, const SplitSpec& spec);

// Desk-scale surrogate generator: small random connected bond graphs
// over 4 species; DOS is a sum of per-atom Gaussians whose centers
// shift with node degree, scaled so the maximum is exactly 1.
Dataset generate_synthetic(int n_crystals, std::uint64_t seed, const EnergyGrid& grid);

struct PrepReport {
  std::vector<std::string> degenerate_ids;
};

// Normalize to [0,1], Savitzky-Golay smooth, clip back to [0,1].
PrepReport prepare(Dataset& dataset, const SmootherConfig& cfg);

}  // namespace dostx
