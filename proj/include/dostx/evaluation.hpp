#pragma once

#include <map>
#include <string>

#include "dostx/crystal.hpp"
#include "dostx/training.hpp"

namespace dostx {

struct Metrics {
  double rmse = 0.0;
  double mae = 0.0;
};

// Per-crystal RMSE/MAE over the grid, averaged over crystals.
Metrics metrics(const Matrix& pred, const Matrix& target);

enum class FamilyKey { species_count, crystal_system };

// Metrics grouped by n_species_kinds or crystal_system.
std::map<std::string, Metrics> family_breakdown(const Dataset& data, const Matrix& pred,
                                                FamilyKey key);

struct MetricReport {
  Metrics overall;
  std::map<std::string, Metrics> per_family;
  double fermi_rmse = -1.0;  // < 0 when not evaluated
  std::size_t n_crystals = 0;
};

struct ProbeConfig {
  int hidden = 256;
  TrainConfig train;
};

// Four-layer MLP mapping a DOS curve to a Fermi-energy estimate,
// trained on ground-truth spectra and then frozen.
struct FermiProbe {
  Mlp net;  // M -> h -> h -> h -> 1
};

FermiProbe fermi_probe_train(const Matrix& dos_true, const Vector& fermi,
                             const ProbeConfig& cfg);

Vector fermi_predict(const FermiProbe& probe, const Matrix& dos);

// RMSE (eV) of the frozen probe applied to predicted spectra.
double fermi_eval(const FermiProbe& probe, const Matrix& dos_pred,
                  const Vector& fermi_true);

Matrix predict_all(SpectrumModel& model, const Dataset& data);
Matrix targets_of(const Dataset& data);
Vector fermi_targets_of(const Dataset& data);

}  // namespace dostx
