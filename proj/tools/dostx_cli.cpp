// dostx command line: synth | prepare | split | train | evaluate | predict.
//
// Exit codes: 0 success, 1 usage error, 2 data validation error,
// 3 numerical failure. Errors print one JSON line on stderr.
//
// Config precedence: CLI flag > --config JSON file > built-in default.
// DOS_SEED overrides the default seed when no other source sets it.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "dostx/crystal.hpp"
#include "dostx/errors.hpp"
#include "dostx/evaluation.hpp"
#include "dostx/model.hpp"
#include "dostx/prep.hpp"
#include "dostx/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace dostx;

namespace {

// FNV-1a-64 over the canonical (key-sorted) dump of the resolved config.
std::string config_hash(const json& cfg) {
  const std::string s = cfg.dump();
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

json load_config_file(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open config file " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ValidationError("config file " + path + ": " + e.what());
  }
  if (!j.is_object()) throw ValidationError("config file " + path + ": not a JSON object");
  return j;
}

// CLI flag > config file > default (the variable already holds CLI value or default).
template <typename T>
void resolve(const CLI::Option* opt, const json& cfg, const char* key, T& value) {
  if (opt->count() > 0) return;
  if (cfg.contains(key)) value = cfg[key].get<T>();
}

std::uint64_t default_seed() {
  if (const char* env = std::getenv("DOS_SEED")) return std::strtoull(env, nullptr, 10);
  return 0;
}

void write_json(const std::string& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write " + path);
  out << j.dump(2) << "\n";
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw ValidationError("cannot create directory " + dir + ": " + ec.message());
}

json grid_json(const EnergyGrid& g) {
  return {{"e_min", g.e_min}, {"e_max", g.e_max}, {"m", g.m}};
}

// Shared --e-min/--e-max/--grid-points group, resolved against the config file.
struct GridFlags {
  double e_min = -5.0, e_max = 5.0;
  int m = 201;
  CLI::Option *o_min = nullptr, *o_max = nullptr, *o_m = nullptr;

  void attach(CLI::App* app) {
    o_min = app->add_option("--e-min", e_min, "grid lower edge (eV)");
    o_max = app->add_option("--e-max", e_max, "grid upper edge (eV)");
    o_m = app->add_option("--grid-points", m, "number of grid points");
  }
  EnergyGrid resolved(const json& cfg) {
    resolve(o_min, cfg, "e-min", e_min);
    resolve(o_max, cfg, "e-max", e_max);
    resolve(o_m, cfg, "grid-points", m);
    return make_grid(e_min, e_max, m);
  }
};

struct ModelFlags {
  std::string model = "dostransformer", energy = "on";
  int d = 256, gnn_layers = 3, attn_layers = 2;
  double alpha_init = 1.0;
  CLI::Option *o_model = nullptr, *o_energy = nullptr, *o_d = nullptr, *o_gnn = nullptr,
              *o_attn = nullptr, *o_alpha = nullptr;

  void attach(CLI::App* app) {
    o_model = app->add_option("--model", model, "mlp | gn | dostransformer");
    o_energy = app->add_option("--energy", energy, "energy-embedding head: on | off");
    o_d = app->add_option("--d", d, "hidden width");
    o_gnn = app->add_option("--gnn-layers", gnn_layers, "message-passing depth");
    o_attn = app->add_option("--attn-layers", attn_layers, "cross-attention depth");
    o_alpha = app->add_option("--alpha-init", alpha_init, "initial pooled-offset scale");
  }
  ModelConfig resolved(const json& cfg, int m, std::uint64_t seed) {
    resolve(o_model, cfg, "model", model);
    resolve(o_energy, cfg, "energy", energy);
    resolve(o_d, cfg, "d", d);
    resolve(o_gnn, cfg, "gnn-layers", gnn_layers);
    resolve(o_attn, cfg, "attn-layers", attn_layers);
    resolve(o_alpha, cfg, "alpha-init", alpha_init);
    ModelConfig base;
    base.d = d;
    base.gnn_layers = gnn_layers;
    base.attn_layers = attn_layers;
    base.alpha_init = alpha_init;
    base.m = m;
    base.seed = seed;
    return parse_model_kind(model, energy, base);
  }
  json as_json(const ModelConfig& mc) const {
    return {{"model", model},           {"energy", energy},
            {"d", mc.d},                {"gnn-layers", mc.gnn_layers},
            {"attn-layers", mc.attn_layers}, {"alpha-init", mc.alpha_init},
            {"f", mc.f},                {"fe", mc.fe}};
  }
};

struct TrainFlags {
  double lr = 1e-4, weight_decay = 0.01;
  int batch_size = 8, max_epochs = 1000, patience = 50;
  long max_steps = -1;
  std::string loss_mode = "paper_pointwise";
  CLI::Option *o_lr = nullptr, *o_bs = nullptr, *o_ep = nullptr, *o_pat = nullptr,
              *o_wd = nullptr, *o_ms = nullptr, *o_loss = nullptr;

  void attach(CLI::App* app) {
    o_lr = app->add_option("--lr", lr, "learning rate");
    o_bs = app->add_option("--batch-size", batch_size, "mini-batch size");
    o_ep = app->add_option("--max-epochs", max_epochs, "epoch cap");
    o_pat = app->add_option("--patience", patience, "early-stopping patience");
    o_wd = app->add_option("--weight-decay", weight_decay, "decoupled weight decay");
    o_ms = app->add_option("--max-steps", max_steps, "optimizer step cap (-1 = off)");
    o_loss = app->add_option("--loss-mode", loss_mode, "paper_pointwise | batch_rmse");
  }
  TrainConfig resolved(const json& cfg, std::uint64_t seed) {
    resolve(o_lr, cfg, "lr", lr);
    resolve(o_bs, cfg, "batch-size", batch_size);
    resolve(o_ep, cfg, "max-epochs", max_epochs);
    resolve(o_pat, cfg, "patience", patience);
    resolve(o_wd, cfg, "weight-decay", weight_decay);
    resolve(o_ms, cfg, "max-steps", max_steps);
    resolve(o_loss, cfg, "loss-mode", loss_mode);
    TrainConfig tc;
    tc.lr = lr;
    tc.batch_size = batch_size;
    tc.max_epochs = max_epochs;
    tc.patience = patience;
    tc.weight_decay = weight_decay;
    tc.max_steps = max_steps;
    tc.seed = seed;
    if (loss_mode == "paper_pointwise")
      tc.loss_mode = LossMode::paper_pointwise;
    else if (loss_mode == "batch_rmse")
      tc.loss_mode = LossMode::batch_rmse;
    else
      throw CLI::ValidationError("--loss-mode", "unknown loss mode " + loss_mode);
    return tc;
  }
  json as_json(const TrainConfig& tc) const {
    return {{"lr", tc.lr},
            {"batch-size", tc.batch_size},
            {"max-epochs", tc.max_epochs},
            {"patience", tc.patience},
            {"weight-decay", tc.weight_decay},
            {"max-steps", tc.max_steps},
            {"loss-mode", loss_mode}};
  }
};

void write_curves(const std::string& dir, const Dataset& data, const Matrix& pred,
                  bool with_true) {
  ensure_dir(dir);
  char buf[96];
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& c = data.crystals[i];
    std::ofstream out(dir + "/" + c.id + ".csv");
    if (!out) throw ValidationError("cannot write curve for crystal " + c.id);
    out << (with_true ? "energy_eV,dos_pred,dos_true\n" : "energy_eV,dos_pred\n");
    for (int j = 0; j < data.grid.m; ++j) {
      if (with_true)
        std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%.17g\n", data.grid.values[j],
                      pred(static_cast<Eigen::Index>(i), j), c.dos(j));
      else
        std::snprintf(buf, sizeof(buf), "%.17g,%.17g\n", data.grid.values[j],
                      pred(static_cast<Eigen::Index>(i), j));
      out << buf;
    }
  }
}

// Rewrites a checkpoint with the run's config_hash stamped in; extra keys
// are ignored by load_checkpoint.
void stamp_checkpoint(const std::string& path, const std::string& hash) {
  std::ifstream in(path);
  json j;
  in >> j;
  in.close();
  j["config_hash"] = hash;
  std::ofstream out(path);
  out << j.dump() << "\n";
}

ModelConfig model_config_from_manifest(const json& manifest, std::string* model,
                                       std::string* energy) {
  const json& m = manifest.at("model");
  ModelConfig base;
  base.d = m.at("d").get<int>();
  base.gnn_layers = m.at("gnn-layers").get<int>();
  base.attn_layers = m.at("attn-layers").get<int>();
  base.alpha_init = m.at("alpha-init").get<double>();
  base.f = m.at("f").get<int>();
  base.fe = m.at("fe").get<int>();
  const json& g = manifest.at("grid");
  base.m = g.at("m").get<int>();
  *model = m.at("model").get<std::string>();
  *energy = m.at("energy").get<std::string>();
  return parse_model_kind(*model, *energy, base);
}

int run(int argc, char** argv) {
  CLI::App app{"density-of-states spectrum pipeline"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  app.add_option("--config", config_path, "JSON config file (flags override it)")
      ->expected(1);
  std::uint64_t seed = default_seed();
  auto* o_seed = app.add_option("--seed", seed, "RNG seed (default from DOS_SEED or 0)");

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic JSONL dataset");
  int synth_n = 0;
  std::string synth_out;
  synth->add_option("--n", synth_n, "number of crystals")->required();
  synth->add_option("--out", synth_out, "output JSONL path")->required();
  GridFlags synth_grid;
  synth_grid.attach(synth);

  // prepare
  auto* prep_cmd = app.add_subcommand("prepare", "normalize + smooth spectra");
  std::string prep_in, prep_out;
  int window = 17, polyorder = 1;
  prep_cmd->add_option("--in", prep_in, "input JSONL")->required();
  prep_cmd->add_option("--out", prep_out, "output JSONL")->required();
  auto* o_window = prep_cmd->add_option("--window", window, "smoothing window length");
  auto* o_poly = prep_cmd->add_option("--polyorder", polyorder, "smoothing poly order");
  GridFlags prep_grid;
  prep_grid.attach(prep_cmd);

  // split
  auto* split_cmd = app.add_subcommand("split", "partition into train/valid/test");
  std::string split_in, split_out, strategy = "random";
  std::vector<double> fractions = {0.8, 0.1, 0.1};
  split_cmd->add_option("--in", split_in, "input JSONL")->required();
  split_cmd->add_option("--out", split_out, "output directory")->required();
  auto* o_strategy = split_cmd->add_option(
      "--strategy", strategy, "random | by_species_count | by_crystal_system");
  auto* o_fractions = split_cmd
                          ->add_option("--fractions", fractions,
                                       "train/valid/test fractions (random strategy)")
                          ->expected(3);
  GridFlags split_grid;
  split_grid.attach(split_cmd);

  // train
  auto* train_cmd = app.add_subcommand("train", "fit a model on a split directory");
  std::string train_data, train_out;
  train_cmd->add_option("--data", train_data, "split directory (train.jsonl, valid.jsonl)")
      ->required();
  train_cmd->add_option("--out", train_out, "output directory")->required();
  GridFlags train_grid;
  train_grid.attach(train_cmd);
  ModelFlags train_model;
  train_model.attach(train_cmd);
  TrainFlags train_flags;
  train_flags.attach(train_cmd);

  // evaluate
  auto* eval_cmd = app.add_subcommand("evaluate", "score a checkpoint on a dataset");
  std::string eval_data, eval_ckpt, eval_out, eval_family = "species";
  std::string probe_data;
  eval_cmd->add_option("--data", eval_data, "JSONL to evaluate")->required();
  eval_cmd->add_option("--ckpt", eval_ckpt, "training output directory")->required();
  eval_cmd->add_option("--out", eval_out, "output directory")->required();
  eval_cmd->add_option("--family", eval_family, "breakdown key: species | system");
  eval_cmd->add_option("--probe-data", probe_data,
                       "JSONL with fermi targets for probe training (enables fermi_rmse)");

  // predict
  auto* pred_cmd = app.add_subcommand("predict", "emit predicted curves for inputs");
  std::string pred_data, pred_ckpt, pred_out;
  pred_cmd->add_option("--data", pred_data, "JSONL inputs (dos optional)")->required();
  pred_cmd->add_option("--ckpt", pred_ckpt, "training output directory")->required();
  pred_cmd->add_option("--out", pred_out, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    std::cout << app.help();
    return 0;
  }

  const json file_cfg = load_config_file(config_path);
  resolve(o_seed, file_cfg, "seed", seed);

  if (*synth) {
    if (synth_n <= 0) throw CLI::ValidationError("--n", "must be positive");
    const EnergyGrid grid = synth_grid.resolved(file_cfg);
    json cfg = {{"command", "synth"}, {"n", synth_n}, {"seed", seed}, {"grid", grid_json(grid)}};
    const std::string hash = config_hash(cfg);
    Dataset data = generate_synthetic(synth_n, seed, grid);
    save_dataset(data, synth_out);
    cfg["config_hash"] = hash;
    write_json(synth_out + ".manifest.json", cfg);
    std::cout << "synth: wrote " << data.size() << " crystals to " << synth_out
              << " (config_hash " << hash << ")\n";
  } else if (*prep_cmd) {
    const EnergyGrid grid = prep_grid.resolved(file_cfg);
    resolve(o_window, file_cfg, "window", window);
    resolve(o_poly, file_cfg, "polyorder", polyorder);
    json cfg = {{"command", "prepare"},
                {"window", window},
                {"polyorder", polyorder},
                {"grid", grid_json(grid)}};
    const std::string hash = config_hash(cfg);
    LoadReport rep;
    Dataset data = load_dataset(prep_in, grid, &rep);
    const PrepReport pr = prepare(data, SmootherConfig{window, polyorder});
    save_dataset(data, prep_out);
    cfg["degenerate_ids"] = pr.degenerate_ids;
    cfg["dropped_magnetic"] = rep.dropped_magnetic;
    cfg["config_hash"] = hash;
    write_json(prep_out + ".manifest.json", cfg);
    std::cout << "prepare: " << data.size() << " crystals ("
              << pr.degenerate_ids.size() << " degenerate, " << rep.dropped_magnetic
              << " magnetic dropped), config_hash " << hash << "\n";
  } else if (*split_cmd) {
    const EnergyGrid grid = split_grid.resolved(file_cfg);
    resolve(o_strategy, file_cfg, "strategy", strategy);
    if (o_fractions->count() == 0 && file_cfg.contains("fractions"))
      fractions = file_cfg["fractions"].get<std::vector<double>>();
    SplitSpec spec;
    spec.seed = seed;
    if (strategy == "random")
      spec.strategy = SplitStrategy::random_split;
    else if (strategy == "by_species_count")
      spec.strategy = SplitStrategy::by_species_count;
    else if (strategy == "by_crystal_system")
      spec.strategy = SplitStrategy::by_crystal_system;
    else
      throw CLI::ValidationError("--strategy", "unknown strategy " + strategy);
    spec.fractions = {fractions[0], fractions[1], fractions[2]};
    json cfg = {{"command", "split"},
                {"strategy", strategy},
                {"fractions", fractions},
                {"seed", seed},
                {"grid", grid_json(grid)}};
    const std::string hash = config_hash(cfg);
    Dataset data = load_dataset(split_in, grid);
    const SplitResult r = split(data, spec);
    ensure_dir(split_out);
    save_dataset(r.train, split_out + "/train.jsonl");
    save_dataset(r.valid, split_out + "/valid.jsonl");
    save_dataset(r.test, split_out + "/test.jsonl");
    cfg["counts"] = {{"train", r.train.size()},
                     {"valid", r.valid.size()},
                     {"test", r.test.size()},
                     {"excluded", r.excluded}};
    cfg["config_hash"] = hash;
    write_json(split_out + "/manifest.json", cfg);
    std::cout << "split: train " << r.train.size() << " / valid " << r.valid.size()
              << " / test " << r.test.size() << " (excluded " << r.excluded
              << "), config_hash " << hash << "\n";
  } else if (*train_cmd) {
    const EnergyGrid grid = train_grid.resolved(file_cfg);
    const ModelConfig mc = train_model.resolved(file_cfg, grid.m, seed);
    const TrainConfig tc = train_flags.resolved(file_cfg, seed);
    json cfg = {{"command", "train"},
                {"seed", seed},
                {"grid", grid_json(grid)},
                {"model", train_model.as_json(mc)},
                {"train", train_flags.as_json(tc)}};
    const std::string hash = config_hash(cfg);
    Dataset train_set = load_dataset(train_data + "/train.jsonl", grid);
    Dataset valid_set = load_dataset(train_data + "/valid.jsonl", grid);
    apply_default_features(train_set, FeaturizerConfig{});
    apply_default_features(valid_set, FeaturizerConfig{});
    SpectrumModel model(mc);
    const FitResult fr = fit(model, train_set, valid_set, tc);
    ensure_dir(train_out);
    save_checkpoint(train_out + "/checkpoint.json", model.tensors());
    stamp_checkpoint(train_out + "/checkpoint.json", hash);
    save_history(train_out + "/history.csv", fr.history);
    cfg["config_hash"] = hash;
    cfg["best_epoch"] = fr.best_epoch;
    cfg["best_valid"] = fr.best_valid;
    cfg["steps"] = fr.steps;
    cfg["n_params"] = count_params(mc);
    write_json(train_out + "/manifest.json", cfg);
    std::cout << "train: " << fr.history.size() << " epochs, best valid "
              << fr.best_valid << " at epoch " << fr.best_epoch << ", config_hash "
              << hash << "\n";
  } else if (*eval_cmd) {
    std::ifstream mi(eval_ckpt + "/manifest.json");
    if (!mi) throw ValidationError("cannot open manifest " + eval_ckpt + "/manifest.json");
    json manifest;
    mi >> manifest;
    const json& g = manifest.at("grid");
    const EnergyGrid grid =
        make_grid(g.at("e_min").get<double>(), g.at("e_max").get<double>(),
                  g.at("m").get<int>());
    std::string model_name, energy_name;
    const ModelConfig mc = model_config_from_manifest(manifest, &model_name, &energy_name);
    SpectrumModel model(mc);
    load_checkpoint(eval_ckpt + "/checkpoint.json", model.tensors());
    Dataset data = load_dataset(eval_data, grid);
    apply_default_features(data, FeaturizerConfig{});
    json cfg = {{"command", "evaluate"},
                {"seed", seed},
                {"data", fs::path(eval_data).filename().string()},
                {"family", eval_family},
                {"train_config_hash", manifest.at("config_hash").get<std::string>()}};
    const std::string hash = config_hash(cfg);
    const Matrix pred = predict_all(model, data);
    const Metrics overall = metrics(pred, targets_of(data));
    FamilyKey key;
    if (eval_family == "species")
      key = FamilyKey::species_count;
    else if (eval_family == "system")
      key = FamilyKey::crystal_system;
    else
      throw CLI::ValidationError("--family", "unknown family key " + eval_family);
    json report = {{"rmse", overall.rmse},
                   {"mae", overall.mae},
                   {"n_crystals", data.size()},
                   {"config_hash", hash}};
    json fam = json::object();
    for (const auto& [name, m] : family_breakdown(data, pred, key))
      fam[name] = {{"rmse", m.rmse}, {"mae", m.mae}};
    report["per_family"] = fam;
    if (!probe_data.empty()) {
      Dataset probe_set = load_dataset(probe_data, grid);
      ProbeConfig pc;
      pc.train.seed = seed;
      const FermiProbe probe = fermi_probe_train(targets_of(probe_set),
                                                 fermi_targets_of(probe_set), pc);
      report["fermi_rmse"] = fermi_eval(probe, pred, fermi_targets_of(data));
    } else {
      report["fermi_rmse"] = nullptr;
    }
    ensure_dir(eval_out);
    write_json(eval_out + "/report.json", report);
    write_curves(eval_out + "/curves", data, pred, /*with_true=*/true);
    cfg["config_hash"] = hash;
    write_json(eval_out + "/manifest.json", cfg);
    std::cout << "evaluate: rmse " << overall.rmse << " mae " << overall.mae << " on "
              << data.size() << " crystals, config_hash " << hash << "\n";
  } else if (*pred_cmd) {
    std::ifstream mi(pred_ckpt + "/manifest.json");
    if (!mi) throw ValidationError("cannot open manifest " + pred_ckpt + "/manifest.json");
    json manifest;
    mi >> manifest;
    const json& g = manifest.at("grid");
    const EnergyGrid grid =
        make_grid(g.at("e_min").get<double>(), g.at("e_max").get<double>(),
                  g.at("m").get<int>());
    std::string model_name, energy_name;
    const ModelConfig mc = model_config_from_manifest(manifest, &model_name, &energy_name);
    SpectrumModel model(mc);
    load_checkpoint(pred_ckpt + "/checkpoint.json", model.tensors());
    Dataset data = load_dataset(pred_data, grid);
    apply_default_features(data, FeaturizerConfig{});
    json cfg = {{"command", "predict"},
                {"data", fs::path(pred_data).filename().string()},
                {"train_config_hash", manifest.at("config_hash").get<std::string>()}};
    const std::string hash = config_hash(cfg);
    const Matrix pred = predict_all(model, data);
    ensure_dir(pred_out);
    write_curves(pred_out + "/curves", data, pred, /*with_true=*/false);
    cfg["config_hash"] = hash;
    cfg["n_crystals"] = data.size();
    write_json(pred_out + "/manifest.json", cfg);
    std::cout << "predict: wrote " << data.size() << " curves, config_hash " << hash
              << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const CLI::ParseError& e) {
    std::cerr << json{{"error", "usage"}, {"message", e.what()}}.dump() << "\n";
    return 1;
  } catch (const NumericalError& e) {
    std::cerr << json{{"error", "numerical"}, {"message", e.what()}}.dump() << "\n";
    return 3;
  } catch (const ValidationError& e) {
    std::cerr << json{{"error", "validation"}, {"message", e.what()}}.dump() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << json{{"error", "validation"}, {"message", e.what()}}.dump() << "\n";
    return 2;
  }
}
