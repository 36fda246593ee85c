#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "reclab/baselines.hpp"
#include "reclab/siamese.hpp"
#include "reclab/split.hpp"
#include "reclab/synth.hpp"
#include "reclab/tirr.hpp"

namespace reclab {

struct SiameseStageConfig {
  LossConfig loss;
  std::size_t epochs = 5;
  std::size_t batch_size = 64;
  std::uint64_t seed = 21;
  std::size_t triplets_per_side = 4000;
  std::size_t heldout_triplets = 1000;
};

struct TirrStageConfig {
  TirrSpec spec;
  TirrTrainConfig train;
};

/// Everything a pipeline run depends on. Every field has a default.
struct RunConfig {
  std::string output_dir = "run";
  WorldParams world;
  SamplerOptions sampler;
  std::size_t n_events = 40000;
  std::uint64_t event_seed = 7;
  SplitFractions split;
  std::uint64_t split_seed = 11;
  std::size_t history_cap = kHistoryCap;
  Tick history_max_age = kDefaultYearTicks;
  bool write_images = true;
  SiameseStageConfig siamese;
  TirrStageConfig tirr;
  LfrrConfig lfrr;
  double recon_alpha = 1.0;
  std::size_t imrec_anchors = 5;
  std::vector<std::string> models = {"tirr", "imrec_lite", "recon_lite", "lfrr_lite"};
  std::size_t projection_pairs = 1000;

  HistoryOptions history_options() const { return {history_cap, history_max_age, std::nullopt}; }
};

nlohmann::json to_json(const RunConfig& c);
/// Missing fields keep their defaults; unknown keys, wrong types and invalid values
/// raise ConfigError.
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::string& path);
void save_run_config(const RunConfig& c, const std::string& path);

}  // namespace reclab
