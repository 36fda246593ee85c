#include "reclab/config.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "reclab/error.hpp"

namespace reclab {

namespace {

const char* kind_name(LossKind k) { return k == LossKind::BCE ? "bce" : "contrastive"; }
const char* convention_name(ContrastiveConvention c) {
  return c == ContrastiveConvention::LikeIsSimilar ? "like_is_similar" : "like_is_label_one";
}

void reject_unknown(const nlohmann::json& j, std::initializer_list<const char*> keys, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  std::set<std::string> known(keys.begin(), keys.end());
  for (const auto& [k, v] : j.items()) {
    if (!known.count(k)) throw ConfigError("unknown config key '" + where + "." + k + "'");
  }
}

}  // namespace

nlohmann::json to_json(const RunConfig& c) {
  nlohmann::json j;
  j["output_dir"] = c.output_dir;
  j["world"] = to_json(c.world);
  j["sampler"] = to_json(c.sampler);
  j["n_events"] = c.n_events;
  j["event_seed"] = c.event_seed;
  j["split"] = {{"siamese", c.split.siamese}, {"match", c.split.match}, {"eval", c.split.eval}, {"seed", c.split_seed}};
  j["history"] = {{"cap", c.history_cap}, {"max_age", c.history_max_age}};
  j["write_images"] = c.write_images;
  j["siamese"] = {{"loss", kind_name(c.siamese.loss.kind)},
                  {"margin", c.siamese.loss.margin},
                  {"learning_rate", c.siamese.loss.learning_rate},
                  {"convention", convention_name(c.siamese.loss.convention)},
                  {"epochs", c.siamese.epochs},
                  {"batch_size", c.siamese.batch_size},
                  {"seed", c.siamese.seed},
                  {"triplets_per_side", c.siamese.triplets_per_side},
                  {"heldout_triplets", c.siamese.heldout_triplets}};
  j["tirr"] = {{"spec", to_json(c.tirr.spec)},
               {"epochs", c.tirr.train.epochs},
               {"batch_size", c.tirr.train.batch_size},
               {"learning_rate", c.tirr.train.learning_rate},
               {"seed", c.tirr.train.seed},
               {"validation_fraction", c.tirr.train.validation_fraction}};
  j["baselines"] = {{"lfrr",
                     {{"dimension", c.lfrr.dimension},
                      {"epochs", c.lfrr.epochs},
                      {"learning_rate", c.lfrr.learning_rate},
                      {"regularization", c.lfrr.regularization},
                      {"init_scale", c.lfrr.init_scale},
                      {"seed", c.lfrr.seed}}},
                    {"recon_alpha", c.recon_alpha},
                    {"imrec_anchors", c.imrec_anchors}};
  j["models"] = c.models;
  j["projection_pairs"] = c.projection_pairs;
  return j;
}

RunConfig run_config_from_json(const nlohmann::json& j) {
  RunConfig c;
  try {
    reject_unknown(j, {"output_dir", "world", "sampler", "n_events", "event_seed", "split", "history",
                       "write_images", "siamese", "tirr", "baselines", "models", "projection_pairs"},
                   "config");
    c.output_dir = j.value("output_dir", c.output_dir);
    if (j.contains("world")) {
      reject_unknown(j["world"], {"seed", "n_x", "n_y", "d_traits", "drift_rate", "like_sharpness",
                                  "popularity_weight", "year_ticks", "n_variants", "render_noise",
                                  "attribute_count", "attribute_buckets", "attribute_signal"},
                     "world");
      c.world = world_params_from_json(j["world"]);
    }
    if (j.contains("sampler")) {
      reject_unknown(j["sampler"], {"response_share", "ignore_rate", "tick_stride"}, "sampler");
      c.sampler = sampler_options_from_json(j["sampler"]);
    }
    c.n_events = j.value("n_events", c.n_events);
    c.event_seed = j.value("event_seed", c.event_seed);
    if (j.contains("split")) {
      const auto& s = j["split"];
      reject_unknown(s, {"siamese", "match", "eval", "seed"}, "split");
      c.split.siamese = s.value("siamese", c.split.siamese);
      c.split.match = s.value("match", c.split.match);
      c.split.eval = s.value("eval", c.split.eval);
      c.split_seed = s.value("seed", c.split_seed);
    }
    if (j.contains("history")) {
      const auto& h = j["history"];
      reject_unknown(h, {"cap", "max_age"}, "history");
      c.history_cap = h.value("cap", c.history_cap);
      c.history_max_age = h.value("max_age", c.history_max_age);
    }
    c.write_images = j.value("write_images", c.write_images);
    if (j.contains("siamese")) {
      const auto& s = j["siamese"];
      reject_unknown(s, {"loss", "margin", "learning_rate", "convention", "epochs", "batch_size", "seed",
                         "triplets_per_side", "heldout_triplets"},
                     "siamese");
      const auto kind = s.value("loss", std::string(kind_name(c.siamese.loss.kind)));
      if (kind == "bce") c.siamese.loss.kind = LossKind::BCE;
      else if (kind == "contrastive") c.siamese.loss.kind = LossKind::Contrastive;
      else throw ConfigError("siamese.loss must be 'bce' or 'contrastive'");
      const auto conv = s.value("convention", std::string(convention_name(c.siamese.loss.convention)));
      if (conv == "like_is_similar") c.siamese.loss.convention = ContrastiveConvention::LikeIsSimilar;
      else if (conv == "like_is_label_one") c.siamese.loss.convention = ContrastiveConvention::LikeIsLabelOne;
      else throw ConfigError("siamese.convention must be 'like_is_similar' or 'like_is_label_one'");
      c.siamese.loss.margin = s.value("margin", c.siamese.loss.margin);
      c.siamese.loss.learning_rate = s.value("learning_rate", c.siamese.loss.learning_rate);
      c.siamese.epochs = s.value("epochs", c.siamese.epochs);
      c.siamese.batch_size = s.value("batch_size", c.siamese.batch_size);
      c.siamese.seed = s.value("seed", c.siamese.seed);
      c.siamese.triplets_per_side = s.value("triplets_per_side", c.siamese.triplets_per_side);
      c.siamese.heldout_triplets = s.value("heldout_triplets", c.siamese.heldout_triplets);
    }
    if (j.contains("tirr")) {
      const auto& t = j["tirr"];
      reject_unknown(t, {"spec", "epochs", "batch_size", "learning_rate", "seed", "validation_fraction"}, "tirr");
      if (t.contains("spec")) {
        reject_unknown(t["spec"], {"sequence_length", "input_dim", "hidden", "candidate_units", "dense_units", "dropout"},
                       "tirr.spec");
        c.tirr.spec = tirr_spec_from_json(t["spec"]);
      }
      c.tirr.train.epochs = t.value("epochs", c.tirr.train.epochs);
      c.tirr.train.batch_size = t.value("batch_size", c.tirr.train.batch_size);
      c.tirr.train.learning_rate = t.value("learning_rate", c.tirr.train.learning_rate);
      c.tirr.train.seed = t.value("seed", c.tirr.train.seed);
      c.tirr.train.validation_fraction = t.value("validation_fraction", c.tirr.train.validation_fraction);
    }
    if (j.contains("baselines")) {
      const auto& b = j["baselines"];
      reject_unknown(b, {"lfrr", "recon_alpha", "imrec_anchors"}, "baselines");
      if (b.contains("lfrr")) {
        const auto& l = b["lfrr"];
        reject_unknown(l, {"dimension", "epochs", "learning_rate", "regularization", "init_scale", "seed"},
                       "baselines.lfrr");
        c.lfrr.dimension = l.value("dimension", c.lfrr.dimension);
        c.lfrr.epochs = l.value("epochs", c.lfrr.epochs);
        c.lfrr.learning_rate = l.value("learning_rate", c.lfrr.learning_rate);
        c.lfrr.regularization = l.value("regularization", c.lfrr.regularization);
        c.lfrr.init_scale = l.value("init_scale", c.lfrr.init_scale);
        c.lfrr.seed = l.value("seed", c.lfrr.seed);
      }
      c.recon_alpha = b.value("recon_alpha", c.recon_alpha);
      c.imrec_anchors = b.value("imrec_anchors", c.imrec_anchors);
    }
    if (j.contains("models")) c.models = j["models"].get<std::vector<std::string>>();
    c.projection_pairs = j.value("projection_pairs", c.projection_pairs);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  }

  const double fsum = c.split.siamese + c.split.match + c.split.eval;
  if (c.split.siamese < 0 || c.split.match < 0 || c.split.eval < 0 || std::abs(fsum - 1.0) > 1e-9) {
    throw ConfigError("split fractions must be nonnegative and sum to 1");
  }
  if (c.world.n_x < 1 || c.world.n_y < 1 || c.world.d_traits < 1) throw ConfigError("world sizes must be positive");
  if (c.world.n_variants < 1) throw ConfigError("world.n_variants must be at least 1");
  if (c.history_cap < 1 || c.history_cap > c.tirr.spec.sequence_length) {
    throw ConfigError("history.cap must lie in [1, tirr.spec.sequence_length]");
  }
  if (c.tirr.spec.input_dim != static_cast<int>(kEmbeddingDim)) throw ConfigError("tirr.spec.input_dim must be 128");
  if (c.siamese.batch_size == 0 || c.tirr.train.batch_size == 0) throw ConfigError("batch sizes must be positive");
  if (!(c.siamese.loss.learning_rate > 0) || !(c.tirr.train.learning_rate > 0) || !(c.lfrr.learning_rate > 0)) {
    throw ConfigError("learning rates must be positive");
  }
  if (!(c.siamese.loss.margin > 0)) throw ConfigError("siamese.margin must be positive");
  if (c.tirr.spec.dropout < 0 || c.tirr.spec.dropout >= 1) throw ConfigError("tirr.spec.dropout must lie in [0, 1)");
  if (!(c.tirr.train.validation_fraction >= 0 && c.tirr.train.validation_fraction < 0.5)) {
    throw ConfigError("tirr.validation_fraction must lie in [0, 0.5)");
  }
  if (c.lfrr.dimension < 1) throw ConfigError("baselines.lfrr.dimension must be positive");
  if (!(c.recon_alpha > 0)) throw ConfigError("baselines.recon_alpha must be positive");
  static const std::set<std::string> known_models{"tirr", "imrec_lite", "recon_lite", "lfrr_lite"};
  for (const auto& m : c.models) {
    if (!known_models.count(m)) throw ConfigError("unknown model '" + m + "'");
  }
  if (c.output_dir.empty()) throw ConfigError("output_dir must not be empty");
  return c;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoFailure("cannot read config " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config " + path + " is not valid JSON: " + e.what());
  }
  return run_config_from_json(j);
}

void save_run_config(const RunConfig& c, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoFailure("cannot write " + path);
  out << to_json(c).dump(2) << "\n";
}

}  // namespace reclab
