#include "reclab/pipeline.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "reclab/digest.hpp"
#include "reclab/error.hpp"
#include "reclab/image_source.hpp"

namespace fs = std::filesystem;

namespace reclab {

// ---------------------------------------------------------------- in-memory stages

ValidatedEventLog merge_logs(const ValidatedEventLog& a, const ValidatedEventLog& b) {
  std::vector<PreferenceEvent> all(a.events());
  all.insert(all.end(), b.events().begin(), b.events().end());
  return validate_events(std::move(all));
}

PreparedData prepare_data(const RunConfig& config) {
  PreparedData d;
  d.world = generate_world(config.world);
  d.log = validate_events(sample_events(d.world, config.n_events, config.event_seed, config.sampler));
  d.splits = split_three_way(d.log, config.split, config.split_seed);
  d.train_context = merge_logs(d.splits.siamese_set, d.splits.match_set);
  return d;
}

SiameseStage run_siamese_stage(const ValidatedEventLog& train, const ValidatedEventLog& heldout,
                               const ImageProvider& images, const RunConfig& config) {
  SiameseStage out;
  SiameseTrainConfig tc;
  tc.loss = config.siamese.loss;
  tc.epochs = config.siamese.epochs;
  tc.batch_size = config.siamese.batch_size;
  for (Side side : {Side::X, Side::Y}) {
    const std::uint64_t seed = config.siamese.seed + 1000 * static_cast<std::uint64_t>(side_index(side));
    auto sample = sample_triplets(train, config.siamese.triplets_per_side, seed, side, images.variants_per_user());
    if (sample.warning) out.warnings.push_back(std::string(1, side_char(side)) + ": " + *sample.warning);
    tc.seed = seed;
    auto model = train_siamese(sample.triplets, images, tc, side);
    double acc = 0.0;
    if (!heldout.empty() && config.siamese.heldout_triplets > 0) {
      try {
        const auto held = sample_triplets(heldout, config.siamese.heldout_triplets, seed + 7, side,
                                          images.variants_per_user());
        acc = triplet_accuracy(model, held.triplets, images);
      } catch (const InsufficientJudges&) {
        out.warnings.push_back(std::string(1, side_char(side)) + ": no held-out judges");
      }
    }
    if (side == Side::X) {
      out.models.x_judge = std::move(model);
      out.heldout_accuracy_x = acc;
    } else {
      out.models.y_judge = std::move(model);
      out.heldout_accuracy_y = acc;
    }
  }
  return out;
}

std::vector<UserId> all_users(const SyntheticWorld& world) {
  std::vector<UserId> out;
  for (Side side : {Side::X, Side::Y})
    for (const auto& u : world.users(side)) out.push_back(u.id);
  return out;
}

AttributeTable attribute_table(const SyntheticWorld& world) {
  AttributeTable t;
  for (Side side : {Side::X, Side::Y})
    for (const auto& u : world.users(side)) t[u.id] = u.attributes;
  return t;
}

std::vector<PairInput> make_pair_inputs(std::span<const LabeledPair> pairs, const ValidatedEventLog& context,
                                        const EmbeddingTable& embeddings, const RunConfig& config) {
  std::vector<PairInput> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) {
    out.push_back(make_pair_input(p, context, embeddings, config.history_options(), config.tirr.spec.sequence_length));
  }
  return out;
}

std::vector<ScoredPair> score_pairs(const std::string& model, std::span<const LabeledPair> pairs,
                                    const ValidatedEventLog& context, const FittedModels& fitted,
                                    const RunConfig& config) {
  std::vector<ScoredPair> out;
  out.reserve(pairs.size());
  auto push = [&](const LabeledPair& p, double s) {
    out.push_back({p.x, p.y, s, p.label == PairLabel::Match ? 1 : 0});
  };
  if (model == "tirr") {
    if (!fitted.tirr || !fitted.embeddings) throw MissingUpstream("TIRR model not loaded");
    const auto inputs = make_pair_inputs(pairs, context, *fitted.embeddings, config);
    const auto scores = fitted.tirr->match_probabilities(inputs);
    for (std::size_t i = 0; i < pairs.size(); ++i) push(pairs[i], scores[i]);
  } else if (model == "imrec_lite") {
    if (!fitted.siamese || !fitted.embeddings) throw MissingUpstream("Siamese models not loaded");
    const ImRecLite imrec(*fitted.siamese, *fitted.embeddings, config.imrec_anchors);
    for (const auto& p : pairs) {
      auto ox = config.history_options(), oy = config.history_options();
      ox.exclude = p.y;
      oy.exclude = p.x;
      const auto hx = build_history(p.x, context, p.reference_time, ox);
      const auto hy = build_history(p.y, context, p.reference_time, oy);
      push(p, imrec.score(hx, p.x, hy, p.y));
    }
  } else if (model == "recon_lite") {
    if (!fitted.recon) throw MissingUpstream("RECON-lite model not loaded");
    for (const auto& p : pairs) push(p, fitted.recon->score(p.x, p.y));
  } else if (model == "lfrr_lite") {
    if (!fitted.lfrr) throw MissingUpstream("LFRR-lite model not loaded");
    for (const auto& p : pairs) push(p, lfrr_lite_score(p.x, p.y, *fitted.lfrr));
  } else {
    throw ConfigError("unknown model '" + model + "'");
  }
  return out;
}

EvalReport evaluate_model(const std::string& model, std::span<const LabeledPair> train_pairs,
                          const ValidatedEventLog& train_context, std::span<const LabeledPair> eval_pairs,
                          const ValidatedEventLog& eval_context, const FittedModels& fitted,
                          const RunConfig& config) {
  const auto train_scored = score_pairs(model, train_pairs, train_context, fitted, config);
  const double t = best_f1_threshold(train_scored);
  const auto eval_scored = score_pairs(model, eval_pairs, eval_context, fitted, config);
  auto report = make_report(model, eval_scored, t);
  const auto train_report = make_report(model, train_scored, t);
  report.provenance["train_standard_f1"] = train_report.metrics.standard_f1;
  report.provenance["train_auc"] = train_report.roc.auc;
  return report;
}

void projection_inputs(const ValidatedEventLog& log, const SiamesePair& siamese, const ImageProvider& images,
                       std::size_t max_rows, std::uint64_t seed, std::vector<std::vector<double>>& vectors,
                       std::vector<int>& labels) {
  vectors.clear();
  labels.clear();
  TripletSample sample;
  try {
    sample = sample_triplets(log, std::max<std::size_t>(1, max_rows / 2), seed, std::nullopt, 1);
  } catch (const InsufficientJudges&) {
    return;
  }
  if (sample.warning) sample.triplets.resize(std::min(sample.triplets.size(), sample.unique_available));
  for (const auto& t : sample.triplets) {
    const auto& model = siamese.for_judge(t.judge.side);
    const std::vector<ImageTensor> imgs{images.tensor(t.anchor), images.tensor(t.positive), images.tensor(t.negative)};
    const auto h = model.encode_batch(imgs);
    for (int k = 1; k <= 2; ++k) {
      const auto d = distance(h[0], h[static_cast<std::size_t>(k)]);
      vectors.emplace_back(d.begin(), d.end());
      labels.push_back(k == 1 ? 1 : 0);
    }
  }
}

// ---------------------------------------------------------------- artifacts

namespace {

void write_text(const std::string& path, const std::string& text) {
  fs::create_directories(fs::path(path).parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoFailure("cannot write " + path);
  out << text;
  if (!out) throw IoFailure("write failed for " + path);
}

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoFailure("cannot read " + path);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

nlohmann::json read_json(const std::string& path) {
  try {
    return nlohmann::json::parse(read_text(path));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path + ": " + e.what());
  }
}

std::string loss_log_tsv(std::span<const double> losses) {
  std::string out = "epoch\tloss\n";
  char buf[64];
  for (std::size_t i = 0; i < losses.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%zu\t%.17g\n", i + 1, losses[i]);
    out += buf;
  }
  return out;
}

const char* const kSplitNames[] = {"siamese", "match", "eval"};

struct LoadedData {
  WorldManifest manifest;
  SyntheticWorld world;
  ValidatedEventLog log;
  std::map<std::string, ValidatedEventLog> splits;
  std::map<std::string, std::string> digests;
  std::unique_ptr<ImageProvider> source;
  std::unique_ptr<CachingImageProvider> images;

  const ValidatedEventLog& split(const std::string& name) const { return splits.at(name); }
};

ValidatedEventLog read_log(const std::string& path) {
  if (!fs::exists(path)) throw MissingUpstream("missing " + path + "; run generate first");
  return validate_events(read_event_log_file(path));
}

std::unique_ptr<LoadedData> load_data(const RunLayout& layout) {
  auto d = std::make_unique<LoadedData>();
  if (!fs::exists(layout.manifest())) throw MissingUpstream("no dataset at " + layout.data() + "; run generate first");
  const auto mj = read_json(layout.manifest());
  try {
    d->manifest = world_manifest_from_json(mj);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(layout.manifest() + ": " + e.what());
  }
  d->world = generate_world(d->manifest.world);
  d->log = read_log(layout.events());
  const auto index = read_json(layout.split_index());
  d->digests["full"] = event_set_digest(d->log.events());
  if (index.at("full").at("digest").get<std::string>() != d->digests["full"]) {
    throw ProvenanceError("event log does not match its recorded digest");
  }
  std::size_t total = 0;
  std::set<PreferenceEvent> seen;
  for (const char* name : kSplitNames) {
    auto log = read_log(layout.split(name));
    const auto digest = event_set_digest(log.events());
    if (index.at(name).at("digest").get<std::string>() != digest) {
      throw SplitContamination(std::string("split '") + name + "' does not match its recorded digest");
    }
    for (const auto& e : log.events()) {
      if (!seen.insert(e).second) {
        throw SplitContamination(std::string("split '") + name + "' shares events with another split");
      }
    }
    total += log.size();
    d->digests[name] = digest;
    d->splits.emplace(name, std::move(log));
  }
  if (total != d->log.size()) throw SplitContamination("splits do not partition the event log");
  for (const auto& e : d->log.events()) {
    if (!seen.count(e)) throw SplitContamination("splits do not partition the event log");
  }
  if (fs::exists(fs::path(layout.images()) / "faces.tsv")) {
    d->source = std::make_unique<PngDirectoryProvider>(layout.images());
  } else {
    d->source = std::make_unique<RenderedImageProvider>(d->world);
  }
  d->images = std::make_unique<CachingImageProvider>(*d->source, 1 << 16);
  return d;
}

SiameseCheckpoint load_siamese(const RunLayout& layout, Side side) {
  const auto path = layout.model(std::string("siamese_") + side_char(side));
  if (!fs::exists(path)) throw MissingUpstream("missing " + path + "; run train --stage siamese first");
  auto m = SiameseCheckpoint::from_checkpoint(Checkpoint::load(path));
  if (m.judge_side() != side) throw ProvenanceError(path + " holds the wrong judging side");
  return m;
}

SiamesePair load_siamese_pair(const RunLayout& layout) {
  return {load_siamese(layout, Side::X), load_siamese(layout, Side::Y)};
}

// Every digest a model claims to have trained on must name a training split.
void check_training_provenance(const nlohmann::json& prov, const LoadedData& d, const std::string& what) {
  const auto trained = prov.value("trained_on", nlohmann::json::object());
  if (trained.empty()) throw ProvenanceError(what + " carries no training provenance");
  for (const auto& [name, digest] : trained.items()) {
    const auto value = digest.get<std::string>();
    if (value == d.digests.at("eval")) throw SplitContamination(what + " was trained on the eval split");
    if (name != "siamese" && name != "match") throw SplitContamination(what + " was trained on split '" + name + "'");
    if (value != d.digests.at(name)) {
      throw SplitContamination(what + " was trained on a different '" + name + "' split than the current one");
    }
  }
}

nlohmann::json trained_on(const LoadedData& d, std::initializer_list<const char*> names) {
  nlohmann::json j = nlohmann::json::object();
  for (const char* n : names) j[n] = d.digests.at(n);
  return {{"trained_on", j}};
}

std::vector<LabeledPair> pairs_of(const ValidatedEventLog& log) { return extract_labeled_pairs(log); }

}  // namespace

void cmd_generate(const RunConfig& config) {
  const RunLayout layout(config.output_dir);
  try {
    fs::create_directories(layout.data() + "/splits");
  } catch (const fs::filesystem_error& e) {
    throw IoFailure(e.what());
  }
  const auto world = generate_world(config.world);
  const auto events = sample_events(world, config.n_events, config.event_seed, config.sampler);
  const auto log = validate_events(events);

  WorldManifest manifest{config.world, config.sampler, config.n_events, config.event_seed};
  write_text(layout.manifest(), to_json(manifest).dump(2) + "\n");
  write_event_log_file(layout.events(), log.events());

  nlohmann::json index;
  index["full"] = {{"digest", event_set_digest(log.events())}, {"events", log.size()}};
  index["fractions"] = {{"siamese", config.split.siamese}, {"match", config.split.match}, {"eval", config.split.eval}};
  index["seed"] = config.split_seed;
  if (!log.empty()) {
    const auto bundle = split_three_way(log, config.split, config.split_seed);
    const ValidatedEventLog* parts[] = {&bundle.siamese_set, &bundle.match_set, &bundle.eval_set};
    for (int i = 0; i < 3; ++i) {
      write_event_log_file(layout.split(kSplitNames[i]), parts[i]->events());
      index[kSplitNames[i]] = {{"digest", event_set_digest(parts[i]->events())}, {"events", parts[i]->size()}};
    }
  }
  write_text(layout.split_index(), index.dump(2) + "\n");

  if (config.write_images) {
    fs::create_directories(layout.images());
    std::string faces = "# user\tvariant\tx\ty\tw\th\n";
    char buf[128];
    for (const auto& id : all_users(world)) {
      for (std::uint32_t v = 0; v < config.world.n_variants; ++v) {
        const auto img = world.render_face(id, SyntheticWorld::photo_seed(id, v));
        write_png((fs::path(layout.images()) / image_file_name({id, v})).string(), img.pixels);
        std::snprintf(buf, sizeof buf, "%s\t%u\t%.6f\t%.6f\t%.6f\t%.6f\n", id.str().c_str(), v, img.face_bbox.x,
                      img.face_bbox.y, img.face_bbox.w, img.face_bbox.h);
        faces += buf;
      }
    }
    write_text((fs::path(layout.images()) / "faces.tsv").string(), faces);
  }
}

void cmd_train(const RunConfig& config, const std::string& stage) {
  const RunLayout layout(config.output_dir);
  if (stage != "siamese" && stage != "tirr" && stage != "baselines") {
    throw ConfigError("unknown stage '" + stage + "'");
  }
  if (stage == "tirr") {
    for (char s : {'x', 'y'}) {
      const auto path = layout.model(std::string("siamese_") + s);
      if (!fs::exists(path)) throw MissingUpstream("missing " + path + "; run train --stage siamese first");
    }
  }
  const auto d = load_data(layout);
  fs::create_directories(layout.root + "/models");
  fs::create_directories(layout.root + "/logs");

  if (stage == "siamese") {
    auto result = run_siamese_stage(d->split("siamese"), ValidatedEventLog{}, *d->images, config);
    for (Side side : {Side::X, Side::Y}) {
      auto& m = side == Side::X ? result.models.x_judge : result.models.y_judge;
      m.provenance = trained_on(*d, {"siamese"});
      const std::string name = std::string("siamese_") + side_char(side);
      m.to_checkpoint().save(layout.model(name));
      write_text(layout.log(name), loss_log_tsv(m.loss_log));
    }
    return;
  }

  const auto siamese = load_siamese_pair(layout);
  check_training_provenance(siamese.x_judge.provenance, *d, "siamese_x");
  check_training_provenance(siamese.y_judge.provenance, *d, "siamese_y");
  const auto context = merge_logs(d->split("siamese"), d->split("match"));

  if (stage == "tirr") {
    const auto users = all_users(d->world);
    const auto table = EmbeddingTable::build(siamese, users, *d->images);
    const auto train_pairs = pairs_of(d->split("match"));
    const auto inputs = make_pair_inputs(train_pairs, context, table, config);
    auto model = train_tirr(inputs, siamese, config.tirr.train, config.tirr.spec);
    model.provenance = trained_on(*d, {"siamese", "match"});
    model.to_checkpoint().save(layout.model("tirr"));
    write_text(layout.log("tirr"), loss_log_tsv(model.loss_log));
    return;
  }

  auto recon = ReconLite::fit(context, attribute_table(d->world), config.recon_alpha);
  recon.provenance = trained_on(*d, {"siamese", "match"});
  recon.to_checkpoint().save(layout.model("recon_lite"));
  auto lfrr = lfrr_lite_train(context, config.lfrr);
  lfrr.provenance = trained_on(*d, {"siamese", "match"});
  lfrr.to_checkpoint().save(layout.model("lfrr_lite"));
  write_text(layout.log("lfrr_lite"), loss_log_tsv(lfrr.loss_log));
  const EmbeddingTable empty;
  auto imrec_ck = ImRecLite(siamese, empty, config.imrec_anchors).to_checkpoint();
  imrec_ck.metadata()["provenance"] = trained_on(*d, {"siamese"});
  imrec_ck.save(layout.model("imrec_lite"));
}

std::vector<EvalReport> cmd_evaluate(const RunConfig& config) {
  const RunLayout layout(config.output_dir);
  const auto d = load_data(layout);
  const auto siamese = load_siamese_pair(layout);
  check_training_provenance(siamese.x_judge.provenance, *d, "siamese_x");
  check_training_provenance(siamese.y_judge.provenance, *d, "siamese_y");

  const auto context = merge_logs(d->split("siamese"), d->split("match"));
  const auto train_pairs = pairs_of(d->split("match"));
  const auto eval_pairs = pairs_of(d->split("eval"));
  const auto table = EmbeddingTable::build(siamese, all_users(d->world), *d->images);

  std::optional<TirrCheckpoint> tirr;
  std::optional<ReconLite> recon;
  std::optional<LatentFactors> lfrr;
  FittedModels fitted{&siamese, &table, nullptr, nullptr, nullptr};
  std::map<std::string, std::string> model_digests;
  for (const auto& name : config.models) {
    const auto path = layout.model(name);
    if (!fs::exists(path)) throw MissingUpstream("missing " + path + "; train it first");
    const auto ck = Checkpoint::load(path);
    model_digests[name] = ck.digest();
    if (name == "tirr") {
      tirr = TirrCheckpoint::from_checkpoint(ck, siamese);
      check_training_provenance(tirr->provenance, *d, name);
      fitted.tirr = &*tirr;
    } else if (name == "recon_lite") {
      recon = ReconLite::from_checkpoint(ck);
      check_training_provenance(recon->provenance, *d, name);
      fitted.recon = &*recon;
    } else if (name == "lfrr_lite") {
      lfrr = LatentFactors::from_checkpoint(ck);
      check_training_provenance(lfrr->provenance, *d, name);
      fitted.lfrr = &*lfrr;
    } else if (name == "imrec_lite") {
      if (ImRecLite::max_anchors_from_checkpoint(ck, siamese) != config.imrec_anchors) {
        throw ProvenanceError("imrec_lite checkpoint disagrees with the configured anchor count");
      }
      check_training_provenance(ck.metadata().value("provenance", nlohmann::json::object()), *d, name);
    }
  }

  std::vector<EvalReport> reports;
  for (const auto& name : config.models) {
    auto r = evaluate_model(name, train_pairs, context, eval_pairs, d->log, fitted, config);
    r.provenance["model_digest"] = model_digests[name];
    r.provenance["eval_split_digest"] = d->digests.at("eval");
    r.provenance["threshold_split_digest"] = d->digests.at("match");
    write_text(layout.report(name + ".json"), to_json(r).dump(2) + "\n");
    write_text(layout.report(name + "_roc.csv"), roc_csv(r.roc));
    reports.push_back(std::move(r));
  }
  write_text(layout.report("comparison.tsv"), comparison_table(reports));

  nlohmann::json sj;
  for (Side side : {Side::X, Side::Y}) {
    double acc = 0.0;
    std::size_t n = 0;
    try {
      const auto held = sample_triplets(d->split("eval"), config.siamese.heldout_triplets,
                                        config.siamese.seed + 7 + 1000 * static_cast<std::uint64_t>(side_index(side)),
                                        side, d->images->variants_per_user());
      acc = triplet_accuracy(siamese.for_judge(side), held.triplets, *d->images);
      n = held.triplets.size();
    } catch (const InsufficientJudges&) {
    }
    sj[std::string(1, side_char(side))] = {{"heldout_triplet_accuracy", acc}, {"triplets", n}};
  }
  write_text(layout.report("siamese.json"), sj.dump(2) + "\n");
  return reports;
}

void cmd_project(const RunConfig& config) {
  const RunLayout layout(config.output_dir);
  const auto d = load_data(layout);
  const auto siamese = load_siamese_pair(layout);
  std::vector<std::vector<double>> vectors;
  std::vector<int> labels;
  projection_inputs(d->split("eval"), siamese, *d->images, config.projection_pairs, config.siamese.seed + 99,
                    vectors, labels);
  if (vectors.size() < 2) throw EmptySplit("not enough eval triplets to project");
  const PcaProjector pca;
  const auto points = project_embeddings(vectors, labels, pca);
  write_text(layout.report("projection.csv"), projection_csv(points));
}

std::string cmd_report(const RunConfig& config) {
  const RunLayout layout(config.output_dir);
  std::vector<EvalReport> reports;
  nlohmann::json summary;
  for (const auto& name : config.models) {
    const auto path = layout.report(name + ".json");
    if (!fs::exists(path)) throw MissingUpstream("missing " + path + "; run evaluate first");
    reports.push_back(eval_report_from_json(read_json(path)));
    const auto& r = reports.back();
    summary["models"][name] = {{"auc", r.roc.auc},
                               {"precision", r.metrics.precision},
                               {"recall", r.metrics.recall},
                               {"f1", r.metrics.f1},
                               {"standard_recall", r.metrics.standard_recall},
                               {"standard_f1", r.metrics.standard_f1},
                               {"threshold", r.threshold},
                               {"eval_pair_digest", r.eval_pair_digest}};
  }
  if (fs::exists(layout.report("siamese.json"))) summary["siamese"] = read_json(layout.report("siamese.json"));
  for (const char* name : {"siamese_x", "siamese_y", "tirr", "lfrr_lite"}) {
    if (fs::exists(layout.log(name))) summary["training_logs"][name] = read_text(layout.log(name));
  }
  const auto table = comparison_table(reports);
  summary["comparison"] = table;
  write_text(layout.report("summary.json"), summary.dump(2) + "\n");
  return table;
}

}  // namespace reclab
