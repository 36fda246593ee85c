#include <doctest.h>

#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <set>
#include <fstream>
#include <sstream>

#include "reclab/config.hpp"
#include "reclab/digest.hpp"
#include "reclab/error.hpp"
#include "reclab/pipeline.hpp"

using namespace reclab;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("reclab_pipeline_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

RunConfig tiny_config(const fs::path& out) {
  RunConfig c;
  c.output_dir = out.string();
  c.world.n_x = c.world.n_y = 30;
  c.world.d_traits = 2;
  c.n_events = 1500;
  c.siamese.triplets_per_side = 16;
  c.siamese.heldout_triplets = 20;
  c.siamese.epochs = 1;
  c.siamese.batch_size = 8;
  c.tirr.train.epochs = 2;
  c.lfrr.epochs = 3;
  c.projection_pairs = 40;
  return c;
}

void run_all(const RunConfig& c) {
  cmd_generate(c);
  cmd_train(c, "siamese");
  cmd_train(c, "tirr");
  cmd_train(c, "baselines");
  cmd_evaluate(c);
  cmd_project(c);
  cmd_report(c);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::vector<std::string> relative_files(const fs::path& root) {
  std::vector<std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) out.push_back(fs::relative(e.path(), root).string());
  std::sort(out.begin(), out.end());
  return out;
}

int run_tool(const std::string& args) {
  const std::string cmd = std::string(RECLAB_TOOL_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

// one shared finished run
const fs::path& finished_run() {
  static const fs::path dir = [] {
    const auto d = scratch("shared");
    run_all(tiny_config(d));
    return d;
  }();
  return dir;
}

}  // namespace

TEST_CASE("generate is deterministic and validates") {
  const auto a = scratch("gen_a"), b = scratch("gen_b");
  auto ca = tiny_config(a), cb = tiny_config(b);
  ca.write_images = cb.write_images = false;
  cmd_generate(ca);
  cmd_generate(cb);
  const RunLayout la(ca.output_dir), lb(cb.output_dir);
  CHECK(slurp(la.events()) == slurp(lb.events()));
  CHECK(slurp(la.manifest()) == slurp(lb.manifest()));
  CHECK(slurp(la.split("eval")) == slurp(lb.split("eval")));
  const auto events = read_event_log_file(la.events());
  CHECK(events.size() == 1500);
  CHECK_NOTHROW(validate_events(events));
  cmd_generate(ca);  // idempotent
  CHECK(slurp(la.events()) == slurp(lb.events()));
}

TEST_CASE("generate with no events writes an empty log and a manifest") {
  const auto d = scratch("gen_empty");
  auto c = tiny_config(d);
  c.n_events = 0;
  c.write_images = false;
  cmd_generate(c);
  const RunLayout l(c.output_dir);
  CHECK(read_event_log_file(l.events()).empty());
  const auto manifest = world_manifest_from_json(nlohmann::json::parse(slurp(l.manifest())));
  CHECK(manifest.n_events == 0);
  CHECK(manifest.world == c.world);
}

TEST_CASE("tirr stage requires the siamese checkpoints") {
  const auto d = scratch("upstream");
  auto c = tiny_config(d);
  c.write_images = false;
  cmd_generate(c);
  CHECK_THROWS_AS(cmd_train(c, "tirr"), MissingUpstream);
  CHECK_THROWS_AS(cmd_train(c, "baselines"), MissingUpstream);
  CHECK_THROWS_AS(cmd_train(c, "lstm"), ConfigError);
}

TEST_CASE("full runs are byte-identical") {
  const auto& a = finished_run();
  const auto b = scratch("second");
  run_all(tiny_config(b));
  const auto files = relative_files(a);
  CHECK(files == relative_files(b));
  for (const auto& f : files) {
    CAPTURE(f);
    CHECK(slurp(a / f) == slurp(b / f));
  }
  for (const char* name : {"tirr", "imrec_lite", "recon_lite", "lfrr_lite"}) {
    CHECK(fs::exists(a / "reports" / (std::string(name) + ".json")));
    CHECK(fs::exists(a / "reports" / (std::string(name) + "_roc.csv")));
  }
  CHECK(fs::exists(a / "reports" / "comparison.tsv"));
  CHECK(fs::exists(a / "reports" / "projection.csv"));
  CHECK(fs::exists(a / "reports" / "summary.json"));
}

TEST_CASE("reports share one eval pair set and logs are finite") {
  const RunLayout l(finished_run().string());
  std::set<std::string> digests;
  for (const char* name : {"tirr", "imrec_lite", "recon_lite", "lfrr_lite"}) {
    const auto j = nlohmann::json::parse(slurp(l.report(std::string(name) + ".json")));
    digests.insert(eval_report_from_json(j).eval_pair_digest);
  }
  CHECK(digests.size() == 1);
  for (const char* name : {"siamese_x", "siamese_y", "tirr", "lfrr_lite"}) {
    std::istringstream in(slurp(l.log(name)));
    std::string line;
    std::size_t rows = 0;
    std::getline(in, line);  // header
    while (std::getline(in, line)) {
      const double loss = std::stod(line.substr(line.find('\t') + 1));
      CHECK(std::isfinite(loss));
      ++rows;
    }
    CHECK(rows > 0);
  }
}

TEST_CASE("tampered eval split trips contamination") {
  const auto d = scratch("tamper");
  fs::copy(finished_run(), d, fs::copy_options::recursive);
  auto c = tiny_config(d);
  const RunLayout l(c.output_dir);
  CHECK_NOTHROW(cmd_evaluate(c));

  SUBCASE("edited split file") {
    auto eval = read_event_log_file(l.split("eval"));
    const auto siamese = read_event_log_file(l.split("siamese"));
    eval.push_back(siamese.front());
    write_event_log_file(l.split("eval"), eval);
    CHECK_THROWS_AS(cmd_evaluate(c), SplitContamination);
  }
  SUBCASE("eval split replaced by training events with a matching index") {
    fs::copy_file(l.split("siamese"), l.split("eval"), fs::copy_options::overwrite_existing);
    auto index = nlohmann::json::parse(slurp(l.split_index()));
    index["eval"] = index["siamese"];
    std::ofstream(l.split_index()) << index.dump(2) << "\n";
    CHECK_THROWS_AS(cmd_evaluate(c), SplitContamination);
  }
  SUBCASE("model trained on the eval split") {
    auto ck = Checkpoint::load(l.model("lfrr_lite"));
    const auto index = nlohmann::json::parse(slurp(l.split_index()));
    auto lf = LatentFactors::from_checkpoint(ck);
    lf.provenance = {{"trained_on", {{"eval", index["eval"]["digest"]}}}};
    lf.to_checkpoint().save(l.model("lfrr_lite"));
    CHECK_THROWS_AS(cmd_evaluate(c), SplitContamination);
  }
}

TEST_CASE("command line exit codes") {
  const auto d = scratch("cli");
  auto c = tiny_config(d / "run");
  c.write_images = false;
  const auto cfg = (d / "run.json").string();
  save_run_config(c, cfg);

  std::ofstream(d / "bad.json") << R"({"world": {"n_x": 0}})";
  std::ofstream(d / "unknown.json") << R"({"colour": "blue"})";
  CHECK(run_tool("--config " + (d / "bad.json").string() + " generate") == 2);
  CHECK(run_tool("--config " + (d / "unknown.json").string() + " generate") == 2);
  CHECK(run_tool("--config " + (d / "absent.json").string() + " generate") == 2);
  CHECK(run_tool("--config " + cfg + " train --stage lstm") == 2);
  CHECK(run_tool("--config " + cfg + " generate") == 0);
  CHECK(run_tool("--config " + cfg + " train --stage tirr") == 3);
  CHECK(run_tool("--config " + cfg + " train --stage siamese") == 0);

  auto diverge = c;
  diverge.lfrr.learning_rate = 1e300;
  diverge.lfrr.init_scale = 1e10;
  save_run_config(diverge, (d / "diverge.json").string());
  CHECK(run_tool("--config " + (d / "diverge.json").string() + " train --stage baselines") == 4);

  CHECK(run_tool("--config " + cfg + " train --stage tirr") == 0);
  CHECK(run_tool("--config " + cfg + " train --stage baselines") == 0);
  CHECK(run_tool("--config " + cfg + " evaluate") == 0);
  CHECK(run_tool("--config " + cfg + " report") == 0);

  const RunLayout l(c.output_dir);
  auto eval = read_event_log_file(l.split("eval"));
  eval.pop_back();
  write_event_log_file(l.split("eval"), eval);
  CHECK(run_tool("--config " + cfg + " evaluate") == 3);
}
