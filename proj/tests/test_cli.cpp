#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <httplib.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <thread>

#include <json.hpp>

#include "exposome/csv.hpp"
#include "exposome/pipeline.hpp"
#include "helpers.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string kit() {
  const char* path = std::getenv("EXPOSOME_KIT_BIN");
  REQUIRE_MESSAGE(path != nullptr, "EXPOSOME_KIT_BIN must point at the binary");
  return path;
}

// Runs the CLI through the shell; returns the exit code, captures output.
int run_cli(const std::string& args, const std::string& capture_file = "",
            const std::string& env_prefix = "") {
  std::string command = env_prefix + " " + kit() + " " + args;
  if (!capture_file.empty()) command += " > " + capture_file + " 2>&1";
  else command += " > /dev/null 2>&1";
  const int status = std::system(command.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string base_config(const testutil::TempDir& dir,
                        const std::string& extra = "") {
  const std::string out = (dir.path() / "out").string();
  const std::string text =
      "[paths]\n"
      "ema_csv = \"" + out + "/sim/ema.csv\"\n"
      "baseline_csv = \"" + out + "/sim/baseline.csv\"\n"
      "photos_dir = \"" + out + "/sim/photos\"\n"
      "output_dir = \"" + out + "\"\n"
      "cache_dir = \"" + (dir.path() / "cache").string() + "\"\n"
      "[miner]\n"
      "endpoint = \"stub://auto\"\n"
      "model = \"gpt-oss-120b\"\n"
      "[rater]\n"
      "endpoint = \"stub://auto\"\n"
      "model = \"llama-4-maverick\"\n"
      "temperature = 0.6\n"
      "[simulate]\n"
      "n_participants = 6\n"
      "days = 2\n"
      "alarms_per_day = 3\n"
      "tau00 = 1.0\n"
      "sigma2 = 1.0\n"
      "beta = [2.0, 0.5]\n"
      "write_photos = true\n"
      "[run]\n"
      "seed = 11\n"
      "jobs = 2\n" + extra;
  const std::string path = dir.file("run.toml");
  testutil::write_text(path, text);
  return path;
}

void write_stub_corpus(const fs::path& pipeline_dir, int docs) {
  fs::create_directories(pipeline_dir);
  std::vector<json> corpus;
  const char* nouns[] = {"forest", "traffic", "crowd", "daylight"};
  const char* outcomes[] = {"positive affect", "negative affect", "stress"};
  const char* directions[] = {"increase", "decrease", "null"};
  exposome::Rng rng(99);
  for (int d = 0; d < docs; ++d) {
    std::string text = "Article:\nStudy body.\n";
    const int k = rng.uniform_int(1, 3);
    for (int f = 0; f < k; ++f)
      text += std::string("FINDING: ") + nouns[rng.uniform_int(0, 3)] +
              " exposure level | " + outcomes[rng.uniform_int(0, 2)] + " | " +
              directions[rng.uniform_int(0, 2)] + "\n";
    corpus.push_back({{"epmc_id", "DOC" + std::to_string(100 + d)},
                      {"source", "MED"},
                      {"title", "t"},
                      {"text", text}});
  }
  exposome::pipeline::write_ndjson((pipeline_dir / "corpus.ndjson").string(),
                                   corpus);
}

}  // namespace

TEST_CASE("--help exits 0 on the app and on every subcommand") {
  CHECK(run_cli("--help") == 0);
  for (const char* sub : {"mine", "extract", "condense", "cluster", "assemble",
                          "rate", "analyze", "screen", "simulate"})
    CHECK(run_cli(std::string(sub) + " --help") == 0);
}

TEST_CASE("invalid flags and missing configs exit nonzero with usage") {
  testutil::TempDir dir("cli_flags");
  CHECK(run_cli("simulate --no-such-flag") != 0);
  CHECK(run_cli("no-such-command") != 0);
  CHECK(run_cli("simulate") != 0);  // --config required
  CHECK(run_cli("simulate --config " + dir.file("absent.toml")) == 2);
  testutil::write_text(dir.file("broken.toml"), "not toml at all\n");
  CHECK(run_cli("simulate --config " + dir.file("broken.toml")) == 2);
}

TEST_CASE("missing checkpoint exits 3 and names the expected file") {
  testutil::TempDir dir("cli_ckpt");
  const std::string config = base_config(dir);
  const std::string log = dir.file("stderr.txt");
  CHECK(run_cli("extract --config " + config, log) == 3);
  const std::string text = testutil::read_text(log);
  CHECK(text.find("corpus.ndjson") != std::string::npos);
  CHECK(text.find("mine") != std::string::npos);
}

TEST_CASE("simulate writes the dataset bundle and reruns byte-identically") {
  testutil::TempDir dir("cli_sim");
  const std::string config = base_config(dir);
  REQUIRE(run_cli("simulate --config " + config) == 0);
  const fs::path out = dir.path() / "out" / "sim";
  for (const char* name : {"ema.csv", "baseline.csv", "truth.json",
                           "aggregates.csv"})
    CHECK(fs::exists(out / name));
  CHECK(fs::exists(out / "photos"));
  const std::string ema_first = testutil::read_text((out / "ema.csv").string());
  REQUIRE(run_cli("simulate --config " + config) == 0);
  CHECK(testutil::read_text((out / "ema.csv").string()) == ema_first);
  // A different seed produces different data.
  REQUIRE(run_cli("simulate --config " + config + " --seed 999") == 0);
  CHECK(testutil::read_text((out / "ema.csv").string()) != ema_first);
}

TEST_CASE("pipeline stages run from checkpoints and fill the ledger") {
  testutil::TempDir dir("cli_pipeline");
  const std::string config = base_config(dir);
  const fs::path pipeline_dir = dir.path() / "out" / "pipeline";
  write_stub_corpus(pipeline_dir, 24);

  REQUIRE(run_cli("extract --config " + config) == 0);
  REQUIRE(run_cli("condense --config " + config) == 0);
  REQUIRE(run_cli("cluster --config " + config) == 0);
  REQUIRE(run_cli("assemble --config " + config) == 0);

  for (const char* name : {"findings.ndjson", "extract_pubs.ndjson",
                           "condensed.ndjson", "partitioned.ndjson",
                           "cluster_map.ndjson", "effects.json", "unique.json",
                           "ledger.csv"})
    CHECK(fs::exists(pipeline_dir / name));

  const auto rows =
      exposome::pipeline::read_ledger((pipeline_dir / "ledger.csv").string());
  std::map<std::string, exposome::pipeline::LedgerRow> last;
  for (const auto& row : rows) last[row.step] = row;
  REQUIRE(last.count("extract"));
  REQUIRE(last.count("condense"));
  REQUIRE(last.count("partition"));
  REQUIRE(last.count("cluster"));
  REQUIRE(last.count("assemble"));
  REQUIRE(last.count("merge"));
  CHECK(last["extract"].input_count == 24);
  // Monotone nonincreasing counts through the reduction steps.
  CHECK(last["condense"].output_count <= last["extract"].output_count);
  CHECK(last["partition"].output_count == last["condense"].output_count);
  CHECK(last["cluster"].output_count <= last["partition"].output_count);
  CHECK(last["assemble"].output_count <= last["cluster"].output_count);
  CHECK(last["merge"].output_count <= last["assemble"].output_count);

  SUBCASE("rerun with --from-checkpoint leaves earlier steps untouched") {
    const auto mtime_corpus = fs::last_write_time(pipeline_dir / "corpus.ndjson");
    const auto mtime_findings =
        fs::last_write_time(pipeline_dir / "findings.ndjson");
    const auto mtime_condensed =
        fs::last_write_time(pipeline_dir / "condensed.ndjson");
    std::this_thread::sleep_for(std::chrono::milliseconds(1100));
    REQUIRE(run_cli("assemble --config " + config + " --from-checkpoint cluster") == 0);
    CHECK(fs::last_write_time(pipeline_dir / "corpus.ndjson") == mtime_corpus);
    CHECK(fs::last_write_time(pipeline_dir / "findings.ndjson") == mtime_findings);
    CHECK(fs::last_write_time(pipeline_dir / "condensed.ndjson") == mtime_condensed);
    // cluster + assemble outputs refreshed
    CHECK(fs::last_write_time(pipeline_dir / "cluster_map.ndjson") > mtime_condensed);
  }

  SUBCASE("a later --from-checkpoint than the target is rejected") {
    CHECK(run_cli("extract --config " + config + " --from-checkpoint cluster") == 2);
  }
}

TEST_CASE("mine works against a replay server via EPMC_BASE_URL") {
  httplib::Server server;
  server.Get("/europepmc/webservices/rest/search",
             [](const httplib::Request& req, httplib::Response& res) {
               json body;
               body["nextCursorMark"] = "*";
               if (req.get_param_value("cursorMark") == "*")
                 body["resultList"]["result"] = json::array(
                     {{{"id", "M1"}, {"title", "a"}, {"source", "MED"},
                       {"isOpenAccess", "Y"}},
                      {{"id", "M2"}, {"title", "b"}, {"source", "MED"},
                       {"isOpenAccess", "Y"}}});
               else
                 body["resultList"]["result"] = json::array();
               res.set_content(body.dump(), "application/json");
             });
  server.Get(R"(/europepmc/webservices/rest/([^/]+)/([^/]+)/fullTextXML)",
             [](const httplib::Request& req, httplib::Response& res) {
               const std::string id = req.matches[2];
               res.set_content("<article><p>Article:\nFINDING: forest | "
                               "stress | decrease</p></article>",
                               "application/xml");
             });
  const int port = server.bind_to_any_port("127.0.0.1");
  std::thread listener([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  testutil::TempDir dir("cli_mine");
  const std::string config = base_config(dir);
  const int rc = run_cli("mine --config " + config, dir.file("mine.log"),
                         "EPMC_BASE_URL=http://127.0.0.1:" +
                             std::to_string(port));
  server.stop();
  listener.join();
  REQUIRE(rc == 0);
  const auto corpus = exposome::pipeline::read_ndjson(
      (dir.path() / "out" / "pipeline" / "corpus.ndjson").string());
  REQUIRE(corpus.size() == 2);
  CHECK(corpus[0]["epmc_id"] == "M1");
  CHECK(corpus[0]["text"].get<std::string>().find("FINDING") !=
        std::string::npos);
}

TEST_CASE("analyze recovers the simulator's planted coefficients") {
  testutil::TempDir dir("cli_analyze");
  const std::string config = base_config(
      dir, "[screening]\nalpha = 0.05\n");
  // Larger simulation for a tight fit, channeled through aggregates_csv.
  const std::string sim_config = base_config(dir);
  {
    std::string text = testutil::read_text(sim_config);
    text.replace(text.find("n_participants = 6"), 18, "n_participants = 40");
    text += "\n";
    testutil::write_text(sim_config, text);
  }
  REQUIRE(run_cli("simulate --config " + sim_config) == 0);
  {
    std::string text = testutil::read_text(sim_config);
    text.replace(text.find("[run]"), 5,
                 std::string("[more_paths]\n") + "x = 1\n[run]");
    testutil::write_text(sim_config, text);
  }
  // Point analyze at the simulated aggregates.
  std::string analyze_config = testutil::read_text(sim_config);
  analyze_config.insert(analyze_config.find("[miner]"),
                        "aggregates_csv = \"" +
                            (dir.path() / "out" / "sim" / "aggregates.csv")
                                .string() + "\"\n");
  testutil::write_text(dir.file("analyze.toml"), analyze_config);
  REQUIRE(run_cli("analyze --config " + dir.file("analyze.toml")) == 0);

  const fs::path fit_path =
      dir.path() / "out" / "analyze" / "fit_sim_indicator_greenness.json";
  REQUIRE(fs::exists(fit_path));
  const auto fit = json::parse(testutil::read_text(fit_path.string()));
  // y = 2 + 0.5*greenness + b + eps decomposes into trait and state slopes
  // both equal to 0.5; the CIs must cover them.
  const double trait = fit["beta"][1].get<double>();
  const double state = fit["beta"][2].get<double>();
  CHECK(fit["ci95_lo"][1].get<double>() <= 0.5);
  CHECK(fit["ci95_hi"][1].get<double>() >= 0.5);
  CHECK(state == doctest::Approx(0.5).epsilon(0.25));
  CHECK(trait == doctest::Approx(0.5).epsilon(0.8));
  CHECK(fit["converged"].get<bool>());
}

TEST_CASE("analyze exits 4 when fewer than 2 participants are eligible") {
  testutil::TempDir dir("cli_degenerate");
  std::string config_text = testutil::read_text(base_config(dir));
  config_text.replace(config_text.find("n_participants = 6"), 18,
                      "n_participants = 2");
  config_text.replace(config_text.find("days = 2"), 8, "days = 1");
  config_text.replace(config_text.find("alarms_per_day = 3"), 18,
                      "alarms_per_day = 1");
  testutil::write_text(dir.file("run.toml"), config_text);
  REQUIRE(run_cli("simulate --config " + dir.file("run.toml")) == 0);
  // Every participant has a single alarm: all excluded.
  CHECK(run_cli("analyze --config " + dir.file("run.toml")) == 4);
}

TEST_CASE("screen requires the catalog and aggregates") {
  testutil::TempDir dir("cli_screen");
  const std::string config = base_config(dir);
  REQUIRE(run_cli("simulate --config " + config) == 0);
  const std::string log = dir.file("screen.log");
  CHECK(run_cli("screen --config " + config, log) == 3);
  CHECK(testutil::read_text(log).find("effects.json") != std::string::npos);
}
