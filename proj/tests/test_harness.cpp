#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>

#include "spikegrid/harness.hpp"

using namespace spikegrid;
using nlohmann::json;

namespace fs = std::filesystem;

namespace {

const std::string kScenarioDir = SPIKEGRID_SCENARIO_DIR;

json island_doc()
{
    json doc;
    doc["name"] = "harness-island";
    doc["t_settle"] = 0.5;
    doc["t_end"] = 0.3;
    doc["buses"] = json::array({json{{"name", "pcc1"}}, json{{"name", "pcc2"}},
                                json{{"name", "load"}, {"g_load", 0.45}}});
    doc["lines"] =
        json::array({json{{"from", 0}, {"to", 2}, {"r", 0.04}, {"x", 0.12}},
                     json{{"from", 1}, {"to", 2}, {"r", 0.04}, {"x", 0.12}}});
    doc["converters"] = json::array({json{{"bus", 0}}, json{{"bus", 1}}});
    doc["snn"] = {{"layer_sizes", json::array({6, 16, 16, 3})}, {"seed", 7}};
    doc["train"] =
        {{"epochs", 2}, {"lr", 2e-3}, {"segment_len", 500}, {"seed", 11}};
    doc["run"] = {{"decimation", 50}};
    return doc;
}

json island_doc_with_step()
{
    json doc = island_doc();
    doc["schedule"] = json::array({json{
        {"t", 0.1}, {"kind", "load_step"}, {"target", 2}, {"magnitude", 0.9}}});
    return doc;
}

std::string fresh_dir(const std::string& name)
{
    const std::string dir = "harness_tmp/" + name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

}  // namespace

TEST_CASE("shipped scenario files load, validate, and round-trip")
{
    for (const char* name : {"steady_twobus.json", "case1_twobus.json",
                             "sag_gridtied.json", "case4_fourbus.json"}) {
        const RunConfigFile cfg = load_run_config(kScenarioDir + "/" + name, {});
        CHECK_FALSE(cfg.scenario.name.empty());

        // Reloading the effective config reproduces it exactly.
        const RunConfigFile again = run_config_from_json(cfg.effective, {});
        CHECK(again.effective == cfg.effective);
        CHECK(scenario_to_json(again.scenario) == scenario_to_json(cfg.scenario));
        CHECK(again.snn.layer_sizes == cfg.snn.layer_sizes);
        CHECK(again.train.epochs == cfg.train.epochs);
    }

    const RunConfigFile case1 =
        load_run_config(kScenarioDir + "/case1_twobus.json", {});
    REQUIRE(case1.checks.q_sharing_max.has_value());
    CHECK(*case1.checks.q_sharing_max == doctest::Approx(0.05));
    REQUIRE(case1.checks.v_reg_max.has_value());
    CHECK(*case1.checks.v_reg_max == doctest::Approx(0.02));
    REQUIRE(case1.checks.min_events.has_value());
    CHECK(*case1.checks.min_events == 1);
    CHECK(case1.snn.layer_sizes == std::vector<std::size_t>{6, 128, 128, 3});
}

TEST_CASE("dotted overrides rewrite scalars, arrays, and nested keys")
{
    json doc = island_doc_with_step();
    apply_overrides(doc, {"seed=99", "train.epochs=5", "schedule.0.magnitude=0.7",
                          "name=renamed", "carrier.shape=triangular"});
    CHECK(doc["seed"] == 99);
    CHECK(doc["train"]["epochs"] == 5);
    CHECK(doc["schedule"][0]["magnitude"] == 0.7);
    CHECK(doc["name"] == "renamed");  // non-JSON scalar falls back to string
    CHECK(doc["carrier"]["shape"] == "triangular");

    const RunConfigFile cfg = run_config_from_json(doc, {"train.epochs=9"});
    CHECK(cfg.scenario.seed == 99);
    CHECK(cfg.train.epochs == 9);
    CHECK(cfg.scenario.schedule[0].magnitude == doctest::Approx(0.7));

    CHECK_THROWS_AS(apply_overrides(doc, {"no_equals_sign"}), std::invalid_argument);
    CHECK_THROWS_AS(apply_overrides(doc, {"schedule.7.magnitude=0.5"}),
                    std::invalid_argument);
    CHECK_THROWS_AS(apply_overrides(doc, {"schedule.x.magnitude=0.5"}),
                    std::invalid_argument);
}

TEST_CASE("unknown configuration keys are rejected with their name")
{
    json doc = island_doc();
    doc["t_ennd"] = 0.5;
    try {
        run_config_from_json(doc, {});
        FAIL("expected a config error");
    } catch (const std::invalid_argument& e) {
        CHECK(std::string(e.what()).find("t_ennd") != std::string::npos);
    }

    json doc2 = island_doc();
    doc2["train"]["learning_rate"] = 0.1;
    CHECK_THROWS_AS(run_config_from_json(doc2, {}), std::invalid_argument);
}

TEST_CASE("fnv-1a matches the published test vectors")
{
    CHECK(fnv1a64(nullptr, 0) == 0xcbf29ce484222325ull);
    CHECK(fnv1a64("a", 1) == 0xaf63dc4c8601ec8cull);
    CHECK(fnv1a64("foobar", 6) == 0x85944171f73967e8ull);
    CHECK(hex64(0xcbf29ce484222325ull) == "cbf29ce484222325");
    CHECK(hex64(0x1ull) == "0000000000000001");
}

TEST_CASE("dataset files reload to the batches that were written")
{
    std::mt19937_64 rng(21);
    std::bernoulli_distribution coin(0.3);
    std::uniform_real_distribution<double> uval(-1.0, 1.0);

    std::vector<TrainingBatch> batches(3);
    for (std::size_t b = 0; b < batches.size(); ++b) {
        const std::size_t steps = 200 + 100 * b;
        batches[b].input = SpikeTrain(6, steps, 1e-5, 0.25 * static_cast<double>(b));
        for (std::size_t ch = 0; ch < 6; ++ch)
            for (std::size_t k = 0; k < steps; ++k)
                if (coin(rng)) batches[b].input.set(ch, k, true);
        batches[b].target.assign(3, std::vector<double>(steps));
        for (auto& row : batches[b].target)
            for (double& v : row) v = uval(rng);
    }

    const std::string dir = fresh_dir("dataset_rt");
    write_dataset(dir, batches, json{{"note", "round-trip"}});
    const auto back = load_dataset(dir);
    REQUIRE(back.size() == batches.size());
    for (std::size_t b = 0; b < batches.size(); ++b) {
        CHECK(back[b].input.raw() == batches[b].input.raw());
        CHECK(back[b].input.dt() == batches[b].input.dt());
        CHECK(back[b].input.t0() == batches[b].input.t0());
        for (std::size_t r = 0; r < 3; ++r) {
            REQUIRE(back[b].target[r].size() == batches[b].target[r].size());
            for (std::size_t k = 0; k < back[b].target[r].size(); ++k)
                REQUIRE(back[b].target[r][k] ==
                        doctest::Approx(batches[b].target[r][k]).epsilon(1e-9));
        }
    }

    CHECK_THROWS(load_dataset("harness_tmp/no_such_dataset"));
}

TEST_CASE("json loader reports missing files and parse errors")
{
    CHECK_THROWS_AS(load_json_file("harness_tmp/missing.json"), std::invalid_argument);
    const std::string dir = fresh_dir("badjson");
    {
        std::ofstream os(dir + "/broken.json");
        os << "{ not json";
    }
    CHECK_THROWS_AS(load_json_file(dir + "/broken.json"), std::invalid_argument);
}

TEST_CASE("trace bundles hash their contents and expose the manifest")
{
    const RunConfigFile cfg = run_config_from_json(island_doc(), {"t_settle=0.3",
                                                                  "t_end=0.1"});
    RunOptions opt;
    opt.decimation = cfg.run.decimation;
    const RunArtifacts art = run_scenario(cfg.scenario, opt);

    const std::string d1 = fresh_dir("bundle_a");
    const std::string d2 = fresh_dir("bundle_b");
    const std::uint64_t h1 = write_trace_bundle(d1, cfg, json{{"command", "test"}}, art);
    const std::uint64_t h2 = write_trace_bundle(d2, cfg, json{{"command", "test"}}, art);
    CHECK(h1 == h2);

    const json manifest = load_json_file(d1 + "/manifest.json");
    CHECK(manifest.at("bundle_hash") == hex64(h1));
    CHECK(manifest.at("config") == cfg.effective);
    CHECK_FALSE(manifest.at("files").contains("manifest.json"));
    CHECK(manifest.at("files").contains("trace.csv"));
    CHECK(manifest.at("summary").at("unstable") == false);

    // Recompute the hash from the directory with the documented rule.
    std::vector<std::string> names;
    for (const auto& e : fs::directory_iterator(d1))
        if (e.is_regular_file() && e.path().filename() != "manifest.json")
            names.push_back(e.path().filename().string());
    std::sort(names.begin(), names.end());
    std::uint64_t redo = 0xcbf29ce484222325ull;
    for (const std::string& f : names) {
        const std::uint64_t h = fnv1a64_file(d1 + "/" + f);
        redo = fnv1a64(f.data(), f.size(), redo);
        redo = fnv1a64(&h, sizeof h, redo);
    }
    CHECK(redo == h1);

    // Any content change moves the hash.
    {
        std::ofstream os(d2 + "/trace.csv", std::ios::app | std::ios::binary);
        os << "#tampered\n";
    }
    std::uint64_t redo2 = 0xcbf29ce484222325ull;
    for (const std::string& f : names) {
        const std::uint64_t h = fnv1a64_file(d2 + "/" + f);
        redo2 = fnv1a64(f.data(), f.size(), redo2);
        redo2 = fnv1a64(&h, sizeof h, redo2);
    }
    CHECK(redo2 != h1);

    // The activity log reloads to the trace the run produced.
    const ActivityTrace back = read_activity_csv(
        d1 + "/activity.csv", cfg.scenario.dt, art.activity.total_neurons,
        art.activity.state_neurons);
    REQUIRE(back.active.size() == art.activity.active.size());
    CHECK(back.active == art.activity.active);
    CHECK(back.status == art.activity.status);
}

TEST_CASE("steady baseline produces an empty dataset and training refuses it")
{
    const RunConfigFile cfg = run_config_from_json(island_doc(), {});
    const std::string out = fresh_dir("gen_steady");
    CHECK(cmd_generate(cfg, out) == kExitOk);
    CHECK(fs::exists(out + "/trace.csv"));
    CHECK(fs::exists(out + "/dataset/dataset.json"));
    const auto data = load_dataset(out + "/dataset");
    CHECK(data.empty());
    const std::string tout = fresh_dir("train_steady");
    CHECK(cmd_train(cfg, out + "/dataset", tout) == kExitValidation);
}

TEST_CASE("generate, train, and replay chain end to end")
{
    const RunConfigFile cfg = run_config_from_json(island_doc_with_step(), {});
    const std::string gen = fresh_dir("gen_step");
    REQUIRE(cmd_generate(cfg, gen) == kExitOk);
    const auto data = load_dataset(gen + "/dataset");
    REQUIRE_FALSE(data.empty());

    const std::string trn = fresh_dir("train_step");
    REQUIRE(cmd_train(cfg, gen + "/dataset", trn) == kExitOk);
    REQUIRE(fs::exists(trn + "/model.ckpt"));
    CHECK(fs::exists(trn + "/loss.csv"));
    const std::string meta = SnnModel::peek_metadata(trn + "/model.ckpt");
    CHECK(meta.find("final_loss") != std::string::npos);

    // Same config, same checkpoint: the bundle hash is reproducible.
    std::uint64_t h1 = 0, h2 = 0;
    RunSummary s1, s2;
    const std::string r1 = fresh_dir("replay_1");
    const std::string r2 = fresh_dir("replay_2");
    REQUIRE(cmd_replay(cfg, trn + "/model.ckpt", "", r1, &h1, &s1) == kExitOk);
    REQUIRE(cmd_replay(cfg, trn + "/model.ckpt", "", r2, &h2, &s2) == kExitOk);
    CHECK(h1 == h2);
    CHECK(s1.forwarded_samples == s2.forwarded_samples);
    CHECK_FALSE(s1.diverged);

    // Impossible expectation fails the threshold gate.
    RunConfigFile strict = cfg;
    strict.checks.min_events = 99;
    const std::string r3 = fresh_dir("replay_3");
    CHECK(cmd_replay(strict, trn + "/model.ckpt", "", r3) == kExitThreshold);

    // A checkpoint with different layer sizes is rejected up front.
    RunConfigFile other = run_config_from_json(
        island_doc_with_step(), {"snn.layer_sizes=[6,8,3]"});
    const std::string r4 = fresh_dir("replay_4");
    CHECK(cmd_replay(other, trn + "/model.ckpt", "", r4) == kExitValidation);

    // Energy pricing accepts the network-mode bundle, rejects the baseline one.
    const std::string report = "harness_tmp/energy_report.csv";
    CHECK(cmd_energy({r1, r2}, report, 2) == kExitOk);
    std::ifstream in(report);
    REQUIRE(in.good());
    std::string line;
    std::getline(in, line);
    std::size_t rows = 0;
    while (std::getline(in, line))
        if (!line.empty()) ++rows;
    CHECK(rows == 6);  // three measured + three published
    CHECK(cmd_energy({gen}, "harness_tmp/energy_bad.csv", 1) == kExitValidation);
    CHECK(cmd_energy({}, "harness_tmp/energy_none.csv", 1) == kExitValidation);
}

TEST_CASE("summary serialization carries every gate and flag")
{
    RunSummary s;
    s.unstable = true;
    s.n_events = 3;
    s.forwarded_samples = 1234;
    s.q_sharing_err = 0.01;
    s.model_swapped = true;
    const json j = summary_to_json(s);
    CHECK(j.at("unstable") == true);
    CHECK(j.at("n_events") == 3);
    CHECK(j.at("forwarded_samples") == 1234);
    CHECK(j.at("q_sharing_err") == 0.01);
    CHECK(j.at("model_swapped") == true);
    CHECK(j.size() == 16);
}

TEST_CASE("output root honours the environment")
{
    ::setenv("SPIKEGRID_OUT_ROOT", "elsewhere/out", 1);
    CHECK(default_out_root() == "elsewhere/out");
    ::unsetenv("SPIKEGRID_OUT_ROOT");
    CHECK(default_out_root() == "out");
}

TEST_CASE("built-in selftest passes")
{
    CHECK(cmd_selftest() == kExitOk);
}
