#ifndef SPIKEGRID_HARNESS_HPP
#define SPIKEGRID_HARNESS_HPP

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "spikegrid/plant.hpp"
#include "spikegrid/snn.hpp"

namespace spikegrid {

// ---- configuration -------------------------------------------------------

// Replay-summary thresholds evaluated by cmd_replay. Absent fields are not
// checked. expect_unstable / expect_overcurrent turn the corresponding flag
// into the required outcome instead of a failure.
struct ChecksSpec {
    std::optional<double> q_sharing_max;
    std::optional<double> v_reg_max;
    std::optional<double> i_max_overshoot;  // max |i| / i_max ceiling
    bool expect_unstable = false;
    bool expect_overcurrent = false;
    bool require_no_overcurrent = false;
    std::optional<std::size_t> min_events;
};

struct RunTuning {
    std::size_t decimation = 10;
    bool frt_runtime = false;
    bool record_hidden = false;
};

// One scenario file, fully parsed. `effective` is the json after defaults
// and --set overrides; embedding it in a manifest must reload to the same
// configuration.
struct RunConfigFile {
    Scenario scenario;
    SnnConfig snn;
    TrainOptions train;
    std::size_t train_max_batches = 0;  // 0 = use the whole dataset
    RunTuning run;
    ChecksSpec checks;
    nlohmann::json effective;
};

nlohmann::json load_json_file(const std::string& path);

// Dotted-key assignments, e.g. "train.epochs=10" or "schedule.0.magnitude=0.7".
// Values parse as JSON scalars, falling back to strings.
void apply_overrides(nlohmann::json& doc, const std::vector<std::string>& sets);

Scenario scenario_from_json(const nlohmann::json& j);
nlohmann::json scenario_to_json(const Scenario& s);

SnnConfig snn_config_from_json(const nlohmann::json& j, double dt);
nlohmann::json snn_config_to_json(const SnnConfig& c);

TrainOptions train_options_from_json(const nlohmann::json& j);
nlohmann::json train_options_to_json(const TrainOptions& o);

RunConfigFile run_config_from_json(nlohmann::json doc,
                                   const std::vector<std::string>& overrides);
RunConfigFile load_run_config(const std::string& path,
                              const std::vector<std::string>& overrides);

// ---- trace bundles -------------------------------------------------------

std::uint64_t fnv1a64(const void* data, std::size_t len, std::uint64_t seed = 0xcbf29ce484222325ull);
std::uint64_t fnv1a64_file(const std::string& path);
std::string hex64(std::uint64_t v);

nlohmann::json summary_to_json(const RunSummary& s);

// Writes the directory of CSV/RLE artifacts plus manifest.json and returns
// the bundle content hash (all files except the manifest, sorted by name).
std::uint64_t write_trace_bundle(const std::string& dir, const RunConfigFile& cfg,
                                 const nlohmann::json& options_echo,
                                 const RunArtifacts& art);

ActivityTrace read_activity_csv(const std::string& path, double dt,
                                std::size_t total_neurons, std::size_t state_neurons);

void write_dataset(const std::string& dir, const std::vector<TrainingBatch>& batches,
                   const nlohmann::json& extra_manifest);
std::vector<TrainingBatch> load_dataset(const std::string& dir);

// ---- commands ------------------------------------------------------------

// Exit codes: 0 ok, 2 validation error, 3 divergence or unexpected
// instability, 4 replay summary check failed.
inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 2;
inline constexpr int kExitDivergence = 3;
inline constexpr int kExitThreshold = 4;

std::string default_out_root();

int cmd_generate(const RunConfigFile& cfg, const std::string& out_dir);
int cmd_train(const RunConfigFile& cfg, const std::string& dataset_dir,
              const std::string& out_dir);
int cmd_replay(const RunConfigFile& cfg, const std::string& checkpoint_path,
               const std::string& adapted_path, const std::string& out_dir,
               std::uint64_t* bundle_hash_out = nullptr,
               RunSummary* summary_out = nullptr);
int cmd_energy(const std::vector<std::string>& bundle_dirs, const std::string& out_path,
               unsigned jobs);
int cmd_selftest();

}  // namespace spikegrid

#endif  // SPIKEGRID_HARNESS_HPP
