#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <future>
#include <stdexcept>
#include <string>

#include "spikegrid/harness.hpp"

namespace fs = std::filesystem;

namespace spikegrid {

namespace {

using nlohmann::json;

struct CheckResult {
    std::string name;
    bool pass = true;
    double value = 0.0;
    double limit = 0.0;
};

std::vector<CheckResult> evaluate_checks(const ChecksSpec& c, const RunSummary& s,
                                         double i_max_min)
{
    std::vector<CheckResult> out;
    auto add = [&](const std::string& name, bool pass, double value, double limit) {
        out.push_back({name, pass, value, limit});
    };
    if (c.q_sharing_max)
        add("q_sharing_err", s.q_sharing_err <= *c.q_sharing_max, s.q_sharing_err,
            *c.q_sharing_max);
    if (c.v_reg_max)
        add("v_reg_err", s.v_reg_err <= *c.v_reg_max, s.v_reg_err, *c.v_reg_max);
    if (c.i_max_overshoot)
        add("i_overshoot", s.max_i_mag <= *c.i_max_overshoot * i_max_min, s.max_i_mag,
            *c.i_max_overshoot * i_max_min);
    if (c.expect_unstable)
        add("expect_unstable", s.unstable, s.unstable ? 1.0 : 0.0, 1.0);
    if (c.expect_overcurrent)
        add("expect_overcurrent", s.overcurrent, s.overcurrent ? 1.0 : 0.0, 1.0);
    if (c.require_no_overcurrent)
        add("no_overcurrent", !s.overcurrent, s.overcurrent ? 1.0 : 0.0, 0.0);
    if (c.min_events)
        add("min_events", s.n_events >= *c.min_events,
            static_cast<double>(s.n_events), static_cast<double>(*c.min_events));
    return out;
}

json checks_to_json(const std::vector<CheckResult>& checks)
{
    json arr = json::array();
    for (const CheckResult& c : checks)
        arr.push_back({{"name", c.name}, {"pass", c.pass}, {"value", c.value},
                       {"limit", c.limit}});
    return arr;
}

void print_summary_line(const char* verb, const RunConfigFile& cfg, const RunSummary& s)
{
    std::printf(
        "%s scenario=%s events=%zu forwarded=%llu q_sharing_err=%.6g v_reg_err=%.6g "
        "max_i=%.6g max_v=%.6g balance=%.3g unstable=%d overcurrent=%d diverged=%d "
        "swapped=%d\n",
        verb, cfg.scenario.name.c_str(), s.n_events,
        static_cast<unsigned long long>(s.forwarded_samples), s.q_sharing_err,
        s.v_reg_err, s.max_i_mag, s.max_v_mag, s.max_balance_residual,
        s.unstable ? 1 : 0, s.overcurrent ? 1 : 0, s.diverged ? 1 : 0,
        s.model_swapped ? 1 : 0);
}

double min_i_max(const Topology& t)
{
    double m = 1e300;
    for (const Converter& c : t.converters) m = std::min(m, c.i_max);
    return t.converters.empty() ? 1.0 : m;
}

}  // namespace

std::string default_out_root()
{
    if (const char* env = std::getenv("SPIKEGRID_OUT_ROOT"); env && *env)
        return env;
    return "out";
}

int cmd_generate(const RunConfigFile& cfg, const std::string& out_dir)
{
    fs::create_directories(out_dir);
    RunOptions opt;
    opt.controller = Controller::VsgDirect;
    opt.record_dataset = true;
    opt.decimation = cfg.run.decimation;
    opt.divergence_dump = out_dir + "/divergence.json";

    const RunArtifacts art = run_scenario(cfg.scenario, opt);
    if (art.summary.diverged) {
        std::fprintf(stderr,
                     "generate: baseline run diverged (non-finite state); see %s\n",
                     opt.divergence_dump.c_str());
        return kExitDivergence;
    }
    if (art.summary.unstable) {
        std::fprintf(stderr,
                     "generate: baseline run unstable (|v| above 2 pu for 50 ms, "
                     "max |v| = %.3f pu); dataset not written\n",
                     art.summary.max_v_mag);
        return kExitDivergence;
    }

    json echo;
    echo["command"] = "generate";
    echo["controller"] = "vsg_direct";
    const std::uint64_t h = write_trace_bundle(out_dir, cfg, echo, art);

    json extra;
    extra["scenario"] = cfg.scenario.name;
    extra["n_events"] = art.summary.n_events;
    extra["forwarded_samples"] = art.summary.forwarded_samples;
    write_dataset(out_dir + "/dataset", art.dataset, extra);

    if (art.dataset.empty())
        std::printf("generate: no events fired; dataset is empty\n");
    print_summary_line("generate", cfg, art.summary);
    std::printf("bundle_hash=%s dataset_batches=%zu out=%s\n", hex64(h).c_str(),
                art.dataset.size(), out_dir.c_str());
    return kExitOk;
}

int cmd_train(const RunConfigFile& cfg, const std::string& dataset_dir,
              const std::string& out_dir)
{
    std::vector<TrainingBatch> data;
    try {
        data = load_dataset(dataset_dir);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "train: cannot load dataset: %s\n", e.what());
        return kExitValidation;
    }
    if (data.empty()) {
        std::fprintf(stderr, "train: dataset '%s' is empty\n", dataset_dir.c_str());
        return kExitValidation;
    }
    if (cfg.train_max_batches > 0 && data.size() > cfg.train_max_batches)
        data.resize(cfg.train_max_batches);
    for (const TrainingBatch& b : data) {
        if (std::abs(b.input.dt() - cfg.snn.dt) > 1e-15) {
            std::fprintf(stderr, "train: dataset dt %.3g differs from model dt %.3g\n",
                         b.input.dt(), cfg.snn.dt);
            return kExitValidation;
        }
    }

    fs::create_directories(out_dir);
    SnnModel model = SnnModel::build(cfg.snn);
    TrainOptions opt = cfg.train;
    opt.snapshot_path = out_dir + "/divergence.json";

    const TrainResult res = train(model, data, opt);
    write_loss_csv(out_dir + "/loss.csv", res.loss_history);
    if (res.diverged) {
        std::fprintf(stderr, "train: diverged; snapshot at %s\n",
                     opt.snapshot_path.c_str());
        return kExitDivergence;
    }

    json meta;
    meta["scenario"] = cfg.scenario.name;
    meta["final_loss"] = res.final_loss;
    meta["epochs"] = res.loss_history.size();
    meta["n_batches"] = data.size();
    const std::string ckpt = out_dir + "/model.ckpt";
    model.save(ckpt, meta.dump());
    std::printf("train scenario=%s batches=%zu epochs=%zu final_loss=%.6g "
                "checkpoint=%s\n",
                cfg.scenario.name.c_str(), data.size(), res.loss_history.size(),
                res.final_loss, ckpt.c_str());
    return kExitOk;
}

int cmd_replay(const RunConfigFile& cfg, const std::string& checkpoint_path,
               const std::string& adapted_path, const std::string& out_dir,
               std::uint64_t* bundle_hash_out, RunSummary* summary_out)
{
    SnnModel model = SnnModel::load(checkpoint_path);
    if (model.config().layer_sizes != cfg.snn.layer_sizes) {
        std::fprintf(stderr, "replay: checkpoint layer sizes do not match the "
                             "scenario snn block\n");
        return kExitValidation;
    }
    if (std::abs(model.config().dt - cfg.scenario.dt) > 1e-15) {
        std::fprintf(stderr, "replay: checkpoint dt differs from scenario dt\n");
        return kExitValidation;
    }
    std::optional<SnnModel> adapted;
    if (!adapted_path.empty()) {
        adapted = SnnModel::load(adapted_path);
        if (adapted->config().layer_sizes != cfg.snn.layer_sizes) {
            std::fprintf(stderr, "replay: adapted checkpoint layer sizes do not match\n");
            return kExitValidation;
        }
    }

    fs::create_directories(out_dir);
    RunOptions opt;
    opt.controller = Controller::Snn;
    opt.model = &model;
    opt.adapted_model = adapted ? &*adapted : nullptr;
    opt.frt_runtime = cfg.run.frt_runtime;
    opt.decimation = cfg.run.decimation;
    opt.record_hidden = cfg.run.record_hidden;
    opt.divergence_dump = out_dir + "/divergence.json";

    const RunArtifacts art = run_scenario(cfg.scenario, opt);
    const RunSummary& s = art.summary;
    if (summary_out) *summary_out = s;

    const std::vector<CheckResult> checks =
        evaluate_checks(cfg.checks, s, min_i_max(cfg.scenario.topology));

    json echo;
    echo["command"] = "replay";
    echo["frt_runtime"] = cfg.run.frt_runtime;
    echo["checkpoint_hash"] = hex64(fnv1a64_file(checkpoint_path));
    if (!adapted_path.empty())
        echo["adapted_checkpoint_hash"] = hex64(fnv1a64_file(adapted_path));
    echo["checks"] = checks_to_json(checks);

    const std::uint64_t h = write_trace_bundle(out_dir, cfg, echo, art);
    if (bundle_hash_out) *bundle_hash_out = h;

    print_summary_line("replay", cfg, s);
    bool any_fail = false;
    for (const CheckResult& c : checks) {
        std::printf("check %s value=%.6g limit=%.6g %s\n", c.name.c_str(), c.value,
                    c.limit, c.pass ? "PASS" : "FAIL");
        if (!c.pass) any_fail = true;
    }
    std::printf("bundle_hash=%s out=%s\n", hex64(h).c_str(), out_dir.c_str());

    if (s.diverged) return kExitDivergence;
    if (s.unstable && !cfg.checks.expect_unstable) return kExitDivergence;
    if (any_fail) return kExitThreshold;
    return kExitOk;
}

int cmd_energy(const std::vector<std::string>& bundle_dirs, const std::string& out_path,
               unsigned jobs)
{
    if (bundle_dirs.empty()) {
        std::fprintf(stderr, "energy: at least one trace bundle required\n");
        return kExitValidation;
    }

    struct Loaded {
        ActivityTrace trace;
    };
    auto load_one = [](const std::string& dir) {
        const json manifest = load_json_file(dir + "/manifest.json");
        const json& a = manifest.at("activity");
        return Loaded{read_activity_csv(dir + "/activity.csv", a.at("dt").get<double>(),
                                        a.at("total_neurons").get<std::size_t>(),
                                        a.at("state_neurons").get<std::size_t>())};
    };

    std::vector<Loaded> loaded(bundle_dirs.size());
    if (jobs > 1 && bundle_dirs.size() > 1) {
        std::vector<std::future<Loaded>> futs;
        futs.reserve(bundle_dirs.size());
        for (const std::string& d : bundle_dirs)
            futs.push_back(std::async(std::launch::async, load_one, d));
        for (std::size_t i = 0; i < futs.size(); ++i) loaded[i] = futs[i].get();
    } else {
        for (std::size_t i = 0; i < bundle_dirs.size(); ++i)
            loaded[i] = load_one(bundle_dirs[i]);
    }

    for (std::size_t i = 1; i < loaded.size(); ++i) {
        if (loaded[i].trace.total_neurons != loaded[0].trace.total_neurons ||
            loaded[i].trace.state_neurons != loaded[0].trace.state_neurons) {
            std::fprintf(stderr, "energy: bundles disagree on network size\n");
            return kExitValidation;
        }
        if (loaded[i].trace.total_neurons == 0) {
            std::fprintf(stderr, "energy: bundle '%s' has no controller activity\n",
                         bundle_dirs[i].c_str());
            return kExitValidation;
        }
    }
    if (loaded[0].trace.total_neurons == 0) {
        std::fprintf(stderr, "energy: bundle '%s' has no controller activity\n",
                     bundle_dirs[0].c_str());
        return kExitValidation;
    }

    std::vector<EnergyRow> rows;
    for (Architecture arch :
         {Architecture::Snn, Architecture::BinaryRnn, Architecture::Ann}) {
        // Aggregate across bundles: on/off means weighted by step counts,
        // event lists concatenated.
        double on_num = 0.0, on_den = 0.0, off_num = 0.0, off_den = 0.0;
        std::size_t n_events = 0;
        for (const Loaded& l : loaded) {
            const ActivityReport r = count_activity(l.trace, arch);
            double on_steps = 0.0, off_steps = 0.0;
            for (std::uint8_t st : l.trace.status)
                (st != 0 ? on_steps : off_steps) += 1.0;
            if (r.n_on) {
                on_num += *r.n_on * on_steps;
                on_den += on_steps;
            }
            off_num += r.n_off * off_steps;
            off_den += off_steps;
            n_events += r.n_events;
        }
        ActivityReport agg;
        if (on_den > 0.0) agg.n_on = on_num / on_den;
        agg.n_off = off_den > 0.0 ? off_num / off_den : 0.0;
        agg.n_events = n_events;

        EnergyModel m;
        m.architecture = arch;
        if (arch == Architecture::Ann) m.e_data_pj = 116.7;
        const PowerEstimate pe = power(agg, m);
        EnergyRow row;
        row.architecture = to_string(arch);
        row.p_off_mw = pe.p_off_mw;
        row.p_on_mw = pe.p_on_mw;
        row.n_on = agg.n_on.value_or(0.0);
        row.n_off = agg.n_off;
        row.e_data_pj = m.e_data_pj;
        rows.push_back(row);
        std::printf("energy %s: P_on=%.4g mW P_off=%.4g mW N_on=%.4g N_off=%.4g "
                    "events=%zu\n",
                    row.architecture.c_str(), row.p_on_mw, row.p_off_mw, row.n_on,
                    row.n_off, n_events);
    }
    for (EnergyRow row : reference_energy_rows()) {
        row.architecture += "_published";
        rows.push_back(row);
    }

    fs::create_directories(fs::path(out_path).parent_path().empty()
                               ? fs::path(".")
                               : fs::path(out_path).parent_path());
    write_energy_csv(out_path, rows);
    std::printf("energy report=%s bundles=%zu\n", out_path.c_str(), bundle_dirs.size());
    return kExitOk;
}

int cmd_selftest()
{
    int failures = 0;
    auto check = [&](const char* name, bool ok) {
        std::printf("selftest %-34s %s\n", name, ok ? "ok" : "FAILED");
        if (!ok) ++failures;
    };

    {
        AbcFrame f = dq_to_abc(1.0, 0.0, 0.7);
        DqPair d = abc_to_dq(f, 0.7);
        check("park transform round trip", std::abs(d.d - 1.0) < 1e-12 &&
                                               std::abs(d.q) < 1e-12);
    }
    {
        CarrierSpec sp;
        bool ok = true;
        for (int i = 0; i < 1000; ++i) {
            const double t = 1e-3 * i / 1000.0;
            const double w = threshold_wave(t, sp);
            if (w < -1.0 || w > 1.0) ok = false;
        }
        check("carrier wave bounded", ok);
    }
    {
        LifParams p;
        double v = 0.9;
        const double keep = 1.0 - p.dt / p.tau_m;
        bool ok = true;
        double expect = v;
        for (int k = 0; k < 50; ++k) {
            const LifStepResult r = lif_step(v, 0.0, p);
            v = r.v_next;
            expect *= keep;
            if (v != expect) ok = false;
        }
        check("zero-input decay geometric", ok);
    }
    {
        LifParams p;
        const RcEquivalence rc = rc_map(p, 1e-6);
        double v = 0.4, q = rc.capacitance * 0.4;
        bool ok = std::abs(rc.resistance - p.tau_m / rc.capacitance) < 1e-18;
        for (int k = 0; k < 400; ++k) {
            v = lif_step(v, 0.3, p).v_next;
            q = rc.charge_step(q, 0.3, p);
            if (std::abs(q / rc.capacitance - v) > 1e-9) ok = false;
        }
        check("rc pairing within 1e-9", ok);
    }
    {
        CarrierSpec sp;
        std::vector<double> u(100, 0.5);
        std::vector<std::vector<double>> rows{u, u, u};
        const PwmOutput out = decode(rows, sp, 1e-5, 0.0);
        const double duty = out.duty(0, 0);
        check("constant-u duty (u+1)/2", std::abs(duty - 0.75) <= 0.011);
    }
    {
        bool ok = true;
        for (const EnergyRow& r : reference_energy_rows()) {
            ActivityReport rep;
            rep.n_on = r.n_on;
            rep.n_off = r.n_off;
            EnergyModel m;
            m.e_data_pj = r.e_data_pj;
            m.architecture = architecture_from_string(r.architecture);
            const PowerEstimate pe = power(rep, m);
            if (r.p_on_mw > 0.0 && std::abs(pe.p_on_mw - r.p_on_mw) / r.p_on_mw > 0.005)
                ok = false;
            if (r.p_off_mw > 0.0 &&
                std::abs(pe.p_off_mw - r.p_off_mw) / r.p_off_mw > 0.005)
                ok = false;
        }
        check("published power table", ok);
    }
    return failures == 0 ? kExitOk : kExitThreshold;
}

}  // namespace spikegrid
